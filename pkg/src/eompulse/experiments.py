"""Named experiment runners with deterministic file output.

Every runner writes its data files (CSV for curves, JSON for scalars) plus
a ``manifest.json`` recording the resolved parameters, cutoffs, grid,
convergence-gate outcome and wall-clock time.  Data files are byte-identical
across reruns with the same config and seed; the manifest's timing field is
the one value allowed to differ.
"""

from __future__ import annotations

import json
import math
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, biphoton, detection, heating
from .biphoton import WavepacketKind
from .dynamics import DensityOperator, aligned_grid, default_window, propagate
from .fock import FockSpace
from .system import PumpMode, PumpPulse

GAIN_CUTOFF_THRESHOLD = 5.0   # pump gain above which the larger space is used
SMALL_CUTOFFS = (2, 4, 4)
LARGE_CUTOFFS = (3, 6, 6)


class ExperimentError(Exception):
    """Runtime failure inside a runner, tagged with the experiment name."""

    def __init__(self, experiment, cause):
        self.experiment = experiment
        super().__init__(f"{experiment}: {cause}")


def fmt(value):
    """Deterministic float formatting for CSV output."""
    return f"{value:.17g}"


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def pick_cutoffs(cfg, pump):
    if cfg.grids.cutoffs is not None:
        return tuple(cfg.grids.cutoffs)
    gain = pump.peak_g_om(cfg.system.g_0) / cfg.system.g_0 if cfg.system.g_0 else 0.0
    return LARGE_CUTOFFS if gain >= GAIN_CUTOFF_THRESHOLD else SMALL_CUTOFFS


def initial_state(cfg, params, space):
    if cfg.grids.initial_state == "thermal_bath":
        nthb0 = float(params.n_th_b_at(0.0))
        return DensityOperator.thermal(space, n_b=nthb0, n_c=params.n_th_c)
    return DensityOperator.vacuum(space)


def simulate(cfg, params, pulse, cutoffs, n_cells=None, window=None):
    """Propagate one pump configuration on a cell-aligned grid."""
    space = FockSpace(cutoffs)
    n_cells = n_cells or cfg.grids.n_cells
    window = window or cfg.grids.window or default_window(params, pulse)
    grid, stride = aligned_grid(params, pulse, space, n_cells=n_cells,
                               window=window)
    rho0 = initial_state(cfg, params, space)
    return propagate(rho0, grid, params, pulse, store_stride=stride)


def pump_tag(index, pump):
    if pump.mode is PumpMode.GAIN_FACTOR:
        return f"gain{pump.amplitude:g}"
    return f"npk{pump.amplitude:g}_sigma{pump.sigma * 1e9:g}ns"


def _grid_meta(evolution, cutoffs):
    g = evolution.grid
    return {"cutoffs": list(cutoffs), "window_s": g.t_end - g.t_start,
            "n_steps": g.n_steps, "dt_s": g.dt,
            "n_cells": int(len(evolution.stored_steps) - 1)}


def _gate_entry(cfg, headline_fn, cutoffs, headline_value):
    """Convergence gate: recompute the headline at cutoffs + 1.

    Runs on a reduced gate grid (both evaluations share it, so the
    comparison isolates the cutoff dependence).  Raises ExperimentError
    when the relative change exceeds the gate tolerance.
    """
    if not cfg.gate.enabled:
        return {"enabled": False}
    base = headline_fn(cutoffs, cfg.gate.n_cells)
    bumped = headline_fn(tuple(c + 1 for c in cutoffs), cfg.gate.n_cells)
    denom = max(abs(base), 1e-300)
    rel = abs(bumped - base) / denom
    entry = {"enabled": True, "gate_n_cells": cfg.gate.n_cells,
             "headline_at_cutoffs": base, "headline_at_cutoffs_plus_1": bumped,
             "relative_change": rel, "tolerance": cfg.gate.tolerance,
             "passed": bool(rel < cfg.gate.tolerance)}
    return entry


def _finish(cfg, out_dir, outputs, gates, grids, t_started, extra=None):
    manifest = {
        "experiment": cfg.experiment,
        "package_version": __version__,
        "resolved_config": cfg.resolved,
        "grids": grids,
        "convergence_gate": gates,
        "outputs": sorted(outputs),
        "wall_time_s": time.perf_counter() - t_started,
    }
    if extra:
        manifest.update(extra)
    write_json(out_dir / "manifest.json", manifest)
    for entry in gates:
        if entry.get("enabled") and not entry.get("passed", True):
            raise ExperimentError(cfg.experiment,
                                  f"convergence gate failed: {entry}")
    return manifest


def run_wavepacket(cfg, out_dir):
    t0 = time.perf_counter()
    outputs, gates, grids = [], [], []
    kinds = {"amplitude": [WavepacketKind.AMPLITUDE],
             "intensity": [WavepacketKind.INTENSITY],
             "both": [WavepacketKind.AMPLITUDE, WavepacketKind.INTENSITY]}
    wanted = kinds[cfg.params["kind"]]
    for i, pump in enumerate(cfg.pumps):
        cutoffs = pick_cutoffs(cfg, pump)
        evolution = simulate(cfg, cfg.system, pump, cutoffs)
        grids.append(_grid_meta(evolution, cutoffs))
        tag = pump_tag(i, pump)
        headline = None
        for kind in wanted:
            wp = biphoton.assemble_wavepacket(evolution, cfg.system, pump, kind)
            norm = wp.normalize()
            name = f"wavepacket_{kind.value}_{tag}.csv"
            biphoton.wavepacket_to_csv(norm, out_dir / name)
            outputs.append(name)
            if kind is WavepacketKind.AMPLITUDE:
                headline = float(np.max(np.abs(norm.amplitude)))

        if headline is not None:
            def headline_fn(cuts, n_cells):
                evo = simulate(cfg, cfg.system, pump, cuts, n_cells=n_cells)
                wp2 = biphoton.assemble_wavepacket(
                    evo, cfg.system, pump, WavepacketKind.AMPLITUDE).normalize()
                return float(np.max(np.abs(wp2.amplitude)))
            gates.append(_gate_entry(cfg, headline_fn, cutoffs, headline))
    return _finish(cfg, out_dir, outputs, gates, grids, t0)


def run_schmidt_modes(cfg, out_dir):
    t0 = time.perf_counter()
    outputs, gates, grids = [], [], []
    summary = []
    for i, pump in enumerate(cfg.pumps):
        cutoffs = pick_cutoffs(cfg, pump)
        evolution = simulate(cfg, cfg.system, pump, cutoffs)
        grids.append(_grid_meta(evolution, cutoffs))
        wp = biphoton.assemble_wavepacket(evolution, cfg.system, pump,
                                          WavepacketKind.AMPLITUDE).normalize()
        spec = biphoton.schmidt_decompose(wp, k_max=cfg.params["k_max"])
        tag = pump_tag(i, pump)
        biphoton.spectrum_to_csv(spec, out_dir / f"schmidt_lambdas_{tag}.csv",
                                 out_dir / f"schmidt_modes_{tag}.csv")
        outputs += [f"schmidt_lambdas_{tag}.csv", f"schmidt_modes_{tag}.csv"]
        summary.append({"pump": tag, "lambda0": float(spec.lambdas[0]),
                        "entropy_nats": spec.entropy})

        def headline_fn(cuts, n_cells):
            evo = simulate(cfg, cfg.system, pump, cuts, n_cells=n_cells)
            w = biphoton.assemble_wavepacket(
                evo, cfg.system, pump, WavepacketKind.AMPLITUDE).normalize()
            return float(biphoton.schmidt_decompose(w, k_max=1).lambdas[0])
        gates.append(_gate_entry(cfg, headline_fn, cutoffs,
                                 float(spec.lambdas[0])))
    write_json(out_dir / "schmidt_summary.json", {"pumps": summary})
    outputs.append("schmidt_summary.json")
    return _finish(cfg, out_dir, outputs, gates, grids, t0)


def _emission_start_cells(evolution, params, pulse):
    """Cells where the optical output is non-negligible (pair-table rows)."""
    n_a = np.real(evolution.tracks["n_a"])
    peak = float(np.max(n_a))
    if peak <= 0.0:
        return np.arange(len(n_a))
    keep = np.flatnonzero(n_a >= 1e-5 * peak)
    lo = max(0, int(keep[0]) - 1)
    hi = min(len(n_a) - 1, int(keep[-1]) + 1)
    return np.arange(lo, hi + 1)


def run_coincidence_vs_tau(cfg, out_dir):
    t0 = time.perf_counter()
    outputs, gates, grids = [], [], []
    tau_max = cfg.params["tau_max_ns"]
    for i, pump in enumerate(cfg.pumps):
        cutoffs = pick_cutoffs(cfg, pump)
        evolution = simulate(cfg, cfg.system, pump, cutoffs)
        grids.append(_grid_meta(evolution, cutoffs))
        starts = _emission_start_cells(evolution, cfg.system, pump)
        corr = detection.bin_correlators(evolution, cfg.system, pump,
                                         start_cells=starts)
        cell = corr.cell
        n_tau = int(math.floor(tau_max / cell))
        taus = cell * np.arange(n_tau + 1)
        total, acc, cor = detection.coincidence_rate_sweep(corr, cfg.detector,
                                                           taus)
        tag = pump_tag(i, pump)
        name = f"coincidence_vs_tau_{tag}.csv"
        write_csv(out_dir / name, ["tau_s", "R_total", "R_a", "R_c"],
                  zip(taus.tolist(), total.tolist(), acc.tolist(), cor.tolist()))
        outputs.append(name)
        headline = float(np.max(total))

        def headline_fn(cuts, n_cells):
            evo = simulate(cfg, cfg.system, pump, cuts, n_cells=n_cells)
            st = _emission_start_cells(evo, cfg.system, pump)
            c2 = detection.bin_correlators(evo, cfg.system, pump, start_cells=st)
            t2, _, _ = detection.coincidence_rate_sweep(
                c2, cfg.detector, c2.cell * np.arange(int(tau_max / c2.cell) + 1))
            return float(np.max(t2))
        gates.append(_gate_entry(cfg, headline_fn, cutoffs, headline))
    return _finish(cfg, out_dir, outputs, gates, grids, t0)


def _chsh_tables(cfg, pump, cutoffs, tau, n_cells=None):
    evolution = simulate(cfg, cfg.system, pump, cutoffs, n_cells=n_cells)
    starts = _emission_start_cells(evolution, cfg.system, pump)
    corr = detection.bin_correlators(evolution, cfg.system, pump,
                                     start_cells=starts,
                                     max_lag=tau + 2 * corr_cell_pad(evolution))
    return evolution, corr


def corr_cell_pad(evolution):
    times = evolution.stored_times
    return float(times[1] - times[0])


def _loss(cfg):
    return 0.5 if cfg.interferometer_half_loss else 1.0


def run_counts_vs_beta(cfg, out_dir):
    t0 = time.perf_counter()
    outputs, gates, grids = [], [], []
    tau = cfg.params["tau_ns"]
    alpha = cfg.params["alpha_rad"]
    betas = np.linspace(0.0, 2.0 * math.pi, cfg.params["n_beta"])
    rng = np.random.default_rng(cfg.rng_seed)
    for i, pump in enumerate(cfg.pumps):
        cutoffs = pick_cutoffs(cfg, pump)
        evolution, corr = _chsh_tables(cfg, pump, cutoffs, tau)
        grids.append(_grid_meta(evolution, cutoffs))
        sweep = detection.chsh_beta_sweep(corr, cfg.detector, alpha, betas,
                                          tau, interferometer_loss=_loss(cfg))
        counts = sweep["C_00"]
        rows = [betas.tolist(), counts.tolist()]
        header = ["beta_rad", "counts"]
        if cfg.params["poisson_sample"]:
            sampled = detection.sample_poisson_counts(counts, rng)
            rows.append([float(v) for v in sampled])
            header.append("counts_poisson")
        tag = pump_tag(i, pump)
        name = f"counts_vs_beta_{tag}.csv"
        write_csv(out_dir / name, header, zip(*rows))
        outputs.append(name)

        headline = float(np.max(counts))

        def headline_fn(cuts, n_cells):
            _, c2 = _chsh_tables(cfg, pump, cuts, tau, n_cells=n_cells)
            s2 = detection.chsh_beta_sweep(c2, cfg.detector, alpha, betas[:9],
                                           tau, interferometer_loss=_loss(cfg))
            return float(np.max(s2["C_00"]))
        gates.append(_gate_entry(cfg, headline_fn, cutoffs, headline))
    return _finish(cfg, out_dir, outputs, gates, grids, t0)


def run_chsh_sweep(cfg, out_dir):
    t0 = time.perf_counter()
    outputs, gates, grids = [], [], []
    tau = cfg.params["tau_ns"]
    alpha = cfg.params["alpha_rad"]
    betas = np.linspace(0.0, 2.0 * math.pi, cfg.params["n_beta"])
    summary = []
    for i, pump in enumerate(cfg.pumps):
        cutoffs = pick_cutoffs(cfg, pump)
        evolution, corr = _chsh_tables(cfg, pump, cutoffs, tau)
        grids.append(_grid_meta(evolution, cutoffs))
        sweep = detection.chsh_beta_sweep(corr, cfg.detector, alpha, betas,
                                          tau, interferometer_loss=_loss(cfg))
        tag = pump_tag(i, pump)
        name = f"chsh_sweep_{tag}.csv"
        write_csv(out_dir / name,
                  ["beta_rad", "S", "C_00", "C_0pi", "C_pi0", "C_pipi"],
                  zip(betas.tolist(), sweep["S"].tolist(),
                      sweep["C_00"].tolist(), sweep["C_0pi"].tolist(),
                      sweep["C_pi0"].tolist(), sweep["C_pipi"].tolist()))
        outputs.append(name)
        s_max = float(np.max(np.abs(sweep["S"])))
        summary.append({"pump": tag, "S_max": s_max})

        def headline_fn(cuts, n_cells):
            _, c2 = _chsh_tables(cfg, pump, cuts, tau, n_cells=n_cells)
            s2 = detection.chsh_beta_sweep(c2, cfg.detector, alpha, betas, tau,
                                           interferometer_loss=_loss(cfg))
            return float(np.max(np.abs(s2["S"])))
        gates.append(_gate_entry(cfg, headline_fn, cutoffs, s_max))
    write_json(out_dir / "chsh_summary.json", {"pumps": summary})
    outputs.append("chsh_summary.json")
    return _finish(cfg, out_dir, outputs, gates, grids, t0)


def run_chsh_with_heating(cfg, out_dir):
    """Bell test with the pulse-heated, time-dependent mechanical bath."""
    t0 = time.perf_counter()
    outputs, gates, grids = [], [], []
    tau = cfg.params["tau_ns"]
    alpha = cfg.params["alpha_rad"]
    betas = np.linspace(0.0, 2.0 * math.pi, cfg.params["n_beta"])
    peak = cfg.params["peak_photon"]
    pulse_t0 = cfg.params["t0_ns"]
    sigmas = list(cfg.params["sigma_scan_ns"])
    summary_rows = []

    cases = [(sigma, True) for sigma in sigmas]
    if cfg.params["include_no_heating"]:
        cases.append((sigmas[0], False))

    for sigma, heated in cases:
        pump = PumpPulse(amplitude=peak, t0=pulse_t0, sigma=sigma,
                         mode=PumpMode.INTRACAVITY_PHOTON)
        if heated:
            profile = heating.occupancy_profile(cfg.heating, sigma=sigma,
                                                t0=pulse_t0)
            params = cfg.system.with_n_th_b(profile)
        else:
            params = cfg.system
        cutoffs = pick_cutoffs(cfg, pump)
        evolution = simulate(cfg, params, pump, cutoffs)
        starts = _emission_start_cells(evolution, params, pump)
        corr = detection.bin_correlators(
            evolution, params, pump, start_cells=starts,
            max_lag=tau + 2 * corr_cell_pad(evolution))
        grids.append(_grid_meta(evolution, cutoffs))
        sweep = detection.chsh_beta_sweep(corr, cfg.detector, alpha, betas,
                                          tau, interferometer_loss=_loss(cfg))
        rate = detection.coincidence_rate(corr, cfg.detector, tau,
                                          interferometer_loss=_loss(cfg))
        label = f"sigma{sigma * 1e9:g}ns" + ("" if heated else "_noheat")
        name = f"chsh_heating_{label}.csv"
        write_csv(out_dir / name,
                  ["beta_rad", "S", "C_00", "C_0pi", "C_pi0", "C_pipi"],
                  zip(betas.tolist(), sweep["S"].tolist(),
                      sweep["C_00"].tolist(), sweep["C_0pi"].tolist(),
                      sweep["C_pi0"].tolist(), sweep["C_pipi"].tolist()))
        outputs.append(name)
        summary_rows.append((sigma, 1.0 if heated else 0.0,
                             float(np.max(np.abs(sweep["S"]))),
                             rate.total, rate.correlated * cfg.detector.r_D))

    name = "chsh_heating_summary.csv"
    write_csv(out_dir / name,
              ["sigma_s", "heated", "S_max", "rate_total", "rate_correlated"],
              summary_rows)
    outputs.append(name)
    return _finish(cfg, out_dir, outputs, gates, grids, t0)


def run_heating_compare(cfg, out_dir):
    """Peak-vs-CW intensity matching at equal average heating."""
    t0 = time.perf_counter()
    outputs = []
    hp = cfg.heating
    cw = cfg.params["cw_nbar"]

    rows = []
    for sigma in cfg.params["sigma_scan_ns"]:
        p = heating.HeatingParams(a=hp.a, b_prime=hp.b_prime, d=hp.d, T0=hp.T0,
                                  eta=hp.eta, gamma=hp.gamma,
                                  t_per=cfg.params["fixed_t_per_us"],
                                  omega_m=hp.omega_m)
        m = heating.match_average(p, cw, sigma=sigma)
        rows.append((sigma, cw, m.pulse_peak_nbar, m.ratio,
                     m.average_temperature))
    name = "heating_compare_sigma.csv"
    write_csv(out_dir / name,
              ["sigma_s", "cw_nbar", "pulse_peak_nbar", "ratio", "avg_T_k"],
              rows)
    outputs.append(name)

    rows = []
    for t_per in cfg.params["t_per_scan_us"]:
        p = heating.HeatingParams(a=hp.a, b_prime=hp.b_prime, d=hp.d, T0=hp.T0,
                                  eta=hp.eta, gamma=hp.gamma, t_per=t_per,
                                  omega_m=hp.omega_m)
        m = heating.match_average(p, cw, sigma=cfg.params["fixed_sigma_ns"])
        rows.append((t_per, cw, m.pulse_peak_nbar, m.ratio,
                     m.average_temperature))
    name = "heating_compare_t_per.csv"
    write_csv(out_dir / name,
              ["t_per_s", "cw_nbar", "pulse_peak_nbar", "ratio", "avg_T_k"],
              rows)
    outputs.append(name)
    return _finish(cfg, out_dir, outputs, [], [], t0)


def bundled_heating_sample():
    """Path of the packaged synthetic temperature trace."""
    return resources.files("eompulse") / "data" / "heating_fit_sample.csv"


def run_heating_fit(cfg, out_dir):
    t0 = time.perf_counter()
    outputs = []
    src = cfg.params["input_csv"]
    if src is None:
        path = bundled_heating_sample()
        text = path.read_text(encoding="utf-8")
    else:
        text = Path(src).read_text(encoding="utf-8")
    lines = [ln for ln in text.strip().splitlines()[1:] if ln]
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines])
    times, temps = data[:, 0], data[:, 1]

    result = heating.fit_params((times, temps))
    write_json(out_dir / "heating_fit.json", {
        "parameters": result.per_parameter,
        "residual_rms_k": result.residual_norm,
        "degenerate": result.degenerate,
        "n_samples": int(len(times)),
    })
    outputs.append("heating_fit.json")

    fit_curve = heating.gaussian_temperature(times, result.params)
    name = "heating_fit_curve.csv"
    write_csv(out_dir / name, ["t_s", "T_data_k", "T_fit_k"],
              zip(times.tolist(), temps.tolist(), fit_curve.tolist()))
    outputs.append(name)
    return _finish(cfg, out_dir, outputs, [], [], t0)


RUNNERS = {
    "wavepacket": run_wavepacket,
    "schmidt_modes": run_schmidt_modes,
    "coincidence_vs_tau": run_coincidence_vs_tau,
    "counts_vs_beta": run_counts_vs_beta,
    "chsh_sweep": run_chsh_sweep,
    "chsh_with_heating": run_chsh_with_heating,
    "heating_compare": run_heating_compare,
    "heating_fit": run_heating_fit,
}

EXPERIMENT_SUMMARIES = {
    "wavepacket": "biphoton wavepacket on the (t1, t2) grid",
    "schmidt_modes": "temporal Schmidt weights, modes and entropy",
    "coincidence_vs_tau": "coincidence rate against detection delay",
    "counts_vs_beta": "time-bin coincidence counts against analyzer angle",
    "chsh_sweep": "CHSH S against analyzer angle",
    "chsh_with_heating": "CHSH with the pulse-heated mechanical bath",
    "heating_compare": "pulse-vs-CW intensity at equal average heating",
    "heating_fit": "least-squares fit of the thermal model to a trace",
}


def run(cfg):
    """Execute the configured experiment; returns the manifest."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runner = RUNNERS[cfg.experiment]
    try:
        return runner(cfg, out_dir)
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(cfg.experiment, exc) from exc
