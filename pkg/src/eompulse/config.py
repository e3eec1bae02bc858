"""Config-file parsing and validation for the batch CLI.

Configs are YAML with explicit units in key names.  System entries are
ordinary frequencies (the factor 2*pi to angular units is applied exactly
once, here); detector dark/repetition rates are event rates and carry no
2*pi.  Unknown keys are rejected and every violation is reported at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import yaml

from .detection import DetectorModel
from .heating import HeatingParams
from .system import PumpMode, PumpPulse, SystemParams, TWO_PI

EXPERIMENT_NAMES = (
    "wavepacket",
    "schmidt_modes",
    "coincidence_vs_tau",
    "counts_vs_beta",
    "chsh_sweep",
    "chsh_with_heating",
    "heating_compare",
    "heating_fit",
)


class ConfigError(Exception):
    """Invalid configuration; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(
            f"  - {e}" for e in self.errors))


def _number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


@dataclass
class _Field:
    key: str
    default: object
    convert: object = None       # applied after validation
    check: object = None         # predicate on the raw value
    description: str = ""


def _take_section(raw, name, fields, errors, prefix=None):
    """Pull one mapping section, applying defaults and rejecting unknowns."""
    prefix = prefix or name
    section = raw.get(name, {})
    if section is None:
        section = {}
    if not isinstance(section, dict):
        errors.append(f"{prefix}: expected a mapping")
        return {}
    known = {f.key: f for f in fields}
    for key in section:
        if key not in known:
            errors.append(f"{prefix}.{key}: unknown key")
    out = {}
    for f in fields:
        value = section.get(f.key, f.default)
        if value is None:
            out[f.key] = None
            continue
        if f.check is not None and not f.check(value):
            errors.append(f"{prefix}.{f.key}: invalid value {value!r}"
                          + (f" ({f.description})" if f.description else ""))
            continue
        out[f.key] = f.convert(value) if f.convert else value
    return out


_nonneg = lambda v: _number(v) and v >= 0
_pos = lambda v: _number(v) and v > 0
_unit = lambda v: _number(v) and 0 <= v <= 1
_bool = lambda v: isinstance(v, bool)

SYSTEM_FIELDS = [
    _Field("g_em_mhz", 1.2, lambda v: TWO_PI * v * 1e6, _nonneg),
    _Field("g_0_khz", 260.0, lambda v: TWO_PI * v * 1e3, _nonneg),
    _Field("kappa_o_i_ghz", 0.65, lambda v: TWO_PI * v * 1e9, _nonneg),
    _Field("kappa_o_c_ghz", 0.65, lambda v: TWO_PI * v * 1e9, _nonneg),
    _Field("kappa_m_khz", 150.0, lambda v: TWO_PI * v * 1e3, _nonneg),
    _Field("kappa_e_i_mhz", 0.55, lambda v: TWO_PI * v * 1e6, _nonneg),
    _Field("kappa_e_c_mhz", 1.25, lambda v: TWO_PI * v * 1e6, _nonneg),
    _Field("omega_o_thz", 190.0, lambda v: TWO_PI * v * 1e12, _nonneg),
    _Field("omega_m_ghz", 5.0, lambda v: TWO_PI * v * 1e9, _nonneg),
    _Field("omega_e_ghz", 5.0, lambda v: TWO_PI * v * 1e9, _nonneg),
    _Field("n_th_b", 0.0, float, _nonneg),
    _Field("n_th_c", 0.0, float, _nonneg),
]

PUMP_FIELDS = [
    _Field("mode", "gain_factor", str,
           lambda v: v in ("gain_factor", "intracavity_photon"),
           "gain_factor or intracavity_photon"),
    _Field("amplitude", 1.0, float, _nonneg),
    _Field("t0_ns", 130.0, lambda v: v * 1e-9, _nonneg),
    _Field("sigma_ns", 30.0, lambda v: v * 1e-9, _pos),
]

DETECTOR_FIELDS = [
    _Field("eta_o", 0.8, float, _unit),
    _Field("eta_e", 0.9, float, _unit),
    _Field("transmission_o", 1e-2, float, _unit),
    _Field("transmission_e", 0.5, float, _unit),
    _Field("dark_o_hz", 10.0, float, _nonneg),
    _Field("dark_e_hz", 1e3, float, _nonneg),
    _Field("window_ns", 32.0, lambda v: v * 1e-9, _pos),
    _Field("repetition_rate_hz", 1.0 / 33e-6, float, _nonneg),
    _Field("collection_time_s", 60.0, float, _nonneg),
    _Field("interferometer_half_loss", True, bool, _bool),
]

HEATING_FIELDS = [
    _Field("a_per_us", 7.244, float, _pos),
    _Field("b_prime_k_per_us", 2.521, float, _nonneg),
    _Field("d_k_per_us", 1.138, float, _nonneg),
    _Field("T0_k", 0.108, float, _nonneg),
    _Field("eta_k_per_photon_pow", 1.0, float, _pos),
    _Field("gamma_exponent", 2.0 / 3.0, float, _pos),
    _Field("t_per_us", 33.0, lambda v: v * 1e-6, _pos),
]

GRID_FIELDS = [
    _Field("cutoffs", None, lambda v: tuple(int(x) for x in v),
           lambda v: isinstance(v, (list, tuple)) and len(v) == 3
           and all(isinstance(x, int) and x >= 1 for x in v),
           "triple of integers >= 1"),
    _Field("n_cells", 50, int, lambda v: isinstance(v, int) and 8 <= v <= 2048),
    _Field("window_us", None, lambda v: v * 1e-6, _pos),
    _Field("initial_state", "vacuum", str,
           lambda v: v in ("vacuum", "thermal_bath"),
           "vacuum or thermal_bath"),
]

GATE_FIELDS = [
    _Field("enabled", True, bool, _bool),
    _Field("n_cells", 12, int, lambda v: isinstance(v, int) and 4 <= v <= 256),
    _Field("tolerance", 1e-3, float, _pos),
]

EXPERIMENT_PARAM_FIELDS = {
    "wavepacket": [
        _Field("kind", "amplitude", str,
               lambda v: v in ("amplitude", "intensity", "both")),
    ],
    "schmidt_modes": [
        _Field("k_max", 6, int, lambda v: isinstance(v, int) and v >= 1),
    ],
    "coincidence_vs_tau": [
        _Field("tau_max_ns", 450.0, lambda v: v * 1e-9, _pos),
    ],
    "counts_vs_beta": [
        _Field("tau_ns", 150.0, lambda v: v * 1e-9, _nonneg),
        _Field("alpha_rad", 0.0, float, _number),
        _Field("n_beta", 73, int, lambda v: isinstance(v, int) and v >= 5),
        _Field("poisson_sample", False, bool, _bool),
    ],
    "chsh_sweep": [
        _Field("tau_ns", 150.0, lambda v: v * 1e-9, _nonneg),
        _Field("alpha_rad", 0.0, float, _number),
        _Field("n_beta", 181, int, lambda v: isinstance(v, int) and v >= 5),
    ],
    "chsh_with_heating": [
        _Field("tau_ns", 150.0, lambda v: v * 1e-9, _nonneg),
        _Field("alpha_rad", 0.0, float, _number),
        _Field("n_beta", 181, int, lambda v: isinstance(v, int) and v >= 5),
        _Field("sigma_scan_ns", [68.0, 42.0, 21.0, 11.0],
               lambda v: [x * 1e-9 for x in v],
               lambda v: isinstance(v, list) and v and all(_pos(x) for x in v)),
        _Field("peak_photon", 0.8, float, _pos),
        _Field("t0_ns", 160.0, lambda v: v * 1e-9, _nonneg),
        _Field("include_no_heating", True, bool, _bool),
    ],
    "heating_compare": [
        _Field("cw_nbar", 1.0, float, _pos),
        _Field("sigma_scan_ns", [640.0, 320.0, 160.0],
               lambda v: [x * 1e-9 for x in v],
               lambda v: isinstance(v, list) and v and all(_pos(x) for x in v)),
        _Field("t_per_scan_us", [16.5, 33.0, 66.0, 132.0],
               lambda v: [x * 1e-6 for x in v],
               lambda v: isinstance(v, list) and v and all(_pos(x) for x in v)),
        _Field("fixed_t_per_us", 33.0, lambda v: v * 1e-6, _pos),
        _Field("fixed_sigma_ns", 320.0, lambda v: v * 1e-9, _pos),
    ],
    "heating_fit": [
        _Field("input_csv", None, str, lambda v: isinstance(v, str)),
    ],
}

TOP_LEVEL_KEYS = {"experiment", "output_dir", "rng_seed", "system", "pump",
                  "detector", "heating", "grids", "convergence_gate",
                  "experiment_params"}


@dataclass
class GridSettings:
    cutoffs: tuple
    n_cells: int
    window: float
    initial_state: str


@dataclass
class GateSettings:
    enabled: bool
    n_cells: int
    tolerance: float


@dataclass
class ExperimentConfig:
    """Fully resolved, validated experiment description."""

    experiment: str
    output_dir: str
    rng_seed: int
    system: SystemParams
    pumps: list
    detector: DetectorModel
    heating: HeatingParams
    grids: GridSettings
    gate: GateSettings
    params: dict
    interferometer_half_loss: bool = True
    resolved: dict = field(repr=False, default_factory=dict)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return resolve_config(raw if raw is not None else {})


def resolve_config(raw):
    """Validate a raw mapping, apply defaults and build the typed config.

    Raises :class:`ConfigError` carrying every violation found.
    """
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a mapping"])
    for key in raw:
        if key not in TOP_LEVEL_KEYS:
            errors.append(f"{key}: unknown key")

    experiment = raw.get("experiment")
    if experiment not in EXPERIMENT_NAMES:
        errors.append(
            f"experiment: must be one of {', '.join(EXPERIMENT_NAMES)}; "
            f"got {experiment!r}")
        experiment = None

    output_dir = raw.get("output_dir", "results")
    if not isinstance(output_dir, str) or not output_dir:
        errors.append("output_dir: expected a non-empty string")
        output_dir = "results"
    rng_seed = raw.get("rng_seed", 12345)
    if not isinstance(rng_seed, int) or isinstance(rng_seed, bool) or rng_seed < 0:
        errors.append("rng_seed: expected a non-negative integer")
        rng_seed = 12345

    sys_vals = _take_section(raw, "system", SYSTEM_FIELDS, errors)

    pump_raw = raw.get("pump", {})
    pump_list = pump_raw if isinstance(pump_raw, list) else [pump_raw]
    pumps = []
    for i, entry in enumerate(pump_list):
        vals = _take_section({"pump": entry}, "pump", PUMP_FIELDS, errors,
                             prefix=f"pump[{i}]")
        pumps.append(vals)

    det_vals = _take_section(raw, "detector", DETECTOR_FIELDS, errors)
    heat_vals = _take_section(raw, "heating", HEATING_FIELDS, errors)
    grid_vals = _take_section(raw, "grids", GRID_FIELDS, errors)
    gate_vals = _take_section(raw, "convergence_gate", GATE_FIELDS, errors)

    if experiment is not None:
        params = _take_section(raw, "experiment_params",
                               EXPERIMENT_PARAM_FIELDS[experiment], errors)
    else:
        params = {}

    if det_vals.get("repetition_rate_hz") and det_vals.get("window_ns"):
        if det_vals["repetition_rate_hz"] * det_vals["window_ns"] > 1 + 1e-12:
            errors.append("detector: repetition_rate_hz * window must be <= 1")

    if errors:
        raise ConfigError(errors)

    system = SystemParams(
        g_em=sys_vals["g_em_mhz"], g_0=sys_vals["g_0_khz"],
        kappa_o_i=sys_vals["kappa_o_i_ghz"], kappa_o_c=sys_vals["kappa_o_c_ghz"],
        kappa_m=sys_vals["kappa_m_khz"],
        kappa_e_i=sys_vals["kappa_e_i_mhz"], kappa_e_c=sys_vals["kappa_e_c_mhz"],
        omega_o=sys_vals["omega_o_thz"], omega_m=sys_vals["omega_m_ghz"],
        omega_e=sys_vals["omega_e_ghz"],
        n_th_b=sys_vals["n_th_b"], n_th_c=sys_vals["n_th_c"])

    pump_objs = [PumpPulse(amplitude=p["amplitude"], t0=p["t0_ns"],
                           sigma=p["sigma_ns"], mode=PumpMode(p["mode"]))
                 for p in pumps]

    detector = DetectorModel(
        eta_o=det_vals["eta_o"], eta_e=det_vals["eta_e"],
        T_o=det_vals["transmission_o"], T_e=det_vals["transmission_e"],
        D_o=det_vals["dark_o_hz"], D_e=det_vals["dark_e_hz"],
        t_w=det_vals["window_ns"], r_D=det_vals["repetition_rate_hz"],
        t_c=det_vals["collection_time_s"])

    heating = HeatingParams(
        a=heat_vals["a_per_us"], b_prime=heat_vals["b_prime_k_per_us"],
        d=heat_vals["d_k_per_us"], T0=heat_vals["T0_k"],
        eta=heat_vals["eta_k_per_photon_pow"], gamma=heat_vals["gamma_exponent"],
        t_per=heat_vals["t_per_us"], omega_m=system.omega_m)

    grids = GridSettings(cutoffs=grid_vals["cutoffs"],
                         n_cells=grid_vals["n_cells"],
                         window=grid_vals["window_us"],
                         initial_state=grid_vals["initial_state"])
    gate = GateSettings(enabled=gate_vals["enabled"],
                        n_cells=gate_vals["n_cells"],
                        tolerance=gate_vals["tolerance"])

    resolved = {
        "experiment": experiment,
        "output_dir": output_dir,
        "rng_seed": rng_seed,
        "interferometer_half_loss": det_vals["interferometer_half_loss"],
        "system_rad_per_s": {k: sys_vals[k] for k in sys_vals},
        "pumps_si": pumps,
        "detector_si": det_vals,
        "heating": heat_vals,
        "grids": grid_vals,
        "convergence_gate": gate_vals,
        "experiment_params": {k: (list(v) if isinstance(v, list) else v)
                              for k, v in params.items()},
    }
    return ExperimentConfig(
        experiment=experiment, output_dir=output_dir, rng_seed=rng_seed,
        system=system, pumps=pump_objs, detector=detector, heating=heating,
        grids=grids, gate=gate, params=params,
        interferometer_half_loss=det_vals["interferometer_half_loss"],
        resolved=resolved)
