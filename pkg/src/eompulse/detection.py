"""Detector-level statistics: coincidences, time-bin rotations and CHSH.

Time-bin experiments pump twice per shot; since the two bins are prepared
identically and carry no cross-bin correlations, they are simulated as one
single-pulse evolution whose output correlators populate both bins.  All
rates refer to output modes (intracavity correlators scaled by the
out-coupling rates).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ConditionalKind, two_time_tables
from .fock import mode_operators


class WindowTooWide(Exception):
    """Detection window too coarse to treat counts as a time integral."""


class ZeroDenominator(Exception):
    """All four coincidence counts of a correlator estimate vanish."""


@dataclass(frozen=True)
class DetectorModel:
    """Efficiencies, transmissions, dark rates and timing of the two arms.

    ``t_w`` is the coincidence window, ``r_D`` the experiment repetition
    rate and ``t_c`` the data collection time.
    """

    eta_o: float = 0.8
    eta_e: float = 0.9
    T_o: float = 1e-2
    T_e: float = 0.5
    D_o: float = 10.0
    D_e: float = 1e3
    t_w: float = 32e-9
    r_D: float = 1.0 / 33e-6
    t_c: float = 60.0

    def __post_init__(self):
        for name in ("eta_o", "eta_e", "T_o", "T_e"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for name in ("D_o", "D_e", "t_w", "r_D", "t_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.r_D * self.t_w > 1.0 + 1e-12:
            raise ValueError("r_D * t_w must not exceed 1")


@dataclass
class BinCorrelators:
    """Single-bin output correlators on a uniform time grid.

    ``n_out_o`` and ``n_out_e`` are output photon fluxes (1/s);
    ``pair_table[i, j]`` holds the output pair amplitude
    <c_out(t_j) a_out(t_i)> (units 1/s) for j >= i, NaN where not
    evaluated.  Cross-bin correlators vanish identically and are therefore
    not represented; both bins share these single-bin statistics.
    """

    times: np.ndarray
    n_out_o: np.ndarray
    n_out_e: np.ndarray
    pair_table: np.ndarray

    @property
    def cell(self):
        return float(self.times[1] - self.times[0])

    def pair_intensity_at_lag(self, tau):
        """|M(t, t + tau)|^2 over the start grid, linearly interpolated in lag.

        Entries whose lag extends past the evaluated table are zero (the
        pair amplitude has decayed by construction of the grid window).
        """
        n = len(self.times)
        lag = tau / self.cell
        if lag < -1e-9 or lag > n - 1 + 1e-9:
            raise ValueError("tau outside the correlator grid")
        k = min(int(math.floor(lag + 1e-12)), n - 2) if n > 1 else 0
        frac = lag - k
        out = np.zeros(n)
        for i in range(n):
            j0, j1 = i + k, i + k + 1
            v0 = self.pair_table[i, j0] if j0 < n else np.nan
            v1 = self.pair_table[i, j1] if j1 < n else np.nan
            m0 = 0.0 if np.isnan(v0) else abs(v0) ** 2
            m1 = 0.0 if np.isnan(v1) else abs(v1) ** 2
            out[i] = (1.0 - frac) * m0 + frac * m1
        return out

    def singles_at_lag(self, tau):
        """n_out_e(t + tau) over the start grid; zero past the window."""
        shifted_t = self.times + tau
        return np.interp(shifted_t, self.times, self.n_out_e,
                         left=0.0, right=0.0)


def bin_correlators(evolution, params, pulse, *, start_cells=None, max_lag=None):
    """Output-mode correlators for one pump pulse (equivalently, one bin).

    ``max_lag`` (seconds) truncates the pair table past that lag;
    ``start_cells`` restricts the pair-table rows (the singles tracks keep
    the full window either way, so dark-count and accidental integrals are
    never clipped).
    """
    ops = mode_operators(evolution.space)
    times = evolution.stored_times
    n_out_o = params.kappa_o_c * np.real(evolution.tracks["n_a"])
    n_out_e = params.kappa_e_c * np.real(evolution.tracks["n_c"])
    max_lag_cells = None
    if max_lag is not None:
        cell = float(times[1] - times[0])
        max_lag_cells = max(1, math.ceil(max_lag / cell))
    tables = two_time_tables(
        evolution, params, pulse,
        [ConditionalKind("pair", start_op=ops.a, probe_op=ops.c)],
        start_cells=start_cells, max_lag_cells=max_lag_cells)
    scale = math.sqrt(params.kappa_o_c * params.kappa_e_c)
    return BinCorrelators(times=times.copy(), n_out_o=n_out_o,
                          n_out_e=n_out_e, pair_table=scale * tables["pair"])


@dataclass
class CoincidenceRates:
    """Coincidence statistics at one lag.

    ``accidental`` and ``correlated`` are per-shot probabilities including
    detector imperfections; ``per_shot_probability`` is the ideal
    (detector-free) value; ``total`` is the detected coincidence rate,
    per-shot probability times the repetition rate.  The density arrays
    resolve the integrand over the pump window (``times``).
    """

    accidental: float
    correlated: float
    per_shot_probability: float
    total: float
    times: np.ndarray
    accidental_density: np.ndarray
    correlated_density: np.ndarray
    window: tuple


def output_width(times, profile, threshold=0.05):
    """Temporal width of an output intensity profile.

    Defined as the span where the profile exceeds ``threshold`` of its
    peak; zero for an empty profile.
    """
    peak = float(np.max(profile)) if len(profile) else 0.0
    if peak <= 0.0:
        return 0.0
    above = np.flatnonzero(profile >= threshold * peak)
    return float(times[above[-1]] - times[above[0]])


def coincidence_rate(correlators, det, tau, *, interferometer_loss=1.0):
    """Coincidence statistics at lag ``tau`` with detector imperfections.

    Accidental density (eta_o T_o n_o(t) + D_o)(eta_e T_e n_e(t+tau) + D_e) t_w
    and correlated density eta_o eta_e T_o T_e |M(t, t+tau)|^2 t_w are
    integrated over the pump window; the ideal per-shot probability uses
    the moment-factored second-order correlation n_o n_e + |M|^2.

    Raises WindowTooWide when t_w exceeds 10% of the microwave output
    photon width (the time-integral approximation for counts would fail).
    """
    width = output_width(correlators.times, correlators.n_out_e)
    if width > 0.0 and det.t_w > 0.1 * width:
        raise WindowTooWide(
            f"t_w = {det.t_w:.3e} s exceeds 10% of the output photon width "
            f"{width:.3e} s")

    eta_o = det.eta_o * interferometer_loss
    n_o = correlators.n_out_o
    n_e_shift = correlators.singles_at_lag(tau)
    m2 = correlators.pair_intensity_at_lag(tau)

    acc_density = (eta_o * det.T_o * n_o + det.D_o) * \
                  (det.eta_e * det.T_e * n_e_shift + det.D_e) * det.t_w
    cor_density = eta_o * det.eta_e * det.T_o * det.T_e * m2 * det.t_w
    ideal_density = (n_o * n_e_shift + m2) * det.t_w

    times = correlators.times
    accidental = float(np.trapezoid(acc_density, times))
    correlated = float(np.trapezoid(cor_density, times))
    per_shot = float(np.trapezoid(ideal_density, times))
    total = (accidental + correlated) * det.r_D
    return CoincidenceRates(
        accidental=accidental, correlated=correlated,
        per_shot_probability=per_shot, total=total,
        times=times, accidental_density=acc_density,
        correlated_density=cor_density,
        window=(float(times[0]), float(times[-1])))


@dataclass(frozen=True)
class ChshSetting:
    """Bloch angles of the two time-bin analyzers.

    ``alpha``/``beta`` are the polar rotation angles of the optical and
    microwave bins, ``theta``/``phi`` the azimuthal phases; the primed
    settings follow the alpha' = alpha + pi/2 convention.
    """

    alpha: float
    beta: float
    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        two_pi = 2.0 * math.pi
        for name in ("alpha", "beta", "theta", "phi"):
            object.__setattr__(self, name, float(getattr(self, name)) % two_pi)

    @property
    def alpha_prime(self):
        return self.alpha + math.pi / 2.0

    @property
    def beta_prime(self):
        return self.beta + math.pi / 2.0


@dataclass(frozen=True)
class BinRotation:
    """Coefficients expressing rotated-bin correlators via unrotated ones.

    With vanishing cross-bin correlations and equal single-bin statistics:
    <a1'^dag a1'> = optical_weights . (n_a1, n_a2) = n_a, likewise for the
    microwave side, and <a1'^dag c1'^dag> = pair_coefficient * <a^dag c^dag>.
    """

    optical_weights: tuple
    microwave_weights: tuple
    pair_coefficient: complex

    @property
    def pair_weight(self):
        """Weight multiplying |<a^dag c^dag>|^2 in the coincidence rate."""
        return abs(self.pair_coefficient) ** 2


def rotate_bins(setting):
    """Apply the 2x2 time-bin rotations symbolically.

    Substituting the rotation matrices and dropping cross-bin terms gives a
    correlated-term weight |cos(a/2) cos(b/2) + sin(a/2) sin(b/2)
    e^{-i(theta+phi)}|^2, i.e. cos^2((alpha - beta)/2) in the theta = phi = 0
    plane.  Conventions that conjugate one of the rotations yield the
    half-sum instead; the two differ only by the relabeling beta -> -beta
    and give identical CHSH extrema.
    """
    ca, sa = math.cos(setting.alpha / 2.0), math.sin(setting.alpha / 2.0)
    cb, sb = math.cos(setting.beta / 2.0), math.sin(setting.beta / 2.0)
    q = ca * cb + sa * sb * np.exp(-1j * (setting.theta + setting.phi))
    return BinRotation(optical_weights=(ca * ca, sa * sa),
                       microwave_weights=(cb * cb, sb * sb),
                       pair_coefficient=complex(q))


def rotation_matrix(angle, phase):
    """The 2x2 bin rotation ((cos a/2, sin a/2 e^{i th}), (-sin a/2 e^{-i th}, cos a/2))."""
    c, s = math.cos(angle / 2.0), math.sin(angle / 2.0)
    return np.array([[c, s * np.exp(1j * phase)],
                     [-s * np.exp(-1j * phase), c]])


def coincidence_counts(correlators, det, setting, tau, *,
                       interferometer_loss=0.5):
    """Coincidence counts C_(alpha, beta) over the collection time.

    The optical interferometer discards half the photon rate in time-bin
    runs, applied as ``interferometer_loss`` on the optical efficiency
    (set to 1.0 to disable).
    """
    if det.t_c == 0.0:
        return 0.0
    rates = coincidence_rate(correlators, det, tau,
                             interferometer_loss=interferometer_loss)
    weight = rotate_bins(setting).pair_weight
    per_shot = rates.accidental + weight * rates.correlated
    return per_shot * det.r_D * det.t_c


def _four_counts(accidental, correlated, alpha, beta, theta, phi, shot_scale):
    counts = {}
    for da, db in ((0.0, 0.0), (0.0, math.pi), (math.pi, 0.0), (math.pi, math.pi)):
        w = rotate_bins(ChshSetting(alpha + da, beta + db, theta, phi)).pair_weight
        counts[(da, db)] = (accidental + w * correlated) * shot_scale
    return counts


def _correlation_from_counts(counts):
    c00 = counts[(0.0, 0.0)]
    cpp = counts[(math.pi, math.pi)]
    c0p = counts[(0.0, math.pi)]
    cp0 = counts[(math.pi, 0.0)]
    denom = c00 + cpp + c0p + cp0
    if denom == 0.0:
        raise ZeroDenominator("all four counts vanish; no statistics")
    return (c00 + cpp - c0p - cp0) / denom


def chsh_correlation(correlators, det, alpha, beta, tau, *, theta=0.0, phi=0.0,
                     interferometer_loss=0.5):
    """One correlator estimate <sigma_alpha sigma_beta> from count ratios."""
    rates = coincidence_rate(correlators, det, tau,
                             interferometer_loss=interferometer_loss)
    shot = det.r_D * det.t_c if det.t_c > 0 else 1.0
    counts = _four_counts(rates.accidental, rates.correlated,
                          alpha, beta, theta, phi, shot)
    return _correlation_from_counts(counts)


def chsh_s(correlators, det, alpha, beta, tau, *, theta=0.0, phi=0.0,
           interferometer_loss=0.5):
    """CHSH combination S(alpha, beta) with primed settings at +pi/2."""
    rates = coincidence_rate(correlators, det, tau,
                             interferometer_loss=interferometer_loss)
    return _chsh_from_rates(rates.accidental, rates.correlated, alpha, beta,
                            theta, phi, det)


def _chsh_from_rates(accidental, correlated, alpha, beta, theta, phi, det):
    shot = det.r_D * det.t_c if det.t_c > 0 else 1.0
    half_pi = math.pi / 2.0

    def corr(a, b):
        counts = _four_counts(accidental, correlated, a, b, theta, phi, shot)
        return _correlation_from_counts(counts)

    return (corr(alpha, beta) + corr(alpha + half_pi, beta + half_pi)
            + corr(alpha, beta + half_pi) - corr(alpha + half_pi, beta))


def chsh_beta_sweep(correlators, det, alpha, betas, tau, *, theta=0.0, phi=0.0,
                    interferometer_loss=0.5):
    """S and the four base counts over a beta sweep at fixed alpha.

    Returns a dict with keys ``beta``, ``S``, ``C_00``, ``C_0pi``,
    ``C_pi0``, ``C_pipi`` (counts at (alpha, beta) with the indicated
    pi offsets).  The correlator table is integrated once and reused.
    """
    rates = coincidence_rate(correlators, det, tau,
                             interferometer_loss=interferometer_loss)
    shot = det.r_D * det.t_c if det.t_c > 0 else 1.0
    betas = np.asarray(betas, dtype=float)
    out = {"beta": betas,
           "S": np.empty_like(betas),
           "C_00": np.empty_like(betas), "C_0pi": np.empty_like(betas),
           "C_pi0": np.empty_like(betas), "C_pipi": np.empty_like(betas)}
    for i, b in enumerate(betas):
        counts = _four_counts(rates.accidental, rates.correlated,
                              alpha, b, theta, phi, shot)
        out["C_00"][i] = counts[(0.0, 0.0)]
        out["C_0pi"][i] = counts[(0.0, math.pi)]
        out["C_pi0"][i] = counts[(math.pi, 0.0)]
        out["C_pipi"][i] = counts[(math.pi, math.pi)]
        out["S"][i] = _chsh_from_rates(rates.accidental, rates.correlated,
                                       alpha, b, theta, phi, det)
    return out


def coincidence_rate_sweep(correlators, det, taus, *, interferometer_loss=1.0):
    """Total/accidental/correlated rates over a lag sweep (one table reuse)."""
    totals, accs, cors = [], [], []
    for tau in taus:
        r = coincidence_rate(correlators, det, tau,
                             interferometer_loss=interferometer_loss)
        totals.append(r.total)
        accs.append(r.accidental * det.r_D)
        cors.append(r.correlated * det.r_D)
    return np.asarray(totals), np.asarray(accs), np.asarray(cors)


def sample_poisson_counts(expected, rng):
    """Poisson-sample expected counts (seeded generator) for realistic stats."""
    return rng.poisson(np.asarray(expected, dtype=float))
