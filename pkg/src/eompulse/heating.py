"""Transient laser-heating model for the transducer chip.

A lumped thermal balance, linearized cooling and constant heat capacity
give a first-order linear ODE for the effective device temperature,

    dT/dt = b' * exp(-(t - t0)^2 / (2 sigma^2)) + d - a * T

for a Gaussian pulse (CW pumping replaces the Gaussian term by a constant,
dT/dt = b - a T).  Only the composite coefficients {a, b, b', d} are
identifiable, so only those are stored.

Unit conventions: the public functions take time in SECONDS.  The fitted
coefficients are quoted per microsecond (a in 1/us, b' and d in K/us), as
is conventional for these devices; conversion happens internally.  The
error-function fit constants baked into :func:`fitted_pulse_temperature`
likewise take t in microseconds internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize
from scipy.special import erf

HBAR = 1.054571817e-34  # J s
K_B = 1.380649e-23      # J / K

US = 1e-6  # seconds per microsecond

# Least-squares fit of the pulse-heated device temperature (a in 1/us,
# b' and d in K/us, T0 in K; pulse t0 = 0.16 us, sigma = 0.068 us).
FIT_A = 7.244
FIT_B_PRIME = 2.521
FIT_D = 1.138
FIT_T0 = 0.108
FIT_PULSE_T0_US = 0.16
FIT_PULSE_SIGMA_US = 0.068


class FitDiverged(Exception):
    """Nonlinear fit residual exceeds the variance of the input data."""


class NoConvergence(Exception):
    """Pulse train failed to reach a periodic steady cycle."""


class RootNotBracketed(Exception):
    """No pulse peak intensity in the search range matches the CW average."""


@dataclass(frozen=True)
class HeatingParams:
    """Composite thermal coefficients plus power-law and schedule settings.

    ``a`` is in 1/us, ``b_prime`` and ``d`` in K/us, ``T0`` in K.  ``eta``
    (K per photon^gamma) and ``gamma`` set the power law T_eq = eta * n^gamma
    linking CW equilibrium temperature to intracavity photon number; the
    exponent is sub-linear and configuration-overridable since published
    values are not available.  ``t_per`` is the pulse repetition period in
    seconds.  ``omega_m`` (rad/s) converts temperature to bath occupancy.
    """

    a: float = FIT_A
    b_prime: float = FIT_B_PRIME
    d: float = FIT_D
    T0: float = FIT_T0
    eta: float = 1.0
    gamma: float = 2.0 / 3.0
    t_per: float = 33e-6
    omega_m: float = 2 * math.pi * 5e9

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("a must be > 0")
        if self.T0 < 0:
            raise ValueError("T0 must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.t_per <= 0:
            raise ValueError("t_per must be > 0")


@dataclass(frozen=True)
class TemperatureCurve:
    """Sampled temperature trace with a provenance tag."""

    times: np.ndarray      # seconds
    temperatures: np.ndarray  # kelvin
    provenance: str

    def __post_init__(self):
        if np.any(self.temperatures < 0):
            raise ValueError("temperatures must be >= 0")


def cw_temperature(t, a, b, T0):
    """CW-pump solution T(t) = (b/a) (1 - (1 - T0 a / b) exp(-a t)).

    ``t`` in seconds, ``a`` in 1/us, ``b`` in K/us.  Equilibrates to b/a.
    """
    t_us = np.asarray(t, dtype=float) / US
    ratio = b / a
    out = ratio - (ratio - T0) * np.exp(-a * t_us)
    return out if out.ndim else float(out)


def gaussian_temperature(t, params, t0=None, sigma=None, method="erf"):
    """Pulse-pump solution of the thermal ODE.

    The driven term is b' e^{-at} Int_0^t e^{at'} e^{-(t'-t0)^2/(2 s^2)} dt',
    evaluated either through the error-function closed form or by adaptive
    quadrature (``method`` = "erf" or "quad"); the two agree to 1e-8
    relative.  The undriven part relaxes from T0 toward d/a, which is also
    the t -> infinity limit of the full solution.

    ``t`` is in seconds; ``t0``/``sigma`` default to the fitted pulse shape.
    """
    t_us = np.atleast_1d(np.asarray(t, dtype=float)) / US
    t0_us = FIT_PULSE_T0_US if t0 is None else t0 / US
    s_us = FIT_PULSE_SIGMA_US if sigma is None else sigma / US
    a, bp, d, T0 = params.a, params.b_prime, params.d, params.T0

    if method == "erf":
        pulse_term = bp * np.exp(-a * t_us) * _gauss_exp_integral(t_us, a, t0_us, s_us)
    elif method == "quad":
        vals = np.empty_like(t_us)
        for i, ti in enumerate(t_us):
            integrand = lambda x: math.exp(a * x) * math.exp(-0.5 * ((x - t0_us) / s_us) ** 2)
            vals[i], _ = integrate.quad(integrand, 0.0, ti, epsabs=1e-14, epsrel=1e-12, limit=200)
        pulse_term = bp * np.exp(-a * t_us) * vals
    else:
        raise ValueError(f"unknown method {method!r}")

    base = (d / a) - (d / a - T0) * np.exp(-a * t_us)
    out = pulse_term + base
    return out if np.ndim(t) else float(out[0])


def _gauss_exp_integral(t_us, a, t0_us, s_us):
    """Closed form of Int_0^t e^{a t'} e^{-(t'-t0)^2/(2 s^2)} dt' (t in us)."""
    mu = t0_us + a * s_us * s_us
    pref = s_us * math.sqrt(math.pi / 2.0) * np.exp(a * t0_us + 0.5 * (a * s_us) ** 2)
    return pref * (erf((t_us - mu) / (math.sqrt(2.0) * s_us))
                   - erf(-mu / (math.sqrt(2.0) * s_us)))


def temperature_ode_rhs(t_us, T, a, d, b_prime=0.0, t0_us=0.0, sigma_us=1.0,
                        constant_drive=0.0):
    """Right-hand side of the thermal ODE in microsecond units.

    Serves as the independent oracle for the closed forms: dT/dt =
    constant_drive + b' g(t) + d - a T with g the unit-peak Gaussian.
    """
    g = math.exp(-0.5 * ((t_us - t0_us) / sigma_us) ** 2) if b_prime else 0.0
    return constant_drive + b_prime * g + d - a * T


def integrate_temperature_ode(t, params, t0=None, sigma=None, cw_b=None):
    """Numerically integrate the thermal ODE on times ``t`` (seconds).

    With ``cw_b`` set (K/us) the drive is constant (CW form, d ignored);
    otherwise the Gaussian pulse drive of ``params`` is used.  Kept as an
    independent cross-check of the analytic solutions.
    """
    t_us = np.asarray(t, dtype=float) / US
    if cw_b is not None:
        rhs = lambda x, T: cw_b - params.a * T
    else:
        t0_us = FIT_PULSE_T0_US if t0 is None else t0 / US
        s_us = FIT_PULSE_SIGMA_US if sigma is None else sigma / US
        rhs = lambda x, T: temperature_ode_rhs(
            x, T, params.a, params.d, params.b_prime, t0_us, s_us)
    sol = integrate.solve_ivp(rhs, (t_us[0], t_us[-1]), [params.T0],
                              t_eval=t_us, rtol=1e-11, atol=1e-12,
                              max_step=(t_us[-1] - t_us[0]) / 200 or np.inf)
    if not sol.success:
        raise RuntimeError(f"ODE integration failed: {sol.message}")
    return sol.y[0]


def fitted_pulse_temperature(t):
    """Device temperature under the fitted pulsed heating (t in seconds).

    Closed form T(t) = b' e^{-at} f(t) + (d/a)(1 - (1 - a T0 / d) e^{-at})
    with f(t) = 0.305 - 0.306 erf(2.013 - 10.408 t), t in MICROSECONDS
    inside f; the constants come from the least-squares fit quoted above
    and equal the error-function form of :func:`gaussian_temperature` at
    the fitted pulse shape up to their printed rounding.
    """
    t_us = np.asarray(t, dtype=float) / US
    f = 0.305 - 0.306 * erf(2.013 - 10.408 * t_us)
    a, bp, d, T0 = FIT_A, FIT_B_PRIME, FIT_D, FIT_T0
    out = bp * np.exp(-a * t_us) * f + (d / a) * (1.0 - (1.0 - a * T0 / d) * np.exp(-a * t_us))
    return out if np.ndim(t) else float(out)


def thermal_occupancy(T, omega=2 * math.pi * 5e9):
    """Bose-Einstein occupancy n = 1 / (exp(hbar w / k_B T) - 1); n(0) = 0."""
    T_arr = np.asarray(T, dtype=float)
    out = np.zeros_like(T_arr)
    pos = T_arr > 0
    x = HBAR * omega / (K_B * T_arr[pos])
    out[pos] = 1.0 / np.expm1(x)
    return out if np.ndim(T) else float(out)


def occupancy_profile(params=None, sigma=None, t0=None):
    """Mechanical-bath occupancy n_th(t) implied by the pulse heating.

    Returns a callable of time in seconds, suitable for
    ``SystemParams.n_th_b``.  With default arguments it uses the published
    erf fit; pass ``sigma``/``t0`` (seconds) to recompute the temperature
    for a different pump width at the same fitted coefficients.
    """
    if params is None:
        params = HeatingParams()
    if sigma is None and t0 is None:
        temp = fitted_pulse_temperature
    else:
        def temp(t):
            return gaussian_temperature(t, params, t0=t0, sigma=sigma)

    def profile(t):
        return thermal_occupancy(temp(t), params.omega_m)

    return profile


def pulse_train_temperature(params, n_periods, t0=None, sigma=None,
                            samples_per_period=512, steady_tol=1e-6,
                            max_periods=10_000, require_steady=False):
    """Temperature response to a repeated Gaussian pulse.

    Within each period the analytic single-pulse solution applies, with the
    initial temperature carried over for continuity.  The cycle converges
    geometrically (factor exp(-a t_per)); with ``require_steady`` the train
    is extended until the period-to-period change drops below
    ``steady_tol`` kelvin, raising :class:`NoConvergence` after
    ``max_periods``.
    """
    t_per_us = params.t_per / US
    sigma_us = (FIT_PULSE_SIGMA_US if sigma is None else sigma / US)
    t0_us = (0.5 * t_per_us if t0 is None else t0 / US)
    if t_per_us <= 6.0 * sigma_us:
        raise ValueError("t_per must exceed 6 sigma for a resolvable train")

    local_us = np.linspace(0.0, t_per_us, samples_per_period, endpoint=False)

    def one_period(T_start):
        p = replace(params, T0=T_start)
        vals = gaussian_temperature(local_us * US, p, t0=t0_us * US, sigma=sigma_us * US)
        p_end = gaussian_temperature(t_per_us * US, p, t0=t0_us * US, sigma=sigma_us * US)
        return vals, float(p_end)

    times, temps = [], []
    T_start = params.T0
    period = 0
    while True:
        vals, T_end = one_period(T_start)
        if period < n_periods:
            times.append((local_us + period * t_per_us) * US)
            temps.append(vals)
        steady = abs(T_end - T_start) < steady_tol
        period += 1
        T_start = T_end
        if period >= n_periods and (not require_steady or steady):
            break
        if period >= max_periods:
            raise NoConvergence(
                f"no periodic steady cycle after {max_periods} periods")

    return TemperatureCurve(times=np.concatenate(times),
                            temperatures=np.concatenate(temps),
                            provenance="piecewise-train")


def steady_cycle_average(params, peak_b_prime=None, t0=None, sigma=None):
    """Time-averaged temperature of the periodic steady cycle.

    Integrating the ODE over one steady period gives the exact average
    a <T> = d + b' * (pulse mass inside one period) / t_per, with the mass
    evaluated by the error function (tail clipping included).
    """
    bp = params.b_prime if peak_b_prime is None else peak_b_prime
    t_per_us = params.t_per / US
    sigma_us = (FIT_PULSE_SIGMA_US if sigma is None else sigma / US)
    t0_us = (0.5 * t_per_us if t0 is None else t0 / US)
    root2 = math.sqrt(2.0)
    mass = sigma_us * math.sqrt(math.pi / 2.0) * (
        erf((t_per_us - t0_us) / (root2 * sigma_us)) + erf(t0_us / (root2 * sigma_us)))
    return (params.d + bp * mass / t_per_us) / params.a


@dataclass(frozen=True)
class FitResult:
    params: HeatingParams
    residual_norm: float
    per_parameter: dict
    degenerate: bool


def fit_params(samples, initial=None, base=None):
    """Nonlinear least squares of the pulse solution over {a, b', d, T0}.

    ``samples`` is a :class:`TemperatureCurve` (or (times, temps) pair,
    seconds/kelvin) spanning both the rise and the decay; at least 8 points
    are required.  A near-constant input leaves ``a`` unidentifiable and is
    reported through the ``degenerate`` flag rather than an exception.

    Raises
    ------
    FitDiverged
        If the RMS residual exceeds the standard deviation of the data,
        i.e. the model explains nothing.
    """
    if isinstance(samples, TemperatureCurve):
        times, temps = samples.times, samples.temperatures
    else:
        times, temps = samples
    times = np.asarray(times, dtype=float)
    temps = np.asarray(temps, dtype=float)
    if times.size < 8:
        raise ValueError("need at least 8 samples spanning rise and decay")

    base = base or HeatingParams()
    span_us = max((times[-1] - times[0]) / US, 1e-9)
    if initial is None:
        initial = (3.0 / span_us, np.ptp(temps) / span_us * 2.0,
                   max(temps.min(), 1e-3) * 3.0 / span_us, max(temps[0], 1e-4))

    def model(theta):
        a, bp, d, T0 = theta
        p = replace(base, a=a, b_prime=bp, d=d, T0=T0)
        return gaussian_temperature(times, p)

    def residual(theta):
        return model(theta) - temps

    scale = np.maximum(np.abs(initial), 1e-6)
    result = optimize.least_squares(residual, initial, x_scale=scale,
                                    bounds=([1e-12, 0.0, 0.0, 0.0], np.inf),
                                    xtol=1e-14, ftol=1e-14, gtol=1e-14)
    res_norm = float(np.sqrt(np.mean(result.fun ** 2)))
    data_sd = float(np.std(temps))
    if data_sd > 0 and res_norm > data_sd:
        raise FitDiverged(
            f"RMS residual {res_norm:.3e} K exceeds data spread {data_sd:.3e} K")

    a, bp, d, T0 = result.x
    sing = np.linalg.svd(result.jac, compute_uv=False)
    degenerate = bool(sing[0] <= 0 or sing[-1] / sing[0] < 1e-10
                      or bp < 1e-6 * max(abs(d), 1.0))
    fitted = replace(base, a=a, b_prime=bp, d=d, T0=T0)
    per_param = {"a": float(a), "b_prime": float(bp), "d": float(d), "T0": float(T0)}
    return FitResult(params=fitted, residual_norm=res_norm,
                     per_parameter=per_param, degenerate=degenerate)


@dataclass(frozen=True)
class AverageMatch:
    cw_nbar: float
    pulse_peak_nbar: float
    ratio: float
    average_temperature: float


def match_average(params, cw_nbar, sigma=None, t0=None, bracket_growth=4.0,
                  max_doublings=200):
    """Pulse peak intensity with the same period-averaged heating as a CW pump.

    The CW side equilibrates to eta * cw_nbar^gamma.  For the pulse, the
    peak heating coefficient follows the same power law,
    b'(n_pk) = a eta n_pk^gamma - d, and the steady-cycle average is matched
    by root finding over the peak intracavity photon number n_pk.

    Raises
    ------
    RootNotBracketed
        If no peak intensity up to the expanded search range matches, or if
        the CW equilibrium sits below the pulse-free baseline d/a.
    """
    a, eta, gamma = params.a, params.eta, params.gamma
    target = eta * cw_nbar ** gamma
    if a * target < params.d:
        raise RootNotBracketed(
            "CW equilibrium below the pulse-free baseline d/a; no match exists")

    def avg_minus_target(n_pk):
        bp = a * eta * n_pk ** gamma - params.d
        if bp < 0:
            bp = 0.0
        return steady_cycle_average(params, peak_b_prime=bp, sigma=sigma, t0=t0) - target

    lo = cw_nbar
    if avg_minus_target(lo) > 0:
        # Already too hot at equal peak; search downward instead.
        lo = cw_nbar * 1e-12
        if avg_minus_target(lo) > 0:
            raise RootNotBracketed("average exceeds CW target even at zero peak")
        hi = cw_nbar
    else:
        hi = cw_nbar * bracket_growth
        for _ in range(max_doublings):
            if avg_minus_target(hi) > 0:
                break
            hi *= bracket_growth
        else:
            raise RootNotBracketed(
                f"no matching peak intensity found up to n_pk = {hi:.3e}")

    n_pk = optimize.brentq(avg_minus_target, lo, hi, xtol=1e-15, rtol=1e-13)
    return AverageMatch(cw_nbar=cw_nbar, pulse_peak_nbar=float(n_pk),
                        ratio=float(n_pk / cw_nbar),
                        average_temperature=float(target))
