"""System parameters and pump-pulse profiles for the three-mode transducer.

All frequencies, couplings and rates held by :class:`SystemParams` are
angular (rad/s).  Configuration files quote ordinary frequencies (Hz); the
factor 2*pi is applied exactly once, at parse time (see ``eompulse.config``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Union

import numpy as np

TWO_PI = 2.0 * math.pi

# Bath occupancies are either a constant or a function of time (seconds).
OccupancyProfile = Union[float, Callable[[np.ndarray], np.ndarray]]


class PumpMode(Enum):
    """How the pulse amplitude parameterizes the squeezing strength."""

    GAIN_FACTOR = "gain_factor"            # g_om(t) = amplitude * envelope(t) * g_0
    INTRACAVITY_PHOTON = "intracavity_photon"  # g_om(t) = g_0 * sqrt(n_bar(t))


@dataclass(frozen=True)
class SystemParams:
    """Mode frequencies, couplings, loss and thermal rates (all rad/s).

    The total optical and electrical linewidths are derived, never stored:
    ``kappa_o = kappa_o_i + kappa_o_c`` and ``kappa_e = kappa_e_i + kappa_e_c``.
    ``n_th_b`` may be a callable of time in seconds for a time-dependent
    mechanical bath; ``n_th_c`` is a constant.
    """

    g_em: float
    g_0: float
    kappa_o_i: float
    kappa_o_c: float
    kappa_m: float
    kappa_e_i: float
    kappa_e_c: float
    omega_o: float
    omega_m: float
    omega_e: float
    n_th_b: OccupancyProfile = 0.0
    n_th_c: float = 0.0

    def __post_init__(self):
        for name in ("g_em", "g_0", "kappa_o_i", "kappa_o_c", "kappa_m",
                     "kappa_e_i", "kappa_e_c", "omega_o", "omega_m", "omega_e"):
            value = getattr(self, name)
            if not (value >= 0.0):
                raise ValueError(f"{name} must be >= 0, got {value}")
        if not callable(self.n_th_b) and self.n_th_b < 0:
            raise ValueError("n_th_b must be >= 0")
        if self.n_th_c < 0:
            raise ValueError("n_th_c must be >= 0")

    @property
    def kappa_o(self):
        return self.kappa_o_i + self.kappa_o_c

    @property
    def kappa_e(self):
        return self.kappa_e_i + self.kappa_e_c

    def n_th_b_at(self, t):
        """Mechanical bath occupancy at time(s) ``t`` (seconds)."""
        if callable(self.n_th_b):
            return self.n_th_b(t)
        return self.n_th_b if np.isscalar(t) else np.full(np.shape(t), self.n_th_b)

    def n_th_b_max(self, t_start, t_end, samples=512):
        """Largest bath occupancy over a window; used for step-size bounds."""
        if not callable(self.n_th_b):
            return float(self.n_th_b)
        ts = np.linspace(t_start, t_end, samples)
        return float(np.max(self.n_th_b(ts)))

    def with_n_th_b(self, profile):
        """Copy of the parameters with a different mechanical bath occupancy."""
        return SystemParams(
            g_em=self.g_em, g_0=self.g_0,
            kappa_o_i=self.kappa_o_i, kappa_o_c=self.kappa_o_c,
            kappa_m=self.kappa_m,
            kappa_e_i=self.kappa_e_i, kappa_e_c=self.kappa_e_c,
            omega_o=self.omega_o, omega_m=self.omega_m, omega_e=self.omega_e,
            n_th_b=profile, n_th_c=self.n_th_c,
        )


@dataclass(frozen=True)
class PumpPulse:
    """Gaussian drive profile.

    ``amplitude`` is a dimensionless gain factor multiplying the bare
    coupling (GAIN_FACTOR mode) or a peak intracavity photon number
    (INTRACAVITY_PHOTON mode).  ``t0`` and ``sigma`` are in seconds.
    """

    amplitude: float
    t0: float
    sigma: float
    mode: PumpMode = PumpMode.GAIN_FACTOR

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")

    def envelope(self, t):
        """Unit-peak Gaussian envelope exp(-(t - t0)^2 / (2 sigma^2))."""
        x = (np.asarray(t, dtype=float) - self.t0) / self.sigma
        return np.exp(-0.5 * x * x)

    def intracavity_photons(self, t):
        """Mean pump photon number in the optical cavity, n_bar(t)."""
        env = self.envelope(t)
        if self.mode is PumpMode.INTRACAVITY_PHOTON:
            return self.amplitude * env
        return (self.amplitude * env) ** 2

    def g_om(self, t, g_0):
        """Time-dependent squeezing strength (rad/s) for bare coupling g_0."""
        if self.mode is PumpMode.GAIN_FACTOR:
            return self.amplitude * self.envelope(t) * g_0
        return g_0 * np.sqrt(self.amplitude * self.envelope(t))

    def peak_g_om(self, g_0):
        if self.mode is PumpMode.GAIN_FACTOR:
            return self.amplitude * g_0
        return g_0 * math.sqrt(self.amplitude)


def default_params(n_th_b=0.0, n_th_c=0.0):
    """Feasible device parameters used throughout the bundled experiments."""
    return SystemParams(
        g_em=TWO_PI * 1.2e6,
        g_0=TWO_PI * 260e3,
        kappa_o_i=TWO_PI * 0.65e9,
        kappa_o_c=TWO_PI * 0.65e9,
        kappa_m=TWO_PI * 150e3,
        kappa_e_i=TWO_PI * 0.55e6,
        kappa_e_c=TWO_PI * 1.25e6,
        omega_o=TWO_PI * 190e12,
        omega_m=TWO_PI * 5e9,
        omega_e=TWO_PI * 5e9,
        n_th_b=n_th_b,
        n_th_c=n_th_c,
    )


def default_pulse(gain=1.0):
    """Gaussian pump with t0 = 130 ns, sigma = 30 ns and a given gain factor."""
    return PumpPulse(amplitude=gain, t0=130e-9, sigma=30e-9,
                     mode=PumpMode.GAIN_FACTOR)
