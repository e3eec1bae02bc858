"""Temporal biphoton wavepacket and its Schmidt-mode structure.

The pair amplitude f(t1, t2) is filled from the time-ordered pair
correlator <c_out(t2) a_out(t1)> (both orderings across the diagonal), the
intensity |f|^2 alternatively from the two orderings of the second-order
correlation; output-mode values are the intracavity correlators scaled by
the out-coupling rates, with vacuum inputs.  Schmidt modes come from an
SVD of the amplitude discretized with square-root trapezoid weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dynamics import ConditionalKind, GridMismatch, two_time_tables
from .fock import mode_operators

NORMALIZATION_TOL = 1e-10


class DegenerateInput(Exception):
    """Zero-mass wavepacket cannot be normalized or decomposed."""


class WavepacketKind(Enum):
    AMPLITUDE = "amplitude"
    INTENSITY = "intensity"


@dataclass
class BiphotonWavepacket:
    """Pair amplitude on a (t1, t2) grid.

    ``amplitude`` holds f(t1, t2) for the amplitude kind.  For the
    intensity kind only |f|^2 is physical; ``amplitude`` then stores the
    positive square root and carries no phase.  ``mass`` is the
    pre-normalization L2 mass under trapezoid quadrature.
    """

    t1_times: np.ndarray
    t2_times: np.ndarray
    amplitude: np.ndarray
    kind: WavepacketKind
    mass: float
    normalized: bool

    @property
    def intensity(self):
        return np.abs(self.amplitude) ** 2

    def normalize(self):
        """Unit-L2-mass copy; a zero-mass packet is returned flagged instead."""
        if self.mass <= 0.0:
            return BiphotonWavepacket(self.t1_times, self.t2_times,
                                      self.amplitude.copy(), self.kind,
                                      self.mass, normalized=False)
        amp = self.amplitude / math.sqrt(self.mass)
        return BiphotonWavepacket(self.t1_times, self.t2_times, amp,
                                  self.kind, self.mass, normalized=True)


@dataclass
class SchmidtSpectrum:
    """Schmidt weights, paired temporal modes and entanglement entropy.

    ``lambdas`` is the full descending spectrum (sums to one); the mode
    arrays keep the leading ``k_max`` pairs, orthonormal under the
    trapezoid weights of their grids.  Entropy is in nats.
    """

    lambdas: np.ndarray
    optical_modes: np.ndarray    # (k_max, len(t1))
    microwave_modes: np.ndarray  # (k_max, len(t2))
    t1_times: np.ndarray
    t2_times: np.ndarray
    entropy: float


def trapezoid_weights(times):
    w = np.full(len(times), times[1] - times[0], dtype=float)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def quadrature_mass(t1, t2, squared_amplitude):
    w1 = trapezoid_weights(t1)
    w2 = trapezoid_weights(t2)
    return float(np.real(np.einsum("i,ij,j->", w1, squared_amplitude, w2)))


def assemble_wavepacket(evolution, params, pulse, kind=WavepacketKind.AMPLITUDE):
    """Build the output biphoton wavepacket from a propagated evolution.

    Amplitude kind: f(t1, t2) = sqrt(kappa_o_c kappa_e_c) times the pair
    correlator, with the earlier-time operator applied to the state first
    in the regression (optical first above the diagonal, microwave first
    below).  Intensity kind: |f|^2 from the two orderings of the
    second-order correlation, scaled by kappa_o_c * kappa_e_c.
    """
    grid = evolution.grid
    if grid.t_end < pulse.t0 + 4.0 * pulse.sigma:
        raise GridMismatch("evolution window does not cover the pump")
    ops = mode_operators(evolution.space)
    a, c = ops.a, ops.c
    times = evolution.stored_times
    scale_amp = math.sqrt(params.kappa_o_c * params.kappa_e_c)
    scale_int = params.kappa_o_c * params.kappa_e_c

    if kind is WavepacketKind.AMPLITUDE:
        kinds = [
            ConditionalKind("optical_first", start_op=a, probe_op=c),
            ConditionalKind("microwave_first", start_op=c, probe_op=a),
        ]
        tables = two_time_tables(evolution, params, pulse, kinds)
        upper = tables["optical_first"]   # [i, j] = <c(t_j) a(t_i)>, j >= i
        lower = tables["microwave_first"]  # [i, j] = <a(t_j) c(t_i)>, j >= i
        n = len(times)
        f = np.empty((n, n), dtype=complex)
        iu = np.triu_indices(n)
        f[iu] = scale_amp * upper[iu]
        il = np.tril_indices(n, k=-1)
        f[il] = scale_amp * lower[il[1], il[0]]
        mass = quadrature_mass(times, times, np.abs(f) ** 2)
        return BiphotonWavepacket(times.copy(), times.copy(), f, kind,
                                  mass, normalized=False)

    num_a = a.conj().T @ a
    num_c = c.conj().T @ c
    kinds = [
        ConditionalKind("optical_first", start_op=a, probe_op=num_c, sandwich=True),
        ConditionalKind("microwave_first", start_op=c, probe_op=num_a, sandwich=True),
    ]
    tables = two_time_tables(evolution, params, pulse, kinds)
    n = len(times)
    g2 = np.empty((n, n), dtype=float)
    iu = np.triu_indices(n)
    g2[iu] = scale_int * tables["optical_first"][iu].real
    il = np.tril_indices(n, k=-1)
    g2[il] = scale_int * tables["microwave_first"][il[1], il[0]].real
    g2 = np.clip(g2, 0.0, None)
    mass = quadrature_mass(times, times, g2)
    return BiphotonWavepacket(times.copy(), times.copy(), np.sqrt(g2),
                              kind, mass, normalized=False)


def accidental_intensity(evolution, params):
    """Output singles product kappa_o_c kappa_e_c n_a(t1) n_c(t2).

    Subtracting this from the intensity-kind grid isolates the correlated
    part, which at weak pump matches |f|^2 of the amplitude kind.
    """
    n_a = np.real(evolution.tracks["n_a"])
    n_c = np.real(evolution.tracks["n_c"])
    return params.kappa_o_c * params.kappa_e_c * np.outer(n_a, n_c)


def schmidt_decompose(wp, k_max=8):
    """Schmidt decomposition of a normalized amplitude-kind wavepacket.

    Discretizes with square-root trapezoid weights, runs an SVD and maps
    the singular vectors back to time-domain mode functions.  The weights
    cancel in the spectrum, so sum(lambda) equals the quadrature mass of
    the normalized packet (one, to roundoff).
    """
    if wp.kind is not WavepacketKind.AMPLITUDE:
        raise ValueError("Schmidt decomposition needs the amplitude kind")
    if wp.mass <= 0.0:
        raise DegenerateInput("wavepacket has zero mass")
    packet = wp if wp.normalized else wp.normalize()

    w1 = trapezoid_weights(packet.t1_times)
    w2 = trapezoid_weights(packet.t2_times)
    f_w = packet.amplitude * np.sqrt(w1)[:, None] * np.sqrt(w2)[None, :]
    u, s, vh = np.linalg.svd(f_w, full_matrices=False)
    lambdas = s ** 2

    k = min(k_max, len(lambdas))
    optical = (u[:, :k] / np.sqrt(w1)[:, None]).T
    microwave = vh[:k, :] / np.sqrt(w2)[None, :]

    pos = lambdas[lambdas > 1e-300]
    entropy = float(-np.sum(pos * np.log(pos)))
    return SchmidtSpectrum(lambdas=lambdas, optical_modes=optical,
                           microwave_modes=microwave,
                           t1_times=packet.t1_times, t2_times=packet.t2_times,
                           entropy=entropy)


def reconstruct_amplitude(spectrum, k=None):
    """Rebuild f(t1, t2) from the leading k Schmidt pairs."""
    if k is None:
        k = spectrum.optical_modes.shape[0]
    amps = np.sqrt(spectrum.lambdas[:k])
    return np.einsum("k,ki,kj->ij", amps, spectrum.optical_modes[:k],
                     spectrum.microwave_modes[:k])


def wavepacket_to_csv(wp, path):
    """Long-format CSV with axis values in seconds and re/im columns."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t1_s,t2_s,f_re,f_im\n")
        for i, t1 in enumerate(wp.t1_times):
            for j, t2 in enumerate(wp.t2_times):
                v = wp.amplitude[i, j]
                fh.write(f"{t1:.17g},{t2:.17g},{v.real:.17g},{v.imag:.17g}\n")


def spectrum_to_csv(spectrum, lambdas_path, modes_path):
    with open(lambdas_path, "w", encoding="utf-8") as fh:
        fh.write("k,lambda\n")
        for k, lam in enumerate(spectrum.lambdas):
            fh.write(f"{k},{lam:.17g}\n")
    k_max = spectrum.optical_modes.shape[0]
    with open(modes_path, "w", encoding="utf-8") as fh:
        cols = ["t1_s", "t2_s"]
        for k in range(k_max):
            cols += [f"optical_{k}_re", f"optical_{k}_im",
                     f"microwave_{k}_re", f"microwave_{k}_im"]
        fh.write(",".join(cols) + "\n")
        for i in range(len(spectrum.t1_times)):
            row = [f"{spectrum.t1_times[i]:.17g}", f"{spectrum.t2_times[i]:.17g}"]
            for k in range(k_max):
                o = spectrum.optical_modes[k, i]
                m = spectrum.microwave_modes[k, i]
                row += [f"{o.real:.17g}", f"{o.imag:.17g}",
                        f"{m.real:.17g}", f"{m.imag:.17g}"]
            fh.write(",".join(row) + "\n")
