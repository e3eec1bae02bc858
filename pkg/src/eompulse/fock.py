"""Truncated three-mode Fock space and its operator algebra.

Operators live on the tensor product optical (x) mechanical (x) electrical,
in that fixed order, as dense complex matrices.  Dimensions stay small
(a few hundred at most), so dense algebra is the default representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITICITY_TOL = 1e-12

DEFAULT_DIM_LIMIT = 4096


class DimensionOverflow(Exception):
    """Requested cutoffs give an infeasibly large Hilbert space."""


@dataclass(frozen=True)
class FockSpace:
    """Per-mode Fock cutoffs (N_a, N_b, N_c); mode x keeps levels 0..N_x."""

    cutoffs: tuple
    dim_limit: int = DEFAULT_DIM_LIMIT

    def __post_init__(self):
        if len(self.cutoffs) != 3:
            raise ValueError("cutoffs must be a triple (N_a, N_b, N_c)")
        if any(int(n) != n or n < 0 for n in self.cutoffs):
            raise ValueError("cutoffs must be non-negative integers")
        object.__setattr__(self, "cutoffs", tuple(int(n) for n in self.cutoffs))

    @property
    def dims(self):
        """Per-mode dimensions (N_x + 1)."""
        return tuple(n + 1 for n in self.cutoffs)

    @property
    def dim(self):
        da, db, dc = self.dims
        return da * db * dc

    def index(self, na, nb, nc):
        """Flat index of the basis state |na, nb, nc>."""
        da, db, dc = self.dims
        if not (0 <= na < da and 0 <= nb < db and 0 <= nc < dc):
            raise ValueError("occupation outside the truncated space")
        return (na * db + nb) * dc + nc

    def bumped(self, extra=1):
        """Space with every cutoff raised by ``extra`` (convergence checks)."""
        return FockSpace(tuple(n + extra for n in self.cutoffs), self.dim_limit)


@dataclass(frozen=True)
class ModeOperators:
    """Annihilation operators embedded in the full tensor space."""

    space: FockSpace
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


def destroy(n_levels):
    """Single-mode annihilation operator, <n-1|a|n> = sqrt(n)."""
    op = np.zeros((n_levels, n_levels), dtype=complex)
    ns = np.arange(1, n_levels)
    op[ns - 1, ns] = np.sqrt(ns)
    return op


def mode_operators(space):
    """Annihilation operators for the three modes on the full space.

    Raises
    ------
    DimensionOverflow
        If the total dimension exceeds ``space.dim_limit``; this signals
        infeasible cutoffs rather than a recoverable condition.
    """
    if any(n < 1 for n in space.cutoffs):
        raise ValueError("each mode needs cutoff >= 1 to carry an excitation")
    if space.dim > space.dim_limit:
        raise DimensionOverflow(
            f"total dimension {space.dim} exceeds limit {space.dim_limit}")
    da, db, dc = space.dims
    ia, ib, ic = np.eye(da), np.eye(db), np.eye(dc)
    a = np.kron(np.kron(destroy(da), ib), ic)
    b = np.kron(np.kron(ia, destroy(db)), ic)
    c = np.kron(np.kron(ia, ib), destroy(dc))
    return ModeOperators(space=space, a=a, b=b, c=c)


def interaction_hamiltonian(params, g_om_value, ops):
    """Rotating-frame interaction Hamiltonian H/hbar (rad/s).

    For a pump blue-detuned by the mechanical frequency and resonant
    mechanical/electrical modes, the bare-frequency terms drop out and

        H/hbar = -g_em (b^dag c + b c^dag) - g_om (b^dag a^dag + b a).

    The result is guaranteed Hermitian to 1e-12.
    """
    b, c, a = ops.b, ops.c, ops.a
    bd, cd, ad = b.conj().T, c.conj().T, a.conj().T
    h = -params.g_em * (bd @ c + b @ cd) - g_om_value * (bd @ ad + b @ a)
    defect = hermiticity_defect(h)
    if defect > HERMITICITY_TOL * max(1.0, np.abs(h).max()):
        raise AssertionError(f"Hamiltonian not Hermitian, defect {defect}")
    return h


def hermiticity_defect(m):
    """max |M - M^dag|, the scale-free Hermiticity violation."""
    return float(np.abs(m - m.conj().T).max())


def is_hermitian(m, tol=HERMITICITY_TOL):
    return hermiticity_defect(m) <= tol * max(1.0, float(np.abs(m).max()))
