"""Time-dependent Lindblad propagation and two-time correlators.

The master equation is integrated with a fixed-step classical RK4 scheme on
the vectorized (row-major) density operator.  The generator splits into a
static part, a pump part scaled by g_om(t) and, when the mechanical bath is
time dependent, a thermal part scaled by kappa_m * n_th(t); each part is a
sparse superoperator, so one right-hand side costs a handful of sparse
matrix products.  Two-time correlators follow from the quantum regression
theorem: the conditional operator (for example a rho(t)) evolves under the
same generator, and many conditionals started at different times are
propagated together as one batch over absolute time.

Step size: on top of the accuracy rule dt <= 0.05 / (fastest retained slow
rate), dt is capped by the RK4 stability bound for the stiff optical decay,
roughly 2.45 / (N_a kappa_o + ...).  Without that cap the fixed-step scheme
diverges for optical linewidths in the GHz range.  Classical RK4 reproduces
the stationary response of the damped optical mode to slow forcing exactly,
so running at the stability limit does not bias the slow observables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fock import FockSpace, mode_operators, interaction_hamiltonian, hermiticity_defect

TRACE_TOL = 1e-6
HERM_TOL = 1e-10
EIG_TOL = 1e-8

DEFAULT_MAX_STORED = 257
RK4_STABILITY_MARGIN = 2.45


class StepSizeTooLarge(Exception):
    """Propagation lost physicality; dt or the Fock cutoffs are too coarse."""


class GridMismatch(Exception):
    """Requested axis grid is not contained in the evolution grid."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid; dt is derived from the span and step count."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ValueError("t_end must exceed t_start")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def dt(self):
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self):
        return self.t_start + self.dt * np.arange(self.n_steps + 1)


def stable_dt(params, pulse, space, t_start=0.0, t_end=None):
    """Largest safe RK4 step for the given system, pulse and cutoffs.

    Combines the accuracy rule (resolve the fastest retained slow rate) with
    the stability bound set by the stiffest Liouvillian eigenvalue, which is
    dominated by N_a * kappa_o for a GHz-linewidth optical mode.
    """
    if t_end is None:
        t_end = default_window(params, pulse)
    g_max = pulse.peak_g_om(params.g_0) if pulse is not None else 0.0
    nth_max = params.n_th_b_max(t_start, t_end)
    na, nb, nc = space.cutoffs
    slow = max(params.kappa_e, params.g_em, g_max,
               params.kappa_m * (1.0 + nth_max), 1e3)
    accuracy = 0.05 / slow
    lam = (na * params.kappa_o
           + nc * (params.kappa_e + 2.0 * params.kappa_e_i * params.n_th_c)
           + nb * params.kappa_m * (1.0 + 2.0 * nth_max)
           + 2.0 * (params.g_em * math.sqrt(nb * nc) + g_max * math.sqrt(na * nb)))
    stability = RK4_STABILITY_MARGIN / max(lam, 1e3)
    return min(accuracy, stability)


def default_window(params, pulse):
    """Simulation span t0 + 6 sigma + 5 / kappa_e covering pump and ring-down."""
    ring = 5.0 / params.kappa_e if params.kappa_e > 0 else 0.0
    return pulse.t0 + 6.0 * pulse.sigma + ring


def aligned_grid(params, pulse, space, *, n_cells, window=None, t_start=0.0):
    """Grid whose step count is a multiple of ``n_cells``.

    Cell boundaries double as the storage/correlator axis, so conditional
    evolutions can start exactly on stored states.  Returns the grid and the
    per-cell step stride.
    """
    if window is None:
        window = default_window(params, pulse)
    dt_max = stable_dt(params, pulse, space, t_start, t_start + window)
    cell = window / n_cells
    per_cell = max(1, math.ceil(cell / dt_max))
    grid = TimeGrid(t_start, t_start + window, n_cells * per_cell)
    return grid, per_cell


@dataclass
class DensityOperator:
    """Dense density matrix tagged with its Fock space."""

    matrix: np.ndarray
    space: FockSpace

    @classmethod
    def vacuum(cls, space):
        return cls.fock(space, 0, 0, 0)

    @classmethod
    def fock(cls, space, na, nb, nc):
        rho = np.zeros((space.dim, space.dim), dtype=complex)
        idx = space.index(na, nb, nc)
        rho[idx, idx] = 1.0
        return cls(matrix=rho, space=space)

    @classmethod
    def thermal(cls, space, n_a=0.0, n_b=0.0, n_c=0.0):
        """Product of truncated, renormalized single-mode thermal states."""
        blocks = []
        for nbar, dim in zip((n_a, n_b, n_c), space.dims):
            if nbar <= 0:
                p = np.zeros(dim)
                p[0] = 1.0
            else:
                r = nbar / (1.0 + nbar)
                p = r ** np.arange(dim)
                p /= p.sum()
            blocks.append(p)
        diag = np.kron(np.kron(blocks[0], blocks[1]), blocks[2])
        return cls(matrix=np.diag(diag).astype(complex), space=space)

    @property
    def trace(self):
        return complex(np.trace(self.matrix))

    def expectation(self, op):
        return complex(np.trace(op @ self.matrix))

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))[0])

    def validate(self, trace_tol=TRACE_TOL, herm_tol=HERM_TOL, eig_tol=EIG_TOL):
        """Raise StepSizeTooLarge if trace, Hermiticity or positivity is off."""
        m = self.matrix
        if not np.all(np.isfinite(m)):
            raise StepSizeTooLarge("non-finite density matrix entries")
        drift = abs(np.trace(m).real - 1.0) + abs(np.trace(m).imag)
        if drift > trace_tol:
            raise StepSizeTooLarge(f"trace drift {drift:.3e} exceeds {trace_tol}")
        defect = hermiticity_defect(m)
        if defect > herm_tol:
            raise StepSizeTooLarge(f"Hermiticity defect {defect:.3e} exceeds {herm_tol}")
        min_eig = self.min_eigenvalue()
        if min_eig < -eig_tol:
            raise StepSizeTooLarge(f"negative eigenvalue {min_eig:.3e} below -{eig_tol}")


@dataclass
class EvolutionResult:
    """Propagation output: strided states plus expectation tracks.

    ``states[k]`` is the density matrix at step ``stored_steps[k]``; every
    track has one entry per stored step.
    """

    grid: TimeGrid
    space: FockSpace
    stored_steps: np.ndarray
    states: np.ndarray
    tracks: dict
    store_stride: int

    @property
    def stored_times(self):
        return self.grid.t_start + self.grid.dt * self.stored_steps

    def state_at(self, k):
        return DensityOperator(matrix=self.states[k].copy(), space=self.space)


def _superop_left_right(a_mat, b_mat):
    """Sparse superoperator of rho -> A rho B for row-major vectorization."""
    a = sp.csr_matrix(a_mat)
    b = sp.csr_matrix(b_mat)
    return sp.kron(a, b.T, format="csr")


def _dissipator_superop(l_mat, dim):
    ld = l_mat.conj().T
    ll = ld @ l_mat
    eye = sp.identity(dim, format="csr", dtype=complex)
    out = _superop_left_right(l_mat, ld)
    out = out - 0.5 * sp.kron(sp.csr_matrix(ll), eye, format="csr")
    out = out - 0.5 * sp.kron(eye, sp.csr_matrix(ll.T), format="csr")
    return out.tocsr()


def _commutator_superop(h_mat, dim):
    eye = sp.identity(dim, format="csr", dtype=complex)
    h = sp.csr_matrix(h_mat)
    return (-1j * (sp.kron(h, eye, format="csr")
                   - sp.kron(eye, h.T, format="csr"))).tocsr()


class LindbladGenerator:
    """Vectorized Lindblad generator split into static, pump and thermal parts.

    Jump channels: optical decay at kappa_o, mechanical decay/excitation at
    kappa_m (1 + n_th_b) and kappa_m n_th_b, electrical out-coupling at
    kappa_e_c plus intrinsic decay/excitation at kappa_e_i (1 + n_th_c) and
    kappa_e_i n_th_c.
    """

    def __init__(self, params, pulse, space):
        self.params = params
        self.pulse = pulse
        self.space = space
        ops = mode_operators(space)
        self.ops = ops
        dim = space.dim
        a, b, c = ops.a, ops.b, ops.c

        h_em = -params.g_em * (b.conj().T @ c + b @ c.conj().T)
        static = _commutator_superop(h_em, dim)
        static = static + params.kappa_o * _dissipator_superop(a, dim)
        static = static + params.kappa_m * _dissipator_superop(b, dim)
        rate_c_down = params.kappa_e_c + params.kappa_e_i * (1.0 + params.n_th_c)
        static = static + rate_c_down * _dissipator_superop(c, dim)
        if params.n_th_c > 0:
            static = static + params.kappa_e_i * params.n_th_c * \
                _dissipator_superop(c.conj().T, dim)

        thermal = (_dissipator_superop(b, dim)
                   + _dissipator_superop(b.conj().T, dim)).tocsr()
        if not callable(params.n_th_b):
            if params.n_th_b > 0:
                static = static + params.kappa_m * params.n_th_b * thermal
            self.l_thermal = None
        else:
            self.l_thermal = thermal
        self.l_static = static.tocsr()

        h_pump_unit = -(b.conj().T @ a.conj().T + b @ a)
        self.l_pump = _commutator_superop(h_pump_unit, dim)
        self._g_peak = pulse.peak_g_om(params.g_0) if pulse is not None else 0.0
        # Pump contributions this far below every other scale are dropped.
        self._alpha_skip = 1e-12 * max(self._g_peak, 1.0)

    def alpha(self, t):
        """Pump coefficient g_om(t), vectorized over t."""
        if self.pulse is None or self._g_peak == 0.0:
            return np.zeros(np.shape(t)) if np.ndim(t) else 0.0
        return self.pulse.g_om(t, self.params.g_0)

    def beta(self, t):
        """Thermal coefficient kappa_m * n_th_b(t) for the dynamic bath part."""
        if self.l_thermal is None:
            return np.zeros(np.shape(t)) if np.ndim(t) else 0.0
        return self.params.kappa_m * self.params.n_th_b_at(t)

    def apply(self, x, alpha, beta):
        """L(t) x for vector or column-batch x, with given coefficients."""
        y = self.l_static @ x
        if alpha > self._alpha_skip:
            t = self.l_pump @ x
            t *= alpha
            y += t
        if beta != 0.0:
            t = self.l_thermal @ x
            t *= beta
            y += t
        return y

    def apply_at(self, t, x):
        return self.apply(x, float(self.alpha(t)), float(self.beta(t)))

    def half_step_coefficients(self, grid):
        """(alpha, beta) sampled at every half step of ``grid``.

        Index 2k is step k, index 2k+1 the midpoint after it; this is the
        once-per-run sampling of the time-dependent rates onto the grid.
        """
        ts = grid.t_start + 0.5 * grid.dt * np.arange(2 * grid.n_steps + 1)
        alphas = np.broadcast_to(np.asarray(self.alpha(ts), dtype=float), ts.shape)
        betas = np.broadcast_to(np.asarray(self.beta(ts), dtype=float), ts.shape)
        return np.ascontiguousarray(alphas), np.ascontiguousarray(betas)

    def jump_operators(self, t):
        """The six jump operators at time t, as (rate, operator) pairs."""
        p, ops = self.params, self.ops
        nthb = float(p.n_th_b_at(t))
        bd, cd = ops.b.conj().T, ops.c.conj().T
        return [
            (p.kappa_o, ops.a),
            (p.kappa_m * (1.0 + nthb), ops.b),
            (p.kappa_m * nthb, bd),
            (p.kappa_e_c, ops.c),
            (p.kappa_e_i * (1.0 + p.n_th_c), ops.c),
            (p.kappa_e_i * p.n_th_c, cd),
        ]

    def rhs_dense(self, rho, t):
        """Dense-matrix right-hand side; cross-checks the sparse assembly."""
        h = interaction_hamiltonian(self.params, float(self.alpha(t)), self.ops)
        out = -1j * (h @ rho - rho @ h)
        for rate, l_op in self.jump_operators(t):
            if rate == 0.0:
                continue
            ld = l_op.conj().T
            ll = ld @ l_op
            out += rate * (l_op @ rho @ ld - 0.5 * (ll @ rho + rho @ ll))
        return out


def lindblad_rhs(rho, t, params, pulse):
    """Master-equation right-hand side for a density operator at time t.

    The output is traceless to roundoff for any input, since each Lindblad
    term conserves the trace identically.
    """
    gen = LindbladGenerator(params, pulse, rho.space)
    return gen.rhs_dense(rho.matrix, t)


def _track_weights(ops_dict):
    """Row vectors w with w . vec(rho) = Tr[O rho] (row-major vec)."""
    return {name: np.ascontiguousarray(op.T).reshape(-1)
            for name, op in ops_dict.items()}


def _default_tracks(ops):
    num = lambda m: m.conj().T @ m
    return {"n_a": num(ops.a), "n_b": num(ops.b), "n_c": num(ops.c)}


def _rk4_advance(gen, x, h, alphas, betas, base):
    """One RK4 step; coefficient arrays are indexed by half step from ``base``."""
    a0, a1, a2 = alphas[base], alphas[base + 1], alphas[base + 2]
    b0, b1, b2 = betas[base], betas[base + 1], betas[base + 2]
    k1 = gen.apply(x, a0, b0)
    k2 = gen.apply(x + (0.5 * h) * k1, a1, b1)
    k3 = gen.apply(x + (0.5 * h) * k2, a1, b1)
    k4 = gen.apply(x + h * k3, a2, b2)
    return x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def propagate(rho0, grid, params, pulse, *, store_stride=None, track_ops=None,
              validate=True):
    """Integrate the master equation over ``grid`` from ``rho0``.

    States and expectation tracks are stored every ``store_stride`` steps
    (default: coarse enough to keep at most ~256 states).  Per-step trace
    renormalization is never applied; trace drift is a diagnostic, and any
    physicality violation at a stored point raises StepSizeTooLarge.
    """
    space = rho0.space
    if validate:
        rho0.validate()
    gen = LindbladGenerator(params, pulse, space)
    n = grid.n_steps
    if store_stride is None:
        store_stride = max(1, math.ceil(n / (DEFAULT_MAX_STORED - 1)))
    stored = list(range(0, n + 1, store_stride))
    if stored[-1] != n:
        stored.append(n)
    stored = np.asarray(stored)

    tracks_ops = _default_tracks(gen.ops)
    if track_ops:
        tracks_ops.update(track_ops)
    weights = _track_weights(tracks_ops)

    d = space.dim
    x = rho0.matrix.astype(complex).reshape(-1).copy()
    alphas, betas = gen.half_step_coefficients(grid)
    h = grid.dt

    states = np.empty((len(stored), d, d), dtype=complex)
    track_vals = {name: np.empty(len(stored), dtype=complex) for name in weights}

    next_slot = 0

    def record(step, vec):
        nonlocal next_slot
        while next_slot < len(stored) and stored[next_slot] == step:
            rho = vec.reshape(d, d)
            states[next_slot] = rho
            for name, w in weights.items():
                track_vals[name][next_slot] = w @ vec
            if validate:
                DensityOperator(matrix=rho, space=space).validate()
            next_slot += 1

    record(0, x)
    for k in range(n):
        x = _rk4_advance(gen, x, h, alphas, betas, 2 * k)
        record(k + 1, x)

    tracks = {}
    for name, vals in track_vals.items():
        tracks[name] = vals.real if np.allclose(vals.imag, 0, atol=1e-9) else vals
    return EvolutionResult(grid=grid, space=space, stored_steps=stored,
                           states=states, tracks=tracks,
                           store_stride=store_stride)


def regression_correlator(rho_t, t, tau_grid, left, right, probe, params, pulse):
    """Two-time correlator via the quantum regression theorem.

    The conditional operator X(0) = right . rho(t) . left is evolved over
    the lag with the same Lindblad generator (evaluated at absolute time
    t + tau), and Tr[probe X(tau)] is returned at every point of
    ``tau_grid``.  With right = a, left = a^dag, probe = c^dag c this gives
    the t1 < t2 branch of the intensity correlation; with right = a,
    left = identity, probe = c it gives the pair amplitude <c(t+tau) a(t)>.
    """
    space = rho_t.space
    gen = LindbladGenerator(params, pulse, space)
    x = (right @ rho_t.matrix @ left).astype(complex).reshape(-1).copy()
    w = np.ascontiguousarray(probe.T).reshape(-1)

    cell = tau_grid.dt
    dt_cap = stable_dt(params, pulse, space, t + tau_grid.t_start,
                       t + tau_grid.t_end)
    per_cell = max(1, math.ceil(cell / dt_cap))
    h = cell / per_cell
    fine = TimeGrid(t + tau_grid.t_start,
                    t + tau_grid.t_end, tau_grid.n_steps * per_cell)
    alphas, betas = gen.half_step_coefficients(fine)

    out = np.empty(tau_grid.n_steps + 1, dtype=complex)
    out[0] = w @ x
    for j in range(tau_grid.n_steps):
        for m in range(per_cell):
            x = _rk4_advance(gen, x, h, alphas, betas, 2 * (j * per_cell + m))
        if not np.all(np.isfinite(x)):
            raise StepSizeTooLarge("conditional operator diverged")
        out[j + 1] = w @ x
    return out


@dataclass(frozen=True)
class ConditionalKind:
    """One family of conditional evolutions for the batched table sweep.

    ``start_op`` is applied to rho(t1) from the left (and its adjoint from
    the right when ``sandwich``); ``probe_op`` is traced against the
    evolved conditional at later grid times.
    """

    name: str
    start_op: np.ndarray
    probe_op: np.ndarray
    sandwich: bool = False


def two_time_tables(evolution, params, pulse, kinds, *, start_cells=None,
                    max_lag_cells=None):
    """Batched quantum-regression tables on the stored-cell grid.

    For each kind, returns a complex (n_cells+1, n_cells+1) table T with
    T[i, j] = Tr[probe X_i(t_j)] for j >= i (NaN below), where X_i starts
    from the stored state at cell i.  All conditionals are evolved together
    over absolute time, so the whole table costs one sweep.

    ``start_cells`` restricts the start rows (per kind: dict name -> array,
    or one array for all).  ``max_lag_cells`` stops each conditional after
    that many cells, leaving later columns NaN.
    """
    stride = evolution.store_stride
    stored = evolution.stored_steps
    n_pts = len(stored)
    if np.any(np.diff(stored) != stride):
        raise GridMismatch("two_time_tables needs a uniformly strided evolution")
    space = evolution.space
    d = space.dim
    gen = LindbladGenerator(params, pulse, space)
    alphas, betas = gen.half_step_coefficients(evolution.grid)
    h = evolution.grid.dt

    def starts_for(kind):
        if start_cells is None:
            return np.arange(n_pts)
        if isinstance(start_cells, dict):
            return np.asarray(start_cells[kind.name])
        return np.asarray(start_cells)

    weights = [np.ascontiguousarray(k.probe_op.T).reshape(-1) for k in kinds]
    tables = [np.full((n_pts, n_pts), np.nan, dtype=complex) for _ in kinds]

    # Column registry sorted by start cell; stop is exclusive of no cell,
    # i.e. the column records through its stop cell then retires.
    columns = []
    for ki, kind in enumerate(kinds):
        for cell in starts_for(kind):
            stop = n_pts - 1
            if max_lag_cells is not None:
                stop = min(stop, int(cell) + int(max_lag_cells))
            columns.append((int(cell), stop, ki))
    columns.sort()
    if not columns:
        return {k.name: t for k, t in zip(kinds, tables)}

    first_cell = columns[0][0]
    pointer = 0
    active_x = None           # (d*d, n_active)
    active_meta = []          # (start_cell, stop_cell, kind_index)

    for j in range(first_cell, n_pts):
        # Activate columns starting at this cell.
        new_vecs = []
        while pointer < len(columns) and columns[pointer][0] == j:
            cell, stop, ki = columns[pointer]
            kind = kinds[ki]
            rho = evolution.states[j]
            x0 = kind.start_op @ rho
            if kind.sandwich:
                x0 = x0 @ kind.start_op.conj().T
            new_vecs.append(x0.reshape(-1))
            active_meta.append((cell, stop, ki))
            pointer += 1
        if new_vecs:
            block = np.stack(new_vecs, axis=1)
            active_x = block if active_x is None else np.hstack([active_x, block])

        # Record Tr[probe X] for every active column at this cell.
        if active_meta:
            if not np.all(np.isfinite(active_x)):
                raise StepSizeTooLarge("conditional batch diverged")
            by_kind = {}
            for col, (cell, stop, ki) in enumerate(active_meta):
                by_kind.setdefault(ki, []).append(col)
            for ki, cols in by_kind.items():
                vals = weights[ki] @ active_x[:, cols]
                for v, col in zip(np.atleast_1d(vals), cols):
                    tables[ki][active_meta[col][0], j] = v

        # Retire finished columns.
        keep = [col for col, (cell, stop, ki) in enumerate(active_meta) if stop > j]
        if len(keep) != len(active_meta):
            active_meta = [active_meta[col] for col in keep]
            active_x = active_x[:, keep] if keep else None

        # Advance one cell.
        if j < n_pts - 1 and active_meta:
            base = 2 * j * stride
            for m in range(stride):
                active_x = _rk4_advance(gen, active_x, h, alphas, betas,
                                        base + 2 * m)

    return {k.name: t for k, t in zip(kinds, tables)}
