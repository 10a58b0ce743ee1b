"""Dense complex linear algebra and fixed-step Lindblad propagation.

This module is the numerical substrate for the whole package: Hermitian
eigendecomposition with a deterministic phase gauge, a classic fixed-step
RK4 integrator for the Lindblad master equation, state fidelities and
Kronecker products.  Everything works on plain ``numpy`` arrays of
``complex128``; density matrices are ordinary ``(d, d)`` arrays validated
by :func:`validate_density_matrix`.

Conventions
-----------
* hbar = 1 throughout; Hamiltonians, Rabi frequencies and decay rates are
  angular frequencies (rad/s), times are seconds.
* Jump operators carry their rate amplitude (sqrt(rate) folded in).
* The integrator is deliberately fixed-step: optimal-control sweeps need
  states at identical grid points forward and backward, and trajectories
  must be bit-for-bit reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Pauli matrices and qubit identity, used throughout the package.
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

HERMITICITY_RTOL = 1e-12
TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-8
RESYM_INTERVAL = 100
RESYM_LOG_THRESHOLD = 1e-9


class PreconditionError(ValueError):
    """An operation was called with input violating its contract."""


class IntegrationError(RuntimeError):
    """The fixed-step integrator lost accuracy (trace drift too large)."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


def ket(dim: int, index: int) -> np.ndarray:
    """Computational basis column vector |index> of dimension ``dim``."""
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def projector(dim: int, index: int) -> np.ndarray:
    """Basis projector |index><index| of dimension ``dim``."""
    p = np.zeros((dim, dim), dtype=complex)
    p[index, index] = 1.0
    return p


def dag(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose (on the last two axes)."""
    return np.conjugate(np.swapaxes(a, -1, -2))


def hermitian_deviation(a: np.ndarray) -> float:
    """max|A - A^dag| over the matrix."""
    return float(np.max(np.abs(a - dag(a))))


def require_hermitian(a: np.ndarray, *, rtol: float = HERMITICITY_RTOL, name: str = "matrix") -> None:
    """Raise :class:`PreconditionError` unless ``a`` is Hermitian within ``rtol`` of max|a|."""
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return
    dev = hermitian_deviation(a)
    if dev > rtol * scale:
        raise PreconditionError(
            f"{name} is not Hermitian: max|A - A^dag| = {dev:.3e} exceeds {rtol:.1e} * max|A| = {rtol * scale:.3e}"
        )


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product, dim = dim(a) * dim(b)."""
    return np.kron(a, b)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid on [t0, tf] with ``n`` samples (n >= 3)."""

    t0: float
    tf: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise PreconditionError(f"TimeGrid needs n >= 3, got n = {self.n}")
        if not self.tf > self.t0:
            raise PreconditionError(f"TimeGrid needs tf > t0, got [{self.t0}, {self.tf}]")

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / (self.n - 1)

    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.tf, self.n)

    def half_times(self) -> np.ndarray:
        """All grid points and midpoints: 2n - 1 uniformly spaced samples."""
        return np.linspace(self.t0, self.tf, 2 * self.n - 1)

    def refine(self) -> "TimeGrid":
        """Grid with dt halved (same endpoints)."""
        return TimeGrid(self.t0, self.tf, 2 * self.n - 1)


def _as_time_array_hamiltonian(h: Callable | np.ndarray) -> Callable:
    """Wrap a Hamiltonian spec so it maps a 1-D time array to (T, d, d).

    Accepts a constant matrix, a callable of a scalar time, or a callable
    already vectorized over time arrays.
    """
    if isinstance(h, np.ndarray):
        h_const = np.asarray(h, dtype=complex)

        def sample_const(t):
            t = np.atleast_1d(t)
            return np.broadcast_to(h_const, (t.size,) + h_const.shape).copy()

        return sample_const

    def sample(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        try:
            out = np.asarray(h(t), dtype=complex)
        except Exception:
            out = None
        if out is None or out.ndim != 3:  # callable was scalar-only; fall back to a loop
            return np.stack([np.asarray(h(float(ti)), dtype=complex) for ti in t])
        return out

    return sample


@dataclass
class LindbladGenerator:
    """Lindblad generator: time-dependent Hamiltonian plus jump operators.

    Parameters
    ----------
    dim : int
        Hilbert-space dimension.
    hamiltonian : callable or ndarray
        Either a constant Hermitian matrix or a function of time returning
        the (d, d) Hamiltonian.  Vectorized callables (1-D time array ->
        (T, d, d)) are used as-is; scalar callables are wrapped.
    jumps : sequence of ndarray
        Jump operators with sqrt(rate) absorbed.
    """

    dim: int
    hamiltonian: Callable | np.ndarray
    jumps: Sequence[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        for k, op in enumerate(self.jumps):
            if op.shape != (self.dim, self.dim):
                raise PreconditionError(
                    f"jump operator {k} has shape {op.shape}, expected ({self.dim}, {self.dim})"
                )
        self._sample_h = _as_time_array_hamiltonian(self.hamiltonian)

    def hamiltonian_at(self, t) -> np.ndarray:
        """Hamiltonian sampled at scalar ``t`` or a 1-D array of times."""
        out = self._sample_h(t)
        return out[0] if np.isscalar(t) else out

    def jump_stack(self) -> np.ndarray | None:
        if not self.jumps:
            return None
        return np.stack([np.asarray(j, dtype=complex) for j in self.jumps])


def eig_hermitian(h: np.ndarray, *, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix with a deterministic gauge.

    Returns eigenvalues in ascending order and the eigenvector matrix ``p``
    (columns are eigenvectors).  Each column's phase is fixed so that its
    largest-magnitude entry is real and positive; ties break to the lowest
    row index.  Two calls on identical input give bitwise-equal output.
    """
    if check:
        require_hermitian(h, name="eig_hermitian input")
    w, p = np.linalg.eigh(h)
    p = p.copy()
    for j in range(p.shape[1]):
        col = p[:, j]
        k = int(np.argmax(np.abs(col)))  # argmax takes the lowest index on ties
        pivot = col[k]
        col *= np.abs(pivot) / pivot
    return w, p


def validate_density_matrix(
    rho: np.ndarray,
    *,
    trace_tol: float = TRACE_TOL,
    herm_tol: float = 1e-10,
    positivity_tol: float = POSITIVITY_TOL,
    where: str = "density matrix",
) -> None:
    """Check trace-one, Hermiticity and numerical positivity; raise on failure."""
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > trace_tol:
        raise PreconditionError(f"{where}: trace = {tr:.12g} deviates from 1 by more than {trace_tol:.1e}")
    if hermitian_deviation(rho) > herm_tol:
        raise PreconditionError(f"{where}: not Hermitian within {herm_tol:.1e}")
    evals = np.linalg.eigvalsh((rho + dag(rho)) / 2.0)
    if float(evals.min()) < -positivity_tol:
        raise PreconditionError(f"{where}: negative eigenvalue {evals.min():.3e} below -{positivity_tol:.1e}")


def state_fidelity(rho_f: np.ndarray, rho_t: np.ndarray) -> float:
    """Population overlap Tr(rho_t rho_f) with a pure target state.

    For a pure target this equals the squared Uhlmann fidelity.  Raises if
    the target is not rank one (within 1e-8).
    """
    if rho_f.shape != rho_t.shape:
        raise PreconditionError(f"dimension mismatch: {rho_f.shape} vs {rho_t.shape}")
    evals = np.linalg.eigvalsh((rho_t + dag(rho_t)) / 2.0)
    if evals.size > 1 and float(np.abs(evals[:-1]).max()) > 1e-8:
        raise PreconditionError("state_fidelity target must be pure (rank 1 within 1e-8)")
    return float(np.real(np.trace(rho_t @ rho_f)))


def _lindblad_apply(h: np.ndarray, rho: np.ndarray, ops: "_JumpOps | None") -> np.ndarray:
    """drho/dt = -i[H, rho] + sum_k L rho L^dag - {Leff, rho}, Leff = (1/2) sum L^dag L.

    ``rho`` may carry leading batch axes.
    """
    out = -1j * (h @ rho - rho @ h)
    if ops is None:
        return out
    if ops.mask is not None:
        # All jumps are single-entry or diagonal: the dissipator reduces to
        # an elementwise mask plus a population-transfer matrix.
        out += ops.mask * rho
        if ops.transfer is not None:
            add = np.einsum("...ii->...i", rho) @ ops.transfer.T
            diag = np.einsum("...ii->...i", out)
            diag += add
        return out
    tmp = (ops.l @ rho[..., None, :, :]) @ ops.l_dag  # (..., K, d, d)
    out += tmp.sum(axis=-3)
    out -= ops.leff @ rho + rho @ ops.leff
    return out


def _lindblad_adjoint_apply(h: np.ndarray, x: np.ndarray, ops: "_JumpOps | None") -> np.ndarray:
    """Hilbert-Schmidt adjoint: L^dag X = +i[H, X] + sum_k L^dag X L - {Leff, X}."""
    out = 1j * (h @ x - x @ h)
    if ops is None:
        return out
    if ops.mask is not None:
        out += np.conjugate(ops.mask) * x
        if ops.transfer is not None:
            add = np.einsum("...ii->...i", x) @ ops.transfer
            diag = np.einsum("...ii->...i", out)
            diag += add
        return out
    tmp = (ops.l_dag @ x[..., None, :, :]) @ ops.l
    out += tmp.sum(axis=-3)
    out -= ops.leff @ x + x @ ops.leff
    return out


@dataclass(frozen=True)
class _JumpOps:
    """Precomputed dissipator data for the inner integration loop.

    When every jump operator is either single-entry (decay a <- b) or
    diagonal (dephasing), ``mask``/``transfer`` hold an exactly equivalent
    elementwise form of the dissipator, which is much cheaper than the
    generic stacked-matmul path.
    """

    l: np.ndarray              # (K, d, d)
    l_dag: np.ndarray          # (K, d, d)
    leff: np.ndarray           # (d, d): (1/2) sum_k L^dag L
    mask: np.ndarray | None    # (d, d) elementwise dissipator coefficient
    transfer: np.ndarray | None  # (d, d) population transfer rates, T[a, b] = rate of a <- b

    @staticmethod
    def from_generator(gen: "LindbladGenerator") -> "_JumpOps | None":
        stack = gen.jump_stack()
        if stack is None:
            return None
        l_dag = dag(stack)
        leff = 0.5 * np.einsum("kba,kbc->ac", np.conjugate(stack), stack)
        d = gen.dim
        mask = np.zeros((d, d), dtype=complex)
        transfer = np.zeros((d, d))
        structured = True
        for op in stack:
            nz = np.argwhere(op != 0)
            if nz.shape[0] == 1:
                a, b = map(int, nz[0])
                transfer[a, b] += float(np.abs(op[a, b]) ** 2)
            elif np.count_nonzero(op - np.diag(np.diagonal(op))) == 0:
                dvec = np.diagonal(op)
                mask += np.outer(dvec, np.conjugate(dvec))
            else:
                structured = False
                break
        if not structured:
            return _JumpOps(stack, l_dag, leff, None, None)
        leff_diag = np.real(np.diagonal(leff))
        mask -= leff_diag[:, None] + leff_diag[None, :]
        return _JumpOps(stack, l_dag, leff, mask, transfer if transfer.any() else None)


def _rk4_sweep(
    h_half: np.ndarray,
    y0: np.ndarray,
    dt: float,
    apply_fn,
    ops: _JumpOps | None,
    *,
    store: bool,
    renormalize_trace: bool,
    trace_tol: float | None,
    times: np.ndarray | None,
):
    """Classic RK4 over a precomputed half-grid Hamiltonian table.

    ``h_half`` has 2n-1 entries (grid points and midpoints).  When
    ``renormalize_trace`` is set, drift in Hermiticity/trace is corrected
    every RESYM_INTERVAL steps and large corrections are logged.
    """
    n = (h_half.shape[0] + 1) // 2
    y = np.array(y0, dtype=complex)
    out = [y.copy()] if store else None
    for i in range(n - 1):
        h0, hm, h1 = h_half[2 * i], h_half[2 * i + 1], h_half[2 * i + 2]
        k1 = apply_fn(h0, y, ops)
        k2 = apply_fn(hm, y + 0.5 * dt * k1, ops)
        k3 = apply_fn(hm, y + 0.5 * dt * k2, ops)
        k4 = apply_fn(h1, y + dt * k3, ops)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if trace_tol is not None:
            tr = np.trace(y, axis1=-2, axis2=-1)
            drift = float(np.max(np.abs(tr - 1.0)))
            if drift > trace_tol:
                t_bad = float(times[i + 1]) if times is not None else float(i + 1)
                raise IntegrationError(
                    f"integrator step too large: trace drift {drift:.3e} exceeds {trace_tol:.1e} at t = {t_bad:.6e} s",
                    time=t_bad,
                )
        if (i + 1) % RESYM_INTERVAL == 0:
            y_sym = (y + dag(y)) / 2.0
            if renormalize_trace:
                tr = np.trace(y_sym, axis1=-2, axis2=-1)
                y_new = y_sym / tr[..., None, None] if y_sym.ndim > 2 else y_sym / tr
            else:
                y_new = y_sym
            correction = float(np.max(np.abs(y_new - y)))
            if correction > RESYM_LOG_THRESHOLD:
                logger.info("re-symmetrization correction %.3e at step %d", correction, i + 1)
            y = y_new
        if store:
            out.append(y.copy())
    return out if store else y


def propagate_lindblad(
    gen: LindbladGenerator,
    rho0: np.ndarray,
    grid: TimeGrid,
    *,
    store: str = "all",
    validate: bool = True,
    trace_tol: float = 1e-6,
) -> np.ndarray:
    """Propagate the Lindblad master equation with fixed-step RK4.

    Parameters
    ----------
    gen : LindbladGenerator
    rho0 : ndarray
        Initial density matrix ``(d, d)``, or a batch ``(B, d, d)`` of
        initial matrices propagated under the same generator.
    grid : TimeGrid
    store : {"all", "final"}
        Return the full trajectory ``(n, ..., d, d)`` or only the final
        state ``(..., d, d)``.
    validate : bool
        Check density-matrix invariants on the stored states.
    trace_tol : float
        Raise :class:`IntegrationError` (naming the offending time) if the
        trace drifts further than this during the sweep.

    Notes
    -----
    Halving ``dt`` changes the final state at fourth order.  With no jump
    operators the evolution is unitary and Tr(rho^2) is conserved.
    """
    if rho0.shape[-1] != gen.dim or rho0.shape[-2] != gen.dim:
        raise PreconditionError(f"rho0 has shape {rho0.shape}, generator dim is {gen.dim}")
    if validate:
        for r in rho0.reshape(-1, gen.dim, gen.dim):
            validate_density_matrix(r, where="initial state")
    h_half = gen.hamiltonian_at(grid.half_times())
    ops = _JumpOps.from_generator(gen)
    result = _rk4_sweep(
        h_half,
        np.asarray(rho0, dtype=complex),
        grid.dt,
        _lindblad_apply,
        ops,
        store=(store == "all"),
        renormalize_trace=True,
        trace_tol=trace_tol,
        times=grid.times(),
    )
    if store == "all":
        traj = np.stack(result)
        if validate:
            flat = traj.reshape(-1, gen.dim, gen.dim)
            stride = max(1, len(flat) // 64)  # positivity is the expensive check
            for r in flat[::stride]:
                validate_density_matrix(r, where="trajectory state")
            validate_density_matrix(flat[-1], where="final state")
        return traj
    if validate:
        for r in np.asarray(result).reshape(-1, gen.dim, gen.dim):
            validate_density_matrix(r, where="final state")
    return result


def propagate_costate_backward(gen: LindbladGenerator, xi_tf: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Propagate d(xi)/dt = -L^dag xi backward from ``xi_tf`` at t = tf.

    Returns the full costate trajectory at the grid points (index 0 is t0).
    Used by the optimal-control module; the costate is Hermitian but not a
    density matrix, so no trace normalization applies.
    """
    h_half = gen.hamiltonian_at(grid.half_times())[::-1]
    ops = _JumpOps.from_generator(gen)
    traj = _rk4_sweep(
        h_half,
        np.asarray(xi_tf, dtype=complex),
        grid.dt,
        _lindblad_adjoint_apply,
        ops,
        store=True,
        renormalize_trace=False,
        trace_tol=None,
        times=None,
    )
    return np.stack(traj[::-1])
