"""Inertial-frame transformation and inertiality/adiabaticity diagnostics.

The frame transform follows the instantaneous eigenbasis P(t) of a sampled
Hamiltonian: with psi_tilde = P^dag psi the transformed generator is

    H_tilde = P^dag H P - i P^dag dP/dt.

For the two-level transfer Hamiltonian H = Omega (cos(theta) sz +
sin(theta) sx) this factors as Omega(t) * M(chi) with chi = theta_dot /
Omega: the protocol is adiabatic when chi is small and inertial when chi
varies slowly.  The diagnostics quantify both regimes:

* ``eta_adiabatic_2level``: chi / 4 (escape probability from a lab-frame
  eigenstate),
* ``eta_inertial``: chi_dot / (4 Omega (4 + chi^2)) (escape probability
  from an inertial eigenstate),

plus the general matrix-element forms valid for any dimension.  All time
derivatives use the same finite-difference stencil as
:func:`stirapkit.pulses.pulse_derivatives` so cross-module comparisons are
stencil-consistent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .linops import PreconditionError, TimeGrid, dag, eig_hermitian
from .pulses import ControlPulse, ThetaProfile, sampled_derivative


class DegeneracyError(RuntimeError):
    """Spectral gap closed somewhere along the sampled trajectory."""

    def __init__(self, message: str, time_index: int):
        super().__init__(message)
        self.time_index = time_index


@dataclass
class FrameTrajectory:
    """Sampled lab and inertial-frame Hamiltonians with the transform data."""

    grid: TimeGrid
    lab_h: np.ndarray    # (T, d, d)
    frame_h: np.ndarray  # (T, d, d)
    p: np.ndarray        # (T, d, d) eigenvector matrices, sign-continuous
    tau: np.ndarray      # (T,) rescaled time from the half-gap rate
    omega: np.ndarray    # (T,) half spectral gap used for tau


@dataclass
class InertialReport:
    """Sampled chi / eta_I / eta_A diagnostics of a transfer protocol."""

    chi: np.ndarray
    eta_i: np.ndarray
    eta_a: np.ndarray
    max_eta_i: float
    max_eta_a: float
    mean_eta_i: float

    def to_dict(self) -> dict:
        return {
            "chi": self.chi.tolist(),
            "eta_I": self.eta_i.tolist(),
            "eta_A": self.eta_a.tolist(),
            "max_eta_I": self.max_eta_i,
            "max_eta_A": self.max_eta_a,
            "mean_eta_I": self.mean_eta_i,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def rescaled_time(omega: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Cumulative trapezoidal integral tau(t) of the rate omega; tau(0) = 0."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (grid.n,):
        raise PreconditionError(f"omega has {omega.shape}, expected ({grid.n},)")
    increments = 0.5 * (omega[1:] + omega[:-1]) * grid.dt
    return np.concatenate(([0.0], np.cumsum(increments)))


def _min_gap(w: np.ndarray) -> float:
    return float(np.min(np.diff(w)))


def to_inertial_frame(h_samples: np.ndarray, grid: TimeGrid, *, order: str = "ascending") -> FrameTrajectory:
    """Transform sampled Hermitian matrices to the instantaneous eigenbasis.

    The eigenvector matrix is gauge-fixed at the first sample and kept
    sign-continuous afterwards (a column is flipped when its overlap with
    the previous sample turns negative).  ``order`` selects ascending or
    descending eigenvalue ordering at the first sample; tracking preserves
    that ordering since level crossings raise :class:`DegeneracyError`.
    The dP/dt term uses the shared finite-difference stencil and is
    projected onto its anti-Hermitian part before assembly, so the frame
    Hamiltonian is exactly Hermitian.
    """
    h_samples = np.asarray(h_samples, dtype=complex)
    if h_samples.ndim != 3 or h_samples.shape[0] != grid.n:
        raise PreconditionError(f"need ({grid.n}, d, d) Hamiltonian samples, got {h_samples.shape}")
    if order not in ("ascending", "descending"):
        raise PreconditionError(f"unknown eigenvalue order {order!r}")
    n, d = grid.n, h_samples.shape[1]
    p_all = np.empty((n, d, d), dtype=complex)
    w_all = np.empty((n, d))
    for i in range(n):
        w, p = eig_hermitian(h_samples[i])
        norm = float(np.max(np.abs(w)))
        if _min_gap(w) < 1e-9 * norm or norm == 0.0:
            raise DegeneracyError(
                f"spectral gap below 1e-9 * ||H|| at sample {i} (t = {grid.times()[i]:.6e} s)",
                time_index=i,
            )
        if order == "descending":
            w, p = w[::-1], p[:, ::-1]
        if i > 0:
            overlaps = np.einsum("ij,ij->j", np.conjugate(p_all[i - 1]), p)
            p = p * np.where(overlaps.real < 0, -1.0, 1.0)
        w_all[i], p_all[i] = w, p
    p_dot = sampled_derivative(p_all, grid.dt)
    a = dag(p_all) @ p_dot
    a = (a - dag(a)) / 2.0  # exact anti-Hermitian part; kills stencil asymmetry
    frame_h = dag(p_all) @ h_samples @ p_all - 1j * a
    frame_h = (frame_h + dag(frame_h)) / 2.0
    omega = 0.5 * (w_all.max(axis=1) - w_all.min(axis=1))
    return FrameTrajectory(grid, h_samples, frame_h, p_all, rescaled_time(omega, grid), omega)


def two_level_mixing_hamiltonian(theta: np.ndarray, omega_eff: float) -> np.ndarray:
    """Sampled H = Omega_eff (cos(theta) sz + sin(theta) sx).

    This is the effective two-level transfer generator in the convention
    whose frame transform is Omega (sz - (chi/2) sy) with chi =
    theta_dot / Omega (eigenvectors rotate at theta_dot / 2).
    """
    theta = np.asarray(theta, dtype=float)
    h = np.zeros(theta.shape + (2, 2), dtype=complex)
    h[..., 0, 0] = np.cos(theta)
    h[..., 1, 1] = -np.cos(theta)
    h[..., 0, 1] = np.sin(theta)
    h[..., 1, 0] = np.sin(theta)
    return omega_eff * h


def stirap_chi(theta: ThetaProfile, omega: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """chi = theta_dot / Omega sampled on the grid (analytic theta_dot)."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega == 0.0):
        raise PreconditionError("division guard: zero Rabi envelope sample in chi = theta_dot / Omega")
    t_rel = grid.times() - grid.t0
    return np.asarray(theta.d1(t_rel), dtype=float) / omega


def chi_from_pulses(pump: ControlPulse, stokes: ControlPulse) -> tuple[np.ndarray, np.ndarray]:
    """(chi, Omega) from sampled pulse magnitudes, theta_dot by the shared stencil."""
    if pump.grid != stokes.grid:
        raise PreconditionError("pulses must share one grid")
    a1, a2 = np.abs(pump.samples), np.abs(stokes.samples)
    omega = np.hypot(a1, a2)
    if np.any(omega == 0.0):
        raise PreconditionError("division guard: both envelopes vanish at a sample")
    theta = np.arctan2(a1, a2)
    chi = sampled_derivative(theta, pump.grid.dt) / omega
    return chi, omega


def eta_inertial(chi: np.ndarray, omega: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Inertiality parameter |chi_dot / (4 Omega (4 + chi^2))| per sample."""
    chi = np.asarray(chi, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if np.any(omega == 0.0):
        raise PreconditionError("division guard: zero Rabi envelope sample in eta_I")
    chi_dot = sampled_derivative(chi, grid.dt)
    return np.abs(chi_dot / (4.0 * omega * (4.0 + chi**2)))


def eta_adiabatic_2level(chi: np.ndarray) -> np.ndarray:
    """Adiabaticity parameter |chi| / 4 per sample."""
    return np.abs(np.asarray(chi, dtype=float)) / 4.0


def _eta_from_eigenpairs(op_dot: np.ndarray, matrices: np.ndarray, n_state: int, what: str) -> np.ndarray:
    """max_{m != n} |<m|dOp|n>| / (e_m - e_n)^2 per sample."""
    t_count, dim = matrices.shape[0], matrices.shape[1]
    out = np.empty(t_count)
    for i in range(t_count):
        w, p = eig_hermitian(matrices[i])
        gaps = np.abs(w - w[n_state])
        gaps[n_state] = np.inf
        norm = float(np.max(np.abs(w)))
        if norm == 0.0 or np.min(gaps) < 1e-9 * norm:
            raise DegeneracyError(f"{what}: degeneracy involving state {n_state} at sample {i}", time_index=i)
        me = np.abs(dag(p) @ op_dot[i] @ p[:, n_state])
        me[n_state] = 0.0
        out[i] = float(np.max(me / gaps**2))
    return out


def eta_adiabatic_general(h_samples: np.ndarray, grid: TimeGrid, n_state: int) -> np.ndarray:
    """General adiabaticity parameter of eigenstate ``n_state`` of sampled H."""
    h_samples = np.asarray(h_samples, dtype=complex)
    h_dot = sampled_derivative(h_samples, grid.dt)
    return _eta_from_eigenpairs(h_dot, h_samples, n_state, "eta_adiabatic_general")


def eta_inertial_general(m_samples: np.ndarray, tau: np.ndarray, n_state: int) -> np.ndarray:
    """General inertiality parameter: same structure with dM/dtau.

    ``m_samples`` and ``tau`` share a common (uniform) sample index; the
    tau-derivative is taken by the chain rule through that index, so tau
    itself may be non-uniform.
    """
    m_samples = np.asarray(m_samples, dtype=complex)
    tau = np.asarray(tau, dtype=float)
    if tau.shape[0] != m_samples.shape[0]:
        raise PreconditionError("tau and M sample counts differ")
    m_di = sampled_derivative(m_samples, 1.0)
    tau_di = sampled_derivative(tau, 1.0)
    if np.any(tau_di == 0.0):
        raise PreconditionError("division guard: stationary tau sample")
    m_dtau = m_di / tau_di[:, None, None]
    return _eta_from_eigenpairs(m_dtau, m_samples, n_state, "eta_inertial_general")


def report_from_chi(chi: np.ndarray, omega: np.ndarray, grid: TimeGrid) -> InertialReport:
    eta_i = eta_inertial(chi, omega, grid)
    eta_a = eta_adiabatic_2level(chi)
    return InertialReport(
        chi=np.asarray(chi, dtype=float),
        eta_i=eta_i,
        eta_a=eta_a,
        max_eta_i=float(np.max(eta_i)),
        max_eta_a=float(np.max(eta_a)),
        mean_eta_i=float(np.mean(eta_i)),
    )


def analyze_stirap(theta: ThetaProfile, omega: np.ndarray, grid: TimeGrid) -> InertialReport:
    """Inertiality report for an analytic mixing-angle protocol."""
    return report_from_chi(stirap_chi(theta, omega, grid), omega, grid)


def analyze_pulses(pump: ControlPulse, stokes: ControlPulse) -> InertialReport:
    """Inertiality report for a sampled pulse pair (numeric theta_dot)."""
    chi, omega = chi_from_pulses(pump, stokes)
    return report_from_chi(chi, omega, pump.grid)
