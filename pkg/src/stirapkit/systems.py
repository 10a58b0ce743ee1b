"""Concrete Lindblad generators: STIRAP, tripod gates, and the two-atom CZ.

Level layouts
-------------
* 3-level STIRAP: (|1>, |2>, |3>) at indices (0, 1, 2); the pump couples
  |1> <-> |2> and the Stokes |2> <-> |3>, with the detuning and all decay
  on the intermediate index 1.
* Tripod gates: (|0>, |1>, |2>, |e>) at indices (0, 1, 2, 3).  The qubit
  lives in {|0>, |1>}, |2> is the auxiliary transfer level, |e> the
  radiative excited state.
* Two-atom CZ: per-atom levels (|0>, |1>, |p>, |r>) at indices
  (0, 1, 2, 3); |0> is a spectator.  The 16-dimensional product space
  keeps atom 1 as the left Kronecker factor, so the computational qubit
  states sit at indices (0, 1, 4, 5).

All frequencies and rates are angular (rad/s); the detuning enters the CZ
Hamiltonian as -Delta |p><p| per atom and the Rydberg interaction as
C6 / r^6 on |rr>.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .linops import LindbladGenerator, PreconditionError, TimeGrid, kron
from .pulses import ControlPulse, PulseShape, gate_pair

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)

# Qubit-block indices of the gate systems.
TRIPOD_QUBIT_INDICES = (0, 1)
CZ_QUBIT_INDICES = (0, 1, 4, 5)

PHASE_GATE_TARGET = np.diag([1.0, -1.0]).astype(complex)
HADAMARD_TARGET = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / SQRT2
CZ_TARGET = np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)


class CalibrationError(RuntimeError):
    """The conditional-phase calibration bracket is unusable."""


class ConfigurationError(ValueError):
    """Physical parameters are mutually inconsistent."""


@dataclass(frozen=True)
class StirapParams:
    """Single-photon detuning and decay rates of the 3-level ladder (rad/s)."""

    delta: float = 0.0
    gamma_31: float = 0.0
    gamma_32: float = 0.0

    def __post_init__(self):
        if self.gamma_31 < 0 or self.gamma_32 < 0:
            raise ConfigurationError("decay rates must be nonnegative")


@dataclass(frozen=True)
class CzParams:
    """Rydberg CZ parameters (rad/s, meters).

    ``vr`` and ``(c6, separation)`` are redundant; either may be given.
    When both are present they must agree to 1e-6 relative.
    """

    delta: float
    gamma_p: float = 0.0
    gamma_r: float = 0.0
    gamma_dep: float = 0.0
    vr: float | None = None
    c6: float | None = None
    separation: float | None = None

    def __post_init__(self):
        if self.c6 is not None and self.separation is not None:
            derived = self.c6 / self.separation**6
            if self.vr is not None and abs(self.vr - derived) > 1e-6 * abs(derived):
                raise ConfigurationError(
                    f"vr = {self.vr:.6e} inconsistent with c6/r^6 = {derived:.6e}"
                )
            object.__setattr__(self, "vr", derived)
        if self.vr is None:
            raise ConfigurationError("need vr or (c6, separation)")
        if min(self.gamma_p, self.gamma_r, self.gamma_dep) < 0:
            raise ConfigurationError("rates must be nonnegative")

    def interaction(self, dpos: np.ndarray | None = None) -> float:
        """V_R at the (possibly displaced) atom separation."""
        if dpos is None or self.c6 is None or self.separation is None:
            return float(self.vr)
        rel = np.array([self.separation + dpos[1, 0] - dpos[0, 0], dpos[1, 1] - dpos[0, 1], dpos[1, 2] - dpos[0, 2]])
        dist = float(np.linalg.norm(rel))
        if dist == 0.0:
            raise ConfigurationError("zero atom separation: Rydberg interaction is singular")
        return float(self.c6 / dist**6)


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian noise magnitudes for the CZ robustness runs.

    sigma_delta (rad/s) widens the single-photon detuning, sigma_omega
    (rad/s) the pulse amplitudes relative to ``omega_ref``; position
    deviations are meters (dz along the beams, dx/dy transverse, which is
    also the atom-separation plane); ``velocity_sigma`` (m/s) feeds the
    plane-wave phase through the wavevectors k1, k2 (rad/m).
    """

    sigma_delta: float = 0.0
    sigma_omega: float = 0.0
    sigma_dz: float = 0.0
    sigma_dxy: float = 0.0
    waist: float = 1.0e-6
    k1: float = 0.0
    k2: float = 0.0
    velocity_sigma: float = 0.0
    omega_ref: float = 1.0

    def __post_init__(self):
        if min(self.sigma_delta, self.sigma_omega, self.sigma_dz, self.sigma_dxy, self.velocity_sigma) < 0:
            raise ConfigurationError("noise sigmas must be nonnegative")
        if self.waist <= 0:
            raise ConfigurationError("beam waist must be positive")


@dataclass(frozen=True)
class NoiseSample:
    """One reproducible draw of the noise model."""

    detuning_shift: float = 0.0
    omega_scale_1: float = 1.0
    omega_scale_2: float = 1.0
    dpos: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    seed: int = -1


IDEAL_SAMPLE = NoiseSample()


def gaussian_beam_scale(dx: float, dy: float, waist: float) -> float:
    """Amplitude factor exp(-(dx^2 + dy^2)/w^2) for an atom off the beam axis."""
    if waist <= 0:
        raise PreconditionError("beam waist must be positive")
    return float(np.exp(-(dx**2 + dy**2) / waist**2))


def sample_noise(model: NoiseModel, seed: int) -> NoiseSample:
    """Draw one noise realization; identical seeds give identical samples."""
    rng = np.random.default_rng(seed)
    shift = model.sigma_delta * rng.standard_normal()
    scale_1 = 1.0 + (model.sigma_omega / model.omega_ref) * rng.standard_normal()
    scale_2 = 1.0 + (model.sigma_omega / model.omega_ref) * rng.standard_normal()
    dpos = np.empty((2, 3))
    for atom in range(2):
        dpos[atom, 0] = model.sigma_dxy * rng.standard_normal()
        dpos[atom, 1] = model.sigma_dxy * rng.standard_normal()
        dpos[atom, 2] = model.sigma_dz * rng.standard_normal()
    velocity = model.velocity_sigma * rng.standard_normal(2)
    return NoiseSample(float(shift), float(scale_1), float(scale_2), dpos, velocity, seed)


def _require_shared_grid(*pulses: ControlPulse) -> TimeGrid:
    grid = pulses[0].grid
    for p in pulses[1:]:
        if p.grid != grid:
            raise PreconditionError("pulses must share one grid")
    return grid


def build_stirap3(params: StirapParams, pump: ControlPulse, stokes: ControlPulse) -> LindbladGenerator:
    """3-level STIRAP generator.

    H(t) = (1/2) [[0, O1, 0], [O1*, 2 Delta, O2], [0, O2*, 0]] with jump
    operators sqrt(gamma_31) |1><2| and sqrt(gamma_32) |3><2| taking the
    radiative intermediate level into the two ground levels.
    """
    _require_shared_grid(pump, stokes)

    def h(times):
        times = np.atleast_1d(times)
        o1 = pump.at(times)
        o2 = stokes.at(times)
        out = np.zeros((times.size, 3, 3), dtype=complex)
        out[:, 0, 1] = o1 / 2
        out[:, 1, 0] = np.conjugate(o1) / 2
        out[:, 1, 2] = o2 / 2
        out[:, 2, 1] = np.conjugate(o2) / 2
        out[:, 1, 1] = params.delta
        return out

    jumps = []
    if params.gamma_31 > 0:
        j = np.zeros((3, 3), dtype=complex)
        j[0, 1] = np.sqrt(params.gamma_31)
        jumps.append(j)
    if params.gamma_32 > 0:
        j = np.zeros((3, 3), dtype=complex)
        j[2, 1] = np.sqrt(params.gamma_32)
        jumps.append(j)
    return LindbladGenerator(3, h, jumps)


def build_effective2(pump: ControlPulse, stokes: ControlPulse) -> LindbladGenerator:
    """Effective two-level generator H = (1/2)[[O1, O2], [O2*, -O1]] (Delta = 0 regime)."""
    _require_shared_grid(pump, stokes)

    def h(times):
        times = np.atleast_1d(times)
        o1 = np.real(pump.at(times))
        o2 = stokes.at(times)
        out = np.zeros((times.size, 2, 2), dtype=complex)
        out[:, 0, 0] = o1 / 2
        out[:, 1, 1] = -o1 / 2
        out[:, 0, 1] = o2 / 2
        out[:, 1, 0] = np.conjugate(o2) / 2
        return out

    return LindbladGenerator(2, h)


def _tripod_hamiltonian(pulse_map: dict[int, ControlPulse]):
    """Tripod H(t): each pulse couples its lower level to |e> (index 3)."""

    def h(times):
        times = np.atleast_1d(times)
        out = np.zeros((times.size, 4, 4), dtype=complex)
        for level, pulse in pulse_map.items():
            amp = pulse.at(times)
            out[:, level, 3] = amp / 2
            out[:, 3, level] = np.conjugate(amp) / 2
        return out

    return h


def _decay_jumps(dim: int, excited: int, destinations: dict[int, float]) -> list[np.ndarray]:
    jumps = []
    for dest, rate in destinations.items():
        if rate > 0:
            j = np.zeros((dim, dim), dtype=complex)
            j[dest, excited] = np.sqrt(rate)
            jumps.append(j)
    return jumps


def build_phase_gate(pump: ControlPulse, stokes: ControlPulse, gamma: float) -> LindbladGenerator:
    """Tripod phase gate: two STIRAP steps |1> -> |2> -> |1> with a Stokes sign flip.

    |0> stays uncoupled and |1> returns with a pi phase, so the ideal gate
    is diag(1, -1) on the qubit.  Decay gamma from |e> splits equally into
    |1> and |2>.  Pulses without the mid-protocol sign flip produce the
    identity up to a global phase; that degeneracy triggers a warning.
    """
    _require_shared_grid(pump, stokes)
    s = stokes.samples
    if abs(s[0]) > 0 and abs(s[-1]) > 0 and np.real(s[0] * np.conjugate(s[-1])) > 0:
        warnings.warn(
            "stokes pulse has no mid-protocol sign flip: the phase gate degenerates to identity",
            stacklevel=2,
        )
    return LindbladGenerator(
        4,
        _tripod_hamiltonian({1: pump, 2: stokes}),
        _decay_jumps(4, 3, {1: gamma / 2, 2: gamma / 2}),
    )


def hadamard_pulse_triple(
    omega1_max: float,
    grid: TimeGrid,
    shape: PulseShape = PulseShape.QUARTIC,
) -> tuple[ControlPulse, ControlPulse, ControlPulse]:
    """Pulse triple (O0, O1, O2) implementing the Hadamard reflection.

    O0 (on |0>) and O1 (on |1>) share the gate pump envelope with the fixed
    amplitude ratio O0_max = (1 - sqrt(2)) O1_max, which makes the bright
    superposition the -1 eigenvector of the Hadamard; O2 (on |2>) is the
    sign-flipped transfer envelope with O2_max^2 = O0_max^2 + O1_max^2, so
    the transfer step is a balanced STIRAP against the bright coupling.
    """
    ratio = 1.0 - SQRT2
    pump, stokes = gate_pair(shape, omega1_max, grid, phase_flip=True)
    target_o2 = omega1_max * np.sqrt(1.0 + ratio**2)
    scale_o2 = target_o2 / omega1_max

    def f0(t):
        return ratio * pump.at(t)

    def f2(t):
        return scale_o2 * stokes.at(t)

    o0 = ControlPulse(grid, ratio * pump.samples, "hadamard O0", func=f0)
    o1 = ControlPulse(grid, pump.samples, "hadamard O1", func=pump.func)
    o2 = ControlPulse(grid, scale_o2 * stokes.samples, "hadamard O2", func=f2)
    return o0, o1, o2


def build_hadamard_gate(
    omega0: ControlPulse,
    omega1: ControlPulse,
    omega2: ControlPulse,
    gamma: float,
) -> LindbladGenerator:
    """Tripod Hadamard gate: bright-state reflection via the auxiliary level.

    Validates the fixed amplitude ratios (|O0|/|O1| = sqrt(2) - 1 with
    opposite sign, |O2|^2 = |O0|^2 + |O1|^2, each to 1%); decay gamma from
    |e> splits equally into the three coupled lower levels.
    """
    _require_shared_grid(omega0, omega1, omega2)
    r0, r1, r2 = omega0.max_abs(), omega1.max_abs(), omega2.max_abs()
    ratio = SQRT2 - 1.0
    if abs(r0 / r1 - ratio) > 0.01 * ratio:
        raise ConfigurationError(f"|O0|/|O1| = {r0 / r1:.4f}, expected {ratio:.4f} within 1%")
    if abs(r2**2 - (r0**2 + r1**2)) > 0.01 * (r0**2 + r1**2):
        raise ConfigurationError("O2 amplitude must satisfy O2^2 = O0^2 + O1^2 within 1%")
    overlap = float(np.real(np.sum(omega0.samples * np.conjugate(omega1.samples))))
    if overlap >= 0:
        raise ConfigurationError("O0/O1 ratio must be negative (1 - sqrt(2)) for a Hadamard reflection")
    return LindbladGenerator(
        4,
        _tripod_hamiltonian({0: omega0, 1: omega1, 2: omega2}),
        _decay_jumps(4, 3, {0: gamma / 3, 1: gamma / 3, 2: gamma / 3}),
    )


def _embed_pair(op: np.ndarray) -> list[np.ndarray]:
    eye = np.eye(4, dtype=complex)
    return [kron(op, eye), kron(eye, op)]


def build_cz(
    params: CzParams,
    pump: ControlPulse,
    stokes: ControlPulse,
    sample: NoiseSample = IDEAL_SAMPLE,
    *,
    noise_model: NoiseModel | None = None,
    include_jumps: bool = True,
) -> LindbladGenerator:
    """Two-atom 16-dimensional CZ generator.

    Per atom: the pump couples |1> <-> |p> with detuning -Delta on |p>, the
    Stokes couples |p> <-> |r>; the doubly excited |rr> carries the van der
    Waals shift C6/r^6 evaluated at the sampled positions.  The noise
    sample scales each pulse (classical amplitude noise plus the Gaussian
    beam profile at the displaced position) and adds plane-wave phases
    exp(i k (dz + v t)) per atom; its detuning shift is common to both
    atoms.  Jumps per atom: sqrt(gamma_p)|1><p|, sqrt(gamma_r)|p><r| and
    the two dephasing channels sqrt(gamma_dep/2)(|p><p| - |1><1|),
    sqrt(gamma_dep/2)(|r><r| - |p><p|).
    """
    _require_shared_grid(pump, stokes)
    model = noise_model or NoiseModel()
    scales = np.empty((2, 2))  # [atom, pulse]
    for atom in range(2):
        beam = gaussian_beam_scale(sample.dpos[atom, 0], sample.dpos[atom, 1], model.waist)
        scales[atom, 0] = sample.omega_scale_1 * beam
        scales[atom, 1] = sample.omega_scale_2 * beam
    k = (model.k1, model.k2)
    v_r = params.interaction(sample.dpos if sample is not IDEAL_SAMPLE else None)
    delta_eff = params.delta + sample.detuning_shift

    def single_h(times, atom):
        times = np.atleast_1d(times)
        o1 = pump.at(times) * scales[atom, 0]
        o2 = stokes.at(times) * scales[atom, 1]
        if k[0] != 0.0:
            o1 = o1 * np.exp(1j * k[0] * (sample.dpos[atom, 2] + sample.velocity[atom] * times))
        if k[1] != 0.0:
            o2 = o2 * np.exp(1j * k[1] * (sample.dpos[atom, 2] + sample.velocity[atom] * times))
        out = np.zeros((times.size, 4, 4), dtype=complex)
        out[:, 1, 2] = o1 / 2
        out[:, 2, 1] = np.conjugate(o1) / 2
        out[:, 2, 3] = o2 / 2
        out[:, 3, 2] = np.conjugate(o2) / 2
        out[:, 2, 2] = -delta_eff
        return out

    eye = np.eye(4, dtype=complex)
    rr = np.zeros((16, 16), dtype=complex)
    rr[15, 15] = v_r

    def h(times):
        times = np.atleast_1d(times)
        h1 = single_h(times, 0)
        h2 = single_h(times, 1)
        out = np.einsum("tij,kl->tikjl", h1, eye).reshape(times.size, 16, 16)
        out += np.einsum("ij,tkl->tikjl", eye, h2).reshape(times.size, 16, 16)
        out += rr
        return out

    jumps: list[np.ndarray] = []
    if include_jumps:
        if params.gamma_p > 0:
            j = np.zeros((4, 4), dtype=complex)
            j[1, 2] = np.sqrt(params.gamma_p)
            jumps += _embed_pair(j)
        if params.gamma_r > 0:
            j = np.zeros((4, 4), dtype=complex)
            j[2, 3] = np.sqrt(params.gamma_r)
            jumps += _embed_pair(j)
        if params.gamma_dep > 0:
            amp = np.sqrt(params.gamma_dep / 2)
            jumps += _embed_pair(amp * np.diag([0, -1, 1, 0]).astype(complex))
            jumps += _embed_pair(amp * np.diag([0, 0, -1, 1]).astype(complex))
    return LindbladGenerator(16, h, jumps)


def embed_qubit_state(rho_qubit: np.ndarray, dim: int, indices) -> np.ndarray:
    """Embed a qubit-block density matrix into the full system (batched)."""
    rho_qubit = np.asarray(rho_qubit, dtype=complex)
    batch = rho_qubit.shape[:-2]
    out = np.zeros(batch + (dim, dim), dtype=complex)
    out[..., np.ix_(indices, indices)[0], np.ix_(indices, indices)[1]] = rho_qubit
    return out


def project_qubit_state(rho_full: np.ndarray, indices) -> np.ndarray:
    """Extract the qubit block; leaked population shows up as trace loss."""
    idx = np.ix_(indices, indices)
    return rho_full[..., idx[0], idx[1]]


def gate_channel(
    gen: LindbladGenerator,
    grid: TimeGrid,
    qubit_indices,
    correction: np.ndarray | None = None,
):
    """Channel callable for tomography: embed, propagate, correct, project.

    ``correction`` is an optional full-dimension unitary applied after the
    evolution (single-qubit phase corrections for the CZ).  The returned
    callable accepts a stack of Hermitian qubit-block matrices.
    """
    from .linops import propagate_lindblad

    def channel(rho_qubit: np.ndarray) -> np.ndarray:
        rho_full = embed_qubit_state(rho_qubit, gen.dim, qubit_indices)
        final = propagate_lindblad(gen, rho_full, grid, store="final", validate=False)
        if correction is not None:
            final = correction @ final @ np.conjugate(correction.T)
        return project_qubit_state(final, qubit_indices)

    return channel


@dataclass(frozen=True)
class CzCalibration:
    """Calibrated protocol duration and ideal single-atom phases."""

    tf: float
    phi_atom1: float
    phi_atom2: float
    conditional_phase: float

    def correction_unitary(self) -> np.ndarray:
        """Local Z corrections removing the calibrated single-atom phases."""
        c1 = np.diag([1.0, np.exp(-1j * self.phi_atom1), 1.0, 1.0])
        c2 = np.diag([1.0, np.exp(-1j * self.phi_atom2), 1.0, 1.0])
        return kron(c1, c2)


def _cz_phases(params: CzParams, shape: PulseShape, omega_max: float, tf: float, steps: int):
    """Wrapped conditional phase and single-atom phases of a jump-free run."""
    from .linops import propagate_lindblad

    grid = TimeGrid(0.0, tf, steps)
    pump, stokes = gate_pair(shape, omega_max, grid, phase_flip=False)
    gen = build_cz(params, pump, stokes, include_jumps=False)
    plus = np.zeros(4, dtype=complex)
    plus[0] = plus[1] = 1.0 / SQRT2
    psi0 = kron(plus.reshape(4, 1), plus.reshape(4, 1)).ravel()
    rho0 = np.outer(psi0, psi0.conj())
    rho = propagate_lindblad(gen, rho0, grid, store="final", validate=False)
    c00, c01, c10, c11 = rho[0, 0], rho[1, 0], rho[4, 0], rho[5, 0]
    if min(abs(c01), abs(c10), abs(c11)) < 1e-6:
        raise CalibrationError("qubit coherences vanished; transfer failed during calibration")
    cond = c11 * c00 / (c01 * c10)
    return float(np.angle(cond)), float(np.angle(c10)), float(np.angle(c01))


def calibrate_cz_duration(
    params: CzParams,
    shape: PulseShape,
    omega_max: float,
    bracket: tuple[float, float],
    *,
    steps: int = 2001,
    tol: float = 1e-3,
    max_iter: int = 60,
) -> CzCalibration:
    """Find the protocol duration where |11> acquires a conditional pi phase.

    Uses jump-free propagation of |++>: the conditional phase is
    arg<11|rho|00> - arg<01|rho|00> - arg<10|rho|00>, unwrapped over a
    5-point scan of the bracket (monotonicity is verified there), then
    bisected to |phase + pi| < tol.
    """
    t_lo, t_hi = bracket
    if not 0 < t_lo < t_hi:
        raise CalibrationError(f"invalid bracket {bracket}")
    # pre-scan, densified until the unwrapped phase is sampled finely enough
    n_scan = 5
    while True:
        scan_t = np.linspace(t_lo, t_hi, n_scan)
        scan = [_cz_phases(params, shape, omega_max, float(t), steps) for t in scan_t]
        unwrapped = np.unwrap([s[0] for s in scan])
        if np.max(np.abs(np.diff(unwrapped))) < np.pi / 2 or n_scan >= 129:
            break
        n_scan = 2 * n_scan - 1
    diffs = np.diff(unwrapped)
    if not (np.all(diffs < 0) or np.all(diffs > 0)):
        raise CalibrationError("conditional phase is not monotone over the bracket")
    # crossings of odd multiples of pi (conditional phase of pi modulo 2 pi)
    levels = []
    k_lo = int(np.floor((min(unwrapped) / np.pi - 1) / 2))
    k_hi = int(np.ceil((max(unwrapped) / np.pi - 1) / 2))
    for k in range(k_lo, k_hi + 1):
        lv = (2 * k + 1) * np.pi
        if min(unwrapped) <= lv <= max(unwrapped):
            levels.append(lv)
    if not levels:
        raise CalibrationError(
            f"conditional phase does not cross pi (mod 2 pi) in the bracket "
            f"(unwrapped span {unwrapped[0]:+.3f} to {unwrapped[-1]:+.3f} rad)"
        )
    # choose the crossing subinterval nearest the bracket center
    center = 0.5 * (t_lo + t_hi)
    best = None
    for lv in levels:
        g = unwrapped - lv
        for i in range(len(scan_t) - 1):
            if g[i] == 0.0 or g[i] * g[i + 1] < 0:
                mid_t = 0.5 * (scan_t[i] + scan_t[i + 1])
                if best is None or abs(mid_t - center) < abs(best[0] - center):
                    best = (mid_t, i, lv)
    if best is None:
        raise CalibrationError("no conditional-phase sign change found in the bracket")
    _, idx, target = best
    lo, hi = float(scan_t[idx]), float(scan_t[idx + 1])
    f_lo = unwrapped[idx] - target
    phi_lo = unwrapped[idx]
    result = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        phase, phi1, phi2 = _cz_phases(params, shape, omega_max, mid, steps)
        # unwrap relative to the low endpoint (subinterval spans < pi of phase)
        phase_un = phase + 2 * np.pi * np.round((phi_lo - phase) / (2 * np.pi))
        f_mid = phase_un - target
        if abs(f_mid) < tol:
            result = CzCalibration(mid, phi1, phi2, phase_un)
            break
        if f_lo * f_mid <= 0:
            hi = mid
        else:
            lo, f_lo, phi_lo = mid, f_mid, phase_un
    if result is None:
        raise CalibrationError(f"bisection did not reach |phase - pi| < {tol} in {max_iter} iterations")
    return result
