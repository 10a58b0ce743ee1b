"""Quantum process tomography, Kraus extraction and average gate fidelity.

The channel is expanded in the real operator basis

    E_1 = I, E_2 = sx, E_3 = -i sy, E_4 = sz

(and its Kronecker squares for two qubits) as
``G(rho) = sum_mn chi[m, n] E_m rho E_n^dag``.  The chi matrix is
assembled from the channel's action on computational outer products
|q_i><q_j| by the block construction

    chi = Lambda rho_block Lambda,      Lambda = (1/2) [[I, sx], [sx, -I]]

(Kronecker-squared with a middle-index permutation for two qubits).  The
block sign and index conventions were fixed against an independent
linear-inversion oracle; see the tests.

Because the basis element -i sy makes every E_m real, the reported chi
differs by phases from the sigma_y convention; exports carry the basis in
their metadata.
"""

from __future__ import annotations

import csv
import json
import logging
from typing import Callable, Sequence

import numpy as np

from .linops import IDENTITY_2, SIGMA_X, SIGMA_Y, SIGMA_Z, PreconditionError, dag, kron

logger = logging.getLogger(__name__)

E_BASIS_1Q = [IDENTITY_2, SIGMA_X, -1j * SIGMA_Y, SIGMA_Z]

_LAMBDA_BLOCK = np.block([[IDENTITY_2, SIGMA_X], [SIGMA_X, -IDENTITY_2]]) / 2.0
_PERM_MIDDLE = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
)
_PERM_16 = kron(IDENTITY_2, kron(_PERM_MIDDLE, IDENTITY_2))


class NonCompletelyPositiveError(RuntimeError):
    """chi reconstruction produced a strongly negative eigenvalue."""


def pauli_basis(n_qubits: int) -> list[np.ndarray]:
    """Operator basis {I, sx, -i sy, sz}^(x n)."""
    if n_qubits == 1:
        return list(E_BASIS_1Q)
    if n_qubits == 2:
        return [kron(a, b) for a in E_BASIS_1Q for b in E_BASIS_1Q]
    raise PreconditionError(f"pauli_basis supports 1 or 2 qubits, got {n_qubits}")


def simulate_process(channel: Callable[[np.ndarray], np.ndarray], n_qubits: int) -> np.ndarray:
    """Propagate the tomography input set through a channel.

    ``channel`` maps a stack of Hermitian positive matrices ``(B, d, d)``
    to output matrices ``(B, d, d)`` and must be linear (one batched call
    is made).  Non-Hermitian inputs |q_i><q_j| are never propagated
    directly; they are recombined from four physical pure-state
    propagations, which keeps the propagator's invariant checks active.

    Returns an array ``out[i, j] = G(|q_i><q_j|)`` over the computational
    basis kets, the raw material for :func:`qpt_single` / :func:`qpt_two`.
    """
    if n_qubits not in (1, 2):
        raise PreconditionError(f"simulate_process supports 1 or 2 qubits, got {n_qubits}")
    d = 2**n_qubits
    kets = np.eye(d, dtype=complex)
    states = [np.outer(kets[i], kets[i].conj()) for i in range(d)]
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    for i, j in pairs:
        u = (kets[i] + kets[j]) / np.sqrt(2.0)
        v = (kets[i] + 1j * kets[j]) / np.sqrt(2.0)
        states.append(np.outer(u, u.conj()))
        states.append(np.outer(v, v.conj()))
    results = channel(np.stack(states))
    if results.shape != (len(states), d, d):
        raise PreconditionError(f"channel returned shape {results.shape}, expected ({len(states)}, {d}, {d})")
    proj_out = results[:d]
    out = np.empty((d, d, d, d), dtype=complex)
    for i in range(d):
        out[i, i] = proj_out[i]
    for k, (i, j) in enumerate(pairs):
        g_u = results[d + 2 * k]
        g_v = results[d + 2 * k + 1]
        coherence = g_u + 1j * g_v - (1 + 1j) * (proj_out[i] + proj_out[j]) / 2.0
        out[i, j] = coherence
        out[j, i] = dag(coherence)
    return out


def qpt_single(outputs: np.ndarray) -> np.ndarray:
    """Single-qubit chi matrix from the 2x2 grid of basis outputs.

    ``outputs[i, j] = G(|i><j|)``; equivalently the four propagated inputs
    rho_1 = |0><0|, rho_2 = rho_1 sx, rho_3 = sx rho_1, rho_4 = sx rho_1 sx.
    """
    outputs = np.asarray(outputs, dtype=complex)
    if outputs.shape != (2, 2, 2, 2):
        raise PreconditionError(f"expected (2, 2, 2, 2) outputs, got {outputs.shape}")
    big = np.block([[outputs[0, 0], outputs[0, 1]], [outputs[1, 0], outputs[1, 1]]])
    return _LAMBDA_BLOCK @ big @ _LAMBDA_BLOCK


def qpt_two(outputs: np.ndarray) -> np.ndarray:
    """Two-qubit chi matrix from the 4x4 grid of basis outputs.

    ``outputs[m, n] = G(|q_m><q_n|)`` with q = (|00>, |01>, |10>, |11>);
    the block matrix is conjugated by the middle-index permutation before
    the Lambda rotation.
    """
    outputs = np.asarray(outputs, dtype=complex)
    if outputs.shape != (4, 4, 4, 4):
        raise PreconditionError(f"expected (4, 4, 4, 4) outputs, got {outputs.shape}")
    big = np.block([[outputs[m, n] for n in range(4)] for m in range(4)])
    rho_bar = _PERM_16.T @ big @ _PERM_16
    lam = kron(_LAMBDA_BLOCK, _LAMBDA_BLOCK)
    return lam @ rho_bar @ lam


def kraus_from_chi(chi: np.ndarray) -> list[np.ndarray]:
    """Kraus operators from a chi matrix by diagonalization.

    chi = U D U^dag gives G_k = sqrt(D_kk) sum_m U[m, k] E_m.  Eigenvalues
    below 1e-10 are dropped; small negative eigenvalues are clipped to
    zero (with a warning below -1e-6), and anything below -1e-4 raises
    :class:`NonCompletelyPositiveError`.
    """
    chi = np.asarray(chi, dtype=complex)
    dim2 = chi.shape[0]
    if chi.shape != (dim2, dim2) or dim2 not in (4, 16):
        raise PreconditionError(f"chi must be 4x4 or 16x16, got {chi.shape}")
    dev = np.max(np.abs(chi - dag(chi)))
    if dev > 1e-8 * max(1.0, float(np.max(np.abs(chi)))):
        raise PreconditionError(f"chi is not Hermitian within 1e-8 (deviation {dev:.3e})")
    basis = pauli_basis(1 if dim2 == 4 else 2)
    w, u = np.linalg.eigh((chi + dag(chi)) / 2.0)
    if float(w.min()) < -1e-4:
        raise NonCompletelyPositiveError(
            f"chi eigenvalue {w.min():.3e} below -1e-4: reconstruction is not completely positive"
        )
    if float(w.min()) < -1e-6:
        logger.warning("clipping negative chi eigenvalue %.3e to zero", float(w.min()))
    ops = []
    for k in range(dim2):
        if w[k] < 1e-10:
            continue
        g = sum(u[m, k] * basis[m] for m in range(dim2))
        ops.append(np.sqrt(w[k]) * g)
    return ops


def apply_kraus(kraus: Sequence[np.ndarray], rho: np.ndarray) -> np.ndarray:
    """sum_k G_k rho G_k^dag."""
    out = np.zeros_like(np.asarray(rho, dtype=complex))
    for g in kraus:
        out += g @ rho @ dag(g)
    return out


def kraus_completeness_defect(kraus: Sequence[np.ndarray]) -> float:
    """max|sum_k G_k^dag G_k - I|; zero for a trace-preserving channel."""
    d = kraus[0].shape[0]
    total = sum(dag(g) @ g for g in kraus)
    return float(np.max(np.abs(total - np.eye(d))))


def avg_gate_fidelity(kraus: Sequence[np.ndarray], target: np.ndarray) -> float:
    """Average gate fidelity of a Kraus channel against a target unitary.

    F = (1/(n(n+1))) sum_k [ Tr(M_k M_k^dag) + |Tr M_k|^2 ],  M_k = U0^dag G_k,
    the Haar average of the state fidelity over pure inputs.
    """
    target = np.asarray(target, dtype=complex)
    n = target.shape[0]
    if any(g.shape != (n, n) for g in kraus):
        raise PreconditionError("Kraus operator dimension does not match target unitary")
    total = 0.0
    u_dag = dag(target)
    for g in kraus:
        m = u_dag @ g
        total += float(np.real(np.trace(m @ dag(m)))) + abs(np.trace(m)) ** 2
    return total / (n * (n + 1))


def reconstruct_gate(channel: Callable[[np.ndarray], np.ndarray], n_qubits: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Full pipeline: propagate the input set, assemble chi, extract Kraus."""
    outputs = simulate_process(channel, n_qubits)
    chi = qpt_single(outputs) if n_qubits == 1 else qpt_two(outputs)
    return chi, kraus_from_chi(chi)


def chi_to_json(chi: np.ndarray, path, metadata: dict | None = None) -> None:
    """Write chi as JSON with separate real/imag parts and basis metadata."""
    payload = {
        "basis": "I, sigma_x, -i sigma_y, sigma_z (Kronecker products for two qubits)",
        "dim": int(chi.shape[0]),
        "real": np.real(chi).tolist(),
        "imag": np.imag(chi).tolist(),
    }
    if metadata:
        payload["metadata"] = metadata
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def chi_to_csv(chi: np.ndarray, path_real, path_imag) -> None:
    """Write chi real/imag parts as plain CSV grids (heatmap layout)."""
    for path, part in ((path_real, np.real(chi)), (path_imag, np.imag(chi))):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in part:
                writer.writerow([repr(float(x)) for x in row])
