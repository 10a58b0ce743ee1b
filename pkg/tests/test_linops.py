import numpy as np
import pytest

from stirapkit import linops
from stirapkit.linops import (
    IDENTITY_2,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    IntegrationError,
    LindbladGenerator,
    PreconditionError,
    TimeGrid,
    eig_hermitian,
    kron,
    projector,
    propagate_lindblad,
    state_fidelity,
)


def random_hermitian(dim, rng):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (a + a.conj().T) / 2


class TestEigHermitian:
    def test_sigma_z_diagonal(self):
        w, p = eig_hermitian(SIGMA_Z)
        np.testing.assert_allclose(w, [-1.0, 1.0], atol=1e-14)
        # ascending order puts |1> first, |0> second (up to gauge, here exact)
        np.testing.assert_allclose(p[:, 0], [0.0, 1.0], atol=1e-14)
        np.testing.assert_allclose(p[:, 1], [1.0, 0.0], atol=1e-14)

    def test_sigma_x_textbook(self):
        w, p = eig_hermitian(SIGMA_X)
        np.testing.assert_allclose(w, [-1.0, 1.0], atol=1e-14)
        s = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(p[:, 0], [s, -s], atol=1e-14)
        np.testing.assert_allclose(p[:, 1], [s, s], atol=1e-14)

    def test_two_level_mixing_hamiltonian_unit_gap(self):
        # H = cos(2 theta) sz + sin(2 theta) sx at theta = pi/8 has eigenvalues -1, +1
        theta = np.pi / 8
        h = np.cos(2 * theta) * SIGMA_Z + np.sin(2 * theta) * SIGMA_X
        w, _ = eig_hermitian(h)
        np.testing.assert_allclose(w, [-1.0, 1.0], atol=1e-12)

    @pytest.mark.parametrize("dim", [2, 3, 5, 16])
    def test_reconstruction(self, dim):
        rng = np.random.default_rng(dim)
        h = random_hermitian(dim, rng)
        w, p = eig_hermitian(h)
        np.testing.assert_array_less(w[:-1], w[1:] + 1e-15)
        err = np.max(np.abs(p @ np.diag(w) @ p.conj().T - h))
        assert err < 1e-10 * np.max(np.abs(h))

    def test_gauge_largest_entry_real_positive(self):
        rng = np.random.default_rng(7)
        h = random_hermitian(4, rng)
        _, p = eig_hermitian(h)
        for j in range(4):
            k = int(np.argmax(np.abs(p[:, j])))
            assert p[k, j].imag == pytest.approx(0.0, abs=1e-14)
            assert p[k, j].real > 0

    def test_gauge_determinism_bitwise(self):
        rng = np.random.default_rng(3)
        h = random_hermitian(6, rng)
        w1, p1 = eig_hermitian(h)
        w2, p2 = eig_hermitian(h.copy())
        assert np.array_equal(w1, w2)
        assert np.array_equal(p1, p2)

    def test_non_hermitian_rejected(self):
        bad = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
        with pytest.raises(PreconditionError):
            eig_hermitian(bad)


class TestPropagation:
    def test_zero_hamiltonian_is_constant(self):
        gen = LindbladGenerator(3, np.zeros((3, 3), dtype=complex))
        rho0 = np.diag([0.2, 0.3, 0.5]).astype(complex)
        traj = propagate_lindblad(gen, rho0, TimeGrid(0, 1e-6, 11))
        assert traj.shape == (11, 3, 3)
        np.testing.assert_allclose(traj, np.broadcast_to(rho0, traj.shape), atol=1e-14)

    def test_rabi_oscillation_matches_analytic(self):
        omega = 2 * np.pi * 1.0e6
        gen = LindbladGenerator(2, (omega / 2) * SIGMA_X)
        grid = TimeGrid(0.0, 2.0e-6, 2001)
        traj = propagate_lindblad(gen, projector(2, 0), grid)
        p1 = np.real(traj[:, 1, 1])
        expected = np.sin(omega * grid.times() / 2) ** 2
        assert np.max(np.abs(p1 - expected)) < 1e-6

    def test_exponential_decay_matches_analytic(self):
        gamma = 1.0e6
        jump = np.sqrt(gamma) * np.array([[0, 1], [0, 0]], dtype=complex)
        gen = LindbladGenerator(2, np.zeros((2, 2), dtype=complex), jumps=[jump])
        grid = TimeGrid(0.0, 3.0e-6, 1501)
        traj = propagate_lindblad(gen, projector(2, 1), grid)
        p1 = np.real(traj[:, 1, 1])
        assert np.max(np.abs(p1 - np.exp(-gamma * grid.times()))) < 1e-6

    def test_unitary_purity_conserved(self):
        omega = 2 * np.pi * 2.0e6
        gen = LindbladGenerator(2, lambda t: (omega / 2) * np.cos(2e6 * t) * SIGMA_X + omega * SIGMA_Z)
        grid = TimeGrid(0.0, 1.0e-6, 2001)
        rho0 = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
        traj = propagate_lindblad(gen, rho0, grid)
        purity = np.real(np.einsum("tij,tji->t", traj, traj))
        assert np.max(np.abs(purity - 1.0)) < 1e-6

    def test_rk4_convergence_order(self):
        omega = 2 * np.pi * 1.0e6
        gen = LindbladGenerator(2, (omega / 2) * SIGMA_X)
        grid = TimeGrid(0.0, 2.0e-6, 501)
        t_f = grid.tf
        psi = np.array([np.cos(omega * t_f / 2), -1j * np.sin(omega * t_f / 2)])
        exact = np.outer(psi, psi.conj())
        errs = []
        for g in (grid, grid.refine()):
            final = propagate_lindblad(gen, projector(2, 0), g, store="final")
            errs.append(np.max(np.abs(final - exact)))
        ratio = errs[0] / errs[1]
        assert 12 < ratio < 20

    def test_trace_drift_error_names_time(self):
        omega = 2 * np.pi * 1.0e6
        gen = LindbladGenerator(2, (omega * 50) * SIGMA_X)
        grid = TimeGrid(0.0, 10.0e-6, 3)
        with pytest.raises(IntegrationError, match="t = ") as exc:
            propagate_lindblad(gen, projector(2, 0), grid)
        assert 0.0 < exc.value.time <= 10.0e-6

    def test_trace_preserved_with_jumps_long_run(self):
        gamma = 5.0e5
        jump = np.sqrt(gamma) * np.array([[0, 1], [0, 0]], dtype=complex)
        omega = 2 * np.pi * 1.0e6
        gen = LindbladGenerator(2, (omega / 2) * SIGMA_X, jumps=[jump])
        grid = TimeGrid(0.0, 10.0e-6, 10001)
        traj = propagate_lindblad(gen, projector(2, 1), grid)
        traces = np.real(np.einsum("tii->t", traj))
        assert np.max(np.abs(traces - 1.0)) < 1e-8

    def test_batched_matches_individual(self):
        omega = 2 * np.pi * 1.5e6
        gamma = 2.0e5
        jump = np.sqrt(gamma) * np.array([[0, 1], [0, 0]], dtype=complex)
        gen = LindbladGenerator(2, (omega / 2) * SIGMA_Y, jumps=[jump])
        grid = TimeGrid(0.0, 1.0e-6, 301)
        batch = np.stack([projector(2, 0), projector(2, 1)])
        finals = propagate_lindblad(gen, batch, grid, store="final")
        for b in range(2):
            single = propagate_lindblad(gen, batch[b], grid, store="final")
            np.testing.assert_allclose(finals[b], single, atol=1e-14)

    def test_initial_state_validated(self):
        gen = LindbladGenerator(2, np.zeros((2, 2), dtype=complex))
        bad = np.array([[2.0, 0.0], [0.0, 0.0]], dtype=complex)
        with pytest.raises(PreconditionError):
            propagate_lindblad(gen, bad, TimeGrid(0, 1e-6, 5))

    def test_jump_dimension_validated(self):
        with pytest.raises(PreconditionError):
            LindbladGenerator(3, np.zeros((3, 3), dtype=complex), jumps=[np.eye(2, dtype=complex)])


class TestCostateSweep:
    def test_zero_generator_constant(self):
        gen = LindbladGenerator(2, np.zeros((2, 2), dtype=complex))
        target = projector(2, 1)
        xi = linops.propagate_costate_backward(gen, target, TimeGrid(0, 1e-6, 21))
        np.testing.assert_allclose(xi, np.broadcast_to(target, xi.shape), atol=1e-14)

    def test_bilinear_invariant_unitary(self):
        # Tr[xi(t) rho(t)] is constant in t for the adjoint pair without jumps
        omega = 2 * np.pi * 1.0e6
        gen = LindbladGenerator(2, lambda t: (omega / 2) * (SIGMA_X + np.sin(3e6 * t) * SIGMA_Z))
        grid = TimeGrid(0.0, 1.0e-6, 801)
        rho = propagate_lindblad(gen, projector(2, 0), grid)
        xi = linops.propagate_costate_backward(gen, projector(2, 1), grid)
        pairing = np.einsum("tij,tji->t", xi, rho)
        assert np.max(np.abs(pairing - pairing[-1])) < 1e-6

    def test_costate_purity_conserved_unitary(self):
        omega = 2 * np.pi * 1.0e6
        gen = LindbladGenerator(2, (omega / 2) * SIGMA_X)
        grid = TimeGrid(0.0, 1.0e-6, 501)
        xi = linops.propagate_costate_backward(gen, projector(2, 1), grid)
        tr2 = np.real(np.einsum("tij,tji->t", xi, xi))
        assert np.max(np.abs(tr2 - 1.0)) < 1e-8


class TestStateFidelity:
    def test_identical_pure(self):
        rho = projector(4, 2)
        assert state_fidelity(rho, rho) == pytest.approx(1.0, abs=1e-14)

    def test_maximally_mixed_vs_pure(self):
        assert state_fidelity(IDENTITY_2 / 2, projector(2, 0)) == pytest.approx(0.5, abs=1e-14)

    def test_diagonal_overlap(self):
        rho_f = np.diag([0.1, 0.0, 0.9]).astype(complex)
        rho_t = projector(3, 2)
        assert state_fidelity(rho_f, rho_t) == pytest.approx(0.9, abs=1e-14)

    def test_mixed_target_rejected(self):
        with pytest.raises(PreconditionError):
            state_fidelity(projector(2, 0), IDENTITY_2 / 2)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(PreconditionError):
            state_fidelity(projector(2, 0), projector(3, 0))


class TestKron:
    def test_identity(self):
        np.testing.assert_array_equal(kron(IDENTITY_2, IDENTITY_2), np.eye(4, dtype=complex))

    def test_sigma_x_on_first_qubit(self):
        ket00 = np.zeros(4, dtype=complex)
        ket00[0] = 1.0
        out = kron(SIGMA_X, IDENTITY_2) @ ket00
        expected = np.zeros(4, dtype=complex)
        expected[2] = 1.0  # |10>
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_zz_diagonal(self):
        np.testing.assert_allclose(np.diag(kron(SIGMA_Z, SIGMA_Z)), [1, -1, -1, 1], atol=1e-15)
