import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from graybox.quantum import (
    InvalidInput,
    bosonic_annihilation,
    check_density_matrix,
    expm_2x2,
    expm_dense,
    fermionic_annihilation,
    kron,
    observables,
    partial_trace,
    pauli,
    pauli_eigenstates,
    thermal_state,
)

from .conftest import random_hermitian

seeds = st.integers(0, 2**32 - 1)


class TestPauli:
    def test_z_is_diag(self):
        assert np.array_equal(pauli("z"), np.diag([1, -1]))

    def test_xy_product(self):
        assert np.allclose(pauli("x") @ pauli("y"), 1j * pauli("z"), atol=0)

    def test_plus_is_raising(self):
        expected = np.zeros((2, 2))
        expected[1, 0] = 1
        assert np.array_equal(pauli("plus"), expected)
        # lowers the +1 eigenstate |0> of sz into |1>
        assert np.array_equal(pauli("plus") @ np.array([1, 0]), np.array([0, 1]))
        assert np.array_equal(pauli("minus"), pauli("plus").T)

    def test_algebra(self):
        x, y, z = pauli("x"), pauli("y"), pauli("z")
        for p in (x, y, z):
            assert np.array_equal(p @ p, np.eye(2))
        assert np.array_equal(y @ z, 1j * x)
        assert np.array_equal(z @ x, 1j * y)

    def test_copies(self):
        a = pauli("x")
        a[0, 0] = 7
        assert pauli("x")[0, 0] == 0

    def test_unknown(self):
        with pytest.raises(InvalidInput):
            pauli("w")


class TestLadders:
    def test_bosonic_small(self):
        assert np.array_equal(bosonic_annihilation(2), [[0, 1], [0, 0]])
        a = bosonic_annihilation(3)
        assert a[0, 1] == 1 and a[1, 2] == pytest.approx(np.sqrt(2))
        assert np.count_nonzero(a) == 2

    @pytest.mark.parametrize("n", [2, 5, 20])
    def test_commutator_block(self, n):
        a = bosonic_annihilation(n)
        comm = a @ a.conj().T - a.conj().T @ a
        assert np.allclose(comm[: n - 1, : n - 1], np.eye(n - 1), atol=1e-14)

    @pytest.mark.parametrize("bad", [1, 0, -3, 2.5])
    def test_bosonic_invalid(self, bad):
        with pytest.raises(InvalidInput):
            bosonic_annihilation(bad)

    def test_fermionic(self):
        c = fermionic_annihilation()
        assert np.array_equal(c @ c, np.zeros((2, 2)))
        assert np.array_equal(c @ c.conj().T + c.conj().T @ c, np.eye(2))
        assert np.array_equal(c.conj().T @ c, np.diag([0, 1]))


class TestKronPartialTrace:
    def test_identities(self):
        assert np.array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))
        assert np.array_equal(kron(pauli("z"), np.eye(2)), np.diag([1, 1, -1, -1]))

    @given(seeds)
    def test_trace_factorizes(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(2, 2, 2)) + 1j * rng.normal(size=(2, 2, 2))
        assert np.trace(kron(a, b)) == pytest.approx(np.trace(a) * np.trace(b), abs=1e-12)

    def test_product_state(self, rng):
        rho = pauli_eigenstates()[0]
        sigma = np.diag([0.3, 0.7])
        assert np.allclose(partial_trace(kron(rho, sigma), (2, 2), "sys"), rho, atol=1e-15)
        assert np.allclose(partial_trace(np.eye(4), (2, 2), "sys"), 2 * np.eye(2))

    @given(seeds, st.integers(2, 6))
    def test_round_trip(self, seed, da):
        rng = np.random.default_rng(seed)
        a = random_hermitian(rng, 2)
        b = random_hermitian(rng, da)
        m = kron(a, b)
        assert np.allclose(partial_trace(m, (2, da), "sys"), a * np.trace(b), atol=1e-12)
        assert np.allclose(partial_trace(m, (2, da), "aux"), b * np.trace(a), atol=1e-12)

    @given(seeds)
    def test_trace_preserved(self, seed):
        rng = np.random.default_rng(seed)
        m = random_hermitian(rng, 6)
        assert np.trace(partial_trace(m, (2, 3), "sys")) == pytest.approx(np.trace(m), abs=1e-12)

    def test_batched(self, rng):
        ms = np.stack([random_hermitian(rng, 4) for _ in range(3)])
        out = partial_trace(ms, (2, 2), "sys")
        for m, o in zip(ms, out):
            assert np.allclose(partial_trace(m, (2, 2), "sys"), o)

    def test_mismatch(self):
        with pytest.raises(InvalidInput):
            partial_trace(np.eye(5), (2, 2))
        with pytest.raises(InvalidInput):
            partial_trace(np.eye(4), (2, 2), keep="env")


class TestExponentials:
    def test_zero(self):
        assert np.array_equal(expm_2x2(np.zeros((2, 2)), 1.3), np.eye(2))
        assert np.allclose(expm_dense(np.zeros((3, 3))), np.eye(3))

    def test_half_rabi(self):
        assert np.allclose(expm_2x2(np.pi / 2 * pauli("x"), 1.0), -1j * pauli("x"), atol=1e-15)

    def test_identity_part_only(self):
        assert np.allclose(expm_2x2(0.7 * np.eye(2), 2.0), np.exp(-1.4j) * np.eye(2), atol=1e-15)

    @given(seeds, st.floats(-3, 3))
    def test_matches_scaling_squaring(self, seed, t):
        rng = np.random.default_rng(seed)
        h = random_hermitian(rng, 2, scale=3.0)
        u = expm_2x2(h, t)
        assert np.allclose(u.conj().T @ u, np.eye(2), atol=1e-12)
        assert np.allclose(u, expm(-1j * h * t), atol=1e-10)
        assert np.allclose(u, expm_dense(h, -1j * t), atol=1e-10)

    def test_thousand_random(self, rng):
        hs = [random_hermitian(rng, 2, scale=5.0) for _ in range(1000)]
        err = max(np.abs(expm_2x2(h, 1.0) - expm_dense(h, -1j)).max() for h in hs)
        assert err < 1e-10

    def test_non_hermitian(self):
        with pytest.raises(InvalidInput):
            expm_2x2(np.array([[0, 1], [0, 0]]), 1.0)

    def test_dense_diag(self):
        assert np.allclose(expm_dense(np.diag([1.0, 2.0])), np.diag([np.e, np.e**2]), rtol=1e-14)

    def test_dense_inverse(self, rng):
        m = rng.normal(size=(8, 8))
        m *= 5.0 / np.linalg.norm(m, 2)
        assert np.allclose(expm_dense(m) @ expm_dense(m, -1.0), np.eye(8), atol=1e-9)

    def test_dense_nonfinite(self):
        with pytest.raises(InvalidInput):
            expm_dense(np.array([[np.nan]]))


class TestThermal:
    def test_fermi_dirac(self):
        rho = thermal_state("fermionic", beta=1.0, mu_chem=3.0, omega_d=5.0)
        # 1 / (1 + e^2)
        assert rho[1, 1].real == pytest.approx(0.11920292202211755, abs=1e-15)
        check_density_matrix(rho)

    def test_vacuum(self):
        rho = thermal_state("bosonic", nbar=0.0, trunc_dim=5)
        assert np.array_equal(rho, np.diag([1, 0, 0, 0, 0]))

    def test_geometric(self):
        rho = thermal_state("bosonic", nbar=1.0, trunc_dim=60)
        p = np.diag(rho).real
        assert np.allclose(p[:10], 0.5 ** (np.arange(10) + 1), atol=1e-15)
        assert np.sum(np.arange(60) * p) == pytest.approx(1.0, abs=1e-15)

    def test_truncated_renormalized(self):
        rho = thermal_state("bosonic", nbar=1.0, trunc_dim=20)
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-15)

    @given(st.floats(0, 20), st.integers(2, 30))
    def test_bosonic_valid(self, nbar, d):
        check_density_matrix(thermal_state("bosonic", nbar=nbar, trunc_dim=d))

    @given(st.floats(0.01, 10), st.floats(-10, 10), st.floats(-10, 10))
    def test_fermionic_valid(self, beta, mu, w):
        check_density_matrix(thermal_state("fermionic", beta=beta, mu_chem=mu, omega_d=w))

    def test_errors(self):
        with pytest.raises(InvalidInput):
            thermal_state("bosonic", nbar=-1.0, trunc_dim=4)
        with pytest.raises(InvalidInput):
            thermal_state("fermionic", beta=1.0)
        with pytest.raises(InvalidInput):
            thermal_state("anyonic")


def test_eigenstates_and_observables():
    states, obs = pauli_eigenstates(), observables()
    for k, rho in enumerate(states):
        check_density_matrix(rho)
        axis, sign = divmod(k, 2)
        assert np.trace(rho @ obs[axis]).real == pytest.approx(1 - 2 * sign)


def test_check_density_matrix_rejects():
    with pytest.raises(InvalidInput):
        check_density_matrix(np.diag([1.2, -0.2]))
    with pytest.raises(InvalidInput):
        check_density_matrix(np.diag([0.5, 0.4]))
    with pytest.raises(InvalidInput):
        check_density_matrix(np.array([[0.5, 1], [0, 0.5]]))
