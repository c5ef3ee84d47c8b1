import csv
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graybox import lab
from graybox.pulses import PulseConstraints, PulseSequence, Waveform, random_sequence, render
from graybox.quantum import InvalidInput, expm_dense, kron, pauli, pauli_eigenstates

seeds = st.integers(0, 2**32 - 1)
FERMI = lab.fermionic_config()
CLOSED = lab.fermionic_config(V=0.0)


def zero_wave(M=128, T=1.0):
    return Waveform(T=T, axes=("x",), samples=np.zeros((1, M)))


def random_wave(rng, axes=("x", "y"), M=128):
    return render(random_sequence(rng, PulseConstraints(axes=axes, M=M)))


def amplitude_damping(gamma=0.7, T=1.0, M=128, substeps=4):
    # pauli("plus") takes the sz=+1 state to sz=-1, i.e. it is the decay operator here
    zero = np.zeros((2, 2), dtype=complex)
    rho0 = np.diag([1.0, 0.0]).astype(complex)[None]
    out, _ = lab.evolve_lindblad(zero, 0.5 * pauli("x"), 0.5 * pauli("y"),
                                 [np.sqrt(gamma) * pauli("plus")], np.zeros((1, M)), np.zeros((1, M)),
                                 rho0, T / M, substeps)
    return np.trace(out[0, 0] @ pauli("z")).real


class TestConfig:
    def test_defaults(self):
        assert (FERMI.omega_s, FERMI.omega_d, FERMI.V, FERMI.gamma_L, FERMI.gamma_R) == (12, 5, 2, 0.7, 0.7)
        assert lab.bosonic_config().V == 1.3

    def test_dims(self):
        assert FERMI.dim == 4
        assert lab.bosonic_config().dim == 40

    @pytest.mark.parametrize("kw", [dict(gamma_L=-1), dict(bath_kind="anyonic"), dict(trunc_dim=3),
                                    dict(bath_kind="bosonic", trunc_dim=1), dict(M=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInput):
            lab.LabConfig(**kw)

    def test_dict_round_trip(self):
        for cfg in (FERMI, lab.bosonic_config(), lab.fermionic_config(V=0.5 + 0.25j)):
            assert lab.LabConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


class TestControlUnitary:
    def test_drift_only(self):
        U = lab.control_unitary(zero_wave(), 12.0)
        assert np.allclose(U, expm_dense(pauli("z"), -6j), atol=1e-12)

    def test_pi_pulse(self):
        w = Waveform(T=1.0, axes=("x",), samples=np.full((1, 128), np.pi))
        assert np.allclose(lab.control_unitary(w, 0.0), -1j * pauli("x"), atol=1e-9)

    def test_refined_grid(self, rng):
        w = random_wave(rng)
        fine = Waveform(T=1.0, axes=w.axes, samples=np.repeat(w.samples, 4, axis=1))
        U, Uf = lab.control_unitary(w, 12.0), lab.control_unitary(fine, 12.0)
        assert np.linalg.norm(U - Uf, 2) <= 1e-6

    def test_matches_batched(self, rng):
        w = random_wave(rng)
        U = lab.control_unitaries(w.fx, w.fy, 12.0, 1 / 128)[0]
        assert np.allclose(U, lab.control_unitary(w, 12.0), atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInput):
            lab.control_unitary(zero_wave(M=64), 12.0, T=1.0, M=128)


class TestGenerator:
    def test_hermitian(self, rng):
        for cfg in (FERMI, lab.bosonic_config(trunc_dim=6)):
            hs, jumps = lab.build_joint_generator(cfg, random_wave(rng))
            assert hs.shape == (128, cfg.dim, cfg.dim)
            assert np.abs(hs - np.conj(np.swapaxes(hs, 1, 2))).max() <= 1e-12
            assert len(jumps) == 2

    def test_decoupled_blocks(self, rng):
        w = random_wave(rng)
        hs, _ = lab.build_joint_generator(CLOSED, w)
        k = 17
        hq = lab.control_hamiltonian(w.fx[k], w.fy[k], 12.0)
        expected = kron(hq, np.eye(2)) + kron(np.eye(2), 5.0 * np.diag([0, 1]))
        assert np.allclose(hs[k], expected, atol=1e-12)

    def test_coupling_term(self):
        cfg = lab.fermionic_config(V=0.3 + 0.4j)
        hs, _ = lab.build_joint_generator(cfg, zero_wave())
        c = np.array([[0, 1], [0, 0]])
        sp = pauli("plus")
        base = kron(6.0 * pauli("z"), np.eye(2)) + kron(np.eye(2), 5.0 * c.T @ c)
        coupling = (0.3 + 0.4j) * kron(sp, c)
        assert np.allclose(hs[0], base + coupling + coupling.conj().T, atol=1e-12)


class TestPropagation:
    def test_amplitude_damping(self):
        assert amplitude_damping() == pytest.approx(2 * np.exp(-0.7) - 1, abs=1e-6)
        assert amplitude_damping() == pytest.approx(-0.006829392417180946, abs=1e-6)

    @given(seeds)
    def test_decoupled_is_unitary(self, seed):
        rng = np.random.default_rng(seed)
        w = random_wave(rng)
        rho0 = pauli_eigenstates()[rng.integers(6)]
        U = lab.control_unitary(w, 12.0)
        cfg = lab.fermionic_config(V=0.0, gamma_L=rng.uniform(0, 2), gamma_R=rng.uniform(0, 2))
        assert np.allclose(lab.lindblad_propagate(cfg, w, rho0), U @ rho0 @ U.conj().T, atol=1e-8)

    def test_decoupled_all_outputs(self, rng):
        ws = [random_wave(rng) for _ in range(4)]
        vals = lab.measure_batch(CLOSED, ws)
        for w, v in zip(ws, vals):
            U = lab.control_unitary(w, 12.0)
            ideal = [np.trace(U @ r @ U.conj().T @ pauli(o)).real
                     for r in pauli_eigenstates() for o in "xyz"]
            assert np.allclose(v, ideal, atol=1e-8)

    def test_z_states_stay_on_axis(self):
        times, ex, pur = lab.free_evolution(FERMI)
        assert times.shape == (129,) and ex.shape == (129, 6, 3)
        assert np.abs(ex[:, 4:, :2]).max() <= 1e-8

    def test_equatorial_purities_coincide(self):
        _, _, pur = lab.free_evolution(FERMI)
        assert np.abs(pur[:, :4] - pur[:, :1]).max() <= 1e-8
        assert np.abs(pur[:, 4] - pur[:, 5]).max() > 1e-3

    def test_purity_trajectory(self):
        p = lab.purity_trajectory(FERMI, "x+")
        assert np.allclose(p, lab.free_evolution(FERMI)[2][:, 0], atol=1e-12)
        assert np.all((p >= 0.5 - 1e-12) & (p <= 1 + 1e-12))
        assert np.allclose(lab.purity_trajectory(CLOSED, "z-"), 1.0, atol=1e-12)

    def test_physical_trajectory(self, rng):
        cfg = lab.resolve_substeps(FERMI)
        w = random_wave(rng)
        _, traj = lab.lindblad_propagate(cfg, w, pauli_eigenstates()[0], trajectory=True)
        assert traj.shape == (129, 4, 4)
        assert np.abs(np.trace(traj, axis1=1, axis2=2) - 1).max() <= 1e-8
        assert np.abs(traj - np.conj(np.swapaxes(traj, 1, 2))).max() <= 1e-10
        assert np.linalg.eigvalsh(traj).min() >= -1e-8

    def test_trace_drift_raises(self):
        cfg = replace(FERMI, substeps=1, gamma_L=400.0)
        with pytest.raises(lab.NumericalError):
            lab.measure_batch(cfg, [zero_wave()])

    def test_convergence_gate(self, rng):
        cfg = lab.resolve_substeps(FERMI)
        w = [random_wave(rng)]
        a = lab.measure_batch(cfg, w)
        b = lab.measure_batch(replace(cfg, substeps=2 * cfg.substeps), w)
        assert np.abs(a - b).max() <= 1e-6


class TestMeasurement:
    def test_trivial(self):
        v = lab.measure_all(CLOSED, zero_wave())
        # z+ observed in Z stays +1 under pure drift
        assert v[4 * 3 + 2] == pytest.approx(1.0, abs=1e-12)
        assert v.shape == (18,) and np.all(np.abs(v) <= 1 + 1e-12)

    def test_shot_lattice(self, rng):
        v = lab.measure_all(FERMI, random_wave(rng), shots=512, rng=rng)
        k = (v + 1) * 512 / 2
        assert np.allclose(k, np.round(k), atol=1e-9)
        assert np.all(np.abs(v) <= 1)

    def test_binomial_moment(self):
        rng = np.random.default_rng(0)
        draws = lab.sample_shots(np.full(100_000, 0.3), 512, rng)
        bound = 3 * (np.sqrt(1 - 0.09) / np.sqrt(512)) / np.sqrt(1e5)
        assert abs(draws.mean() - 0.3) <= bound

    def test_infinite_is_exact(self, rng):
        v = rng.uniform(-1, 1, 18)
        assert np.array_equal(lab.sample_shots(v, None, rng), v)

    def test_needs_rng(self):
        with pytest.raises(InvalidInput):
            lab.measure_all(FERMI, zero_wave(), shots=10)


class TestChoi:
    def test_identity_channel(self):
        cfg = lab.fermionic_config(V=0.0, omega_s=0.0)
        choi = lab.choi_state(cfg, zero_wave())
        phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
        assert np.allclose(choi, np.outer(phi, phi), atol=1e-9)
        assert lab.process_fidelity(choi, np.eye(2)) == pytest.approx(1.0, abs=1e-9)

    def test_drift_channel(self):
        U = lab.control_unitary(zero_wave(), 12.0)
        assert np.allclose(lab.choi_state(CLOSED, zero_wave()), lab.unitary_choi(U), atol=1e-9)

    def test_reference_marginal(self, rng):
        for cfg in (FERMI, lab.bosonic_config(trunc_dim=8)):
            choi = lab.choi_state(cfg, random_wave(rng))
            ref = np.einsum("srsq->rq", choi.reshape(2, 2, 2, 2))
            assert np.allclose(ref, np.eye(2) / 2, atol=1e-6)
            assert np.linalg.eigvalsh(choi).min() >= -1e-8

    def test_fidelity_values(self):
        assert lab.process_fidelity(lab.unitary_choi(pauli("x")), pauli("z")) == pytest.approx(0.0, abs=1e-15)
        for G in (np.eye(2), pauli("x"), expm_dense(pauli("y"), -0.3j)):
            assert lab.process_fidelity(np.eye(4) / 4, G) == 0.25

    @given(seeds, st.floats(0, 2 * np.pi))
    def test_global_phase(self, seed, theta):
        rng = np.random.default_rng(seed)
        h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        G = expm_dense(h + h.conj().T, -1j)
        choi = lab.unitary_choi(expm_dense(pauli("x"), -0.4j))
        assert lab.process_fidelity(choi, G) == pytest.approx(
            lab.process_fidelity(choi, np.exp(1j * theta) * G), abs=1e-12)

    def test_non_unitary_target(self):
        with pytest.raises(InvalidInput):
            lab.process_fidelity(np.eye(4) / 4, np.ones((2, 2)))

    def test_batched_matches_single(self, rng):
        ws = [random_wave(rng) for _ in range(3)]
        batch = lab.choi_states(FERMI, ws)
        assert np.allclose(batch[1], lab.choi_state(FERMI, ws[1]), atol=1e-14)


class TestExports:
    def test_trajectory_csv(self, tmp_path):
        times, ex, pur = lab.free_evolution(FERMI)
        p = tmp_path / "traj.csv"
        lab.write_trajectory_csv(p, times, ex, pur)
        rows = list(csv.reader(open(p)))
        assert rows[0][:4] == ["t", "x+_X", "x+_Y", "x+_Z"]
        assert rows[0][-1] == "purity_z-" and len(rows[0]) == 1 + 18 + 6
        assert len(rows) == 130
        assert float(rows[5][0]) == times[4] and float(rows[5][-1]) == pur[4, 5]

    def test_choi_json(self, tmp_path, rng):
        choi = lab.choi_state(FERMI, random_wave(rng))
        p = tmp_path / "choi.json"
        lab.write_choi_json(p, choi)
        data = json.load(open(p))
        assert np.array(data).shape == (4, 4, 2)
        assert np.array_equal(lab.choi_from_json(data), choi)


def test_substep_calibration_is_cached():
    assert lab.default_substeps(FERMI) == lab.default_substeps(FERMI)
    assert lab.resolve_substeps(replace(FERMI, substeps=7)).substeps == 7


def test_sequence_and_waveform_agree(rng):
    seq = random_sequence(rng, PulseConstraints(axes=("y",)))
    w = render(PulseSequence.from_dict(seq.to_dict()))
    assert np.array_equal(lab.measure_all(CLOSED, w), lab.measure_all(CLOSED, render(seq)))
