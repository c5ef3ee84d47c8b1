import json

import numpy as np
import pytest

from graybox import dataset as D
from graybox import lab
from graybox.pulses import PulseConstraints
from graybox.quantum import pauli, pauli_eigenstates

FERMI = lab.fermionic_config()
CLOSED = lab.fermionic_config(V=0.0)
PC = PulseConstraints(axes=("x", "y"))


@pytest.fixture(scope="module")
def small():
    return D.generate(FERMI, PC, 10, shots=1024, seed=3)


class TestGenerate:
    def test_closed_form_record(self):
        ds = D.generate(CLOSED, PC, 1, shots=None, seed=0)
        U = lab.control_unitary(ds.examples[0].waveform, 12.0)
        ideal = [np.trace(U @ r @ U.conj().T @ pauli(o)).real for r in pauli_eigenstates() for o in "xyz"]
        assert np.allclose(ds.examples[0].record, ideal, atol=1e-8)

    def test_byte_identical(self, tmp_path, small):
        again = D.generate(FERMI, PC, 10, shots=1024, seed=3)
        D.save(small, tmp_path / "a.jsonl")
        D.save(again, tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_seed_changes_data(self, small):
        other = D.generate(FERMI, PC, 10, shots=1024, seed=4)
        assert not np.array_equal(small.records(), other.records())

    def test_batch_size_independent(self, small):
        other = D.generate(FERMI, PC, 10, shots=1024, seed=3, batch_size=3)
        assert np.array_equal(small.records(), other.records())

    def test_prefix_stable(self, small):
        longer = D.generate(FERMI, PC, 12, shots=1024, seed=3)
        assert np.array_equal(longer.records()[:10], small.records())

    def test_splits_disjoint(self):
        tr = D.generate(FERMI, PC, 5, seed=0, split="train")
        te = D.generate(FERMI, PC, 5, seed=0, split="test")
        a = {json.dumps(ex.pulse.to_dict()) for ex in tr.examples}
        b = {json.dumps(ex.pulse.to_dict()) for ex in te.examples}
        assert not a & b

    def test_records_physical(self, small):
        r = small.records()
        assert r.shape == (10, 18) and np.all(np.abs(r) <= 1)
        assert small.stats["max_trace_drift"] <= 1e-8
        k = (r + 1) * 1024 / 2
        assert np.allclose(k, np.round(k), atol=1e-9)

    def test_waveform_matches_pulse(self, small):
        for ex in small.examples:
            ex.pulse.check(PC)
        assert small.samples().shape == (10, 2, 128)

    def test_grid_mismatch(self):
        with pytest.raises(D.DatasetError):
            D.generate(lab.fermionic_config(M=64), PC, 1)

    def test_failure_names_example(self, monkeypatch):
        def boom(cfg, waves):
            raise lab.NumericalError("trace drift")
        monkeypatch.setattr(D, "_measure_with_drift", boom)
        with pytest.raises(D.DatasetError, match="example 0 \\(seed 5"):
            D.generate(FERMI, PC, 2, seed=5)


class TestStorage:
    def test_round_trip(self, tmp_path, small):
        p = tmp_path / "d.jsonl"
        D.save(small, p)
        back = D.load(p)
        assert back.config == small.config and back.constraints == small.constraints
        assert (back.shots, back.seed, back.split) == (1024, 3, "train")
        assert np.array_equal(back.records(), small.records())
        for a, b in zip(back.examples, small.examples):
            for axis in a.pulse.axes:
                assert np.array_equal(a.pulse.params[axis], b.pulse.params[axis])
        assert np.array_equal(back.samples(), small.samples())

    def test_empty(self, tmp_path):
        ds = D.generate(FERMI, PC, 0)
        p = tmp_path / "e.jsonl"
        D.save(ds, p)
        lines = p.read_text().splitlines()
        assert len(lines) == 1 and json.loads(lines[0])["n_examples"] == 0
        assert len(D.load(p)) == 0

    def test_header(self, tmp_path, small):
        p = tmp_path / "d.jsonl"
        D.save(small, p)
        head = json.loads(p.read_text().splitlines()[0])
        assert head["format"] == "graybox-dataset" and head["seed"] == 3
        assert head["config_hash"] == D.config_hash(FERMI, PC)

    def test_truncated(self, tmp_path, small):
        p = tmp_path / "d.jsonl"
        D.save(small, p)
        text = p.read_text()
        p.write_text(text[: len(text) - 40])
        with pytest.raises(D.ParseError, match="line 11"):
            D.load(p)

    def test_missing_lines(self, tmp_path, small):
        p = tmp_path / "d.jsonl"
        D.save(small, p)
        lines = p.read_text().splitlines()
        p.write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(D.ParseError, match="expected 10 examples"):
            D.load(p)

    def test_hash_mismatch(self, tmp_path, small):
        p = tmp_path / "d.jsonl"
        D.save(small, p)
        lines = p.read_text().splitlines()
        d = json.loads(lines[4])
        d["config_hash"] = "0" * 16
        lines[4] = json.dumps(d)
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(D.IntegrityError, match="line 5"):
            D.load(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"format": "other"}\n')
        with pytest.raises(D.ParseError, match="line 1"):
            D.load(p)
        p.write_text("")
        with pytest.raises(D.ParseError):
            D.load(p)


def test_hash_ignores_integrator():
    from dataclasses import replace
    assert D.config_hash(replace(FERMI, substeps=8), PC) == D.config_hash(FERMI, PC)
    assert D.config_hash(lab.fermionic_config(V=1.0), PC) != D.config_hash(FERMI, PC)


def test_subset(small):
    assert len(D.subset(small, 4)) == 4
