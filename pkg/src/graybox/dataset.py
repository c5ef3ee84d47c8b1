"""Prepare-control-measure datasets and their JSON-lines storage."""
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import lab
from .lab import LabConfig, NumericalError
from .pulses import PulseConstraints, PulseSequence, random_sequence, render
from .quantum import observables, partial_trace, pauli_eigenstates

FORMAT = "graybox-dataset"
VERSION = 1
SPLITS = {"train": 0, "test": 1}


class DatasetError(RuntimeError):
    pass


class ParseError(DatasetError):
    pass


class IntegrityError(DatasetError):
    pass


def config_hash(cfg, constraints):
    """Short digest of the physical setup and pulse constraints (integrator settings excluded)."""
    lab_d = cfg.to_dict()
    lab_d.pop("substeps", None)
    blob = json.dumps({"lab": lab_d, "pulses": constraints.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Example:
    pulse: PulseSequence
    record: np.ndarray
    _waveform: object = field(default=None, repr=False, compare=False)

    @property
    def waveform(self):
        if self._waveform is None:
            self._waveform = render(self.pulse)
        return self._waveform


@dataclass
class Dataset:
    config: LabConfig
    constraints: PulseConstraints
    shots: int | None
    seed: int
    split: str
    examples: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.examples)

    @property
    def config_hash(self):
        return config_hash(self.config, self.constraints)

    def records(self):
        return np.array([ex.record for ex in self.examples]).reshape(len(self), 18)

    def samples(self):
        """Waveform samples, shape (N, n_axes, M)."""
        c = self.constraints
        return np.array([ex.waveform.samples for ex in self.examples]).reshape(len(self), len(c.axes), c.M)


def example_rng(seed, split, index):
    return np.random.default_rng([int(seed), SPLITS[split], int(index)])


def generate(cfg, constraints, n_examples, shots=None, seed=0, split="train", batch_size=64):
    """Simulate ``n_examples`` random pulse sequences.

    Example ``i`` draws its pulse and then its shot noise from ``example_rng(seed, split, i)``,
    so the result does not depend on ``batch_size``.
    """
    if (cfg.T, cfg.M) != (constraints.T, constraints.M):
        raise DatasetError(f"lab grid (T={cfg.T}, M={cfg.M}) differs from pulse grid "
                           f"(T={constraints.T}, M={constraints.M})")
    cfg = lab.resolve_substeps(cfg, constraints.A_max)
    rngs = [example_rng(seed, split, i) for i in range(n_examples)]
    pulses = [random_sequence(r, constraints) for r in rngs]
    records = np.empty((n_examples, 18))
    drift = np.zeros(n_examples)
    for start in range(0, n_examples, batch_size):
        idx = range(start, min(start + batch_size, n_examples))
        waves = [render(pulses[i]) for i in idx]
        try:
            vals, dr = _measure_with_drift(cfg, waves)
        except NumericalError:
            for i, w in zip(idx, waves):
                try:
                    _measure_with_drift(cfg, [w])
                except NumericalError as exc:
                    raise DatasetError(f"propagation failed for example {i} (seed {seed}, {split}): {exc}") from exc
            raise
        records[start:start + len(idx)] = vals
        drift[start:start + len(idx)] = dr
    examples = []
    for i in range(n_examples):
        rec = lab.sample_shots(records[i], shots, rngs[i])
        examples.append(Example(pulse=pulses[i], record=rec))
    stats = {"max_trace_drift": float(drift.max()) if n_examples else 0.0,
             "trace_drift": [float(v) for v in drift]}
    return Dataset(config=cfg, constraints=constraints, shots=shots, seed=seed, split=split,
                   examples=examples, stats=stats)


def _measure_with_drift(cfg, waves):
    fx, fy = lab._waveform_arrays(cfg, waves)
    out, _ = lab._propagate(cfg, fx, fy, pauli_eigenstates(), cfg.substeps)
    tr = np.trace(out, axis1=-2, axis2=-1)
    drift = np.abs(tr - 1.0).max(axis=1)
    red = partial_trace(out, (2, cfg.d_aux), keep="sys")
    vals = np.einsum("bsij,oji->bso", red, observables()).real.reshape(len(waves), 18)
    return vals, drift


def _header(ds):
    return {
        "format": FORMAT,
        "version": VERSION,
        "config_hash": ds.config_hash,
        "lab": ds.config.to_dict(),
        "pulses": ds.constraints.to_dict(),
        "shots": ds.shots,
        "seed": ds.seed,
        "split": ds.split,
        "n_examples": len(ds),
        "max_trace_drift": ds.stats.get("max_trace_drift", 0.0),
    }


def save(ds, path):
    h = ds.config_hash
    with open(path, "w") as fh:
        fh.write(json.dumps(_header(ds)) + "\n")
        for i, ex in enumerate(ds.examples):
            line = {"index": i, "config_hash": h, "pulse": ex.pulse.to_dict(),
                    "record": [float(v) for v in ex.record]}
            fh.write(json.dumps(line) + "\n")


def load(path):
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(f"{path}: line 1: missing header")
    try:
        head = json.loads(lines[0])
        if head.get("format") != FORMAT:
            raise ValueError(f"not a {FORMAT} file")
        cfg = LabConfig.from_dict(head["lab"])
        constraints = PulseConstraints.from_dict(head["pulses"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: line 1: bad header: {exc}") from exc
    expected = config_hash(cfg, constraints)
    if head.get("config_hash") != expected:
        raise IntegrityError(f"{path}: header hash {head.get('config_hash')} does not match its config ({expected})")
    examples = []
    for lineno, text in enumerate(lines[1:], start=2):
        try:
            d = json.loads(text)
            pulse = PulseSequence.from_dict(d["pulse"])
            rec = np.asarray(d["record"], dtype=np.float64)
            if rec.shape != (18,):
                raise ValueError(f"record has {rec.size} values")
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
        if d.get("config_hash") != expected:
            raise IntegrityError(f"{path}: line {lineno}: example hash {d.get('config_hash')} != header {expected}")
        examples.append(Example(pulse=pulse, record=rec))
    n = head.get("n_examples", len(examples))
    if n != len(examples):
        raise ParseError(f"{path}: line {len(lines) + 1}: expected {n} examples, found {len(examples)}")
    return Dataset(config=cfg, constraints=constraints, shots=head.get("shots"), seed=head.get("seed", 0),
                   split=head.get("split", "train"), examples=examples,
                   stats={"max_trace_drift": head.get("max_trace_drift", 0.0)})


def subset(ds, n):
    return replace(ds, examples=ds.examples[:n])
