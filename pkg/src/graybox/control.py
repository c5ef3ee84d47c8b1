"""Constrained pulse design against a trained graybox model."""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import lab
from .model import Adam, closed_expectations, sigmoid, target_expectations
from .pulses import (
    PulseSequence,
    amplitudes_from_raw,
    centers_from_raw,
    from_arrays,
    render,
    render_batch,
)
from .quantum import expm_dense, pauli


class OptimizationError(RuntimeError):
    pass


def _gates():
    h = (pauli("x") + pauli("z")) / np.sqrt(2)
    return {
        "I": pauli("identity"),
        "X": pauli("x"),
        "Y": pauli("y"),
        "Z": pauli("z"),
        "H": h,
        "RX_PI4": expm_dense(pauli("x"), -1j * np.pi / 8),
    }


GATES = _gates()
GATE_NAMES = tuple(GATES)


@dataclass(frozen=True)
class GateTarget:
    name: str
    G: np.ndarray = field(compare=False)

    @classmethod
    def named(cls, name):
        key = {"PI_4": "RX_PI4", "PI4": "RX_PI4", "RX(PI/4)": "RX_PI4"}.get(name.upper(), name.upper())
        if key not in GATES:
            raise KeyError(f"unknown gate {name!r}; choose from {', '.join(GATE_NAMES)}")
        return cls(key, GATES[key].copy())


def _as_matrix(G):
    return G.G if isinstance(G, GateTarget) else np.asarray(G, dtype=np.complex128)


# -------------------------------------------------------------------- cost
def cost_from_samples(model, samples, G, with_grad=False):
    """J for a batch of (B, n_axes, M) waveforms and optionally dJ/dsamples."""
    target = target_expectations(_as_matrix(G)).reshape(18)
    fp = model.forward_samples(samples)
    diff = target[None] - fp.predictions
    J = np.sum(diff**2, axis=1)
    if not with_grad:
        return J
    return J, model.input_vjp(fp, -2.0 * diff)


def cost_J(model, pulse, G):
    """Squared distance between the ideal-gate and predicted 18 expectations."""
    w = render(pulse)
    return float(cost_from_samples(model, w.samples[None], G)[0])


# ------------------------------------------------------------------ result
@dataclass
class ControlResult:
    gate: str
    optimizer: str
    pulse: PulseSequence
    cost: float
    predicted: np.ndarray
    trace: list
    choi: np.ndarray | None = None
    fidelity: float | None = None
    seed: int = 0

    def to_dict(self):
        return {"gate": self.gate, "optimizer": self.optimizer, "seed": self.seed,
                "cost": self.cost, "fidelity": self.fidelity,
                "pulse": self.pulse.to_dict(),
                "predicted": [float(v) for v in self.predicted],
                "trace": [float(v) for v in self.trace],
                "choi": None if self.choi is None else lab.choi_to_json(self.choi)}

    @classmethod
    def from_dict(cls, d):
        return cls(gate=d["gate"], optimizer=d["optimizer"], pulse=PulseSequence.from_dict(d["pulse"]),
                   cost=d["cost"], predicted=np.asarray(d["predicted"]), trace=list(d["trace"]),
                   choi=None if d.get("choi") is None else lab.choi_from_json(d["choi"]),
                   fidelity=d.get("fidelity"), seed=d.get("seed", 0))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def evaluate_on_lab(cfg, pulse, G):
    """Ground-truth Choi state and process fidelity of ``pulse`` on the simulator."""
    choi = lab.choi_state(cfg, render(pulse))
    return choi, lab.process_fidelity(choi, _as_matrix(G))


def _finish(model, G, name, optimizer, pulse, J, trace, lab_cfg, seed):
    pred = model.forward_samples(render(pulse).samples[None]).predictions[0]
    res = ControlResult(gate=name, optimizer=optimizer, pulse=pulse, cost=float(J), predicted=pred,
                        trace=[float(v) for v in trace], seed=seed)
    if lab_cfg is not None:
        res.choi, res.fidelity = evaluate_on_lab(lab_cfg, pulse, G)
    return res


def _gate_name(G):
    if isinstance(G, GateTarget):
        return G.name
    for k, v in GATES.items():
        if np.allclose(v, G):
            return k
    return "custom"


# ---------------------------------------------------------- gradient descent
@dataclass
class GDOptions:
    lr: float = 0.05
    iterations: int = 300
    restarts: int = 10
    seed: int = 0
    init_scale: float = 1.0
    move_centers: bool = True
    # after this many free Adam steps, a step that raises J is undone and that restart's lr halved
    warmup: int = 50


def optimize_gd(model, G, constraints, opts=None, lab_cfg=None):
    """Adam on box-reparameterized pulse parameters.

    Amplitudes are ``A_max * tanh(u)``; centers are ``lo + (hi - lo) * sigmoid(v)`` inside
    their slots, starting at the midpoints (``v = 0``) and frozen there unless
    ``opts.move_centers``. Restarts run as one batch; the restart with the lowest J seen
    wins (ties: lowest index). Past ``opts.warmup`` each restart's J trace is non-increasing.
    """
    opts = opts or GDOptions()
    c = constraints
    rng = np.random.default_rng(opts.seed)
    R, na, P = opts.restarts, len(c.axes), c.n_pulses
    x = {"u": rng.normal(0.0, opts.init_scale, size=(R, na, P)), "v": np.zeros((R, na, P))}
    adam = Adam(x, lr=np.full((R, 1, 1), float(opts.lr)))
    best_J = np.full(R, np.inf)
    best = {k: v.copy() for k, v in x.items()}
    prev = {k: v.copy() for k, v in x.items()}
    trace = np.empty((opts.iterations + 1, R))
    t = c.grid()
    lo, hi = c.slot_bounds().T
    for it in range(opts.iterations + 1):
        A = amplitudes_from_raw(x["u"], c.A_max)
        mu = centers_from_raw(x["v"], c)
        g = np.exp(-((t - mu[..., None]) ** 2) / c.sigma**2)  # (R, na, P, M)
        samples = np.einsum("rap,rapm->ram", A, g)
        J, gS = cost_from_samples(model, samples, G, with_grad=True)
        if it > opts.warmup:
            worse = ~(J <= trace[it - 1])
            if np.any(worse):
                for k in x:
                    x[k][worse] = prev[k][worse]
                    adam.m[k][worse] = 0.0
                adam.lr[worse] *= 0.5
                A = amplitudes_from_raw(x["u"], c.A_max)
                mu = centers_from_raw(x["v"], c)
                g = np.exp(-((t - mu[..., None]) ** 2) / c.sigma**2)
                J, gS = cost_from_samples(model, np.einsum("rap,rapm->ram", A, g), G, with_grad=True)
        trace[it] = J
        better = J < best_J
        best_J[better] = J[better]
        for k in x:
            best[k][better] = x[k][better]
            prev[k][...] = x[k]
        if it == opts.iterations:
            break
        gA = np.einsum("ram,rapm->rap", gS, g)
        grads = {"u": gA * c.A_max * (1.0 - np.tanh(x["u"]) ** 2)}
        if opts.move_centers:
            gmu = np.einsum("ram,rapm->rap", gS, A[..., None] * 2.0 * (t - mu[..., None]) / c.sigma**2 * g)
            sv = sigmoid(x["v"])
            grads["v"] = gmu * (hi - lo) * sv * (1.0 - sv)
        else:
            grads["v"] = np.zeros_like(x["v"])
        grads = {k: np.where(np.isfinite(v), v, 0.0) for k, v in grads.items()}
        adam.step(x, grads)
    if not np.any(np.isfinite(best_J)):
        raise OptimizationError("all restarts produced non-finite cost")
    k = int(np.argmin(np.where(np.isfinite(best_J), best_J, np.inf)))
    pulse = from_arrays(amplitudes_from_raw(best["u"][k], c.A_max), centers_from_raw(best["v"][k], c), c)
    res = _finish(model, G, _gate_name(G), "gd", pulse, best_J[k], trace[:, k], lab_cfg, opts.seed)
    res.restart_costs = best_J
    res.restart_traces = trace
    return res


# --------------------------------------------------------- genetic algorithm
@dataclass
class GAOptions:
    population: int = 50
    generations: int = 200
    mutation: float = 0.1  # fraction of A_max (amplitudes) or of the slot width (centers)
    decay: float = 0.99
    tournament: int = 3
    elitism: int = 2
    seed: int = 0


def _genes_to_arrays(genes, na, P):
    return genes[:, :na * P].reshape(-1, na, P), genes[:, na * P:].reshape(-1, na, P)


def optimize_ga(model, G, constraints, opts=None, lab_cfg=None, initial=None):
    """Real-valued GA over amplitudes and slot-confined centers; fitness is -J.

    ``initial`` optionally seeds the population with (pop, 2*n_axes*n_pulses) genes laid out
    as all amplitudes then all centers.
    """
    opts = opts or GAOptions()
    c = constraints
    rng = np.random.default_rng(opts.seed)
    na, P, pop = len(c.axes), c.n_pulses, opts.population
    bounds = c.slot_bounds()
    lo = np.concatenate([np.full(na * P, -c.A_max), np.tile(bounds[:, 0], na)])
    hi = np.concatenate([np.full(na * P, c.A_max), np.tile(bounds[:, 1], na)])
    scale = np.concatenate([np.full(na * P, c.A_max), np.tile(bounds[:, 1] - bounds[:, 0], na)])
    if initial is None:
        genes = rng.uniform(lo, hi, size=(pop, lo.size))
    else:
        genes = np.clip(np.array(initial, dtype=np.float64), lo, hi)
        pop = len(genes)

    def fitness(g):
        A, mu = _genes_to_arrays(g, na, P)
        return cost_from_samples(model, render_batch(A, mu, c), G)

    J = fitness(genes)
    trace = [float(J.min())]
    sigma = opts.mutation
    n_elite = min(opts.elitism, pop)
    for gen in range(opts.generations):
        order = np.lexsort((np.arange(pop), J))
        elite = genes[order[:n_elite]]
        elite_J = J[order[:n_elite]]
        n_child = pop - n_elite
        cand = rng.integers(0, pop, size=(2, n_child, opts.tournament))
        winners = np.empty((2, n_child), dtype=int)
        for s in range(2):
            cj = J[cand[s]]
            winners[s] = cand[s][np.arange(n_child), np.argmin(cj, axis=1)]
        mask = rng.random((n_child, lo.size)) < 0.5
        children = np.where(mask, genes[winners[0]], genes[winners[1]])
        children = children + rng.normal(size=children.shape) * sigma * scale
        children = np.clip(children, lo, hi)
        genes = np.concatenate([elite, children])
        J = np.concatenate([elite_J, fitness(children)])
        trace.append(float(J.min()))
        sigma *= opts.decay
    k = int(np.lexsort((np.arange(pop), J))[0])
    A, mu = _genes_to_arrays(genes[k:k + 1], na, P)
    pulse = from_arrays(A[0], mu[0], c)
    return _finish(model, G, _gate_name(G), "ga", pulse, J[k], trace, lab_cfg, opts.seed)


def write_fidelity_csv(path, rows):
    """Rows of (gate, optimizer, shots, fidelity)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gate", "optimizer", "shots", "fidelity"])
        for gate, opt, shots, fid in rows:
            w.writerow([gate, opt, "inf" if shots is None else shots, repr(float(fid))])


def closed_system_fidelity(U, G):
    """|tr(G^H U)|^2 / 4 for unitaries (sanity helper)."""
    return float(abs(np.trace(np.asarray(G).conj().T @ U)) ** 2 / 4)


__all__ = ["GATES", "GATE_NAMES", "GateTarget", "ControlResult", "GDOptions", "GAOptions", "cost_J",
           "cost_from_samples", "optimize_gd", "optimize_ga", "evaluate_on_lab", "closed_expectations",
           "write_fidelity_csv"]
