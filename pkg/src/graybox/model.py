"""Graybox model: recurrent blackbox -> noise-operator parameters -> physics whitebox.

Predictions follow ``E{O} = Re tr(V_O U rho U^H O)`` with ``U`` the closed-system
control propagator and ``V_O = Q diag(tanh d1, tanh d2) Q^H`` produced per observable.
All gradients are written out by hand (no autodiff framework).
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .quantum import InvalidInput, observables, pauli_eigenstates

N_STATES, N_OBS, N_HEAD = 6, 3, 6
# head parameter layout
THETA, PHI, LAM, PHASE, D1, D2 = range(N_HEAD)
EIG_BIAS = 2.0


class ShapeError(ValueError):
    pass


class CompatibilityError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class ModelConfig:
    axes: tuple = ("x",)
    M: int = 128
    T: float = 1.0
    omega_s: float = 12.0
    hidden: tuple = (32, 32)
    input_scale: float = 1.0 / 25.0
    config_hash: str | None = None

    @property
    def dt(self):
        return self.T / self.M

    def to_dict(self):
        return {"axes": list(self.axes), "M": self.M, "T": self.T, "omega_s": self.omega_s,
                "hidden": list(self.hidden), "input_scale": self.input_scale,
                "config_hash": self.config_hash}

    @classmethod
    def from_dict(cls, d):
        return cls(axes=tuple(d["axes"]), M=int(d["M"]), T=float(d["T"]), omega_s=float(d["omega_s"]),
                   hidden=tuple(int(h) for h in d["hidden"]), input_scale=float(d["input_scale"]),
                   config_hash=d.get("config_hash"))


def param_shapes(cfg):
    n_in = len(cfg.axes)
    h1, h2 = cfg.hidden
    return {
        "gru1.W": (n_in, 3 * h1), "gru1.U": (h1, 3 * h1), "gru1.b": (3 * h1,),
        "gru2.W": (h1, 3 * h2), "gru2.U": (h2, 3 * h2), "gru2.b": (3 * h2,),
        "head.W": (h2, N_OBS * N_HEAD), "head.b": (N_OBS * N_HEAD,),
    }


def closed_expectations(U):
    """tr(U rho_s U^H O_o) for the six Pauli states and three observables, (B, 6, 3)."""
    rho = pauli_eigenstates()
    ev = np.einsum("bij,sjk,blk->bsil", U, rho, U.conj())
    return np.einsum("bsij,oji->bso", ev, observables()).real


def target_expectations(G):
    return closed_expectations(np.asarray(G, dtype=np.complex128)[None])[0]


def reconstruct_vo(raw):
    """V_O matrices (B, 3, 2, 2) from raw head outputs (B, 3, 6)."""
    th, ph, lam = raw[..., THETA], raw[..., PHI], raw[..., LAM]
    c, s = np.cos(th / 2), np.sin(th / 2)
    Q = np.empty(raw.shape[:-1] + (2, 2), dtype=np.complex128)
    Q[..., 0, 0] = c
    Q[..., 0, 1] = -np.exp(1j * lam) * s
    Q[..., 1, 0] = np.exp(1j * ph) * s
    Q[..., 1, 1] = np.exp(1j * (ph + lam)) * c
    eig = np.tanh(raw[..., [D1, D2]])
    return np.einsum("...ij,...j,...kj->...ik", Q, eig, Q.conj())


def _bloch_parts(raw):
    t1, t2 = np.tanh(raw[..., D1]), np.tanh(raw[..., D2])
    th, ph = raw[..., THETA], raw[..., PHI]
    n = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)
    return t1, t2, n


def predict_from_closed(raw, closed):
    """Fast equivalent of the trace head given closed-system expectations.

    For Hermitian ``V = v0 I + w n.sigma`` the real part of ``tr(V rho' O_o)`` reduces to
    ``v0 <O_o> + w n_o``.
    """
    t1, t2, n = _bloch_parts(raw)
    v0, w = 0.5 * (t1 + t2), 0.5 * (t1 - t2)
    n_own = np.diagonal(n, axis1=-2, axis2=-1)  # n_o of head o, (B, 3)
    return v0[:, None, :] * closed + (w * n_own)[:, None, :]


def _head_backward(raw, closed, gE):
    """Cotangent on raw head outputs (B, 3, 6) given dL/dE (B, 6, 3)."""
    t1, t2, n = _bloch_parts(raw)
    th, ph = raw[..., THETA], raw[..., PHI]
    n_own = np.diagonal(n, axis1=-2, axis2=-1)
    g_v0 = np.einsum("bso,bso->bo", gE, closed)
    g_w = gE.sum(axis=1)
    w = 0.5 * (t1 - t2)
    # derivative of the o-th component of head o's axis
    st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    dn_dth = np.stack([ct[:, 0] * cp[:, 0], ct[:, 1] * sp[:, 1], -st[:, 2]], axis=1)
    dn_dph = np.stack([-st[:, 0] * sp[:, 0], st[:, 1] * cp[:, 1], np.zeros_like(st[:, 2])], axis=1)
    g = np.zeros_like(raw)
    g[..., THETA] = g_w * w * dn_dth
    g[..., PHI] = g_w * w * dn_dph
    g[..., D1] = 0.5 * (1 - t1**2) * (g_v0 + g_w * n_own)
    g[..., D2] = 0.5 * (1 - t2**2) * (g_v0 - g_w * n_own)
    return g


def _gru_forward(x, W, U, b):
    """Standard GRU over a time-major (M, B, n_in) sequence; returns (M, B, H) states and a cache."""
    M, B, n_in = x.shape
    a = (x.reshape(M * B, n_in) @ W + b).reshape(M, B, -1)
    return kernels.gru_forward(a, U)


def _gru_backward(x, W, U, cache, g_hs):
    """BPTT; ``g_hs`` is dL/d(hidden state) at every step. Returns (dx, dW, dU, db)."""
    M, B, n_in = x.shape
    H = U.shape[0]
    flat = kernels.gru_backward(g_hs, U, cache).reshape(M * B, 3 * H)
    h_prev = cache[:, 0].reshape(M * B, H)
    rh = cache[:, 4].reshape(M * B, H)
    dU = np.concatenate([h_prev.T @ flat[:, :2 * H], rh.T @ flat[:, 2 * H:]], axis=1)
    dW = x.reshape(M * B, n_in).T @ flat
    db = flat.sum(axis=0)
    dx = (flat @ W.T).reshape(M, B, n_in)
    return dx, dW, dU, db


@dataclass
class ForwardPass:
    raw: np.ndarray
    closed: np.ndarray
    predictions: np.ndarray
    x: np.ndarray = field(repr=False)
    caches: tuple = field(repr=False)
    hs1: np.ndarray = field(repr=False)
    hs2: np.ndarray = field(repr=False)
    steps: np.ndarray | None = field(default=None, repr=False)
    U: np.ndarray | None = None
    samples: np.ndarray | None = field(default=None, repr=False)


class GrayboxModel:
    def __init__(self, config, params=None, seed=0):
        self.config = config
        shapes = param_shapes(config)
        if params is None:
            params = self._init_params(shapes, np.random.default_rng(seed))
        for name, shp in shapes.items():
            if name not in params:
                raise ShapeError(f"missing tensor {name}")
            if tuple(np.shape(params[name])) != shp:
                raise ShapeError(f"tensor {name} has shape {tuple(np.shape(params[name]))}, expected {shp}")
        self.params = {k: np.array(params[k], dtype=np.float64) for k in shapes}

    @staticmethod
    def _init_params(shapes, rng):
        p = {}
        for name, shp in shapes.items():
            fan_in = shp[0] if len(shp) == 2 else None
            if name.endswith(".b"):
                layer = name.split(".")[0]
                fan_in = shapes[f"{layer}.W"][0] if layer == "head" else shapes[f"{layer}.U"][0]
            bound = 1.0 / np.sqrt(fan_in)
            p[name] = rng.uniform(-bound, bound, size=shp)
        hb = np.zeros((N_OBS, N_HEAD))
        hb[:, [D1, D2]] = EIG_BIAS
        p["head.b"] = hb.ravel()
        return p

    @classmethod
    def identity_noise(cls, config, seed=0):
        """A model whose heads emit exactly V_O = I: the closed-system limit."""
        m = cls(config, seed=seed)
        m.params["head.W"][:] = 0.0
        hb = np.zeros((N_OBS, N_HEAD))
        hb[:, [D1, D2]] = 40.0  # tanh(40) == 1.0 in double precision
        m.params["head.b"] = hb.ravel()
        return m

    def copy(self):
        return GrayboxModel(self.config, {k: v.copy() for k, v in self.params.items()})

    # ------------------------------------------------------------------ forward
    def _check_samples(self, samples):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim == 2:
            samples = samples[None]
        want = (len(self.config.axes), self.config.M)
        if samples.shape[1:] != want:
            raise InvalidInput(f"waveform samples have shape {samples.shape[1:]}, model expects {want}")
        return samples

    def _axis_rows(self, samples):
        zeros = np.zeros(samples.shape[::2])
        fx = samples[:, self.config.axes.index("x")] if "x" in self.config.axes else zeros
        fy = samples[:, self.config.axes.index("y")] if "y" in self.config.axes else zeros
        return fx, fy

    def unitaries(self, samples):
        """Closed-system step propagators and totals for (B, n_axes, M) samples."""
        samples = self._check_samples(samples)
        fx, fy = self._axis_rows(samples)
        return kernels.chain_forward(fx, fy, self.config.omega_s, self.config.dt)

    def blackbox(self, samples):
        """Raw head outputs (B, 3, 6) plus the recurrent caches."""
        p = self.params
        x = np.ascontiguousarray(np.transpose(samples, (2, 0, 1))) * self.config.input_scale
        hs1, c1 = _gru_forward(x, p["gru1.W"], p["gru1.U"], p["gru1.b"])
        hs2, c2 = _gru_forward(hs1, p["gru2.W"], p["gru2.U"], p["gru2.b"])
        raw = (hs2[-1] @ p["head.W"] + p["head.b"]).reshape(-1, N_OBS, N_HEAD)
        return raw, x, (c1, c2), hs1, hs2

    def forward_samples(self, samples, closed=None):
        samples = self._check_samples(samples)
        steps = U = None
        if closed is None:
            steps, U = self.unitaries(samples)
            closed = closed_expectations(U)
        raw, x, caches, hs1, hs2 = self.blackbox(samples)
        pred = predict_from_closed(raw, closed)
        return ForwardPass(raw=raw, closed=closed, predictions=pred.reshape(-1, 18), x=x, caches=caches,
                           hs1=hs1, hs2=hs2, steps=steps, U=U, samples=samples)

    def forward(self, w):
        """Predictions (18,), V_O matrices (3, 2, 2) and U_ctrl for one waveform.

        The 18 outputs are computed literally as ``Re tr(V_O U rho U^H O)``.
        """
        samples = self._waveform_samples(w)
        fp = self.forward_samples(samples[None])
        V = reconstruct_vo(fp.raw)[0]
        U = fp.U[0]
        ev = np.einsum("ij,sjk,lk->sil", U, pauli_eigenstates(), U.conj())
        pred = np.einsum("oij,sjk,oki->so", V, ev, observables()).real.reshape(18)
        return pred, V, U

    def _waveform_samples(self, w):
        if tuple(w.axes) != tuple(self.config.axes):
            raise InvalidInput(f"waveform axes {w.axes} differ from model axes {self.config.axes}")
        return self._check_samples(w.samples)[0]

    def predict(self, samples, closed=None, batch_size=256):
        samples = self._check_samples(samples)
        out = []
        for s in range(0, len(samples), batch_size):
            c = None if closed is None else closed[s:s + batch_size]
            out.append(self.forward_samples(samples[s:s + batch_size], c).predictions)
        return np.concatenate(out) if out else np.empty((0, 18))

    def noise_operators(self, samples):
        raw = self.blackbox(self._check_samples(samples))[0]
        return reconstruct_vo(raw)

    # ----------------------------------------------------------------- backward
    def _blackbox_backward(self, fp, g_raw, need_input=False):
        p = self.params
        c1, c2 = fp.caches
        B = fp.hs2.shape[1]
        g_raw = g_raw.reshape(B, N_OBS * N_HEAD)
        grads = {"head.W": fp.hs2[-1].T @ g_raw, "head.b": g_raw.sum(axis=0)}
        g_hs2 = np.zeros_like(fp.hs2)
        g_hs2[-1] = g_raw @ p["head.W"].T
        g_hs1, grads["gru2.W"], grads["gru2.U"], grads["gru2.b"] = _gru_backward(
            fp.hs1, p["gru2.W"], p["gru2.U"], c2, g_hs2)
        dx, grads["gru1.W"], grads["gru1.U"], grads["gru1.b"] = _gru_backward(
            fp.x, p["gru1.W"], p["gru1.U"], c1, g_hs1)
        return grads, (dx if need_input else None)

    def weight_gradient(self, fp, gE):
        """dL/dweights given dL/dpredictions (B, 18)."""
        g_raw = _head_backward(fp.raw, fp.closed, gE.reshape(-1, N_STATES, N_OBS))
        return self._blackbox_backward(fp, g_raw)[0]

    def input_vjp(self, fp, gE):
        """dL/d(samples), (B, n_axes, M), through both the blackbox and U_ctrl."""
        gE = gE.reshape(-1, N_STATES, N_OBS)
        g_raw = _head_backward(fp.raw, fp.closed, gE)
        _, dx = self._blackbox_backward(fp, g_raw, need_input=True)
        g_samples = np.transpose(dx, (1, 2, 0)) * self.config.input_scale
        # whitebox: E = Re tr(V U rho U^H O) -> Ubar = sum g (O V + V O) U rho
        V = reconstruct_vo(fp.raw)
        O = observables()
        OV = np.einsum("oij,bojk->boik", O, V) + np.einsum("boij,ojk->boik", V, O)
        Urho = np.einsum("bij,sjk->bsik", fp.U, pauli_eigenstates())
        ubar = np.einsum("bso,boij,bsjk->bik", gE, OV, Urho)
        fx, fy = self._axis_rows(fp.samples)
        gx, gy = kernels.chain_vjp(fx, fy, self.config.omega_s, self.config.dt, fp.steps, ubar)
        for i, a in enumerate(self.config.axes):
            g_samples[:, i] += gx if a == "x" else gy
        return g_samples

    def input_gradient(self, w):
        """Jacobian of the 18 predictions w.r.t. the waveform samples, (18, n_axes, M)."""
        samples = self._waveform_samples(w)
        fp = self.forward_samples(np.repeat(samples[None], 18, axis=0))
        return self.input_vjp(fp, np.eye(18))

    # ------------------------------------------------------------- persistence
    def to_dict(self):
        return {"format": "graybox-model", "version": 1, "config": self.config.to_dict(),
                "config_hash": self.config.config_hash,
                "weights": {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
                            for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d, hidden=None):
        cfg = ModelConfig.from_dict(d["config"])
        if hidden is not None and tuple(hidden) != cfg.hidden:
            cfg = ModelConfig(**{**cfg.__dict__, "hidden": tuple(hidden)})
        params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["weights"].items()}
        return cls(cfg, params)


def mse_loss(pred, labels):
    return float(np.mean((np.asarray(pred) - np.asarray(labels)) ** 2))


def loss_mse(model, examples):
    if not examples:
        raise InvalidInput("empty batch")
    samples = np.array([ex.waveform.samples for ex in examples])
    labels = np.array([ex.record for ex in examples])
    return mse_loss(model.predict(samples), labels)


def vo_identity_deviation(model, samples):
    """Mean Frobenius distance between each predicted V_O and the identity."""
    V = model.noise_operators(samples)
    return float(np.mean(np.linalg.norm(V - np.eye(2), axis=(-2, -1)))) if len(V) else 0.0


def backward(model, samples, labels, closed=None):
    """(loss, gradient dict) of the MSE over a batch."""
    fp = model.forward_samples(samples, closed)
    diff = fp.predictions - labels
    gE = 2.0 * diff / diff.size
    return float(np.mean(diff**2)), model.weight_gradient(fp, gE)


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path, hidden=None):
    """Load a ``.gbx.json`` model; ``hidden`` asserts the expected layer sizes."""
    with open(path) as fh:
        return GrayboxModel.from_dict(json.load(fh), hidden=hidden)


def check_compatible(model, dataset):
    if model.config.config_hash is not None and model.config.config_hash != dataset.config_hash:
        raise CompatibilityError(f"model was trained for config {model.config.config_hash}, "
                                 f"dataset has {dataset.config_hash}")
    c = dataset.constraints
    if (tuple(c.axes), c.M) != (tuple(model.config.axes), model.config.M):
        raise CompatibilityError("model and dataset disagree on control axes or grid")


def model_config_for(dataset, hidden=(32, 32)):
    c = dataset.constraints
    return ModelConfig(axes=tuple(c.axes), M=c.M, T=c.T, omega_s=dataset.config.omega_s,
                       hidden=tuple(hidden), input_scale=1.0 / c.A_max, config_hash=dataset.config_hash)


# ------------------------------------------------------------------ training
class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainOptions:
    lr: float = 1e-3
    batch: int = 128
    iterations: int = 3000
    seed: int = 0
    eval_every: int = 50


@dataclass
class TrainResult:
    model: GrayboxModel
    iterations: list
    train_mse: list
    test_mse: dict
    best_test_mse: float
    best_iteration: int

    def final_train_mse(self, window=50):
        return float(np.mean(self.train_mse[-window:])) if self.train_mse else float("nan")

    def write_curves(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "train_mse", "test_mse"])
            for it, tr in zip(self.iterations, self.train_mse):
                te = self.test_mse.get(it)
                w.writerow([it, repr(tr), "" if te is None else repr(te)])


def prepare(dataset):
    """Inputs, closed-system expectations and labels as arrays."""
    samples = dataset.samples()
    c = dataset.constraints
    zeros = np.zeros((len(dataset), c.M))
    fx = samples[:, c.axes.index("x")] if "x" in c.axes else zeros
    fy = samples[:, c.axes.index("y")] if "y" in c.axes else zeros
    _, U = kernels.chain_forward(fx, fy, dataset.config.omega_s, c.T / c.M)
    return samples, closed_expectations(U), dataset.records()


def train(model, train_ds, test_ds, opts=None, log=None):
    """Adam on the MSE; returns learning curves and the best-test-MSE snapshot."""
    opts = opts or TrainOptions()
    if train_ds.config_hash != test_ds.config_hash:
        raise CompatibilityError("train and test datasets come from different configs")
    check_compatible(model, train_ds)
    xs, cs, ys = prepare(train_ds)
    xt, ct, yt = prepare(test_ds)
    rng = np.random.default_rng(opts.seed)
    adam = Adam(model.params, lr=opts.lr)
    n = len(xs)
    order, pos = rng.permutation(n), 0
    iters, tr_curve, te_curve = [], [], {}
    best = (model.copy(), mse_loss(model.predict(xt, ct), yt), 0)
    te_curve[0] = best[1]
    for it in range(1, opts.iterations + 1):
        if pos + opts.batch > n:
            order, pos = rng.permutation(n), 0
        idx = order[pos:pos + opts.batch]
        pos += opts.batch
        loss, grads = backward(model, xs[idx], ys[idx], cs[idx])
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingError(f"non-finite loss at iteration {it} (batch offset {pos - opts.batch})")
        adam.step(model.params, grads)
        iters.append(it)
        tr_curve.append(loss)
        if it % opts.eval_every == 0 or it == opts.iterations:
            te = mse_loss(model.predict(xt, ct), yt)
            te_curve[it] = te
            if te < best[1]:
                best = (model.copy(), te, it)
            if log:
                log(f"iter {it}: train {loss:.3e} test {te:.3e}")
    return TrainResult(model=best[0], iterations=iters, train_mse=tr_curve, test_mse=te_curve,
                       best_test_mse=best[1], best_iteration=best[2])
