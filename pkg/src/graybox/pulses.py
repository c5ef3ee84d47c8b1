"""Gaussian pulse trains: parameters, constraints, sampling and rendering."""
from dataclasses import dataclass, field

import numpy as np

AXES = ("x", "y")
# minimum center separation in units of the pulse width
GAP_WIDTHS = 6.0


class ConfigurationError(ValueError):
    """Pulse constraints that cannot be satisfied."""


@dataclass(frozen=True)
class PulseConstraints:
    n_pulses: int = 5
    T: float = 1.0
    M: int = 128
    sigma: float | None = None
    A_max: float = 25.0
    axes: tuple = ("x",)

    def __post_init__(self):
        if self.sigma is None:
            object.__setattr__(self, "sigma", self.T / (12 * self.n_pulses))
        object.__setattr__(self, "axes", tuple(self.axes))
        bad = set(self.axes) - set(AXES)
        if bad or not self.axes:
            raise ConfigurationError(f"axes must be a non-empty subset of {AXES}, got {self.axes}")
        if self.n_pulses < 1 or self.M < 1 or self.T <= 0 or self.sigma <= 0 or self.A_max <= 0:
            raise ConfigurationError(f"non-positive pulse constraint in {self}")
        if self.n_pulses * GAP_WIDTHS * self.sigma >= self.T:
            raise ConfigurationError(
                f"{self.n_pulses} pulses of width {self.sigma} cannot keep a "
                f"{GAP_WIDTHS:g}-width gap inside T={self.T}")

    def slot_bounds(self):
        """Allowed center interval per pulse index, shape (n_pulses, 2)."""
        edges = np.arange(self.n_pulses + 1) * self.T / self.n_pulses
        margin = 0.5 * GAP_WIDTHS * self.sigma
        return np.stack([edges[:-1] + margin, edges[1:] - margin], axis=1)

    def slot_midpoints(self):
        return (np.arange(self.n_pulses) + 0.5) * self.T / self.n_pulses

    def grid(self):
        return (np.arange(self.M) + 0.5) * self.T / self.M

    def to_dict(self):
        return {"n_pulses": self.n_pulses, "T": self.T, "M": self.M, "sigma": self.sigma,
                "A_max": self.A_max, "axes": list(self.axes)}

    @classmethod
    def from_dict(cls, d):
        return cls(n_pulses=int(d["n_pulses"]), T=float(d["T"]), M=int(d["M"]),
                   sigma=float(d["sigma"]), A_max=float(d["A_max"]), axes=tuple(d["axes"]))


@dataclass
class PulseSequence:
    """Per-axis Gaussian trains; ``params[axis]`` is an (n_pulses, 2) array of (A, mu)."""

    T: float
    M: int
    sigma: float
    params: dict = field(default_factory=dict)

    @property
    def axes(self):
        return tuple(a for a in AXES if a in self.params)

    @property
    def n_pulses(self):
        return len(next(iter(self.params.values()))) if self.params else 0

    def amplitudes(self):
        return np.stack([self.params[a][:, 0] for a in self.axes])

    def centers(self):
        return np.stack([self.params[a][:, 1] for a in self.axes])

    def to_dict(self):
        return {"T": self.T, "M": self.M, "sigma": self.sigma,
                "axes": {a: [[float(A), float(mu)] for A, mu in self.params[a]] for a in self.axes}}

    @classmethod
    def from_dict(cls, d):
        params = {a: np.asarray(v, dtype=np.float64).reshape(-1, 2) for a, v in d["axes"].items()}
        return cls(T=float(d["T"]), M=int(d["M"]), sigma=float(d["sigma"]), params=params)

    def check(self, constraints, tol=1e-12):
        """Raise ``ConfigurationError`` if the sequence violates ``constraints``."""
        lo_hi = constraints.slot_bounds()
        for a in self.axes:
            A, mu = self.params[a][:, 0], self.params[a][:, 1]
            if np.any(np.abs(A) > constraints.A_max + tol):
                raise ConfigurationError(f"axis {a}: amplitude above {constraints.A_max}")
            if np.any(mu < lo_hi[:, 0] - tol) or np.any(mu > lo_hi[:, 1] + tol):
                raise ConfigurationError(f"axis {a}: center outside its slot")
            if np.any(np.diff(mu) < GAP_WIDTHS * self.sigma - tol):
                raise ConfigurationError(f"axis {a}: pulses overlap")


@dataclass
class Waveform:
    """Sampled control fields on the midpoint grid; ``samples`` has shape (n_axes, M)."""

    T: float
    axes: tuple
    samples: np.ndarray

    @property
    def M(self):
        return self.samples.shape[-1]

    def axis(self, name):
        if name in self.axes:
            return self.samples[self.axes.index(name)]
        return np.zeros(self.M)

    @property
    def fx(self):
        return self.axis("x")

    @property
    def fy(self):
        return self.axis("y")


def _gauss(t, mu, sigma):
    return np.exp(-((t[None, :] - mu[:, None]) ** 2) / sigma**2)


def render(seq):
    t = (np.arange(seq.M) + 0.5) * seq.T / seq.M
    rows = []
    for a in seq.axes:
        A, mu = seq.params[a][:, 0], seq.params[a][:, 1]
        rows.append(A @ _gauss(t, mu, seq.sigma))
    return Waveform(T=seq.T, axes=seq.axes, samples=np.array(rows).reshape(len(rows), seq.M))


def render_gradient(seq):
    """Analytic sensitivities of the rendered samples.

    Returns ``{axis: (dA, dmu)}`` with ``dA[i]`` and ``dmu[i]`` the length-M derivatives of
    that axis' waveform with respect to pulse ``i``'s amplitude and center.
    """
    t = (np.arange(seq.M) + 0.5) * seq.T / seq.M
    out = {}
    for a in seq.axes:
        A, mu = seq.params[a][:, 0], seq.params[a][:, 1]
        g = _gauss(t, mu, seq.sigma)
        dmu = A[:, None] * 2.0 * (t[None, :] - mu[:, None]) / seq.sigma**2 * g
        out[a] = (g, dmu)
    return out


def render_batch(amplitudes, centers, constraints):
    """Vectorized render: (B, n_axes, n_pulses) parameters -> (B, n_axes, M) samples."""
    t = constraints.grid()
    g = np.exp(-((t[None, None, None, :] - centers[..., None]) ** 2) / constraints.sigma**2)
    return np.einsum("bap,bapm->bam", amplitudes, g)


def random_sequence(rng, constraints):
    """Uniform amplitudes and slot-confined centers; consumes ``rng`` in a fixed order."""
    c = constraints
    lo_hi = c.slot_bounds()
    params = {}
    for a in c.axes:
        A = rng.uniform(-c.A_max, c.A_max, size=c.n_pulses)
        mu = rng.uniform(lo_hi[:, 0], lo_hi[:, 1])
        params[a] = np.stack([A, mu], axis=1)
    return PulseSequence(T=c.T, M=c.M, sigma=c.sigma, params=params)


def amplitudes_from_raw(u, A_max):
    return A_max * np.tanh(u)


def raw_from_amplitudes(A, A_max):
    return np.arctanh(np.asarray(A) / A_max)


def centers_from_raw(v, constraints):
    """Slot-confined centers ``lo + (hi - lo) * sigmoid(v)``; ``v = 0`` is the midpoint."""
    lo, hi = constraints.slot_bounds().T
    return lo + (hi - lo) * 0.5 * (1.0 + np.tanh(0.5 * np.asarray(v, dtype=np.float64)))


def project_constraints(raw, constraints, raw_centers=None):
    """Build a feasible sequence from unconstrained parameters.

    ``raw`` maps axis -> length-``n_pulses`` array (or an (n_axes, n_pulses) array in
    ``constraints.axes`` order). Amplitudes go through ``A_max * tanh``. Centers sit at the
    slot midpoints unless ``raw_centers`` (same layout) is given.
    """
    c = constraints

    def as_dict(r):
        if isinstance(r, dict):
            return r
        return dict(zip(c.axes, np.asarray(r, dtype=np.float64).reshape(len(c.axes), c.n_pulses)))

    raw = as_dict(raw)
    rc = as_dict(raw_centers) if raw_centers is not None else {a: np.zeros(c.n_pulses) for a in c.axes}
    params = {a: np.stack([amplitudes_from_raw(np.asarray(raw[a], dtype=np.float64), c.A_max),
                           centers_from_raw(rc[a], c)], axis=1)
              for a in c.axes}
    return PulseSequence(T=c.T, M=c.M, sigma=c.sigma, params=params)


def from_arrays(amplitudes, centers, constraints):
    """Sequence from (n_axes, n_pulses) amplitude and center arrays."""
    c = constraints
    params = {a: np.stack([np.asarray(amplitudes[i], float), np.asarray(centers[i], float)], axis=1)
              for i, a in enumerate(c.axes)}
    return PulseSequence(T=c.T, M=c.M, sigma=c.sigma, params=params)
