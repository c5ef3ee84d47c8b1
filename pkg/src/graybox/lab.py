"""Ground-truth simulator: qubit plus one auxiliary mode under a Lindblad master equation.

This plays the experiment. Models only ever see its measurement records.
"""
import csv
import json
from dataclasses import asdict, dataclass, replace
from functools import lru_cache

import numpy as np

from . import kernels
from .pulses import PulseConstraints, Waveform, random_sequence, render
from .quantum import (
    OBSERVABLE_NAMES,
    PAULI_STATE_NAMES,
    InvalidInput,
    bosonic_annihilation,
    expm_2x2,
    fermionic_annihilation,
    kron,
    observables,
    partial_trace,
    pauli,
    pauli_eigenstates,
    thermal_state,
)

TRACE_DRIFT_LIMIT = 1e-6
CONVERGENCE_TOL = 1e-6


class NumericalError(RuntimeError):
    """The integrator lost accuracy; more substeps are needed."""


@dataclass(frozen=True)
class LabConfig:
    omega_s: float = 12.0
    bath_kind: str = "fermionic"
    omega_d: float = 5.0
    V: complex = 2.0
    gamma_L: float = 0.7
    gamma_R: float = 0.7
    beta: float = 1.0
    mu_chem: float = 3.0
    nbar: float = 1.0
    trunc_dim: int = 2
    T: float = 1.0
    M: int = 128
    substeps: int | None = None

    def __post_init__(self):
        if self.bath_kind not in ("fermionic", "bosonic"):
            raise InvalidInput(f"unknown bath kind {self.bath_kind!r}")
        if self.gamma_L < 0 or self.gamma_R < 0:
            raise InvalidInput("decay rates must be non-negative")
        if self.bath_kind == "fermionic" and self.trunc_dim != 2:
            raise InvalidInput("a fermionic mode has dimension 2")
        if self.bath_kind == "bosonic" and self.trunc_dim < 2:
            raise InvalidInput("bosonic truncation must be >= 2")
        if self.M < 1 or self.T <= 0:
            raise InvalidInput("need M >= 1 and T > 0")

    @property
    def d_aux(self):
        return int(self.trunc_dim)

    @property
    def dim(self):
        return 2 * self.d_aux

    @property
    def dt(self):
        return self.T / self.M

    def to_dict(self):
        d = asdict(self)
        V = complex(self.V)
        d["V"] = V.real if V.imag == 0 else [V.real, V.imag]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("V"), list):
            d["V"] = complex(*d["V"])
        return cls(**d)

    def aux_state(self):
        if self.bath_kind == "fermionic":
            return thermal_state("fermionic", beta=self.beta, mu_chem=self.mu_chem, omega_d=self.omega_d)
        return thermal_state("bosonic", nbar=self.nbar, trunc_dim=self.trunc_dim)


def fermionic_config(V=2.0, **kw):
    return LabConfig(bath_kind="fermionic", V=V, trunc_dim=2, **kw)


def bosonic_config(V=1.3, trunc_dim=20, **kw):
    return LabConfig(bath_kind="bosonic", V=V, trunc_dim=trunc_dim, **kw)


def control_hamiltonian(fx, fy, omega_s):
    return 0.5 * (omega_s * pauli("z") + fx * pauli("x") + fy * pauli("y"))


def control_unitary(w, omega_s, T=None, M=None):
    """Time-ordered product of closed-form step exponentials; latest step on the left."""
    T = w.T if T is None else T
    M = w.M if M is None else M
    if w.M != M:
        raise InvalidInput(f"waveform has {w.M} samples, expected {M}")
    dt = T / M
    U = np.eye(2, dtype=np.complex128)
    fx, fy = w.fx, w.fy
    for k in range(M):
        U = expm_2x2(control_hamiltonian(fx[k], fy[k], omega_s), dt) @ U
    return U


def control_unitaries(fx, fy, omega_s, dt):
    """Batched fast path of :func:`control_unitary` through the compiled kernel."""
    return kernels.chain_forward(np.atleast_2d(fx), np.atleast_2d(fy), omega_s, dt)[1]


@dataclass
class JointGenerator:
    h_static: np.ndarray
    h_x: np.ndarray
    h_y: np.ndarray
    jumps: list

    def hamiltonian(self, fx, fy):
        return self.h_static + fx * self.h_x + fy * self.h_y

    def effective_static(self):
        return self.h_static - 0.5j * sum((L.conj().T @ L for L in self.jumps),
                                          np.zeros_like(self.h_static))


@lru_cache(maxsize=64)
def _generator_parts(cfg):
    da = cfg.d_aux
    b = fermionic_annihilation() if cfg.bath_kind == "fermionic" else bosonic_annihilation(da)
    bd = b.conj().T
    I2, Ia = np.eye(2), np.eye(da)
    V = complex(cfg.V)
    h_static = (kron(0.5 * cfg.omega_s * pauli("z"), Ia)
                + kron(I2, cfg.omega_d * (bd @ b))
                + V * kron(pauli("plus"), b) + np.conj(V) * kron(pauli("minus"), bd))
    jumps = [np.sqrt(cfg.gamma_L) * kron(I2, b), np.sqrt(cfg.gamma_R) * kron(I2, bd)]
    jumps = [L for L in jumps if np.any(L)]
    return JointGenerator(h_static, kron(0.5 * pauli("x"), Ia), kron(0.5 * pauli("y"), Ia), jumps)


def build_joint_generator(cfg, w=None):
    """Joint Hamiltonian pieces and jump operators.

    With a waveform, also returns the (M, d, d) stack of step Hamiltonians.
    """
    gen = _generator_parts(cfg)
    if w is None:
        return gen
    hs = gen.h_static[None] + w.fx[:, None, None] * gen.h_x[None] + w.fy[:, None, None] * gen.h_y[None]
    return hs, list(gen.jumps)


def evolve_lindblad(h_static, h_x, h_y, jumps, fx, fy, rho0, dt, substeps, store=False):
    """Propagate operators through piecewise-constant Lindblad generators.

    ``fx``/``fy`` have shape (B, M); ``rho0`` is (B, K, d, d) or (K, d, d) (shared by
    every waveform). Raises ``NumericalError`` when the trace drifts past 1e-6.
    """
    fx, fy = np.atleast_2d(fx), np.atleast_2d(fy)
    rho0 = np.asarray(rho0, dtype=np.complex128)
    if rho0.ndim == 3:
        rho0 = np.broadcast_to(rho0, (fx.shape[0],) + rho0.shape)
    heff = h_static - 0.5j * sum((L.conj().T @ L for L in jumps), np.zeros_like(h_static))
    out, traj = kernels.lindblad_rk4(heff, h_x, h_y, fx, fy, jumps, rho0, dt, substeps, store)
    drift = np.abs(np.trace(out, axis1=-2, axis2=-1) - np.trace(rho0, axis1=-2, axis2=-1)).max()
    if not np.isfinite(drift) or drift > TRACE_DRIFT_LIMIT:
        raise NumericalError(f"trace drift {drift:.3e} with {substeps} substeps; increase substeps")
    return out, traj


def _joint_initial(cfg, rho_s):
    rho_s = np.asarray(rho_s, dtype=np.complex128)
    rho_a = cfg.aux_state()
    return np.einsum("...ij,ab->...iajb", rho_s, rho_a).reshape(rho_s.shape[:-2] + (cfg.dim, cfg.dim))


def _waveform_arrays(cfg, waveforms):
    if isinstance(waveforms, Waveform):
        waveforms = [waveforms]
    for w in waveforms:
        if w.M != cfg.M:
            raise InvalidInput(f"waveform has {w.M} samples, config expects {cfg.M}")
    fx = np.array([w.fx for w in waveforms]).reshape(-1, cfg.M)
    fy = np.array([w.fy for w in waveforms]).reshape(-1, cfg.M)
    return fx, fy


def _propagate(cfg, fx, fy, rho_s0, substeps, store=False):
    gen = _generator_parts(cfg)
    rho0 = _joint_initial(cfg, rho_s0)
    return evolve_lindblad(gen.h_static, gen.h_x, gen.h_y, gen.jumps, fx, fy, rho0,
                           cfg.dt, substeps, store)


def _expectations(cfg, fx, fy, substeps):
    """(B, 18) exact expectations, canonical (state, observable) order."""
    out, _ = _propagate(cfg, fx, fy, pauli_eigenstates(), substeps)
    red = partial_trace(out, (2, cfg.d_aux), keep="sys")
    vals = np.einsum("bsij,oji->bso", red, observables()).real
    return vals.reshape(fx.shape[0], 18)


def _probe_waveforms(cfg, A_max, n=3):
    c = PulseConstraints(n_pulses=5, T=cfg.T, M=cfg.M, A_max=A_max, axes=("x", "y"))
    rng = np.random.default_rng(20240917)
    seqs = [random_sequence(rng, c) for _ in range(n)]
    for s in seqs[1:]:
        for a in s.params:
            s.params[a][:, 0] = np.sign(s.params[a][:, 0]) * A_max
    return _waveform_arrays(cfg, [render(s) for s in seqs])


def calibrate_substeps(cfg, fx=None, fy=None, A_max=25.0, tol=CONVERGENCE_TOL, start=2, limit=512):
    """Smallest power-of-two multiple of ``start`` passing the step-halving gate."""
    if fx is None:
        fx, fy = _probe_waveforms(cfg, A_max)
    s = start
    prev = None
    while s <= limit:
        try:
            cur = _expectations(cfg, fx, fy, s)
        except NumericalError:
            prev, s = None, 2 * s
            continue
        if prev is not None and np.abs(cur - prev).max() <= tol:
            return s // 2
        prev, s = cur, 2 * s
    raise NumericalError(f"no substep count up to {limit} meets the {tol:g} convergence gate")


@lru_cache(maxsize=64)
def default_substeps(cfg, A_max=25.0):
    return calibrate_substeps(replace(cfg, substeps=None), A_max=A_max)


def resolve_substeps(cfg, A_max=25.0):
    """Copy of ``cfg`` with ``substeps`` filled in by calibration if unset."""
    if cfg.substeps is not None:
        return cfg
    return replace(cfg, substeps=default_substeps(cfg, A_max))


def _substeps(cfg):
    return cfg.substeps if cfg.substeps is not None else default_substeps(cfg)


def lindblad_propagate(cfg, w, rho_s0, trajectory=False):
    """Evolve qubit (x) thermal auxiliary; returns the final qubit state and optionally
    the joint-state trajectory at every control-step boundary (M+1 entries)."""
    fx, fy = _waveform_arrays(cfg, w)
    out, traj = _propagate(cfg, fx, fy, np.asarray(rho_s0)[None], _substeps(cfg), store=trajectory)
    rho_s = partial_trace(out[0, 0], (2, cfg.d_aux), keep="sys")
    if trajectory:
        return rho_s, traj[0, 0]
    return rho_s


def sample_shots(values, shots, rng):
    """Replace exact expectations by binomial estimates from ``shots`` single-shot outcomes."""
    values = np.asarray(values, dtype=np.float64)
    if shots is None or shots == np.inf:
        return values.copy()
    n = int(shots)
    if n < 1:
        raise InvalidInput(f"shots must be positive, got {shots}")
    p = np.clip(0.5 * (1.0 + values), 0.0, 1.0)
    return 2.0 * rng.binomial(n, p) / n - 1.0


def measure_batch(cfg, waveforms):
    """Exact 18-value records for several waveforms, shape (B, 18)."""
    fx, fy = _waveform_arrays(cfg, waveforms)
    return _expectations(cfg, fx, fy, _substeps(cfg))


def measure_all(cfg, w, shots=None, rng=None):
    """The 18 expectations: initial states x+, x-, y+, y-, z+, z- each observed in X, Y, Z."""
    vals = measure_batch(cfg, w)[0]
    if shots is None or shots == np.inf:
        return vals
    if rng is None:
        raise InvalidInput("finite shots need an rng")
    return sample_shots(vals, shots, rng)


def choi_states(cfg, waveforms):
    """Normalized Choi states (B, 4, 4) ordered qubit (x) reference.

    The reference half of a Bell pair is untouched, so the joint state splits into four
    blocks ``|r><r'|_q (x) rho_aux / 2`` that evolve independently under the same
    generator; they are reassembled after tracing out the auxiliary.
    """
    fx, fy = _waveform_arrays(cfg, waveforms)
    blocks = np.zeros((4, 2, 2), dtype=np.complex128)
    for idx, (r, rp) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        blocks[idx, r, rp] = 0.5
    out, _ = _propagate(cfg, fx, fy, blocks, _substeps(cfg))
    red = partial_trace(out, (2, cfg.d_aux), keep="sys").reshape(-1, 2, 2, 2, 2)
    # red[b, r, r', s, s'] -> choi[b, s, r, s', r']
    choi = np.transpose(red, (0, 3, 1, 4, 2)).reshape(-1, 4, 4)
    tr = np.trace(choi, axis1=1, axis2=2).real
    return choi / tr[:, None, None]


def choi_state(cfg, w):
    return choi_states(cfg, w)[0]


def unitary_choi(U):
    phi = np.kron(np.asarray(U), np.eye(2)) @ (np.array([1, 0, 0, 1], dtype=np.complex128) / np.sqrt(2))
    return np.outer(phi, phi.conj())


def process_fidelity(choi, G):
    """Overlap of a normalized Choi state with the Bell state of the target unitary."""
    G = np.asarray(G, dtype=np.complex128)
    if G.shape != (2, 2) or not np.allclose(G.conj().T @ G, np.eye(2), atol=1e-9):
        raise InvalidInput("target must be a 2x2 unitary")
    # unnormalized Bell vector; dividing by its norm avoids 1/sqrt(2) roundoff
    v = np.kron(G, np.eye(2)) @ np.array([1, 0, 0, 1], dtype=np.complex128)
    f = np.real(np.vdot(v, np.asarray(choi) @ v)) / np.real(np.vdot(v, v))
    return float(np.clip(f, 0.0, 1.0))


def free_evolution(cfg):
    """Zero-control dynamics from all six Pauli eigenstates.

    Returns ``(times, expectations (M+1, 6, 3), purities (M+1, 6))``.
    """
    fx = np.zeros((1, cfg.M))
    _, traj = _propagate(cfg, fx, fx, pauli_eigenstates(), _substeps(cfg), store=True)
    red = partial_trace(traj[0], (2, cfg.d_aux), keep="sys")  # (6, M+1, 2, 2)
    ex = np.einsum("skij,oji->kso", red, observables()).real
    pur = np.einsum("skij,skji->ks", red, red).real
    times = np.arange(cfg.M + 1) * cfg.dt
    return times, ex, pur


def purity_trajectory(cfg, initial_state):
    """Purity ``tr(rho_s^2)`` at each control-step boundary under zero control."""
    if isinstance(initial_state, str):
        initial_state = pauli_eigenstates()[PAULI_STATE_NAMES.index(initial_state)]
    zero = Waveform(T=cfg.T, axes=("x",), samples=np.zeros((1, cfg.M)))
    _, traj = lindblad_propagate(cfg, zero, initial_state, trajectory=True)
    red = partial_trace(traj, (2, cfg.d_aux), keep="sys")
    return np.einsum("kij,kji->k", red, red).real


def write_trajectory_csv(path, times, expectations, purities):
    header = ["t"] + [f"{s}_{o}" for s in PAULI_STATE_NAMES for o in OBSERVABLE_NAMES]
    header += [f"purity_{s}" for s in PAULI_STATE_NAMES]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(times):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in expectations[k].ravel()]
                       + [repr(float(v)) for v in purities[k]])


def choi_to_json(choi):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(choi)]


def choi_from_json(data):
    arr = np.asarray(data, dtype=np.float64)
    return arr[..., 0] + 1j * arr[..., 1]


def write_choi_json(path, choi):
    with open(path, "w") as fh:
        json.dump(choi_to_json(choi), fh)
