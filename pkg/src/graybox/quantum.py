"""Dense operators and states for a qubit coupled to a single auxiliary mode.

Conventions: ``sz = diag(1, -1)`` so ``|0>`` is the +1 eigenstate, ``sp = |1><0|``,
and composite spaces are ordered system (x) auxiliary.
"""
import numpy as np
from scipy.linalg import expm as _scipy_expm


class InvalidInput(ValueError):
    """Raised on malformed operator or parameter input."""


_PAULI = {
    "identity": np.eye(2, dtype=np.complex128),
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
    "plus": np.array([[0, 0], [1, 0]], dtype=np.complex128),
    "minus": np.array([[0, 1], [0, 0]], dtype=np.complex128),
}
_PAULI["i"] = _PAULI["identity"]
_PAULI["+"] = _PAULI["plus"]
_PAULI["-"] = _PAULI["minus"]


def pauli(axis):
    """Return a fresh copy of the named single-qubit operator.

    ``axis`` is one of ``x, y, z, plus, minus, identity``.
    """
    try:
        return _PAULI[axis].copy()
    except KeyError:
        raise InvalidInput(f"unknown Pauli axis {axis!r}") from None


def bosonic_annihilation(trunc_dim):
    if int(trunc_dim) != trunc_dim or trunc_dim < 2:
        raise InvalidInput(f"truncation dimension must be an integer >= 2, got {trunc_dim!r}")
    n = int(trunc_dim)
    return np.diag(np.sqrt(np.arange(1, n, dtype=np.float64)), k=1).astype(np.complex128)


def fermionic_annihilation():
    # single mode, occupation basis (|empty>, |filled>); no Jordan-Wigner string
    return np.array([[0, 1], [0, 0]], dtype=np.complex128)


def kron(a, b):
    return np.kron(np.asarray(a, dtype=np.complex128), np.asarray(b, dtype=np.complex128))


def partial_trace(m, dims, keep="sys"):
    """Reduce an operator on ``sys (x) aux`` to one factor.

    ``dims`` is ``(d_sys, d_aux)``. Leading batch axes are allowed.
    """
    m = np.asarray(m)
    ds, da = (int(v) for v in dims)
    if m.shape[-2:] != (ds * da, ds * da):
        raise InvalidInput(f"operator shape {m.shape[-2:]} does not match dims {(ds, da)}")
    t = m.reshape(m.shape[:-2] + (ds, da, ds, da))
    if keep == "sys":
        return np.einsum("...iaja->...ij", t)
    if keep == "aux":
        return np.einsum("...iaib->...ab", t)
    raise InvalidInput(f"keep must be 'sys' or 'aux', got {keep!r}")


def is_hermitian(m, atol=1e-10):
    m = np.asarray(m)
    return np.allclose(m, np.swapaxes(m.conj(), -1, -2), rtol=0.0, atol=atol)


def expm_2x2(h, t):
    """``exp(-i h t)`` for a Hermitian 2x2 ``h`` through the Pauli closed form."""
    h = np.asarray(h, dtype=np.complex128)
    if h.shape != (2, 2):
        raise InvalidInput(f"expected a 2x2 operator, got shape {h.shape}")
    if not is_hermitian(h, 1e-10):
        raise InvalidInput("expm_2x2 requires a Hermitian operator")
    a0 = 0.5 * np.trace(h).real
    a = np.array([
        0.5 * (h[0, 1] + h[1, 0]).real,
        0.5 * (h[1, 0] - h[0, 1]).imag,
        0.5 * (h[0, 0] - h[1, 1]).real,
    ])
    r = np.sqrt(a @ a)
    phase = np.exp(-1j * a0 * t)
    if r == 0.0:
        return phase * np.eye(2, dtype=np.complex128)
    adots = a[0] * _PAULI["x"] + a[1] * _PAULI["y"] + a[2] * _PAULI["z"]
    return phase * (np.cos(r * t) * np.eye(2) - 1j * np.sin(r * t) / r * adots)


def expm_dense(m, scale=1.0):
    """``exp(scale * m)`` by scaling and squaring with a Pade approximant."""
    m = np.asarray(m, dtype=np.complex128)
    if not np.all(np.isfinite(m)):
        raise InvalidInput("expm_dense requires finite entries")
    return _scipy_expm(scale * m)


def thermal_state(bath_kind, *, beta=None, mu_chem=None, omega_d=None, nbar=None, trunc_dim=None):
    """Initial auxiliary state.

    Fermionic modes take ``beta``, ``mu_chem`` and ``omega_d`` (Fermi-Dirac occupation);
    bosonic modes take ``nbar`` and ``trunc_dim`` (geometric populations, renormalized
    after truncation).
    """
    if bath_kind == "fermionic":
        if beta is None or mu_chem is None or omega_d is None:
            raise InvalidInput("fermionic thermal state needs beta, mu_chem and omega_d")
        f = 1.0 / (1.0 + np.exp(beta * (omega_d - mu_chem)))
        return np.diag([1.0 - f, f]).astype(np.complex128)
    if bath_kind == "bosonic":
        if nbar is None or trunc_dim is None:
            raise InvalidInput("bosonic thermal state needs nbar and trunc_dim")
        if nbar < 0:
            raise InvalidInput(f"mean occupation must be >= 0, got {nbar}")
        if int(trunc_dim) < 2:
            raise InvalidInput(f"truncation dimension must be >= 2, got {trunc_dim}")
        k = np.arange(int(trunc_dim))
        p = (nbar / (nbar + 1.0)) ** k if nbar > 0 else (k == 0).astype(float)
        return np.diag(p / p.sum()).astype(np.complex128)
    raise InvalidInput(f"unknown bath kind {bath_kind!r}")


# Pauli eigenstates in canonical order x+, x-, y+, y-, z+, z-.
PAULI_STATE_NAMES = ("x+", "x-", "y+", "y-", "z+", "z-")
OBSERVABLE_NAMES = ("X", "Y", "Z")


def pauli_eigenstates():
    """Density matrices of the six Pauli eigenstates, shape (6, 2, 2)."""
    out = []
    for axis in "xyz":
        for sign in (1.0, -1.0):
            out.append(0.5 * (np.eye(2) + sign * _PAULI[axis]))
    return np.array(out, dtype=np.complex128)


def observables():
    """The three Pauli observables X, Y, Z, shape (3, 2, 2)."""
    return np.array([_PAULI["x"], _PAULI["y"], _PAULI["z"]])


def check_density_matrix(rho, herm_tol=1e-10, trace_tol=1e-10, eig_tol=1e-8):
    """Raise ``InvalidInput`` unless ``rho`` is a valid density matrix."""
    rho = np.asarray(rho)
    if not is_hermitian(rho, herm_tol):
        raise InvalidInput("density matrix is not Hermitian")
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        raise InvalidInput(f"density matrix trace is {tr}")
    lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if lo < -eig_tol:
        raise InvalidInput(f"density matrix has eigenvalue {lo}")
    return rho
