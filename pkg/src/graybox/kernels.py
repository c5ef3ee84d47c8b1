"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy versions in
``_pykernels`` take over. Set ``GRAYBOX_BACKEND=python`` to force the fallback.
"""
import os
from types import SimpleNamespace

import numpy as np

from . import _pykernels

try:
    from . import _cgru, _ckernels
except ImportError:  # extensions not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = SimpleNamespace(
        chain_forward=_ckernels.chain_forward, chain_vjp=_ckernels.chain_vjp,
        lindblad_rk4=_ckernels.lindblad_rk4,
        gru_forward=_pykernels.gru_forward, gru_backward=_cgru.gru_backward)

_requested = os.environ.get("GRAYBOX_BACKEND", "").strip().lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(f"GRAYBOX_BACKEND={_requested!r} unavailable; have {sorted(BACKENDS)}")
BACKEND = _requested or ("cython" if _ckernels is not None else "python")


def set_backend(name):
    """Switch the active backend; returns the previous name."""
    global BACKEND
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {sorted(BACKENDS)}")
    prev, BACKEND = BACKEND, name
    return prev


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def chain_forward(fx, fy, omega, dt):
    """Per-step propagators (B, M, 2, 2) and time-ordered products (B, 2, 2).

    The step Hamiltonian is ``(omega*sz + fx*sx + fy*sy) / 2``; later steps multiply
    from the left.
    """
    return BACKENDS[BACKEND].chain_forward(_f64(fx), _f64(fy), float(omega), float(dt))


def chain_vjp(fx, fy, omega, dt, steps, ubar):
    """Pull back a cotangent on the total propagator onto the waveform samples.

    ``ubar`` is the matrix with ``df = Re tr(ubar^H dU)``; returns ``(df/dfx, df/dfy)``.
    """
    return BACKENDS[BACKEND].chain_vjp(
        _f64(fx), _f64(fy), float(omega), float(dt),
        np.ascontiguousarray(steps, dtype=np.complex128),
        np.ascontiguousarray(ubar, dtype=np.complex128),
    )


def lindblad_rk4(heff0, hx, hy, fx, fy, jumps, rho0, dt, substeps, store=False):
    """Fixed-step RK4 on the Lindblad equation, piecewise-constant per control step.

    ``heff0`` is the static part of ``H - i/2 sum L^H L``; ``hx``/``hy`` multiply the
    control samples. ``rho0`` has shape (B, K, d, d): K operators per waveform, all
    evolved by the same generator. Returns the final operators and, if ``store``,
    the (B, K, M+1, d, d) trajectory at control-step boundaries.
    """
    c = lambda a: np.ascontiguousarray(a, dtype=np.complex128)
    return BACKENDS[BACKEND].lindblad_rk4(
        c(heff0), c(hx), c(hy), _f64(fx), _f64(fy), [c(L) for L in jumps],
        c(rho0), float(dt), int(substeps), bool(store),
    )


def gru_forward(a, U):
    """GRU recurrence over time-major input pre-activations ``a`` (M, B, 3H).

    ``a[k]`` already holds ``x_k W + b``; gate column order is (update, reset, candidate).
    Returns hidden states (M, B, H) and a (M, 5, B, H) cache of h_prev, z, r, n, r*h.
    """
    return BACKENDS[BACKEND].gru_forward(_f64(a), _f64(U))


def gru_backward(g_hs, U, cache):
    """Backpropagation through time; returns dL/da with the layout of ``a``."""
    return BACKENDS[BACKEND].gru_backward(_f64(g_hs), _f64(U), _f64(cache))
