"""Pure numpy kernels; reference behaviour for the compiled ``_ckernels`` module."""
import numpy as np


def _step_unitaries(fx, fy, omega, dt):
    ax, ay = 0.5 * fx, 0.5 * fy
    az = np.full_like(ax, 0.5 * omega)
    r = np.sqrt(ax**2 + ay**2 + az**2)
    rdt = r * dt
    small = rdt < 1e-8
    s = np.where(small, dt * (1.0 - rdt**2 / 6.0), np.sin(rdt) / np.where(small, 1.0, r))
    c = np.cos(rdt)
    u = np.empty(fx.shape + (2, 2), dtype=np.complex128)
    u[..., 0, 0] = c - 1j * s * az
    u[..., 0, 1] = -1j * s * ax - s * ay
    u[..., 1, 0] = -1j * s * ax + s * ay
    u[..., 1, 1] = c + 1j * s * az
    return u


def chain_forward(fx, fy, omega, dt):
    steps = _step_unitaries(fx, fy, omega, dt)
    total = np.broadcast_to(np.eye(2, dtype=np.complex128), (fx.shape[0], 2, 2)).copy()
    for k in range(fx.shape[1]):
        total = steps[:, k] @ total
    return steps, total


def chain_vjp(fx, fy, omega, dt, steps, ubar):
    B, M = fx.shape
    pre = np.empty((B, M, 2, 2), dtype=np.complex128)
    acc = np.broadcast_to(np.eye(2, dtype=np.complex128), (B, 2, 2)).copy()
    for k in range(M):
        pre[:, k] = acc
        acc = steps[:, k] @ acc
    # adjoint sweep: w_k = S_k^dagger ubar P_k^dagger
    w = np.empty_like(pre)
    a = np.array(ubar, dtype=np.complex128)
    for k in range(M - 1, -1, -1):
        w[:, k] = a @ pre[:, k].conj().transpose(0, 2, 1)
        a = steps[:, k].conj().transpose(0, 2, 1) @ a
    wc = w.conj()
    wI = wc[..., 0, 0] + wc[..., 1, 1]
    wx = wc[..., 0, 1] + wc[..., 1, 0]
    wy = -1j * wc[..., 0, 1] + 1j * wc[..., 1, 0]
    wz = wc[..., 0, 0] - wc[..., 1, 1]
    ax, ay, az = 0.5 * fx, 0.5 * fy, 0.5 * omega
    r = np.sqrt(ax**2 + ay**2 + az**2)
    rdt = r * dt
    small = rdt < 1e-4
    rs = np.where(small, 1.0, r)
    s = np.where(small, dt * (1.0 - rdt**2 / 6.0), np.sin(rdt) / rs)
    g = np.where(small, -dt**3 / 3.0 + r**2 * dt**5 / 30.0,
                 (rdt * np.cos(rdt) - np.sin(rdt)) / rs**3)
    adotw = ax * wx + ay * wy + az * wz
    gx = 0.5 * (-dt * s * ax * wI - 1j * g * ax * adotw - 1j * s * wx).real
    gy = 0.5 * (-dt * s * ay * wI - 1j * g * ay * adotw - 1j * s * wy).real
    return np.ascontiguousarray(gx), np.ascontiguousarray(gy)


def _rhs(heff, jumps, rho):
    hr = heff[:, None] @ rho
    out = -1j * hr + 1j * (rho @ heff[:, None].conj().transpose(0, 1, 3, 2))
    for L in jumps:
        out += L @ rho @ L.conj().T
    return out


def lindblad_rk4(heff0, hx, hy, fx, fy, jumps, rho0, dt, substeps, store):
    B, M = fx.shape
    rho = np.array(rho0, dtype=np.complex128, copy=True)
    jumps = [np.asarray(L, dtype=np.complex128) for L in jumps]
    traj = None
    if store:
        traj = np.empty((B, rho.shape[1], M + 1) + rho.shape[2:], dtype=np.complex128)
        traj[:, :, 0] = rho
    h = dt / substeps
    for k in range(M):
        heff = heff0[None] + fx[:, k, None, None] * hx[None] + fy[:, k, None, None] * hy[None]
        for _ in range(substeps):
            k1 = _rhs(heff, jumps, rho)
            k2 = _rhs(heff, jumps, rho + 0.5 * h * k1)
            k3 = _rhs(heff, jumps, rho + 0.5 * h * k2)
            k4 = _rhs(heff, jumps, rho + h * k3)
            rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if store:
            traj[:, :, k + 1] = rho
    return rho, traj


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(a, U):
    M, B, _ = a.shape
    H = U.shape[0]
    hs = np.empty((M, B, H))
    cache = np.empty((M, 5, B, H))  # h_prev, z, r, n, r*h
    h = np.zeros((B, H))
    Uzr, Un = U[:, :2 * H], U[:, 2 * H:]
    for k in range(M):
        zr = _sigmoid(a[k, :, :2 * H] + h @ Uzr)
        z, r = zr[:, :H], zr[:, H:]
        rh = r * h
        n = np.tanh(a[k, :, 2 * H:] + rh @ Un)
        cache[k] = h, z, r, n, rh
        h = z * h + (1.0 - z) * n
        hs[k] = h
    return hs, cache


def gru_backward(g_hs, U, cache):
    M, B, H = g_hs.shape
    Uzr, Un = U[:, :2 * H], U[:, 2 * H:]
    da = np.empty((M, B, 3 * H))
    dh = np.zeros((B, H))
    for k in range(M - 1, -1, -1):
        dh = dh + g_hs[k]
        h, z, r, n = cache[k, :4]
        da[k, :, :H] = dh * (h - n) * z * (1.0 - z)
        da[k, :, 2 * H:] = dn = dh * (1.0 - z) * (1.0 - n * n)
        drh = dn @ Un.T
        da[k, :, H:2 * H] = drh * h * r * (1.0 - r)
        dh = dh * z + drh * r + da[k, :, :2 * H] @ Uzr.T
    return da
