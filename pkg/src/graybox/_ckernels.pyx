# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: time-ordered 2x2 control propagator and sparse RK4 Lindblad stepping.

Signatures and return conventions mirror ``graybox._pykernels`` exactly.
"""
import numpy as np
from libc.math cimport sin, cos, sqrt, fabs

ctypedef double complex cplx


cdef inline void _step_unitary(double ax, double ay, double az, double dt, cplx* u) noexcept nogil:
    cdef double r = sqrt(ax * ax + ay * ay + az * az)
    cdef double c = cos(r * dt)
    cdef double s
    if r * dt < 1e-8:
        s = dt * (1.0 - (r * dt) * (r * dt) / 6.0)
    else:
        s = sin(r * dt) / r
    u[0] = c - 1j * s * az
    u[1] = -1j * s * ax - s * ay
    u[2] = -1j * s * ax + s * ay
    u[3] = c + 1j * s * az


cdef inline void _mul2(const cplx* a, const cplx* b, cplx* out) noexcept nogil:
    cdef cplx o0 = a[0] * b[0] + a[1] * b[2]
    cdef cplx o1 = a[0] * b[1] + a[1] * b[3]
    cdef cplx o2 = a[2] * b[0] + a[3] * b[2]
    cdef cplx o3 = a[2] * b[1] + a[3] * b[3]
    out[0] = o0
    out[1] = o1
    out[2] = o2
    out[3] = o3


cdef inline cplx _conj(cplx z) noexcept nogil:
    return z.real - 1j * z.imag


def chain_forward(double[:, ::1] fx, double[:, ::1] fy, double omega, double dt):
    cdef Py_ssize_t B = fx.shape[0], M = fx.shape[1], b, k
    steps_arr = np.empty((B, M, 2, 2), dtype=np.complex128)
    total_arr = np.empty((B, 2, 2), dtype=np.complex128)
    cdef cplx[:, :, :, ::1] steps = steps_arr
    cdef cplx[:, :, ::1] total = total_arr
    cdef cplx acc[4]
    cdef cplx u[4]
    with nogil:
        for b in range(B):
            acc[0] = 1.0
            acc[1] = 0.0
            acc[2] = 0.0
            acc[3] = 1.0
            for k in range(M):
                _step_unitary(0.5 * fx[b, k], 0.5 * fy[b, k], 0.5 * omega, dt, u)
                steps[b, k, 0, 0] = u[0]
                steps[b, k, 0, 1] = u[1]
                steps[b, k, 1, 0] = u[2]
                steps[b, k, 1, 1] = u[3]
                _mul2(u, acc, acc)
            total[b, 0, 0] = acc[0]
            total[b, 0, 1] = acc[1]
            total[b, 1, 0] = acc[2]
            total[b, 1, 1] = acc[3]
    return steps_arr, total_arr


def chain_vjp(double[:, ::1] fx, double[:, ::1] fy, double omega, double dt,
              cplx[:, :, :, ::1] steps, cplx[:, :, ::1] ubar):
    cdef Py_ssize_t B = fx.shape[0], M = fx.shape[1], b, k, j
    gx_arr = np.zeros((B, M), dtype=np.float64)
    gy_arr = np.zeros((B, M), dtype=np.float64)
    pre_arr = np.empty((M, 4), dtype=np.complex128)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gy = gy_arr
    cdef cplx[:, ::1] pre = pre_arr
    cdef cplx acc[4]
    cdef cplx a[4]
    cdef cplx w[4]
    cdef cplx u[4]
    cdef cplx ph[4]
    cdef cplx wI, wx, wy, wz, adotw
    cdef double ax, ay, az, r, s, g, rdt
    with nogil:
        for b in range(B):
            acc[0] = 1.0
            acc[1] = 0.0
            acc[2] = 0.0
            acc[3] = 1.0
            for k in range(M):
                for j in range(4):
                    pre[k, j] = acc[j]
                u[0] = steps[b, k, 0, 0]
                u[1] = steps[b, k, 0, 1]
                u[2] = steps[b, k, 1, 0]
                u[3] = steps[b, k, 1, 1]
                _mul2(u, acc, acc)
            a[0] = ubar[b, 0, 0]
            a[1] = ubar[b, 0, 1]
            a[2] = ubar[b, 1, 0]
            a[3] = ubar[b, 1, 1]
            for k in range(M - 1, -1, -1):
                # prefix dagger
                ph[0] = _conj(pre[k, 0])
                ph[1] = _conj(pre[k, 2])
                ph[2] = _conj(pre[k, 1])
                ph[3] = _conj(pre[k, 3])
                _mul2(a, ph, w)
                wI = _conj(w[0]) + _conj(w[3])
                wx = _conj(w[1]) + _conj(w[2])
                wy = -1j * _conj(w[1]) + 1j * _conj(w[2])
                wz = _conj(w[0]) - _conj(w[3])
                ax = 0.5 * fx[b, k]
                ay = 0.5 * fy[b, k]
                az = 0.5 * omega
                r = sqrt(ax * ax + ay * ay + az * az)
                rdt = r * dt
                if rdt < 1e-4:
                    s = dt * (1.0 - rdt * rdt / 6.0)
                    g = -dt * dt * dt / 3.0 + r * r * dt * dt * dt * dt * dt / 30.0
                else:
                    s = sin(rdt) / r
                    g = (rdt * cos(rdt) - sin(rdt)) / (r * r * r)
                adotw = ax * wx + ay * wy + az * wz
                gx[b, k] = 0.5 * (-dt * s * ax * wI - 1j * g * ax * adotw - 1j * s * wx).real
                gy[b, k] = 0.5 * (-dt * s * ay * wI - 1j * g * ay * adotw - 1j * s * wy).real
                # a <- U_k^dagger a
                u[0] = _conj(steps[b, k, 0, 0])
                u[1] = _conj(steps[b, k, 1, 0])
                u[2] = _conj(steps[b, k, 0, 1])
                u[3] = _conj(steps[b, k, 1, 1])
                _mul2(u, a, a)
    return gx_arr, gy_arr


def _csr(mats, double tol=0.0):
    """Union sparsity pattern of a list of dense (d, d) matrices as CSR pieces."""
    mask = np.zeros(mats[0].shape, dtype=bool)
    for m in mats:
        mask |= np.abs(m) > tol
    rows, cols = np.nonzero(mask)
    indptr = np.zeros(mask.shape[0] + 1, dtype=np.intp)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr).astype(np.intp)
    vals = [np.ascontiguousarray(m[rows, cols], dtype=np.complex128) for m in mats]
    return indptr, np.ascontiguousarray(cols, dtype=np.intp), vals


cdef void _rhs(Py_ssize_t d, const Py_ssize_t* hp, const Py_ssize_t* hi, const cplx* hv,
               Py_ssize_t nj, const Py_ssize_t* lp, const Py_ssize_t* li, const cplx* lv,
               const Py_ssize_t* loff, const cplx* rho, cplx* out, cplx* tmp) noexcept nogil:
    cdef Py_ssize_t a, c, p, q, n, j, off
    cdef cplx v
    for p in range(d * d):
        out[p] = 0.0
    # -i Heff rho + i rho Heff^dagger
    for a in range(d):
        for n in range(hp[a], hp[a + 1]):
            c = hi[n]
            v = hv[n]
            for q in range(d):
                out[a * d + q] = out[a * d + q] - 1j * v * rho[c * d + q]
            v = 1j * _conj(v)
            for p in range(d):
                out[p * d + a] = out[p * d + a] + v * rho[p * d + c]
    # L rho L^dagger
    for j in range(nj):
        off = loff[j]
        for p in range(d * d):
            tmp[p] = 0.0
        for a in range(d):
            for n in range(lp[j * (d + 1) + a], lp[j * (d + 1) + a + 1]):
                c = li[off + n]
                v = lv[off + n]
                for q in range(d):
                    tmp[a * d + q] = tmp[a * d + q] + v * rho[c * d + q]
        for a in range(d):
            for n in range(lp[j * (d + 1) + a], lp[j * (d + 1) + a + 1]):
                c = li[off + n]
                v = _conj(lv[off + n])
                for p in range(d):
                    out[p * d + a] = out[p * d + a] + v * tmp[p * d + c]


def lindblad_rk4(heff0, hx, hy, double[:, ::1] fx, double[:, ::1] fy, jumps,
                 rho0, double dt, int substeps, bint store):
    cdef Py_ssize_t B = fx.shape[0], M = fx.shape[1]
    cdef Py_ssize_t K = rho0.shape[1], d = rho0.shape[2]
    cdef Py_ssize_t b, kk, st, s, p, j, n, nnz
    hptr_np, hidx_np, (h0v_np, hxv_np, hyv_np) = _csr([heff0, hx, hy])
    cdef Py_ssize_t[::1] hptr = hptr_np
    cdef Py_ssize_t[::1] hidx = hidx_np
    cdef cplx[::1] h0v = h0v_np
    cdef cplx[::1] hxv = hxv_np
    cdef cplx[::1] hyv = hyv_np
    nnz = h0v.shape[0]
    hval_np = np.zeros(max(nnz, 1), dtype=np.complex128)
    cdef cplx[::1] hval = hval_np

    nj = len(jumps)
    lp_np = np.zeros(max(nj, 1) * (d + 1), dtype=np.intp)
    loff_np = np.zeros(max(nj, 1), dtype=np.intp)
    li_parts, lv_parts = [], []
    total = 0
    for j in range(nj):
        ptr, idx, (vals,) = _csr([np.asarray(jumps[j], dtype=np.complex128)])
        lp_np[j * (d + 1):(j + 1) * (d + 1)] = ptr
        loff_np[j] = total
        total += len(idx)
        li_parts.append(idx)
        lv_parts.append(vals)
    li_np = np.concatenate(li_parts) if li_parts else np.zeros(1, dtype=np.intp)
    lv_np = np.concatenate(lv_parts) if lv_parts else np.zeros(1, dtype=np.complex128)
    if li_np.size == 0:
        li_np = np.zeros(1, dtype=np.intp)
        lv_np = np.zeros(1, dtype=np.complex128)
    cdef Py_ssize_t[::1] lp = np.ascontiguousarray(lp_np, dtype=np.intp)
    cdef Py_ssize_t[::1] loff = np.ascontiguousarray(loff_np, dtype=np.intp)
    cdef Py_ssize_t[::1] li = np.ascontiguousarray(li_np, dtype=np.intp)
    cdef cplx[::1] lv = np.ascontiguousarray(lv_np, dtype=np.complex128)
    cdef Py_ssize_t njc = nj

    out_np = np.array(rho0, dtype=np.complex128, order="C", copy=True)
    cdef cplx[:, :, :, ::1] rho = out_np
    traj_np = None
    cdef cplx[:, :, :, :, ::1] traj
    if store:
        traj_np = np.empty((B, K, M + 1, d, d), dtype=np.complex128)
        traj = traj_np
        traj_np[:, :, 0] = out_np

    work_np = np.zeros((7, d * d), dtype=np.complex128)
    cdef cplx[:, ::1] work = work_np
    cdef cplx* k1 = &work[1, 0]
    cdef cplx* k2 = &work[2, 0]
    cdef cplx* k3 = &work[3, 0]
    cdef cplx* k4 = &work[4, 0]
    cdef cplx* stage = &work[5, 0]
    cdef cplx* tmp = &work[6, 0]
    cdef double h = dt / substeps
    cdef double fxv, fyv
    cdef cplx* r
    with nogil:
        for b in range(B):
            for kk in range(M):
                fxv = fx[b, kk]
                fyv = fy[b, kk]
                for n in range(nnz):
                    hval[n] = h0v[n] + fxv * hxv[n] + fyv * hyv[n]
                for s in range(K):
                    r = &rho[b, s, 0, 0]
                    for st in range(substeps):
                        _rhs(d, &hptr[0], &hidx[0], &hval[0], njc, &lp[0], &li[0], &lv[0], &loff[0], r, k1, tmp)
                        for p in range(d * d):
                            stage[p] = r[p] + 0.5 * h * k1[p]
                        _rhs(d, &hptr[0], &hidx[0], &hval[0], njc, &lp[0], &li[0], &lv[0], &loff[0], stage, k2, tmp)
                        for p in range(d * d):
                            stage[p] = r[p] + 0.5 * h * k2[p]
                        _rhs(d, &hptr[0], &hidx[0], &hval[0], njc, &lp[0], &li[0], &lv[0], &loff[0], stage, k3, tmp)
                        for p in range(d * d):
                            stage[p] = r[p] + h * k3[p]
                        _rhs(d, &hptr[0], &hidx[0], &hval[0], njc, &lp[0], &li[0], &lv[0], &loff[0], stage, k4, tmp)
                        for p in range(d * d):
                            r[p] = r[p] + (h / 6.0) * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p])
                    if store:
                        for p in range(d * d):
                            traj[b, s, kk + 1, p // d, p % d] = r[p]
    return out_np, traj_np
