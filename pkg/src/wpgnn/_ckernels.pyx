# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the linear-prior augmented model.

Mirrors ``_pykernels.propagate`` and ``_pykernels.kernel_sums`` with the
prior given as matrices (A, B, C, D). Parameter layout per network:
W_in (row-major), b_hidden, W_out (row-major), b_out, A_lin, B_lin.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, isfinite

cnp.import_array()


cdef void _net_forward(const double[:] th, Py_ssize_t nn, Py_ssize_t nx, Py_ssize_t nu,
                       Py_ssize_t d, const double[:] inp, double[:] z, double[:] a,
                       double[:] da, double[:] out) noexcept nogil:
    cdef Py_ssize_t n_in = nx + nu
    cdef Py_ssize_t o_bh = nn * n_in
    cdef Py_ssize_t o_wo = o_bh + nn
    cdef Py_ssize_t o_bo = o_wo + d * nn
    cdef Py_ssize_t o_al = o_bo + d
    cdef Py_ssize_t o_bl = o_al + d * nx
    cdef Py_ssize_t i, c, r
    cdef double s
    for i in range(nn):
        s = th[o_bh + i]
        for c in range(n_in):
            s += th[i * n_in + c] * inp[c]
        z[i] = s
        a[i] = exp(-s * s)
        da[i] = -2.0 * s * a[i]
    for r in range(d):
        s = th[o_bo + r]
        for c in range(nx):
            s += th[o_al + r * nx + c] * inp[c]
        for c in range(nu):
            s += th[o_bl + r * nu + c] * inp[nx + c]
        for i in range(nn):
            s += th[o_wo + r * nn + i] * a[i]
        out[r] = s


cdef void _net_derivs(const double[:] th, Py_ssize_t nn, Py_ssize_t nx, Py_ssize_t nu,
                      Py_ssize_t d, const double[:] inp, const double[:] a,
                      const double[:] da, const double[:, :] S, Py_ssize_t col0,
                      double[:, :] dst) noexcept nogil:
    # dst[r, :] = (d out_r / d x) @ S + direct derivative (columns from col0)
    cdef Py_ssize_t n_in = nx + nu
    cdef Py_ssize_t o_bh = nn * n_in
    cdef Py_ssize_t o_wo = o_bh + nn
    cdef Py_ssize_t o_bo = o_wo + d * nn
    cdef Py_ssize_t o_al = o_bo + d
    cdef Py_ssize_t o_bl = o_al + d * nx
    cdef Py_ssize_t P = S.shape[1]
    cdef Py_ssize_t i, c, r, p
    cdef double jx, w
    for r in range(d):
        for p in range(P):
            dst[r, p] = 0.0
        for c in range(nx):
            jx = th[o_al + r * nx + c]
            for i in range(nn):
                jx += th[o_wo + r * nn + i] * da[i] * th[i * n_in + c]
            if jx != 0.0:
                for p in range(P):
                    dst[r, p] += jx * S[c, p]
        for i in range(nn):
            w = th[o_wo + r * nn + i] * da[i]
            for c in range(n_in):
                dst[r, col0 + i * n_in + c] += w * inp[c]
            dst[r, col0 + o_bh + i] += w
            dst[r, col0 + o_wo + r * nn + i] += a[i]
        dst[r, col0 + o_bo + r] += 1.0
        for c in range(nx):
            dst[r, col0 + o_al + r * nx + c] += inp[c]
        for c in range(nu):
            dst[r, col0 + o_bl + r * nu + c] += inp[nx + c]


def propagate_linear(const double[:, :] A, const double[:, :] B, const double[:, :] C,
                     const double[:, :] D, const double[:] theta_f, Py_ssize_t n_n_f,
                     const double[:] theta_g, Py_ssize_t n_n_g, const double[:, :] u,
                     const double[:] x0, bint sens=False):
    cdef Py_ssize_t N = u.shape[0]
    cdef Py_ssize_t nu = u.shape[1]
    cdef Py_ssize_t nx = A.shape[0]
    cdef Py_ssize_t ny = C.shape[0]
    cdef Py_ssize_t Pf = theta_f.shape[0]
    cdef bint has_g = theta_g.shape[0] > 0
    cdef Py_ssize_t P = Pf + theta_g.shape[0]
    cdef Py_ssize_t nmax = max(n_n_f, n_n_g, 1)

    xs_a = np.zeros((N, nx)); ys_a = np.zeros((N, ny))
    fv_a = np.zeros((N, nx)); gv_a = np.zeros((N, ny))
    cdef double[:, :] xs = xs_a
    cdef double[:, :] ys = ys_a
    cdef double[:, :] fv = fv_a
    cdef double[:, :] gv = gv_a
    res = {"xs": xs_a, "ys": ys_a, "fv": fv_a, "gv": gv_a, "bad": -1}

    cdef double[:, :, :] dY
    cdef double[:, :, :] dF
    cdef double[:, :, :] dG
    S_a = np.zeros((nx, P)); Sn_a = np.zeros((nx, P))
    cdef double[:, :] S = S_a
    cdef double[:, :] Sn = Sn_a
    if sens:
        dY_a = np.zeros((N, ny, P)); dF_a = np.zeros((N, nx, P)); dG_a = np.zeros((N, ny, P))
        dY = dY_a; dF = dF_a; dG = dG_a
        res.update(dY=dY_a, dF=dF_a, dG=dG_a)

    cdef double[:] x = np.array(x0, dtype=float)
    cdef double[:] xn = np.zeros(nx)
    cdef double[:] inp = np.zeros(nx + nu)
    cdef double[:] z = np.zeros(nmax)
    cdef double[:] a = np.zeros(nmax)
    cdef double[:] da = np.zeros(nmax)
    cdef double[:] fo = np.zeros(nx)
    cdef double[:] go = np.zeros(ny)
    cdef Py_ssize_t k, r, c, p
    cdef double s
    cdef bint ok

    with nogil:
        for k in range(N):
            ok = True
            for c in range(nx):
                if not isfinite(x[c]):
                    ok = False
            if not ok:
                with gil:
                    res["bad"] = k
                break
            for c in range(nx):
                xs[k, c] = x[c]
                inp[c] = x[c]
            for c in range(nu):
                inp[nx + c] = u[k, c]
            _net_forward(theta_f, n_n_f, nx, nu, nx, inp, z, a, da, fo)
            if sens:
                _net_derivs(theta_f, n_n_f, nx, nu, nx, inp, a, da, S, 0, dF[k])
            for r in range(nx):
                fv[k, r] = fo[r]
                if not isfinite(fo[r]):
                    ok = False
            if has_g:
                _net_forward(theta_g, n_n_g, nx, nu, ny, inp, z, a, da, go)
                if sens:
                    _net_derivs(theta_g, n_n_g, nx, nu, ny, inp, a, da, S, Pf, dG[k])
            for r in range(ny):
                s = 0.0
                for c in range(nx):
                    s += C[r, c] * x[c]
                for c in range(nu):
                    s += D[r, c] * u[k, c]
                if has_g:
                    gv[k, r] = go[r]
                    s += go[r]
                ys[k, r] = s
                if not isfinite(s):
                    ok = False
            if not ok:
                with gil:
                    res["bad"] = k
                break
            if sens:
                # dY = C S + dG ;  S_next = A S + dF
                for r in range(ny):
                    for p in range(P):
                        s = dG[k, r, p] if has_g else 0.0
                        for c in range(nx):
                            s += C[r, c] * S[c, p]
                        dY[k, r, p] = s
                for r in range(nx):
                    for p in range(P):
                        s = dF[k, r, p]
                        for c in range(nx):
                            s += A[r, c] * S[c, p]
                        Sn[r, p] = s
                for r in range(nx):
                    for p in range(P):
                        S[r, p] = Sn[r, p]
            for r in range(nx):
                s = fo[r]
                for c in range(nx):
                    s += A[r, c] * x[c]
                for c in range(nu):
                    s += B[r, c] * u[k, c]
                xn[r] = s
            for r in range(nx):
                x[r] = xn[r]
    return res


def kernel_sums(const double[:, :] train_z, const double[:, :] reg_z, double sigma):
    cdef Py_ssize_t Nt = train_z.shape[0]
    cdef Py_ssize_t Nr = reg_z.shape[0]
    cdef Py_ssize_t dim = train_z.shape[1]
    cdef double scale = 1.0 / (2.0 * sigma * sigma)
    out_a = np.empty(Nr)
    cdef double[:] out = out_a
    cdef Py_ssize_t j, k, c
    cdef double acc, d2, t
    with nogil:
        for j in range(Nr):
            acc = 0.0
            for k in range(Nt):
                d2 = 0.0
                for c in range(dim):
                    t = reg_z[j, c] - train_z[k, c]
                    d2 += t * t
                # exp underflows to exactly 0.0 below -745.2; skipping is bit-identical
                if d2 * scale < 746.0:
                    acc += exp(-d2 * scale)
            out[j] = acc
    return out_a
