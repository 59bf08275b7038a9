"""Pure-numpy kernels: free-run simulation with forward sensitivities.

These are the reference implementations of the routines in ``_ckernels``.
They accept any prior exposing ``state``, ``output``, ``state_jac`` and
``output_jac``; the compiled versions only handle the linear prior.
"""
import numpy as np


def net_size(n_n, n_x, n_u, d_out):
    return n_n * (n_x + n_u) + n_n + d_out * n_n + d_out + d_out * n_x + d_out * n_u


def _unpack(theta, n_n, n_x, n_u, d):
    n_in = n_x + n_u
    i = 0
    W_in = theta[i:i + n_n * n_in].reshape(n_n, n_in); i += n_n * n_in
    b_h = theta[i:i + n_n]; i += n_n
    W_out = theta[i:i + d * n_n].reshape(d, n_n); i += d * n_n
    b_out = theta[i:i + d]; i += d
    A_lin = theta[i:i + d * n_x].reshape(d, n_x); i += d * n_x
    B_lin = theta[i:i + d * n_u].reshape(d, n_u)
    return W_in, b_h, W_out, b_out, A_lin, B_lin


def _net_eval(parts, x, u, derivs):
    W_in, b_h, W_out, b_out, A_lin, B_lin = parts
    n_x = x.shape[0]
    d = W_out.shape[0]
    inp = np.concatenate((x, u))
    z = W_in @ inp + b_h
    with np.errstate(over="ignore", invalid="ignore"):  # caller flags non-finite steps
        a = np.exp(-z * z)
    out = A_lin @ x + B_lin @ u + W_out @ a + b_out
    if not derivs:
        return out, None, None
    da = -2.0 * z * a
    wda = W_out * da  # (d, n_n)
    jac_x = A_lin + wda @ W_in[:, :n_x]
    eye = np.eye(d)
    direct = np.concatenate((
        (wda[:, :, None] * inp[None, None, :]).reshape(d, -1),
        wda,
        np.kron(eye, a),
        eye,
        np.kron(eye, x),
        np.kron(eye, u),
    ), axis=1)
    return out, jac_x, direct


def propagate(prior, theta_f, n_n_f, theta_g, n_n_g, u, x0, sens=False):
    """Simulate the augmented model over ``u`` starting from ``x0``.

    Returns
    -------
    dict
        ``xs`` (N, n_x), ``ys`` (N, n_y), ``fv`` (N, n_x) completion values,
        ``gv`` (N, n_y), ``bad`` (first non-finite step or -1) and, when
        ``sens`` is true, total derivatives ``dY``, ``dF``, ``dG`` of
        outputs and completion values with respect to the flat parameter
        vector, each shaped (N, dim, P).
    """
    u = np.asarray(u, dtype=float)
    N, n_u = u.shape
    n_x = prior.n_x
    n_y = prior.n_y
    fparts = _unpack(theta_f, n_n_f, n_x, n_u, n_x)
    has_g = theta_g is not None and len(theta_g) > 0
    gparts = _unpack(theta_g, n_n_g, n_x, n_u, n_y) if has_g else None
    P_f = len(theta_f)
    P = P_f + (len(theta_g) if has_g else 0)

    xs = np.zeros((N, n_x))
    ys = np.zeros((N, n_y))
    fv = np.zeros((N, n_x))
    gv = np.zeros((N, n_y))
    res = {"xs": xs, "ys": ys, "fv": fv, "gv": gv, "bad": -1}
    if sens:
        dY = np.zeros((N, n_y, P))
        dF = np.zeros((N, n_x, P))
        dG = np.zeros((N, n_y, P))
        res.update(dY=dY, dF=dF, dG=dG)
        S = np.zeros((n_x, P))

    x = np.array(x0, dtype=float)
    for k in range(N):
        uk = u[k]
        if not np.all(np.isfinite(x)):
            res["bad"] = k
            return res
        xs[k] = x
        f_out, f_jx, f_dir = _net_eval(fparts, x, uk, sens)
        fv[k] = f_out
        y = prior.output(x, uk)
        if has_g:
            g_out, g_jx, g_dir = _net_eval(gparts, x, uk, sens)
            gv[k] = g_out
            y = y + g_out
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(f_out)):
            res["bad"] = k
            return res
        ys[k] = y
        if sens:
            dF[k] = f_jx @ S
            dF[k, :, :P_f] += f_dir
            cx = prior.output_jac(x, uk)
            if has_g:
                dG[k] = g_jx @ S
                dG[k, :, P_f:] += g_dir
                dY[k] = (cx + g_jx) @ S
                dY[k, :, P_f:] += g_dir
            else:
                dY[k] = cx @ S
            S_next = (prior.state_jac(x, uk) + f_jx) @ S
            S_next[:, :P_f] += f_dir
            S = S_next
        x = prior.state(x, uk) + f_out
    return res


def kernel_sums(train_z, reg_z, sigma):
    """``sum_k exp(-||train_z[k] - reg_z[j]||^2 / (2 sigma^2))`` for each j."""
    train_z = np.asarray(train_z, dtype=float)
    reg_z = np.asarray(reg_z, dtype=float)
    out = np.empty(reg_z.shape[0])
    scale = 1.0 / (2.0 * sigma * sigma)
    # chunked to bound memory; summation order over k is fixed per j
    step = 256
    for s in range(0, reg_z.shape[0], step):
        diff = reg_z[s:s + step, None, :] - train_z[None, :, :]
        d2 = np.einsum("jkc,jkc->jk", diff, diff)
        out[s:s + step] = np.exp(-d2 * scale).sum(axis=1)
    return out
