"""Training objectives: simulation error, output-level physics penalty and
the kernel-weighted function-level penalty.

Every cost also has a least-squares form (:func:`residuals`) whose squared
norm equals :func:`total_cost`; the optimizer works on that form.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from .core import Signal, as_signal, propagate, simulate
from .errors import ConfigurationError, SimulationDivergence

MODES = ("baseline", "classical", "wpgnn")


@dataclass(frozen=True)
class Dataset:
    u: Signal
    y: Signal

    def __post_init__(self):
        object.__setattr__(self, "u", as_signal(self.u))
        object.__setattr__(self, "y", as_signal(self.y))
        if len(self.u) != len(self.y):
            raise ConfigurationError(f"u has {len(self.u)} samples but y has {len(self.y)}")

    @property
    def N(self):
        return len(self.u)


@dataclass(frozen=True)
class RegSet:
    """Regularization inputs and, for the classical penalty, prior outputs."""

    u_bar: Signal
    y_tilde_bar: Optional[Signal] = None

    def __post_init__(self):
        object.__setattr__(self, "u_bar", as_signal(self.u_bar))
        if self.y_tilde_bar is not None:
            object.__setattr__(self, "y_tilde_bar", as_signal(self.y_tilde_bar))
            if len(self.y_tilde_bar) != len(self.u_bar):
                raise ConfigurationError("y_tilde_bar must have the same length as u_bar")

    @property
    def N(self):
        return len(self.u_bar)

    @classmethod
    def from_prior(cls, prior, u_bar, x0=None):
        """Attach the noise-free prior response to ``u_bar``."""
        return cls(u_bar, simulate(prior, u_bar, x0)[1])


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 1e-3
    gamma_x: float = 1e-4
    gamma_y: float = 1e-4
    sigma: float = math.sqrt(1e-3)
    epsilon: float = 0.1

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ConfigurationError("gamma must be >= 0")
        if not (self.gamma_x >= 0 and self.gamma_y >= 0):
            raise ConfigurationError("gamma_x and gamma_y must be >= 0")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be > 0")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be > 0")


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float).reshape(-1)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ConfigurationError("weights must be finite and nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.shape[0]


def _pairs(p):
    if isinstance(p, np.ndarray) and p.ndim == 2:
        return np.ascontiguousarray(p, dtype=float)
    rows = [np.concatenate((np.atleast_1d(x), np.atleast_1d(u))) for x, u in p]
    return np.ascontiguousarray(np.array(rows, dtype=float).reshape(len(rows), -1))


def kernel_weights(train_pairs, reg_pairs, sigma, epsilon, scale=None):
    """Inverse kernel density of each regularization pair w.r.t. training pairs.

    ``w_j = 1 / (sum_k exp(-||z_k - zbar_j||^2 / (2 sigma^2)) + epsilon)``.
    Pairs are given either as (M, n_x + n_u) arrays or as sequences of
    ``(x, u)`` tuples. ``scale`` optionally divides each coordinate before
    the distance is taken (off by default).
    """
    if not sigma > 0:
        raise ConfigurationError("sigma must be > 0")
    if not epsilon > 0:
        raise ConfigurationError("epsilon must be > 0")
    zt = _pairs(train_pairs)
    zr = _pairs(reg_pairs)
    if zt.shape[0] and zt.shape[1] != zr.shape[1]:
        raise ConfigurationError("training and regularization pairs differ in dimension")
    if scale is not None:
        scale = np.asarray(scale, dtype=float)
        zt = np.ascontiguousarray(zt / scale)
        zr = np.ascontiguousarray(zr / scale)
    if zt.shape[0] == 0:
        sums = np.zeros(zr.shape[0])
    else:
        sums = _backend.kernel_sums(zt, zr, sigma)
    return WeightVector(1.0 / (sums + epsilon))


def _sim_or_none(m, u, x0, sens=False):
    res = propagate(m, u, x0, sens)
    return None if res["bad"] >= 0 else res


def model_weights(m, d, reg, hp, x0=None):
    """Kernel weights from the model's own trajectories under ``d.u`` and ``reg.u_bar``.

    Raises SimulationDivergence if either trajectory diverges.
    """
    tr = propagate(m, d.u, x0)
    rg = propagate(m, reg.u_bar, x0)
    for r in (tr, rg):
        if r["bad"] >= 0:
            raise SimulationDivergence(r["bad"])
    return _weights_from(tr, rg, d, reg, hp)


def _weights_from(tr, rg, d, reg, hp):
    zt = np.hstack((tr["xs"], d.u.values))
    zr = np.hstack((rg["xs"], reg.u_bar.values))
    return kernel_weights(zt, zr, hp.sigma, hp.epsilon)


def v_data(m, d, x0=None):
    """Mean squared simulation error; ``inf`` if the simulation diverges."""
    res = _sim_or_none(m, d.u, x0)
    if res is None:
        return math.inf
    e = d.y.values - res["ys"]
    return float(np.sum(e * e) / d.N)


def v_phy_classical(m, prior, reg, x0=None):
    """Mean squared difference between prior and model outputs under ``u_bar``."""
    y_ref = reg.y_tilde_bar.values if reg.y_tilde_bar is not None \
        else simulate(prior, reg.u_bar, x0)[1].values
    res = _sim_or_none(m, reg.u_bar, x0)
    if res is None:
        return math.inf
    e = y_ref - res["ys"]
    return float(np.sum(e * e) / reg.N)


def v_reg_weighted(m, reg, w, hp, x0=None):
    """Weighted state- and output-completion magnitude along the model's own
    trajectory under ``u_bar``."""
    w = w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    if w.shape[0] != reg.N:
        raise ConfigurationError(f"weight vector has length {w.shape[0]}, expected {reg.N}")
    res = _sim_or_none(m, reg.u_bar, x0)
    if res is None:
        return math.inf
    ex = np.sum(res["fv"] ** 2, axis=1)
    ey = np.sum(res["gv"] ** 2, axis=1) if m.g_net is not None else 0.0
    return float(np.sum(w * (hp.gamma_x * ex + hp.gamma_y * ey)) / reg.N)


def _check_mode(mode, reg):
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode != "baseline" and reg is None:
        raise ConfigurationError(f"mode {mode!r} requires a regularization set")


def total_cost(mode, m, d, reg=None, hp=None, x0=None, weights=None):
    """Objective value for ``mode``; ``inf`` on divergence.

    In ``wpgnn`` mode the weights come from the model's current trajectories
    unless ``weights`` is given.
    """
    _check_mode(mode, reg)
    hp = hp or Hyperparams()
    vd = v_data(m, d, x0)
    if mode == "baseline" or not math.isfinite(vd):
        return vd
    if mode == "classical":
        if hp.gamma == 0:
            return vd
        return vd + hp.gamma * v_phy_classical(m, m.prior, reg, x0)
    if weights is None:
        try:
            weights = model_weights(m, d, reg, hp, x0)
        except SimulationDivergence:
            return math.inf
    return vd + v_reg_weighted(m, reg, weights, hp, x0)


def residual_length(mode, m, d, reg=None):
    n = d.N * m.prior.n_y
    if mode == "classical":
        n += reg.N * m.prior.n_y
    elif mode == "wpgnn":
        n += reg.N * m.prior.n_x
        if m.g_net is not None:
            n += reg.N * m.prior.n_y
    return n


def evaluate(mode, m, d, reg=None, hp=None, x0=None, weights=None, jac=False):
    """Stacked residual vector and, optionally, its Jacobian.

    Returns ``(R, J, weights)``. ``J`` is None unless ``jac``. Weights are
    treated as constants in the Jacobian. On divergence ``R`` is filled with
    ``inf`` (and ``J`` is None).
    """
    _check_mode(mode, reg)
    hp = hp or Hyperparams()
    n_res = residual_length(mode, m, d, reg)

    def diverged():
        return np.full(n_res, np.inf), None, weights

    tr = _sim_or_none(m, d.u, x0, jac)
    if tr is None:
        return diverged()
    sN = 1.0 / math.sqrt(d.N)
    R = [((d.y.values - tr["ys"]) * sN).ravel()]
    J = [(-tr["dY"] * sN).reshape(-1, m.n_params)] if jac else None

    if mode == "classical":
        y_ref = reg.y_tilde_bar.values if reg.y_tilde_bar is not None \
            else simulate(m.prior, reg.u_bar, x0)[1].values
        rg = _sim_or_none(m, reg.u_bar, x0, jac)
        if rg is None:
            return diverged()
        s = math.sqrt(hp.gamma / reg.N)
        R.append(((y_ref - rg["ys"]) * s).ravel())
        if jac:
            J.append((-rg["dY"] * s).reshape(-1, m.n_params))
    elif mode == "wpgnn":
        rg = _sim_or_none(m, reg.u_bar, x0, jac)
        if rg is None:
            return diverged()
        if weights is None:
            weights = _weights_from(tr, rg, d, reg, hp)
        w = weights.w if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
        if w.shape[0] != reg.N:
            raise ConfigurationError(f"weight vector has length {w.shape[0]}, expected {reg.N}")
        sx = np.sqrt(w * hp.gamma_x / reg.N)
        R.append((rg["fv"] * sx[:, None]).ravel())
        if jac:
            J.append((rg["dF"] * sx[:, None, None]).reshape(-1, m.n_params))
        if m.g_net is not None:
            sy = np.sqrt(w * hp.gamma_y / reg.N)
            R.append((rg["gv"] * sy[:, None]).ravel())
            if jac:
                J.append((rg["dG"] * sy[:, None, None]).reshape(-1, m.n_params))
    R = np.concatenate(R)
    return R, (np.vstack(J) if jac else None), weights


def residuals(mode, m, d, reg=None, hp=None, x0=None, weights=None):
    """Residual vector ``R`` with ``||R||^2 == total_cost``.

    Order: data residuals ``(y - yhat)/sqrt(N)``; then either the classical
    output residuals scaled by ``sqrt(gamma/Nbar)``, or the weighted state
    completion values followed (if present) by the output completion values.
    """
    return evaluate(mode, m, d, reg, hp, x0, weights)[0]
