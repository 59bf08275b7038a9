"""Levenberg-Marquardt training of augmented models.

The Jacobian of the stacked residuals is obtained by propagating parameter
sensitivities forward through the simulated state recursion; a central
finite-difference Jacobian is provided as an independent check.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .core import flatten_params, unflatten_params
from .errors import ConfigurationError, SimulationDivergence
from .objectives import Hyperparams, evaluate, total_cost

log = logging.getLogger(__name__)

TERMINATION_REASONS = ("converged_cost", "converged_step", "max_iters", "diverged")


@dataclass(frozen=True)
class LMConfig:
    lambda0: float = 1e-2
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    max_iters: int = 500
    cost_tol: float = 5e-3
    cost_window: int = 25
    step_tol: float = 1e-10
    max_lambda: float = 1e12
    damping: str = "marquardt"
    scale_floor: float = 1e-4

    def __post_init__(self):
        if not (self.lambda0 > 0 and self.lambda_up > 1 and 0 < self.lambda_down < 1):
            raise ConfigurationError("need lambda0 > 0, lambda_up > 1, 0 < lambda_down < 1")
        if self.max_iters < 1 or self.cost_window < 1:
            raise ConfigurationError("max_iters and cost_window must be >= 1")
        if not (self.cost_tol > 0 and self.step_tol > 0 and self.max_lambda > 0):
            raise ConfigurationError("tolerances and max_lambda must be positive")
        if not 0 <= self.scale_floor < 1:
            raise ConfigurationError("scale_floor must lie in [0, 1)")
        if self.damping not in ("marquardt", "levenberg"):
            raise ConfigurationError("damping must be 'marquardt' or 'levenberg'")


@dataclass
class TrainReport:
    theta_final: object
    cost_history: list = field(default_factory=list)
    iterations: int = 0
    termination_reason: str = "max_iters"


def jacobian_fd(residual_fn, theta, h=1e-6):
    """Central-difference Jacobian of ``residual_fn`` at ``theta``."""
    if not h > 0:
        raise ConfigurationError("finite-difference step must be positive")
    theta = np.asarray(theta, dtype=float)
    cols = []
    for p in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[p] = h
        rp = np.asarray(residual_fn(theta + e), dtype=float)
        rm = np.asarray(residual_fn(theta - e), dtype=float)
        if not (np.all(np.isfinite(rp)) and np.all(np.isfinite(rm))):
            raise SimulationDivergence(-1, f"non-finite residual probing parameter {p}")
        cols.append((rp - rm) / (2 * h))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def jacobian_bptt(mode, m, d, reg=None, hp=None, x0=None, weights=None):
    """Exact Jacobian of :func:`~wpgnn.objectives.residuals` w.r.t. the flat
    parameters, kernel weights held fixed."""
    R, J, _ = evaluate(mode, m, d, reg, hp, x0, weights, jac=True)
    if J is None:
        raise SimulationDivergence(-1, "model diverged while computing the Jacobian")
    return J


def lm_step(theta, R, J, lam, damping="marquardt", scale=None):
    """Damped Gauss-Newton step.

    Solves ``(J'J + lam * diag(J'J)) delta = -J'R``; diagonal entries that
    are zero are damped with ``lam`` instead. ``scale`` replaces
    ``diag(J'J)`` (the optimizer passes its running maximum);
    ``damping="levenberg"`` uses ``lam * I``. Returns the candidate
    parameters and the cost predicted by the linearization.
    """
    theta = np.asarray(theta, dtype=float)
    R = np.asarray(R, dtype=float)
    J = np.asarray(J, dtype=float)
    H = J.T @ J
    g = J.T @ R
    if damping == "levenberg":
        diag = np.ones(H.shape[0])
    else:
        diag = np.diag(H).copy() if scale is None else np.array(scale, dtype=float)
        diag[diag <= 0] = 1.0
    A = H + lam * np.diag(diag)
    try:
        delta = -linalg.cho_solve(linalg.cho_factor(A), g)
    except linalg.LinAlgError:
        delta = -np.linalg.lstsq(A, g, rcond=None)[0]
    pred = R + J @ delta
    return theta + delta, float(pred @ pred)


def train(mode, m0, d, reg=None, hp=None, lm=None, x0=None, callback=None):
    """Minimize the ``mode`` objective from ``m0``; returns ``(model, TrainReport)``.

    Every iteration linearizes at the current parameters (for ``wpgnn``
    the kernel weights are recomputed from the current trajectories and
    held fixed in the Jacobian) and increases the damping until a step
    lowers :func:`~wpgnn.objectives.total_cost`. The accepted-cost history
    is therefore non-increasing. Running out of damping (``max_lambda``)
    is reported as ``converged_step``: no step of any length improves.

    ``converged_cost`` fires once the cost has dropped by less than the
    fraction ``cost_tol`` over the last ``cost_window`` accepted steps.
    Damping uses the running maximum of the squared Jacobian column norms,
    floored at ``scale_floor`` times its largest entry, so that parameters
    whose columns momentarily vanish cannot take unbounded steps.
    """
    hp = hp or Hyperparams()
    lm = lm or LMConfig()
    theta = np.array(flatten_params(m0).theta)
    m = m0
    R, J, w = evaluate(mode, m, d, reg, hp, x0, jac=True)
    cost = float(R @ R)
    report = TrainReport(theta_final=flatten_params(m0))
    if J is None or not math.isfinite(cost):
        report.termination_reason = "diverged"
        return m0, report
    report.cost_history.append(cost)
    lam = lm.lambda0
    scale = np.zeros(theta.shape[0])

    for it in range(lm.max_iters):
        if not np.any(J.T @ R):
            report.termination_reason = "converged_step"
            break
        # running max keeps columns with momentarily tiny curvature damped
        scale = np.maximum(scale, np.einsum("ij,ij->j", J, J))
        scale = np.maximum(scale, lm.scale_floor * scale.max())
        while True:
            cand, _ = lm_step(theta, R, J, lam, lm.damping, scale)
            m_cand = unflatten_params(m, cand) if np.all(np.isfinite(cand)) else None
            c_cost = total_cost(mode, m_cand, d, reg, hp, x0) if m_cand is not None else math.inf
            if c_cost < cost:
                break
            lam *= lm.lambda_up
            if lam > lm.max_lambda:
                break
        if lam > lm.max_lambda:
            report.termination_reason = "converged_step"
            break
        step = cand - theta
        theta, m, cost = cand, m_cand, c_cost
        lam = max(lam * lm.lambda_down, 1e-15)
        report.cost_history.append(cost)
        report.iterations = it + 1
        if callback is not None:
            callback(it, cost, lam, m)
        hist = report.cost_history
        if len(hist) > lm.cost_window and (
                hist[-1 - lm.cost_window] - cost <= lm.cost_tol * cost):
            report.termination_reason = "converged_cost"
            break
        if np.max(np.abs(step)) < lm.step_tol:
            report.termination_reason = "converged_step"
            break
        R, J, w = evaluate(mode, m, d, reg, hp, x0, jac=True)
    else:
        report.termination_reason = "max_iters"

    report.theta_final = flatten_params(m)
    log.debug("train(%s): %d iterations, cost %.6g, %s", mode, report.iterations, cost,
              report.termination_reason)
    return m, report
