"""SISO benchmark: linear prior with an unmodelled local nonlinearity.

True system::

    x(k+1) = a x(k) + b u(k) + delta(x(k)),   y0(k) = x(k)

with ``delta(x) = 0.2 (exp(-x^2/l^2) - exp(-(x-c)^2/l^2))``. All signal
formulas index time from k = 1.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import LinearPrior, Signal, as_signal, init_augmented, simulate
from .errors import ConfigurationError, SimulationDivergence
from .objectives import Dataset, Hyperparams, RegSet
from .optimizer import LMConfig, train

log = logging.getLogger(__name__)

METHODS = ("baseline", "classical", "wpgnn")
SIGNAL_KINDS = ("train", "reg", "test", "val_classical", "val_wpgnn")


@dataclass(frozen=True)
class SisoTruth:
    a: float = 0.8187
    b: float = 0.1813
    c: float = -0.3
    l: float = 0.2
    nonlinear: bool = True

    def delta(self, x):
        if not self.nonlinear:
            return np.zeros_like(np.asarray(x, dtype=float))
        return delta(x, self.c, self.l)

    def prior(self):
        return LinearPrior.scalar(self.a, self.b)


def delta(x, c=-0.3, l=0.2):
    """Local bump-pair nonlinearity; antisymmetric about ``c/2``."""
    x = np.asarray(x, dtype=float)
    return 0.2 * (np.exp(-(x / l) ** 2) - np.exp(-((x - c) / l) ** 2))


@dataclass(frozen=True)
class ExperimentConfig:
    n_train: int = 200
    n_reg: int = 1000
    n_test: int = 500
    n_val: int = 500
    snr_db: float = 40.0
    n_neurons: int = 20
    hp: Hyperparams = field(default_factory=Hyperparams)
    noise_seed: int = 0
    test_noise_seed: int = 1
    reg_seed: int = 2
    init_seed: int = 0
    n_runs: int = 10
    output_completion: bool = False
    lm: LMConfig = field(default_factory=LMConfig)
    x0: float = 0.0
    truth: SisoTruth = field(default_factory=SisoTruth)

    def __post_init__(self):
        for name in ("n_train", "n_reg", "n_test", "n_val", "n_neurons", "n_runs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.n_reg % 2:
            raise ConfigurationError("n_reg must be even (two equal segments)")


@dataclass(frozen=True)
class MetricsRow:
    method: str
    rmse_train_mean: float
    rmse_train_std: float
    rmse_test_mean: float
    rmse_test_std: float
    runs: int
    converged: int = 0
    diverged: int = 0


def gen_signal(kind, cfg=None):
    """Input signal ``kind`` for the benchmark; the reg signal is seeded by
    ``cfg.reg_seed``."""
    cfg = cfg or ExperimentConfig()
    if kind == "train":
        k = np.arange(1, cfg.n_train + 1)
        u = np.sin(0.15 * k) - 0.2
    elif kind == "reg":
        half = cfg.n_reg // 2
        k = np.arange(1, half + 1)
        rng = np.random.default_rng(cfg.reg_seed)
        seg2 = (8.0 + (2.0 / half) * k) * rng.standard_normal(half)
        u = np.concatenate((8.0 * np.sin(0.2 * k), seg2))
    elif kind == "test":
        k = np.arange(1, cfg.n_test + 1)
        u = np.sin(0.01 * k + 0.5) + np.sin(0.02 * k - 0.1) - 2.0 * np.sin(0.03 * k + 0.2)
    elif kind == "val_classical":
        k = np.arange(1, cfg.n_val + 1)
        u = 1.08 * np.sin(0.15 * k) - 0.2
    elif kind == "val_wpgnn":
        k = np.arange(1, cfg.n_val + 1)
        u = np.sin(0.15 * k) - 0.2
    else:
        raise ConfigurationError(f"unknown signal kind {kind!r}; expected one of {SIGNAL_KINDS}")
    return Signal(u)


def simulate_truth(u, x0=0.0, snr_db=40.0, rng=None, truth=None):
    """Simulate the true system and add white Gaussian output noise.

    Noise variance is ``mean(y0**2) / 10**(snr_db/10)``; ``snr_db=inf``
    disables noise. ``rng`` is a seed or a ``numpy.random.Generator``.
    """
    truth = truth or SisoTruth()
    uv = as_signal(u).values[:, 0]
    x = np.empty(uv.shape[0])
    xk = float(x0)
    for k, uk in enumerate(uv):
        x[k] = xk
        xk = truth.a * xk + truth.b * uk + float(truth.delta(xk))
    y0 = x.copy()
    if math.isinf(snr_db) and snr_db > 0:
        return Dataset(uv, y0)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    var = np.mean(y0 ** 2) / 10.0 ** (snr_db / 10.0)
    return Dataset(uv, y0 + math.sqrt(var) * rng.standard_normal(y0.shape[0]))


def rmse(y, yhat):
    y = np.asarray(y.values if isinstance(y, Signal) else y, dtype=float).reshape(len(y), -1)
    yhat = np.asarray(yhat.values if isinstance(yhat, Signal) else yhat, dtype=float)
    yhat = yhat.reshape(len(yhat), -1)
    if y.shape != yhat.shape:
        raise ConfigurationError(f"rmse: shape mismatch {y.shape} vs {yhat.shape}")
    e = y - yhat
    return float(math.sqrt(np.sum(e * e) / y.shape[0]))


@dataclass(frozen=True)
class BenchmarkData:
    train: Dataset
    reg: RegSet
    test: Dataset
    val_classical: Dataset
    val_wpgnn: Dataset


def make_data(cfg=None):
    """All datasets for one noise realization. Validation outputs are noise-free."""
    cfg = cfg or ExperimentConfig()
    truth = cfg.truth
    train_d = simulate_truth(gen_signal("train", cfg), cfg.x0, cfg.snr_db, cfg.noise_seed, truth)
    test_d = simulate_truth(gen_signal("test", cfg), cfg.x0, cfg.snr_db, cfg.test_noise_seed, truth)
    reg = RegSet.from_prior(truth.prior(), gen_signal("reg", cfg), [cfg.x0])
    vc = simulate_truth(gen_signal("val_classical", cfg), cfg.x0, math.inf, truth=truth)
    vw = simulate_truth(gen_signal("val_wpgnn", cfg), cfg.x0, math.inf, truth=truth)
    return BenchmarkData(train_d, reg, test_d, vc, vw)


@dataclass
class RunResult:
    method: str
    seed: int
    model: object
    report: object
    rmse_train: float
    rmse_test: float

    @property
    def diverged(self):
        return self.report.termination_reason == "diverged" or not math.isfinite(self.rmse_test)


def _eval_rmse(model, ds, x0):
    try:
        return rmse(ds.y, simulate(model, ds.u, [x0])[1])
    except SimulationDivergence:
        return math.inf


def run_experiment(method, cfg=None, seed=None, data=None):
    """Train one model with ``method`` and score it on the train and test sets."""
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")
    cfg = cfg or ExperimentConfig()
    data = data or make_data(cfg)
    seed = cfg.init_seed if seed is None else seed
    prior = cfg.truth.prior()
    m0 = init_augmented(prior, cfg.n_neurons, seed, cfg.output_completion)
    reg = data.reg if method != "baseline" else None
    model, report = train(method, m0, data.train, reg, cfg.hp, cfg.lm, [cfg.x0])
    res = RunResult(method, seed, model, report,
                    _eval_rmse(model, data.train, cfg.x0), _eval_rmse(model, data.test, cfg.x0))
    log.info("%s seed=%d: train %.4g test %.4g (%s, %d it)", method, seed, res.rmse_train,
             res.rmse_test, report.termination_reason, report.iterations)
    return res


def run_seeds(cfg, n_runs=None):
    n = cfg.n_runs if n_runs is None else n_runs
    return [cfg.init_seed + i for i in range(n)]


def summarize(method, results):
    ok = [r for r in results if not r.diverged]
    if not ok:
        raise SimulationDivergence(-1, f"all {len(results)} runs of {method} diverged")
    tr = np.array([r.rmse_train for r in ok])
    te = np.array([r.rmse_test for r in ok])
    ddof = 1 if len(ok) > 1 else 0
    conv = sum(r.report.termination_reason in ("converged_cost", "converged_step") for r in ok)
    return MetricsRow(method, float(tr.mean()), float(tr.std(ddof=ddof)), float(te.mean()),
                      float(te.std(ddof=ddof)), len(ok), conv, len(results) - len(ok))


def monte_carlo(method, cfg=None, n_runs=None, data=None, return_runs=False, n_jobs=1):
    """Repeat ``run_experiment`` over init seeds with one fixed noise realization."""
    cfg = cfg or ExperimentConfig()
    n = cfg.n_runs if n_runs is None else n_runs
    if n < 1:
        raise ConfigurationError("n_runs must be >= 1")
    data = data or make_data(cfg)
    seeds = run_seeds(cfg, n)
    if n_jobs == 1:
        results = [run_experiment(method, cfg, s, data) for s in seeds]
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(
            delayed(run_experiment)(method, cfg, s, data) for s in seeds)
    row = summarize(method, results)
    return (row, results) if return_runs else row


DEFAULT_GRIDS = {
    "classical": {"gamma": [1e-5, 1e-4, 1e-3, 1e-2, 1e-1]},
    "wpgnn": {
        "gamma_xy": [1e-6, 1e-5, 1e-4, 1e-3, 1e-2],
        "sigma2": [1e-4, 1e-3, 1e-2],
        "epsilon": [0.01, 0.1, 1.0],
    },
}


def _grid_points(method, grids, base):
    keys = sorted(grids)
    for values in itertools.product(*(grids[k] for k in keys)):
        kw = {}
        for k, v in zip(keys, values):
            if k == "gamma_xy":
                kw["gamma_x"] = kw["gamma_y"] = v
            elif k == "sigma2":
                kw["sigma"] = math.sqrt(v)
            else:
                kw[k] = v
        yield replace(base, **kw)


def grid_search(method, grids=None, cfg=None, data=None, return_table=False):
    """Pick the hyperparameters with the lowest validation RMSE.

    ``grids`` maps hyperparameter names (``gamma``, ``gamma_x``,
    ``gamma_y``, ``gamma_xy``, ``sigma``, ``sigma2``, ``epsilon``) to
    candidate lists. Ties keep the first point in grid order.
    """
    cfg = cfg or ExperimentConfig()
    grids = grids if grids is not None else DEFAULT_GRIDS.get(method, {})
    data = data or make_data(cfg)
    val = data.val_classical if method == "classical" else data.val_wpgnn
    best, best_score, table = None, math.inf, []
    for hp in _grid_points(method, grids, cfg.hp):
        res = run_experiment(method, replace(cfg, hp=hp), cfg.init_seed, data)
        score = _eval_rmse(res.model, val, cfg.x0) if not res.diverged else math.inf
        table.append((hp, score))
        if best is None or score < best_score:
            best, best_score = hp, score
    return (best, table) if return_table else best
