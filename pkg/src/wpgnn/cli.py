"""Command-line interface: datasets, training, evaluation and plot data.

Config files are flat ``key = value`` text (``#`` starts a comment). Keys
mirror :class:`~wpgnn.benchmark.ExperimentConfig`; optimizer settings
carry an ``lm_`` prefix and the true-system constants live under their
own names (``a``, ``b``, ``c``, ``l``). Unknown keys are errors. Run
``wpgnn keys`` for the full list with defaults.

Exit statuses: 0 success, 2 configuration error, 3 file or parse error,
4 simulation divergence.
"""
import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import benchmark as bm
from .core import AugmentedModel, CompletionNetwork, LinearPrior, completion_forward, simulate
from .errors import ConfigurationError, DataFormatError, DomainError, SimulationDivergence
from .objectives import Dataset, Hyperparams, RegSet
from .optimizer import LMConfig

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
LAYOUT_VERSION = 1
ARTIFACT_FORMAT = "wpgnn-model"
DATASET_FILES = {"train": "train.csv", "reg": "reg.csv", "test": "test.csv",
                 "val_classical": "val_classical.csv", "val_wpgnn": "val_wpgnn.csv"}


@dataclass(frozen=True)
class RunConfig:
    experiment: bm.ExperimentConfig = field(default_factory=bm.ExperimentConfig)
    method: str = "all"
    data_dir: str = "."
    out_dir: str = "."
    n_jobs: int = 1
    plot_x_min: float = -2.5
    plot_x_max: float = 2.5
    plot_x_step: float = 0.01
    # input at which f(x, u) is plotted: a number, or "steady" for the u that
    # makes x a fixed point of the prior. At u = 0 the plotted f(x, 0) + a x
    # is the model's zero-input next state, comparable to a x + delta(x).
    plot_u: str = "0"

    def __post_init__(self):
        if self.method not in bm.METHODS + ("all",):
            raise ConfigurationError(f"method must be one of {bm.METHODS + ('all',)}")
        if self.n_jobs == 0:
            raise ConfigurationError("n_jobs must be nonzero")
        if not (self.plot_x_step > 0 and self.plot_x_max >= self.plot_x_min):
            raise ConfigurationError("need plot_x_step > 0 and plot_x_max >= plot_x_min")
        if self.plot_u != "steady":
            try:
                float(self.plot_u)
            except ValueError:
                raise ConfigurationError("plot_u must be 'steady' or a number") from None

    @property
    def methods(self):
        return bm.METHODS if self.method == "all" else (self.method,)


# ---------------------------------------------------------------- config

_EXP_KEYS = [f.name for f in fields(bm.ExperimentConfig) if f.name not in ("hp", "lm", "truth")]
_HP_KEYS = [f.name for f in fields(Hyperparams)]
_LM_KEYS = [f.name for f in fields(LMConfig)]
_TRUTH_KEYS = [f.name for f in fields(bm.SisoTruth)]
_RUN_KEYS = [f.name for f in fields(RunConfig) if f.name != "experiment"]


def _defaults():
    rc = RunConfig()
    e = rc.experiment
    out = {}
    out.update({k: getattr(e, k) for k in _EXP_KEYS})
    out.update({k: getattr(e.hp, k) for k in _HP_KEYS})
    out.update({"lm_" + k: getattr(e.lm, k) for k in _LM_KEYS})
    out.update({k: getattr(e.truth, k) for k in _TRUTH_KEYS})
    out.update({k: getattr(rc, k) for k in _RUN_KEYS})
    return out


def _coerce(key, text, default):
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(
            f"config key {key!r}: cannot parse {text!r} as {type(default).__name__}") from None


def parse_config_text(text, source="<config>"):
    """Parse flat ``key = value`` text into a dict of typed overrides."""
    defaults = _defaults()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate config key {key!r}")
        values[key] = _coerce(key, val, defaults[key])
    return values


def build_config(values=None):
    """Assemble a :class:`RunConfig` from a dict of overrides."""
    v = {**_defaults(), **(values or {})}
    exp = bm.ExperimentConfig(
        **{k: v[k] for k in _EXP_KEYS},
        hp=Hyperparams(**{k: v[k] for k in _HP_KEYS}),
        lm=LMConfig(**{k: v["lm_" + k] for k in _LM_KEYS}),
        truth=bm.SisoTruth(**{k: v[k] for k in _TRUTH_KEYS}),
    )
    return RunConfig(experiment=exp, **{k: v[k] for k in _RUN_KEYS})


def load_config(path=None):
    if path is None:
        return build_config()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataFormatError(path, None, f"cannot read config: {exc.strerror}") from None
    return build_config(parse_config_text(text, str(path)))


def format_config(rc):
    """Render every key of ``rc`` as config text (parses back to ``rc``)."""
    e = rc.experiment
    lines = []
    for k in _EXP_KEYS:
        lines.append((k, getattr(e, k)))
    lines += [(k, getattr(e.hp, k)) for k in _HP_KEYS]
    lines += [("lm_" + k, getattr(e.lm, k)) for k in _LM_KEYS]
    lines += [(k, getattr(e.truth, k)) for k in _TRUTH_KEYS]
    lines += [(k, getattr(rc, k)) for k in _RUN_KEYS]
    return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v!r}\n"
                   .replace("'", "") for k, v in lines)


# ---------------------------------------------------------------- datasets

def write_dataset(path, u, y=None):
    """Write ``k,u,y`` (or ``k,u`` when ``y`` is None) with round-trip floats."""
    u = np.asarray(u.values if hasattr(u, "values") else u, dtype=float).reshape(-1)
    cols = [u]
    header = ["k", "u"]
    if y is not None:
        cols.append(np.asarray(y.values if hasattr(y, "values") else y, dtype=float).reshape(-1))
        header.append("y")
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k, row in enumerate(zip(*cols), 1):
                w.writerow([k] + [repr(float(x)) for x in row])
    except OSError as exc:
        raise DataFormatError(path, None, f"cannot write: {exc.strerror}") from None


def read_dataset(path, need_y=True):
    """Read a dataset CSV; returns ``(u, y)`` with ``y`` None for ``k,u`` files."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataFormatError(path, None, f"cannot read: {exc.strerror}") from None
    with fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header not in (["k", "u", "y"], ["k", "u"]):
            raise DataFormatError(path, 1, f"expected header 'k,u,y' or 'k,u', got {header}")
        has_y = len(header) == 3
        if need_y and not has_y:
            raise DataFormatError(path, 1, "output column 'y' is required")
        u, y = [], []
        for lineno, row in enumerate(rows, 2):
            if len(row) != len(header):
                raise DataFormatError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                k = int(row[0])
                vals = [float(s) for s in row[1:]]
            except ValueError:
                raise DataFormatError(path, lineno, f"malformed number in {row}") from None
            if k != lineno - 1:
                raise DataFormatError(path, lineno, f"expected k = {lineno - 1}, got {k}")
            if not all(math.isfinite(x) for x in vals):
                raise DataFormatError(path, lineno, "non-finite value")
            u.append(vals[0])
            if has_y:
                y.append(vals[1])
    if not u:
        raise DataFormatError(path, None, "no data rows")
    return np.array(u), (np.array(y) if has_y else None)


def load_benchmark_data(data_dir, cfg):
    """Read the files written by ``generate`` back into :class:`BenchmarkData`."""
    d = Path(data_dir)

    def ds(kind):
        return Dataset(*read_dataset(d / DATASET_FILES[kind]))

    u_reg, _ = read_dataset(d / DATASET_FILES["reg"], need_y=False)
    reg = RegSet.from_prior(cfg.truth.prior(), u_reg, [cfg.x0])
    return bm.BenchmarkData(ds("train"), reg, ds("test"), ds("val_classical"), ds("val_wpgnn"))


# ---------------------------------------------------------------- model artifact

def model_to_dict(m, meta=None):
    if not isinstance(m.prior, LinearPrior):
        raise ConfigurationError("only models with a linear prior can be serialized")
    p = m.prior

    def net(n):
        return None if n is None else {"n_n": n.n_n, "theta": n.to_vector().tolist()}

    return {
        "format": ARTIFACT_FORMAT,
        "layout_version": LAYOUT_VERSION,
        "layout": ["W_in", "b_hidden", "W_out", "b_out", "A_lin", "B_lin"],
        "prior": {k: getattr(p, k).tolist() for k in ("A", "B", "C", "D")},
        "f_net": net(m.f_net),
        "g_net": net(m.g_net),
        "meta": meta or {},
    }


def model_from_dict(obj, source="<model>"):
    try:
        if obj.get("format") != ARTIFACT_FORMAT:
            raise DataFormatError(source, None, f"not a {ARTIFACT_FORMAT} artifact")
        if obj.get("layout_version") != LAYOUT_VERSION:
            raise DataFormatError(source, None,
                                  f"unsupported layout_version {obj.get('layout_version')!r}")
        pr = obj["prior"]
        prior = LinearPrior(*(np.array(pr[k], dtype=float) for k in ("A", "B", "C", "D")))

        def net(spec, d_out):
            if spec is None:
                return None
            return CompletionNetwork.from_vector(np.array(spec["theta"], dtype=float),
                                                 int(spec["n_n"]), prior.n_x, prior.n_u, d_out)

        return AugmentedModel(prior, net(obj["f_net"], prior.n_x), net(obj.get("g_net"), prior.n_y))
    except (KeyError, TypeError, AttributeError, ConfigurationError) as exc:
        raise DataFormatError(source, None, f"invalid model artifact: {exc}") from None


def save_model(path, m, meta=None):
    try:
        Path(path).write_text(json.dumps(model_to_dict(m, meta), indent=1) + "\n")
    except OSError as exc:
        raise DataFormatError(path, None, f"cannot write: {exc.strerror}") from None


def load_model(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataFormatError(path, None, f"cannot read: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    return model_from_dict(obj, str(path))


# ---------------------------------------------------------------- commands

def _out(rc, args):
    d = Path(args.out or rc.out_dir)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataFormatError(d, None, f"cannot create output directory: {exc.strerror}") from None
    return d


def _write_rows(path, header, rows):
    try:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    except OSError as exc:
        raise DataFormatError(path, None, f"cannot write: {exc.strerror}") from None


def _data(rc, args):
    d = Path(args.data_dir or rc.data_dir)
    if (d / DATASET_FILES["train"]).exists():
        return load_benchmark_data(d, rc.experiment)
    raise DataFormatError(d / DATASET_FILES["train"], None,
                          "dataset not found; run 'generate' first")


def cmd_generate(rc, args):
    out = _out(rc, args)
    data = bm.make_data(rc.experiment)
    write_dataset(out / DATASET_FILES["train"], data.train.u, data.train.y)
    write_dataset(out / DATASET_FILES["reg"], data.reg.u_bar)
    write_dataset(out / DATASET_FILES["test"], data.test.u, data.test.y)
    write_dataset(out / DATASET_FILES["val_classical"], data.val_classical.u, data.val_classical.y)
    write_dataset(out / DATASET_FILES["val_wpgnn"], data.val_wpgnn.u, data.val_wpgnn.y)
    print(f"wrote {len(DATASET_FILES)} datasets to {out}")
    return EXIT_OK


def cmd_train(rc, args):
    out = _out(rc, args)
    data = _data(rc, args)
    cfg = rc.experiment
    seed = cfg.init_seed if args.seed is None else args.seed
    status = EXIT_OK
    for method in rc.methods:
        res = bm.run_experiment(method, cfg, seed, data)
        rep = res.report
        report = {
            "method": method, "seed": seed,
            "termination_reason": rep.termination_reason, "iterations": rep.iterations,
            "final_cost": rep.cost_history[-1] if rep.cost_history else None,
            "rmse_train": res.rmse_train, "rmse_test": res.rmse_test,
            "cost_history": rep.cost_history,
        }
        try:
            (out / f"report_{method}.json").write_text(json.dumps(report, indent=1) + "\n")
        except OSError as exc:
            raise DataFormatError(out, None, f"cannot write report: {exc.strerror}") from None
        if res.diverged:
            print(f"{method}: training diverged", file=sys.stderr)
            status = EXIT_DIVERGED
            continue
        meta = {k: report[k] for k in ("method", "seed", "termination_reason", "iterations",
                                       "final_cost")}
        save_model(out / f"model_{method}.json", res.model, meta)
        print(f"{method}: train RMSE {res.rmse_train:.6g}, test RMSE {res.rmse_test:.6g} "
              f"({rep.termination_reason}, {rep.iterations} iterations)")
    return status


def cmd_eval(rc, args):
    if not args.model or not args.data:
        raise ConfigurationError("eval needs --model and --data")
    m = load_model(args.model)
    u, y = read_dataset(args.data)
    if m.prior.n_u != 1 or m.prior.n_y != 1:
        raise ConfigurationError("dataset files carry one input and one output; model does not")
    yhat = simulate(m, u, [rc.experiment.x0] * m.prior.n_x)[1]
    value = bm.rmse(y, yhat)
    out = _out(rc, args)
    _write_rows(out / "metrics.csv", ["model", "dataset", "n", "rmse"],
                [[str(args.model), str(args.data), len(u), value]])
    print(f"rmse {value!r}")
    return EXIT_OK


def cmd_montecarlo(rc, args):
    out = _out(rc, args)
    cfg = rc.experiment
    if args.seed is not None:
        cfg = replace(cfg, init_seed=args.seed)
    data = bm.make_data(cfg)
    summary, per_run = [], []
    for method in rc.methods:
        row, runs = bm.monte_carlo(method, cfg, data=data, return_runs=True, n_jobs=rc.n_jobs)
        summary.append(row)
        per_run += [[r.method, r.seed, r.rmse_train, r.rmse_test, r.report.termination_reason,
                     r.report.iterations] for r in runs]
    _write_rows(out / "montecarlo.csv", [f.name for f in fields(bm.MetricsRow)],
                [dataclasses.astuple(r) for r in summary])
    _write_rows(out / "montecarlo_runs.csv",
                ["method", "seed", "rmse_train", "rmse_test", "termination_reason", "iterations"],
                per_run)
    print(f"{'method':<10} {'train RMSE':>22} {'test RMSE':>22} {'conv':>5}")
    for r in summary:
        print(f"{r.method:<10} {r.rmse_train_mean:10.4g} ± {r.rmse_train_std:<9.3g} "
              f"{r.rmse_test_mean:10.4g} ± {r.rmse_test_std:<9.3g} {r.converged:>2}/{r.runs}")
    return EXIT_OK


def cmd_gridsearch(rc, args):
    out = _out(rc, args)
    cfg = rc.experiment
    if args.seed is not None:
        cfg = replace(cfg, init_seed=args.seed)
    data = bm.make_data(cfg)
    methods = [m for m in rc.methods if m != "baseline"]
    if not methods:
        raise ConfigurationError("gridsearch applies to classical and wpgnn only")
    for method in methods:
        best, table = bm.grid_search(method, cfg=cfg, data=data, return_table=True)
        _write_rows(out / f"gridsearch_{method}.csv", _HP_KEYS + ["val_rmse"],
                    [[getattr(hp, k) for k in _HP_KEYS] + [score] for hp, score in table])
        print(f"{method}: best " + ", ".join(f"{k}={getattr(best, k):.3g}" for k in _HP_KEYS))
    return EXIT_OK


def completion_curve(m, x, a, b, plot_u="0"):
    """``f(x, u) + a x`` over the grid ``x`` for a scalar model."""
    out = np.empty(len(x))
    for i, xi in enumerate(x):
        u = (1.0 - a) * xi / b if plot_u == "steady" else float(plot_u)
        out[i] = completion_forward(m.f_net, [xi], [u])[0] + a * xi
    return out


def cmd_plotdata(rc, args):
    out = _out(rc, args)
    cfg = rc.experiment
    t = cfg.truth
    model_dir = Path(args.models or args.out or rc.out_dir)
    models = {meth: load_model(model_dir / f"model_{meth}.json") for meth in bm.METHODS}
    for meth, m in models.items():
        if m.prior.n_x != 1 or m.prior.n_u != 1:
            raise ConfigurationError(f"model_{meth}.json is not a scalar model")
    n = int(round((rc.plot_x_max - rc.plot_x_min) / rc.plot_x_step)) + 1
    x = np.round(rc.plot_x_min + rc.plot_x_step * np.arange(n), 12)
    true = t.a * x + t.delta(x)
    curves = {meth: completion_curve(m, x, t.a, t.b, rc.plot_u) for meth, m in models.items()}
    _write_rows(out / "completion.csv", ["x", "true"] + list(bm.METHODS),
                [[float(x[i]), float(true[i])] + [float(curves[k][i]) for k in bm.METHODS]
                 for i in range(n)])
    test = bm.make_data(cfg).test
    u = test.u.values[:, 0]
    sims = {meth: simulate(m, test.u, [cfg.x0])[1].values[:, 0] for meth, m in models.items()}
    _write_rows(out / "trajectories.csv", ["k", "u", "y"] + list(bm.METHODS),
                [[k + 1, float(u[k]), float(test.y.values[k, 0])]
                 + [float(sims[m][k]) for m in bm.METHODS] for k in range(len(u))])
    print(f"wrote completion.csv ({n} rows) and trajectories.csv to {out}")
    return EXIT_OK


def cmd_keys(rc, args):
    sys.stdout.write(format_config(rc))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "montecarlo": cmd_montecarlo, "gridsearch": cmd_gridsearch,
            "plotdata": cmd_plotdata, "keys": cmd_keys}


def build_parser():
    p = argparse.ArgumentParser(prog="wpgnn", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--method", choices=bm.METHODS + ("all",), help="overrides config 'method'")
    p.add_argument("--seed", type=int, help="initialization seed (base seed for montecarlo)")
    p.add_argument("--out", help="output directory (overrides config 'out_dir')")
    p.add_argument("--data-dir", help="dataset directory (overrides config 'data_dir')")
    p.add_argument("--model", help="model artifact for 'eval'")
    p.add_argument("--data", help="dataset CSV for 'eval'")
    p.add_argument("--models", help="directory holding model_<method>.json for 'plotdata'")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = load_config(args.config)
        if args.method:
            rc = replace(rc, method=args.method)
        return COMMANDS[args.command](rc, args)
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationDivergence as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
