"""Command-line interface: train, sample, infer, eval, toy and inspect.

Exit codes: 0 on success, 1 for usage errors, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import boosting, density, inference, metrics, model_io, sampling, toy
from .boosting import BoostConfig, EnergyModel
from .data import (
    discretize, discretize_column, fit_discretizer, infer_schema, undiscretize,
)
from .density import DefEnsemble
from .errors import TreegenError


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


_BOOST_FIELD_TYPES = {
    "num_rounds": int, "max_leaves": int, "max_ratio": float,
    "shrinkage": float, "pool_size": int, "p_refresh": float,
    "min_data_in_leaf": int, "min_model_in_leaf": int, "uniform_mix": float,
    "update_rule": str,
}


def _parse_grid(text: str) -> tuple[int, float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError("line_search_grid needs count,lo,hi")
    return int(parts[0]), float(parts[1]), float(parts[2])


def _parse_early_stopping(text: str) -> tuple[int, str]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError("early_stopping needs patience,metric")
    return int(parts[0]), parts[1]


def read_config_file(path: str | Path) -> dict:
    """Plain key = value lines mirroring BoostConfig field names."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in _BOOST_FIELD_TYPES:
            values[key] = _BOOST_FIELD_TYPES[key](val)
        elif key == "line_search_grid":
            values[key] = _parse_grid(val)
        elif key == "early_stopping":
            values[key] = _parse_early_stopping(val)
        else:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    return values


def build_config(args) -> BoostConfig:
    """Defaults, overridden by a config file, overridden by explicit flags."""
    values: dict = {}
    if args.config:
        values.update(read_config_file(args.config))
    flag_map = {
        "num_rounds": args.rounds, "max_leaves": args.max_leaves,
        "max_ratio": args.max_ratio, "shrinkage": args.shrinkage,
        "pool_size": args.pool_size, "p_refresh": args.p_refresh,
        "min_data_in_leaf": args.min_data_in_leaf,
        "min_model_in_leaf": args.min_model_in_leaf,
        "uniform_mix": args.uniform_mix, "update_rule": args.update_rule,
    }
    for key, val in flag_map.items():
        if val is not None:
            values[key] = val
    if args.line_search_grid is not None:
        values["line_search_grid"] = _parse_grid(args.line_search_grid)
    patience, es_metric = values.get("early_stopping", BoostConfig.early_stopping)
    if args.patience is not None:
        patience = args.patience
    if args.es_metric is not None:
        es_metric = args.es_metric
    values["early_stopping"] = (patience, es_metric)
    return BoostConfig(**values)


def _column_hints(args) -> dict[str, str]:
    hints = {}
    for name in (args.numeric or "").split(","):
        if name:
            hints[name] = "numeric"
    for name in (args.categorical or "").split(","):
        if name:
            hints[name] = "categorical"
    return hints


def _set_threads(n: int | None) -> None:
    if n is not None:
        import numba

        numba.set_num_threads(n)


def cmd_train(args) -> int:
    rng = np.random.default_rng(args.seed)
    _set_threads(args.threads)
    df = pd.read_csv(args.data)
    schema = infer_schema(df, kinds=_column_hints(args), target=args.target)
    schema = fit_discretizer(df, schema, max_bins=args.max_bins)

    val_df = None
    if args.val:
        val_df = pd.read_csv(args.val)
    elif args.val_fraction:
        n_val = int(round(len(df) * args.val_fraction))
        perm = rng.permutation(len(df))
        val_df = df.iloc[perm[:n_val]].reset_index(drop=True)
        df = df.iloc[perm[n_val:]].reset_index(drop=True)

    data = discretize(df, schema)

    if args.model_kind == "def":
        model = density.fit_def(
            data, n_trees=args.n_trees, max_leaves=args.max_leaves or 256,
            feature_fraction=args.feature_fraction,
            min_data_in_leaf=args.min_data_in_leaf or 1,
            criterion=args.criterion, rng=rng, bootstrap=not args.no_bootstrap)
        model_io.save_model(args.out, model, seed=args.seed)
        print(f"saved def model with {len(model.trees)} trees to {args.out}")
        return 0

    config = build_config(args)
    val_data = None
    val_raw = None
    if val_df is not None:
        val_data = discretize(val_df, schema)
        if schema.target_index is not None:
            spec = schema.features[schema.target_index]
            if spec.kind == "numeric":
                val_raw = np.asarray(val_df[spec.name], dtype=np.float64)

    def log_round(rep):
        val = "" if np.isnan(rep.val_metric) else f" val={rep.val_metric:.5f}"
        print(f"round {rep.round_index:4d}  gain={rep.gain:.5f}  "
              f"alpha={rep.alpha:.4f}  accept={rep.acceptance_rate:.3f}"
              f"  refill={rep.n_refilled}{val}")

    model, history = boosting.train(data, val_data, config, rng,
                                    val_raw_targets=val_raw, on_round=log_round)
    model_io.save_model(args.out, model, config=config, seed=args.seed)
    print(f"saved model with {model.n_stages} stages to {args.out}")
    if args.history:
        hist = pd.DataFrame([r.__dict__ for r in history])
        hist.to_csv(args.history, index=False)
    return 0


def cmd_sample(args) -> int:
    rng = np.random.default_rng(args.seed)
    _set_threads(args.threads)
    model = model_io.load_model(args.model)
    if isinstance(model, DefEnsemble):
        if args.burn_in is not None:
            print("warning: --burn-in is ignored for def models", file=sys.stderr)
        rows = density.def_sample_many(model, args.n, rng)
        schema = model.schema
    else:
        mode = (sampling.INDEPENDENT if args.mode == "independent"
                else sampling.THINNED)
        rows = sampling.sample(model, args.n, burn_in=args.burn_in or 100,
                               mode=mode, thin=args.thin,
                               n_parallel=args.chains, rng=rng)
        schema = model.schema
    out = undiscretize(rows, schema, rng) if args.n else pd.DataFrame(
        columns=[f.name for f in schema.features])
    out.to_csv(args.out, index=False)
    print(f"wrote {len(out)} samples to {args.out}")
    return 0


def _observation_rows(df: pd.DataFrame, schema, skip: set[int]) -> np.ndarray:
    rows = np.zeros((len(df), len(schema)), dtype=np.uint8)
    for j, spec in enumerate(schema.features):
        if j in skip:
            continue
        if spec.name not in df.columns:
            raise ValueError(f"input is missing column {spec.name!r}")
        rows[:, j] = discretize_column(df[spec.name], spec)
    return rows


def cmd_infer(args) -> int:
    _set_threads(args.threads)
    model = model_io.load_model(args.model)
    schema = model.schema
    target = schema.index_of(args.target)
    missing = {schema.index_of(name)
               for name in (args.missing or "").split(",") if name}
    if target in missing:
        raise ValueError("target cannot be listed as missing")
    df = pd.read_csv(args.data)
    rows = _observation_rows(df, schema, skip=missing | {target})
    spec = schema.features[target]

    if isinstance(model, DefEnsemble):
        if missing:
            raise ValueError("missing-covariate inference needs an nrgboost model")
        conds = [density.def_conditional(model, rows[i], target)
                 for i in range(len(rows))]
    elif missing:
        conds = [inference.conditional_with_missing(model, rows[i], target,
                                                    missing, budget=args.budget)
                 for i in range(len(rows))]
    else:
        conds = list(inference.conditional_many(model, rows, target))

    if args.statistic == "dist":
        if spec.kind == "categorical":
            cols = [f"p_{c}" for c in spec.categories]
        else:
            cols = [f"p_bin{j}" for j in range(spec.cardinality)]
        out = pd.DataFrame(np.vstack(conds), columns=cols)
    else:
        preds = [inference.statistic_from_conditional(c, spec, args.statistic)
                 for c in conds]
        out = pd.DataFrame({"prediction": preds})
    out.to_csv(args.out, index=False)
    print(f"wrote {len(out)} predictions to {args.out}")
    return 0


def cmd_eval(args) -> int:
    _set_threads(args.threads)
    model = model_io.load_model(args.model)
    schema = model.schema
    target = schema.index_of(args.target)
    spec = schema.features[target]
    df = pd.read_csv(args.data)
    rows = _observation_rows(df, schema, skip={target})
    if isinstance(model, DefEnsemble):
        raw = model.cond_density_many(rows, target)
        tot = raw.sum(axis=1, keepdims=True)
        probs = np.where(tot > 0, raw / np.where(tot > 0, tot, 1.0),
                         1.0 / raw.shape[1])
    else:
        probs = inference.conditional_many(model, rows, target)

    wanted = [m for m in (args.metrics or "auto").split(",") if m]
    if wanted == ["auto"]:
        if spec.kind == "numeric":
            wanted = ["r2", "mae", "crps"]
        elif spec.cardinality == 2:
            wanted = ["auc", "accuracy"]
        else:
            wanted = ["accuracy"]

    results = {}
    if spec.kind == "numeric":
        truth = np.asarray(df[spec.name], dtype=np.float64)
        from .data import bin_bounds

        bounds = bin_bounds(spec)
        mids = (bounds[:-1] + bounds[1:]) / 2.0
        for m in wanted:
            if m == "r2":
                results["r2"] = metrics.r2(probs @ mids, truth)
            elif m == "mae":
                med = [inference.statistic_from_conditional(p, spec, "median")
                       for p in probs]
                results["mae"] = metrics.mae(np.asarray(med), truth)
            elif m == "crps":
                results["crps"] = float(np.mean(
                    [metrics.crps(bounds, p, t) for p, t in zip(probs, truth)]))
            else:
                raise ValueError(f"metric {m!r} not valid for numeric targets")
    else:
        truth_bins = discretize_column(df[spec.name], spec).astype(np.int64)
        for m in wanted:
            if m == "auc":
                results["auc"] = metrics.auc(probs[:, 1], truth_bins)
            elif m == "accuracy":
                results["accuracy"] = metrics.accuracy(
                    np.argmax(probs, axis=1), truth_bins)
            else:
                raise ValueError(f"metric {m!r} not valid for categorical targets")

    table = pd.DataFrame({"metric": list(results), "value": list(results.values())})
    if args.out:
        table.to_csv(args.out, index=False)
        print(f"wrote metrics to {args.out}")
    else:
        print(table.to_string(index=False))
    return 0


def cmd_toy(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.exact_density:
        grid = toy.exact_grid()
        xs, ys = np.meshgrid(np.arange(toy.N_BINS), np.arange(toy.N_BINS),
                             indexing="ij")
        out = pd.DataFrame({"bin_x": xs.ravel(), "bin_y": ys.ravel(),
                            "probability": grid.ravel()})
    else:
        if args.n < 1:
            raise ValueError("--n must be at least 1")
        xy = toy.sample_raw(args.n, rng)
        out = pd.DataFrame({"x": xy[:, 0], "y": xy[:, 1]})
    out.to_csv(args.out, index=False)
    print(f"wrote {len(out)} rows to {args.out}")
    return 0


def cmd_inspect(args) -> int:
    model = model_io.load_model(args.model)
    schema = model.schema
    if isinstance(model, EnergyModel):
        print(f"kind: nrgboost  stages: {model.n_stages}  "
              f"uniform_mix: {model.initial.uniform_mix}")
        if model.stages:
            steps = np.array([s for _t, s in model.stages])
            leaves = np.array([t.n_leaves for t, _s in model.stages])
            print(f"effective steps: min={steps.min():.4f} max={steps.max():.4f}")
            print(f"leaves per tree: min={leaves.min()} max={leaves.max()}")
    else:
        print(f"kind: def  trees: {len(model.trees)}  criterion: {model.criterion}")
        leaves = np.array([t.n_leaves for t in model.trees])
        print(f"leaves per tree: min={leaves.min()} max={leaves.max()}")
    print(f"features ({len(schema)}):")
    for j, f in enumerate(schema.features):
        tgt = "  [target]" if schema.target_index == j else ""
        print(f"  {j:3d} {f.name:24s} {f.kind:12s} card={f.cardinality}{tgt}")
    cfg = model_io.model_config(args.model)
    if cfg:
        print(f"config: {cfg}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=None,
                   help="numba thread count")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="treegen",
                     description="Tree-based generative modeling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model on a CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", default=None)
    p.add_argument("--val", default=None)
    p.add_argument("--val-fraction", type=float, default=None)
    p.add_argument("--model-kind", choices=["nrgboost", "def"], default="nrgboost")
    p.add_argument("--history", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-bins", type=int, default=255)
    p.add_argument("--numeric", default=None, help="comma list of numeric columns")
    p.add_argument("--categorical", default=None,
                   help="comma list of categorical columns")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--max-leaves", type=int, default=None)
    p.add_argument("--max-ratio", type=float, default=None)
    p.add_argument("--shrinkage", type=float, default=None)
    p.add_argument("--pool-size", type=int, default=None)
    p.add_argument("--p-refresh", type=float, default=None)
    p.add_argument("--min-data-in-leaf", type=int, default=None)
    p.add_argument("--min-model-in-leaf", type=int, default=None)
    p.add_argument("--uniform-mix", type=float, default=None)
    p.add_argument("--update-rule", choices=list(boosting.UPDATE_RULES),
                   default=None)
    p.add_argument("--line-search-grid", default=None, help="count,lo,hi")
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--es-metric", default=None,
                   choices=["auto", "r2", "auc", "accuracy"])
    p.add_argument("--n-trees", type=int, default=100, help="def: ensemble size")
    p.add_argument("--criterion", choices=["ise", "kl"], default="ise",
                   help="def: splitting criterion")
    p.add_argument("--feature-fraction", type=float, default=1.0)
    p.add_argument("--no-bootstrap", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw samples from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--mode", choices=["independent", "thinned"],
                   default="thinned")
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--chains", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("infer", help="conditional inference for one variable")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--missing", default=None, help="comma list of missing columns")
    p.add_argument("--statistic", choices=["mean", "median", "mode", "dist"],
                   default="mean")
    p.add_argument("--budget", type=int,
                   default=inference.MARGINALIZATION_BUDGET)
    _add_common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="metrics of target conditionals on a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--metrics", default="auto",
                   help="comma list: r2,mae,crps,auc,accuracy")
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("toy", help="generate the 8-Gaussian 2D benchmark data")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact-density", action="store_true",
                   help="emit the exact discretized density grid instead")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("inspect", help="summarize a model file")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (TreegenError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
