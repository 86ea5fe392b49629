"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import anfis, pipeline
from .errors import ConfigError, DataError, SdbError
from .evaluation import compare_methods, k_fold_cv
from .observations import load_observations

log = logging.getLogger("sdbinterp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p, data=True):
    if data:
        p.add_argument("data", help="CSV with x, y and value columns")
    p.add_argument("--config", metavar="PATH", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="overrides the configured seed")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")


def _grid_arg(text):
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError("expected x_min,x_max,y_min,y_max,nx,ny")
    try:
        return pipeline.GridSpec(*map(float, parts[:4]), nx=int(parts[4]), ny=int(parts[5]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected a comma separated list of integers") from None


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sdbinterp", description="Hybrid SDB + ANFIS spatial interpolation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="train a hybrid model and save the artifact")
    _common(p)

    p = sub.add_parser("predict", help="predict a raster from a saved model")
    p.add_argument("model")
    p.add_argument("--grid", type=_grid_arg, metavar="X0,X1,Y0,Y1,NX,NY",
                   help="raster definition (default: the model's configured grid)")
    p.add_argument("--format", choices=("grid", "pgm"), default="grid")
    p.add_argument("--out", metavar="DIR", default=".")

    p = sub.add_parser("crossval", help="k-fold cross-validation of the hybrid model")
    _common(p)
    p.add_argument("-k", type=int, default=10)

    p = sub.add_parser("compare", help="hybrid vs IDW, ordinary Kriging and GP")
    _common(p)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--truth", metavar="CSV", help="score against these points instead of CV")

    p = sub.add_parser("sweep", help="cross-validate and map for several m")
    _common(p)
    p.add_argument("--m", type=_int_list, default=[5, 10, 30], metavar="LIST")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--format", choices=("grid", "pgm"), default="grid")

    p = sub.add_parser("rules", help="rule base utilities")
    rsub = p.add_subparsers(dest="rules_command", required=True, parser_class=_Parser)
    r = rsub.add_parser("export", help="print the IF-THEN rules of a saved model")
    r.add_argument("model")
    r.add_argument("--out", metavar="DIR", help="write rules.txt here instead of stdout")
    return ap


def _config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    return path


def cmd_fit(args):
    cfg = _config(args)
    model = pipeline.fit_pipeline(load_observations(args.data), cfg)
    path = _out(args, "model.json")
    model.save(path)
    print(f"trained on {model.obs.n} points, final RMSE {model.train_rmse[-1]:.6g}; wrote {path}")


def cmd_predict(args):
    model = pipeline.HybridModel.load(args.model)
    grid = pipeline.predict_grid(model, args.grid)
    path = _out(args, "field.pgm" if args.format == "pgm" else "field.csv")
    pipeline.export_raster(grid, path, args.format)
    print(f"wrote {grid.nx}x{grid.ny} raster to {path}")


def cmd_crossval(args):
    cfg = _config(args)
    res = k_fold_cv(load_observations(args.data), pipeline.hybrid_method(cfg), args.k, cfg.seed)
    text = res.to_csv()
    _write(_out(args, "crossval.csv"), text)
    print(text, end="")


def cmd_compare(args):
    cfg = _config(args)
    obs = load_observations(args.data)
    truth = None
    if args.truth:
        t = load_observations(args.truth)
        truth = (t.xy, t.values)
    table = compare_methods(obs, pipeline.all_methods(cfg), truth, args.k, cfg.seed)
    _write(_out(args, "comparison.csv"), table.to_csv())
    print(table.render(), end="")


def cmd_sweep(args):
    cfg = _config(args)
    res = pipeline.sweep_m(load_observations(args.data), cfg, args.m, args.k)
    paths = pipeline.write_sweep(res, args.out, args.format)
    print(res.to_csv(), end="")
    for p in paths:
        print(f"wrote {p}")


def cmd_rules(args):
    text = anfis.format_rules(pipeline.HybridModel.load(args.model).rulebase)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        print(f"wrote {_write(os.path.join(args.out, 'rules.txt'), text)}")
    else:
        print(text, end="")


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "crossval": cmd_crossval,
            "compare": cmd_compare, "sweep": cmd_sweep, "rules": cmd_rules}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except SdbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
