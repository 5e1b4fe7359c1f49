"""Command line entry point.

Subcommands::

    localerr train            train replicates, write curves.csv and checkpoints
    localerr analyze          clean per-layer accuracy / alpha / D / top-10 tables
    localerr attack           Gaussian and FGSM epsilon sweeps
    localerr dimcurve         measured (alpha, D) points and theoretical D(alpha) curves
    localerr reproduce-fig N  end-to-end pipeline for figure N in {2,...,7}

Exit codes: 0 success, 1 usage error, 2 missing or malformed data,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .exceptions import ConsistencyError, DatasetNotFoundError, DivergenceError, IdxFormatError, UsageError
from .harness import ExperimentConfig, write_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags below override it")
    p.add_argument("--output-dir", "-o")
    p.add_argument("--data-dir", help="directory with the MNIST IDX files ($LOCALERR_DATA_DIR)")
    p.add_argument("--width", type=int, help="width of every hidden layer")
    p.add_argument("--depth", type=int, help="number of hidden layers")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--eta0", type=float)
    p.add_argument("--seed", type=int, help="base seed for all replicates")
    p.add_argument("--replicates", type=int)
    p.add_argument("--k-stimuli", type=int)
    p.add_argument("--train-limit", type=int, help="use only the first N training images")
    p.add_argument("--test-limit", type=int, help="use only the first N test images")
    p.add_argument("--jobs", type=int, help="parallel replicate workers")
    p.add_argument("--deterministic", action="store_true",
                   help="sequential execution with single-threaded BLAS")
    p.add_argument("--no-reuse", action="store_true", help="retrain even if a matching checkpoint exists")
    p.add_argument("--cache-dir", help="checkpoint directory (default: OUTPUT_DIR/checkpoints)")
    p.add_argument("-v", "--verbose", action="store_true")


def _attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kinds", nargs="+", choices=["gaussian", "fgsm"])
    p.add_argument("--epsilons", type=float, nargs="+", help="explicit epsilon grid")
    p.add_argument("--cascade", action="store_true", help="carry layer-l perturbations into deeper layers")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="localerr", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [("train", "train an ensemble"), ("analyze", "clean spectrum analysis"),
                        ("attack", "epsilon sweeps under attack"), ("dimcurve", "D(alpha) comparison")]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name in ("attack", "dimcurve"):
            _attack_flags(p)
        if name == "dimcurve":
            p.add_argument("--theory-only", action="store_true", help="emit only the theoretical curves")
    p = sub.add_parser("reproduce-fig", help="reproduce the data behind one figure")
    p.add_argument("figure", type=int, choices=[2, 3, 4, 5, 6, 7])
    _common(p)
    _attack_flags(p)
    p.add_argument("--widths", type=int, nargs="+", help="width sweep for figure 4 (default 50 100 200)")
    return parser


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    net, train = cfg.net, cfg.train
    if args.width or args.depth:
        width = args.width or net.widths[0]
        depth = args.depth or net.depth
        net = replace(net, widths=(width,) * depth)
    train_over = {k: v for k, v in {"epochs": args.epochs, "batch_size": args.batch_size,
                                    "eta0": args.eta0}.items() if v is not None}
    train = replace(train, **train_over)
    over = {"output_dir": args.output_dir, "base_seed": args.seed, "replicates": args.replicates,
            "k_stimuli": args.k_stimuli, "train_limit": args.train_limit, "test_limit": args.test_limit,
            "n_jobs": args.jobs}
    if getattr(args, "kinds", None):
        over["attack_kinds"] = tuple(args.kinds)
    if getattr(args, "epsilons", None):
        over["epsilon_grid"] = tuple(sorted(args.epsilons))
    if getattr(args, "cascade", False):
        over["cascade"] = True
    cfg = replace(cfg, net=net, train=train, **{k: v for k, v in over.items() if v is not None})
    if args.deterministic:
        cfg = replace(cfg, n_jobs=1)
    return cfg


def _ensemble(cfg, args, train_ds, test_ds):
    return harness.run_training(cfg, train_ds, test_ds, reuse=not args.no_reuse, cache_dir=args.cache_dir)


def _fig_table(src, dst, kind, columns):
    rows = [r for r in harness.read_csv(src) if r["kind"] == kind]
    write_csv(dst, columns, [tuple(r[c] for c in columns) for r in rows])


FIG5_COLUMNS = ["kind", "layer", "epsilon", "acc_mean", "acc_se", "alpha_mean", "alpha_se"]


def _run_figure(fig: int, cfg: ExperimentConfig, args, train_ds, test_ds) -> list[str]:
    out = Path(cfg.output_dir)
    if fig == 2:
        _ensemble(cfg, args, train_ds, test_ds)
        (out / "fig2.csv").write_bytes((out / "curves.csv").read_bytes())
        return ["fig2.csv"]
    if fig == 3:
        members = _ensemble(cfg, args, train_ds, test_ds)
        rows, _ = harness.run_clean_analysis(members, cfg, test_ds)
        (out / "fig3_spectra.csv").write_bytes((out / "clean_spectra.csv").read_bytes())
        fits = [(r["replicate"], r["layer"], r.get("alpha", np.nan), r.get("r_squared", np.nan),
                 r.get("top10", np.nan), r.get("dim", np.nan)) for r in rows]
        write_csv(out / "fig3_fits.csv", ["replicate", "layer", "alpha", "r_squared", "top10", "dim"], fits)
        return ["fig3_spectra.csv", "fig3_fits.csv"]
    if fig == 4:
        widths = args.widths or [50, 100, 200]
        table = []
        for w in widths:
            sub = replace(cfg, net=replace(cfg.net, widths=(w,) * cfg.net.depth),
                          output_dir=str(out / f"width{w}"))
            members = harness.run_training(sub, train_ds, test_ds, reuse=not args.no_reuse,
                                           cache_dir=args.cache_dir)
            _, aggs = harness.run_clean_analysis(members, sub, test_ds)
            table += [(w, a.layer, a.acc_mean, a.acc_se, a.alpha_mean, a.alpha_se, a.n) for a in aggs]
        write_csv(out / "fig4.csv", ["width", "layer", "acc_mean", "acc_se", "alpha_mean", "alpha_se", "n"], table)
        return ["fig4.csv"]
    if fig in (5, 6):
        kind = "gaussian" if fig == 5 else "fgsm"
        members = _ensemble(cfg, args, train_ds, test_ds)
        harness.run_attack_sweep(members, cfg, test_ds, kinds=[kind], prefix=f"attack_{kind}")
        _fig_table(out / f"attack_{kind}_aggregate.csv", out / f"fig{fig}.csv", kind, FIG5_COLUMNS)
        return [f"fig{fig}.csv"]
    members = _ensemble(cfg, args, train_ds, test_ds)
    harness.run_dimensionality_comparison(members, cfg, test_ds)
    return ["dim_points.csv", "dim_theory.csv", "dim_width_fit.csv"]


def _theory_only(cfg: ExperimentConfig) -> None:
    widths = {k: v for k, v in cfg.dim_widths.items() if k in cfg.attack_kinds}
    layer_width = max(cfg.net.widths)
    alphas = np.round(np.arange(0.0, 3.0001, 0.01), 2)
    header = ["alpha"] + [f"d_sum_{k}_n{n}" for k, n in widths.items()] + [
        f"d_integral_n{layer_width}", f"d_sum_n{layer_width}", "d_zeta"]
    write_csv(Path(cfg.output_dir) / "dim_theory.csv", header, harness.theory_curves(alphas, widths, layer_width))


def run(args) -> int:
    cfg = config_from_args(args)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    command = args.command if args.command != "reproduce-fig" else f"reproduce-fig {args.figure}"
    if args.command == "dimcurve" and args.theory_only:
        _theory_only(cfg)
        harness.write_manifest(cfg, command)
        return EXIT_OK
    train_ds, test_ds = harness.load_datasets(cfg, args.data_dir)
    if args.command == "train":
        _ensemble(cfg, args, train_ds, test_ds)
    elif args.command == "analyze":
        harness.run_clean_analysis(_ensemble(cfg, args, train_ds, test_ds), cfg, test_ds)
    elif args.command == "attack":
        harness.run_attack_sweep(_ensemble(cfg, args, train_ds, test_ds), cfg, test_ds)
    elif args.command == "dimcurve":
        harness.run_dimensionality_comparison(_ensemble(cfg, args, train_ds, test_ds), cfg, test_ds)
    else:
        _run_figure(args.figure, cfg, args, train_ds, test_ds)
    harness.write_manifest(cfg, command)
    print(f"wrote results to {cfg.output_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = contextlib.nullcontext()
    if args.deterministic:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=1)
    try:
        with limiter:
            return run(args)
    except UsageError as exc:
        print(f"localerr: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetNotFoundError, IdxFormatError, ConsistencyError) as exc:
        print(f"localerr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"localerr: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
