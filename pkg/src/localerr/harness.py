"""Experiment orchestration: ensembles, sweeps, aggregation and CSV output.

Replicate ``r`` of an experiment with ``base_seed`` uses the seed
``replicate_seed(base_seed, r)``, a 32-bit value hashed out of
``SeedSequence(base_seed, spawn_key=(r,))``. That seed drives the weight
initialisation (stream ``(seed,)``), the mini-batch shuffles (stream
``(seed, 1)``) and the Gaussian attack noise, so a replicate's results do
not depend on how many other replicates run or in which order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .attacks import KINDS, AttackSpec, gaussian_image_noise, perturbation
from .data import LabeledDataset, load_mnist
from .exceptions import DegenerateError, DivergenceError, UsageError
from .manifold import (
    best_fit_width,
    eigen_spectrum,
    explained_variance_fraction,
    fit_power_law,
    participation_dimensionality,
    theoretical_dimensionality,
    zeta_dimensionality,
)
from .network import (
    LocalErrorNet,
    NetConfig,
    TrainConfig,
    classify_at_layer,
    clean_layer_inputs,
    init_network,
    layer_forward,
    load_checkpoint,
    save_checkpoint,
    test_accuracy,
    train_epoch,
)
from .numerics import make_rng

logger = logging.getLogger(__name__)

DEFAULT_EPSILONS = tuple(round(0.1 * i, 1) for i in range(1, 41))
DIM_EPSILONS = (0.0, 0.5, 3.0)
DIM_WIDTHS = {"gaussian": 35, "fgsm": 30}
STIMULUS_STREAM = 0x5715


def replicate_seed(base_seed: int, replicate: int) -> int:
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(replicate),))
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass
class ExperimentConfig:
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    replicates: int = 1
    k_stimuli: int = 3000
    epsilon_grid: tuple = DEFAULT_EPSILONS
    attack_kinds: tuple = KINDS
    output_dir: str = "results"
    base_seed: int = 0
    n_fit: int = 10
    center: bool = True
    cascade: bool = False
    dim_epsilons: tuple = DIM_EPSILONS
    dim_widths: dict = field(default_factory=lambda: dict(DIM_WIDTHS))
    train_limit: int | None = None
    test_limit: int | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if isinstance(self.net, dict):
            self.net = NetConfig(**self.net)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.epsilon_grid = tuple(float(e) for e in self.epsilon_grid)
        self.dim_epsilons = tuple(float(e) for e in self.dim_epsilons)
        self.attack_kinds = tuple(self.attack_kinds)
        if self.replicates < 1:
            raise UsageError("replicates must be >= 1")
        if self.k_stimuli < 2:
            raise UsageError("k_stimuli must be >= 2")
        if list(self.epsilon_grid) != sorted(self.epsilon_grid):
            raise UsageError("epsilon_grid must be sorted ascending")
        if any(e < 0 for e in self.epsilon_grid):
            raise UsageError("epsilons must be >= 0")
        bad = set(self.attack_kinds) - set(KINDS)
        if bad:
            raise UsageError(f"unknown attack kinds {sorted(bad)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        try:
            net = NetConfig(**d.get("net", {}))
            train = TrainConfig(**d.get("train", {}))
        except TypeError as exc:
            raise UsageError(str(exc)) from exc
        return cls(**{**d, "net": net, "train": train})

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["net"]["widths"] = list(self.net.widths)
        for key in ("epsilon_grid", "attack_kinds", "dim_epsilons"):
            d[key] = list(d[key])
        return d

    def training_key(self, replicate: int) -> str:
        """Hash of everything that determines a trained replicate."""
        payload = {
            "net": asdict(replace(self.net, seed=0)),
            "train": asdict(self.train),
            "seed": replicate_seed(self.base_seed, replicate),
            "train_limit": self.train_limit,
            "test_limit": self.test_limit,
        }
        payload["net"]["widths"] = list(self.net.widths)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Member:
    replicate: int
    seed: int
    net: LocalErrorNet
    curves: list  # rows of (epoch, layer, train_error, test_error)


@dataclass
class AggregateRow:
    layer: int
    epsilon: float = 0.0
    kind: str = "clean"
    acc_mean: float = math.nan
    acc_se: float = math.nan
    alpha_mean: float = math.nan
    alpha_se: float = math.nan
    dim_mean: float = math.nan
    dim_se: float = math.nan
    top10_mean: float = math.nan
    top10_se: float = math.nan
    n: int = 0


def aggregate(values) -> tuple[float, float, float, int]:
    """(mean, sample std, standard error, count); std and se are 0 for one value."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise DegenerateError("cannot aggregate zero values")
    mean = float(v.mean())
    if v.size == 1:
        return mean, 0.0, 0.0, 1
    std = float(v.std(ddof=1))
    return mean, std, std / math.sqrt(v.size), int(v.size)


# data -----------------------------------------------------------------------

def load_datasets(cfg: ExperimentConfig, data_dir=None) -> tuple[LabeledDataset, LabeledDataset]:
    train = load_mnist("train", data_dir)
    test = load_mnist("test", data_dir)
    if cfg.train_limit:
        train = train.take(np.arange(min(cfg.train_limit, len(train))))
    if cfg.test_limit:
        test = test.take(np.arange(min(cfg.test_limit, len(test))))
    return train, test


def stimulus_ids(cfg: ExperimentConfig, n_test: int) -> np.ndarray:
    """Fixed test-set rows used for every spectrum of an experiment."""
    k = min(cfg.k_stimuli, n_test)
    return np.sort(make_rng(cfg.base_seed, STIMULUS_STREAM).choice(n_test, size=k, replace=False))


# training -------------------------------------------------------------------

def _train_member(cfg: ExperimentConfig, replicate: int, train_ds, test_ds) -> Member:
    seed = replicate_seed(cfg.base_seed, replicate)
    net = init_network(replace(cfg.net, seed=seed), make_rng(seed))
    rng = make_rng(seed, 1)
    curves = []
    train_err0 = 1.0 - test_accuracy(net, train_ds)
    test_err = 1.0 - test_accuracy(net, test_ds)
    curves += [(0, l + 1, float(train_err0[l]), float(test_err[l])) for l in range(net.depth)]
    for epoch in range(cfg.train.epochs):
        try:
            train_err = train_epoch(net, train_ds, cfg.train, epoch, rng)
        except DivergenceError as exc:
            raise DivergenceError(f"replicate {replicate}: {exc}", exc.layer, exc.batch, replicate) from exc
        test_err = 1.0 - test_accuracy(net, test_ds)
        curves += [(epoch + 1, l + 1, float(train_err[l]), float(test_err[l])) for l in range(net.depth)]
        logger.info("replicate %d epoch %d test error %s", replicate, epoch + 1, np.round(test_err, 4))
    return Member(replicate, seed, net, curves)


def _checkpoint_path(cfg: ExperimentConfig, replicate: int, cache_dir=None) -> Path:
    root = Path(cache_dir) if cache_dir else Path(cfg.output_dir) / "checkpoints"
    return root / f"replicate{replicate:03d}_{cfg.training_key(replicate)}.npz"


def _load_or_train(cfg, replicate, train_ds, test_ds, reuse, cache_dir):
    path = _checkpoint_path(cfg, replicate, cache_dir)
    if reuse and path.exists():
        net, extra = load_checkpoint(path)
        return Member(replicate, extra["seed"], net, [tuple(r) for r in extra["curves"]])
    member = _train_member(cfg, replicate, train_ds, test_ds)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(member.net, path, seed=member.seed, replicate=replicate, curves=member.curves)
    return member


def run_training(cfg: ExperimentConfig, train_ds, test_ds, reuse: bool = True, cache_dir=None) -> list[Member]:
    """Train (or reload) every replicate and write ``curves.csv``."""
    jobs = (delayed(_load_or_train)(cfg, r, train_ds, test_ds, reuse, cache_dir) for r in range(cfg.replicates))
    members = Parallel(n_jobs=cfg.n_jobs)(jobs)
    rows = [(m.replicate,) + tuple(c) for m in members for c in m.curves]
    write_csv(Path(cfg.output_dir) / "curves.csv", ["replicate", "epoch", "layer", "train_error", "test_error"], rows)
    summary = []
    for m in members:
        by_layer = {}
        for epoch, layer, _, test_err in m.curves:
            by_layer.setdefault(layer, []).append((epoch, 1.0 - test_err))
        for layer, series in sorted(by_layer.items()):
            best_epoch, best_acc = max(series, key=lambda t: (t[1], -t[0]))
            summary.append((m.replicate, layer, series[-1][1], best_acc, best_epoch))
    write_csv(Path(cfg.output_dir) / "training_summary.csv",
              ["replicate", "layer", "final_test_acc", "best_test_acc", "best_epoch"], summary)
    return members


# analysis -------------------------------------------------------------------

def _spectrum_stats(y: np.ndarray, cfg: ExperimentConfig) -> dict:
    lam = eigen_spectrum(y, center=cfg.center)
    alpha, r2 = fit_power_law(lam, cfg.n_fit)
    return {
        "alpha": alpha,
        "r_squared": r2,
        "dim": participation_dimensionality(lam),
        "top10": explained_variance_fraction(lam, min(10, lam.size)),
        "eigenvalues": lam,
    }


def _clean_member(member: Member, cfg: ExperimentConfig, test_ds, ids) -> list[dict]:
    net = member.net
    acc = test_accuracy(net, test_ds)
    # full-set activations, then the stimulus rows: the same arithmetic as an epsilon = 0 attack
    inputs = clean_layer_inputs(net, test_ds.images)
    rows = []
    for l in range(net.depth):
        _, y, _, _ = layer_forward(net, l, inputs[l])
        y = y[ids]
        row = {"replicate": member.replicate, "layer": l + 1, "epsilon": 0.0, "kind": "clean", "acc": acc[l]}
        try:
            row.update(_spectrum_stats(y, cfg))
        except DegenerateError as exc:
            row["error"] = str(exc)
        rows.append(row)
    return rows


def _aggregate_rows(rows: list[dict], keys=("kind", "layer", "epsilon")) -> list[AggregateRow]:
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    skipped = 0
    for key, grp in sorted(groups.items()):
        ok = [r for r in grp if "error" not in r]
        skipped += len(grp) - len(ok)
        acc = aggregate(r["acc"] for r in grp)
        agg = AggregateRow(layer=key[keys.index("layer")], epsilon=key[keys.index("epsilon")],
                           kind=key[keys.index("kind")], acc_mean=acc[0], acc_se=acc[2], n=acc[3])
        if ok:
            agg.alpha_mean, _, agg.alpha_se, _ = aggregate(r["alpha"] for r in ok)
            agg.dim_mean, _, agg.dim_se, _ = aggregate(r["dim"] for r in ok)
            agg.top10_mean, _, agg.top10_se, _ = aggregate(r["top10"] for r in ok)
        out.append(agg)
    if skipped:
        logger.warning("%d degenerate spectra excluded from aggregation", skipped)
    return out


AGG_COLUMNS = ["kind", "layer", "epsilon", "acc_mean", "acc_se", "alpha_mean", "alpha_se",
               "dim_mean", "dim_se", "top10_mean", "top10_se", "n"]
REPLICATE_COLUMNS = ["replicate", "kind", "layer", "epsilon", "acc", "alpha", "r_squared", "dim", "top10"]


def _agg_tuple(a: AggregateRow, columns=AGG_COLUMNS):
    return tuple(getattr(a, c) for c in columns)


def _replicate_tuples(rows):
    return [tuple(r.get(c, math.nan) for c in REPLICATE_COLUMNS) for r in rows]


def run_clean_analysis(members: list[Member], cfg: ExperimentConfig, test_ds, prefix: str = "clean"):
    """Per-layer accuracy, alpha, D and top-10 share on clean stimuli.

    Returns (per-replicate rows, aggregates); also writes both tables plus
    the raw spectra.
    """
    ids = stimulus_ids(cfg, len(test_ds))
    per_member = Parallel(n_jobs=cfg.n_jobs)(delayed(_clean_member)(m, cfg, test_ds, ids) for m in members)
    rows = [r for rs in per_member for r in rs]
    aggs = _aggregate_rows(rows)
    out = Path(cfg.output_dir)
    write_csv(out / f"{prefix}_replicates.csv", REPLICATE_COLUMNS, _replicate_tuples(rows))
    write_csv(out / f"{prefix}_aggregate.csv", AGG_COLUMNS, [_agg_tuple(a) for a in aggs])
    spectra = [(r["replicate"], r["layer"], i + 1, float(v))
               for r in rows if "eigenvalues" in r for i, v in enumerate(r["eigenvalues"])]
    write_csv(out / f"{prefix}_spectra.csv", ["replicate", "layer", "rank", "eigenvalue"], spectra)
    return rows, aggs


def _attack_member(member: Member, cfg: ExperimentConfig, test_ds, ids, kinds, epsilons) -> list[dict]:
    """Accuracy over the whole test set and spectra over ``ids`` for every (kind, layer, epsilon)."""
    net = member.net
    labels = np.asarray(test_ds.labels)
    image_ids = np.arange(len(test_ds))
    rows = []
    clean = None if cfg.cascade else clean_layer_inputs(net, test_ds.images)
    noise = {}
    if "gaussian" in kinds:
        # unit noise is shared by every epsilon; only its scale changes
        dims = (net.config.input_dim,) + net.config.widths[:-1]
        noise = {l: gaussian_image_noise(member.seed, l, image_ids, dims[l]) for l in range(net.depth)}
    for kind in kinds:
        for eps in epsilons:
            spec = AttackSpec(kind, eps, seed=member.seed)
            x = test_ds.images
            for l in range(net.depth):
                if not cfg.cascade:
                    x = clean[l]
                delta = perturbation(net, l, x, labels, spec, image_ids, noise=noise.get(l))
                _, y, s, _ = layer_forward(net, l, x + delta)
                row = {"replicate": member.replicate, "kind": kind, "layer": l + 1, "epsilon": eps,
                       "acc": float(np.mean(classify_at_layer(s) == labels))}
                try:
                    stats = _spectrum_stats(y[ids], cfg)
                    stats.pop("eigenvalues")
                    row.update(stats)
                except DegenerateError as exc:
                    row["error"] = str(exc)
                rows.append(row)
                x = y
    return rows


def run_attack_sweep(members: list[Member], cfg: ExperimentConfig, test_ds, kinds=None, epsilons=None,
                     prefix: str = "attack"):
    """Attacked accuracy and spectrum statistics over (kind, epsilon, layer)."""
    kinds = tuple(kinds or cfg.attack_kinds)
    epsilons = tuple(cfg.epsilon_grid if epsilons is None else epsilons)
    if not epsilons:
        raise UsageError("epsilon grid is empty")
    ids = stimulus_ids(cfg, len(test_ds))
    per_member = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_attack_member)(m, cfg, test_ds, ids, kinds, epsilons) for m in members)
    rows = [r for rs in per_member for r in rs]
    aggs = _aggregate_rows(rows)
    out = Path(cfg.output_dir)
    write_csv(out / f"{prefix}_replicates.csv", REPLICATE_COLUMNS, _replicate_tuples(rows))
    write_csv(out / f"{prefix}_aggregate.csv", AGG_COLUMNS, [_agg_tuple(a) for a in aggs])
    return rows, aggs


def theory_curves(alphas, widths: dict, layer_width: int) -> list[tuple]:
    """Rows of (alpha, exact-sum D per panel width, integral D, exact D at layer width, zeta limit)."""
    rows = []
    for a in alphas:
        a = float(a)
        vals = [theoretical_dimensionality(a, n) for n in widths.values()]
        vals.append(theoretical_dimensionality(a, layer_width, "integral"))
        vals.append(theoretical_dimensionality(a, layer_width))
        vals.append(zeta_dimensionality(a) if a > 1 else math.nan)
        rows.append((a, *vals))
    return rows


def run_dimensionality_comparison(members: list[Member], cfg: ExperimentConfig, test_ds, sweep_rows=None):
    """Measured (alpha, D) per layer at a few epsilons plus theoretical D(alpha) curves."""
    if sweep_rows is None:
        sweep_rows, _ = run_attack_sweep(members, cfg, test_ds, epsilons=cfg.dim_epsilons, prefix="dim")
    wanted = {round(e, 10) for e in cfg.dim_epsilons}
    rows = [r for r in sweep_rows if round(r["epsilon"], 10) in wanted]
    aggs = _aggregate_rows(rows)
    out = Path(cfg.output_dir)
    write_csv(out / "dim_points.csv", AGG_COLUMNS, [_agg_tuple(a) for a in aggs])

    widths = {k: v for k, v in cfg.dim_widths.items() if k in cfg.attack_kinds}
    layer_width = max(cfg.net.widths)
    alphas = np.round(np.arange(0.0, 3.0001, 0.01), 2)
    header = ["alpha"] + [f"d_sum_{k}_n{n}" for k, n in widths.items()] + [
        f"d_integral_n{layer_width}", f"d_sum_n{layer_width}", "d_zeta"]
    write_csv(out / "dim_theory.csv", header, theory_curves(alphas, widths, layer_width))

    fits = []
    for kind, n in widths.items():
        pts = [a for a in aggs if a.kind == kind and not math.isnan(a.alpha_mean)]
        if pts:
            best = best_fit_width([a.alpha_mean for a in pts], [a.dim_mean for a in pts],
                                  range(2, layer_width + 1))
            fits.append((kind, n, best))
    write_csv(out / "dim_width_fit.csv", ["kind", "reference_n", "best_fit_n"], fits)
    return aggs, fits


# output ---------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def config_hash(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    d.pop("output_dir")
    d.pop("n_jobs")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def write_manifest(cfg: ExperimentConfig, command: str, outputs=()) -> Path:
    import sklearn

    from . import __version__

    out = Path(cfg.output_dir)
    files = {}
    for p in sorted(set(outputs) | {p.name for p in out.glob("*.csv")}):
        data = (out / p).read_bytes()
        files[p] = hashlib.sha256(data).hexdigest()
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "replicate_seeds": [replicate_seed(cfg.base_seed, r) for r in range(cfg.replicates)],
        "versions": {
            "localerr": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scikit-learn": sklearn.__version__,
        },
        "outputs": files,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path

