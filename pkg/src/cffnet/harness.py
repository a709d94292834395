"""Experiment configuration, seeded runs, variant comparison and metric export.

Output layout of one run (``<out_dir>/<variant>-seed<seed>/``):

    config.txt    key=value snapshot of the resolved configuration
    metrics.csv   one row per (layer, epoch): loss, gamma, sampled accuracies
    gamma.csv     one row per (layer, epoch): gamma before/after and its gradient
    summary.csv   final train/test accuracy
    eval.json     final train/test reports incl. confusion matrices
    model/        weights (.npy) and network.json
    timing.json   wall-clock and peak RSS per layer (the only non-reproducible file)
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import resource
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .collab import ALPHA_MODES, VARIANTS, CollabParams, NetworkState, build_network, train_network
from .dataio import Dataset, load_dataset
from .errors import ConfigError, ContractError
from .evalstats import EvalReport, StatReport, compare_samples, evaluate
from .ffcore import REDUCTIONS, AdamConfig, DenseLayer, GoodnessConfig
from .mathcore import Rng
from .verify import run_check_suite

log = logging.getLogger(__name__)

IDX_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
METRICS_FILES = ("config.txt", "metrics.csv", "gamma.csv", "summary.csv", "eval.json")


@dataclass
class ExperimentConfig:
    train_images: str = None
    train_labels: str = None
    test_images: str = None
    test_labels: str = None
    data_dir: str = None
    train_split: int = 50000
    variant: str = "baseline"
    widths: tuple = (784, 500, 500)
    epochs_per_layer: int = 1000
    batch_size: int = 0
    lr: float = 0.03
    gamma_lr: float = 0.01
    gamma_init: float = 1.0
    theta: float = 2.0
    alpha_mode: str = "ones"
    goodness: str = "mean"
    normalize_first: bool = True
    skip_first_layer_score: bool = False
    seed: int = 1
    out_dir: str = "runs"
    eval_every: int = 10

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)

    @property
    def run_id(self):
        return f"{self.variant}-seed{self.seed}"

    def path(self, key):
        """Resolved dataset path; falls back to the canonical name under data_dir."""
        value = getattr(self, key)
        if value is None and self.data_dir is not None:
            value = str(Path(self.data_dir) / IDX_NAMES[key])
        return value

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError("variant", f"must be one of {', '.join(VARIANTS)}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError("alpha_mode", f"must be one of {', '.join(ALPHA_MODES)}")
        if self.goodness not in REDUCTIONS:
            raise ConfigError("goodness", f"must be one of {', '.join(REDUCTIONS)}")
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ConfigError("widths", "need an input width plus at least one positive layer width")
        for name in ("train_split", "lr", "gamma_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be > 0")
        for name in ("epochs_per_layer", "batch_size", "eval_every", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        for name in ("gamma_init", "theta", "lr", "gamma_lr"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(name, "must be finite")
        return self

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "widths":
                value = ",".join(str(w) for w in value)
            elif value is None:
                value = ""
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key, raw):
    kind = _FIELD_TYPES[key]
    raw = str(raw).strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("1", "true", "yes")
        if kind == "tuple":
            return tuple(int(w) for w in raw.replace("/", ",").split(",") if w.strip())
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {kind}") from None
    return raw or None


def normalize_key(key):
    return key.strip().lstrip("-").replace("-", "_")


def parse_config_text(text):
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", f"expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        values[normalize_key(key)] = raw
    return values


def build_config(file_values=None, overrides=None):
    """Defaults <- config-file values <- overrides (highest precedence)."""
    cfg = {}
    for source in (file_values or {}, overrides or {}):
        for key, raw in source.items():
            key = normalize_key(key)
            if key not in _FIELD_TYPES:
                raise ConfigError(key, "unknown configuration key")
            if raw is None:
                continue
            cfg[key] = raw if not isinstance(raw, str) else _coerce(key, raw)
    return ExperimentConfig(**cfg).validate()


def load_config(path=None, overrides=None):
    values = {}
    if path:
        try:
            values = parse_config_text(Path(path).read_text())
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    return build_config(values, overrides)


def load_data(cfg):
    paths = {key: cfg.path(key) for key in IDX_NAMES}
    for key, value in paths.items():
        if value is None:
            raise ConfigError(key, "dataset path not set (use --data-dir or --" + key.replace("_", "-") + ")")
    train = load_dataset(paths["train_images"], paths["train_labels"], cfg.train_split)
    test = load_dataset(paths["test_images"], paths["test_labels"])
    return train, test


@dataclass
class RunRecord:
    config: ExperimentConfig
    net: NetworkState
    loss_traces: list
    progress: list
    gamma_trace: object
    seconds_per_layer: list
    peak_rss_mb: list
    train_report: EvalReport
    test_report: EvalReport
    out_path: Path = None

    @property
    def run_id(self):
        return self.config.run_id


def _fmt(x):
    if x is None:
        return ""
    return repr(float(x))


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _peak_rss_mb():
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def run_experiment(cfg, data=None, write=True):
    """Train one variant from ``cfg`` and (optionally) export all run files."""
    cfg.validate()
    train, test = data if data is not None else load_data(cfg)
    if train.images.shape[1] != cfg.widths[0]:
        raise ConfigError("widths", f"input width {cfg.widths[0]} does not match data width {train.images.shape[1]}")
    n_layers = len(cfg.widths) - 1
    collab = CollabParams.for_variant(cfg.variant, n_layers, cfg.gamma_init, cfg.gamma_lr, cfg.alpha_mode)
    net = build_network(
        cfg.widths, Rng(cfg.seed, stream=0), collab,
        GoodnessConfig(cfg.theta, cfg.goodness), cfg.normalize_first,
    )
    progress = []
    rss = []

    def on_epoch(layer, epoch, loss, gamma):
        row = {"layer": layer, "epoch": layer * cfg.epochs_per_layer + epoch,
               "loss": loss, "gamma": gamma, "train_acc": None, "test_acc": None}
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            row["train_acc"] = evaluate(net, train, cfg.skip_first_layer_score).accuracy
            row["test_acc"] = evaluate(net, test, cfg.skip_first_layer_score).accuracy
            log.info("layer %d epoch %d loss %.5f gamma %.5f train %.4f test %.4f",
                     layer, epoch, loss, gamma, row["train_acc"], row["test_acc"])
        progress.append(row)
        if epoch == cfg.epochs_per_layer - 1:
            rss.append(_peak_rss_mb())

    log.info("run %s: %d train / %d test samples, widths %s", cfg.run_id, len(train), len(test), cfg.widths)
    net, result = train_network(
        net, train, cfg.variant, cfg.epochs_per_layer, AdamConfig(lr=cfg.lr),
        Rng(cfg.seed, stream=1), cfg.batch_size, on_epoch,
    )
    record = RunRecord(
        cfg, net, result.loss_traces, progress, result.gamma_trace, result.seconds_per_layer,
        rss or [_peak_rss_mb()] * n_layers,
        evaluate(net, train, cfg.skip_first_layer_score),
        evaluate(net, test, cfg.skip_first_layer_score),
    )
    log.info("run %s: train acc %.4f, test acc %.4f", cfg.run_id, record.train_report.accuracy, record.test_report.accuracy)
    if write:
        write_run(record, Path(cfg.out_dir) / cfg.run_id)
    return record


def write_run(record, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    cfg = record.config
    (path / "config.txt").write_text(cfg.to_text())
    (path / "metrics.csv").write_text(_csv_text(
        ["run_id", "variant", "layer", "epoch", "loss", "gamma", "train_acc", "test_acc"],
        [[cfg.run_id, cfg.variant, r["layer"], r["epoch"], _fmt(r["loss"]), _fmt(r["gamma"]),
          _fmt(r["train_acc"]), _fmt(r["test_acc"])] for r in record.progress],
    ))
    (path / "gamma.csv").write_text(_csv_text(
        ["run_id", "layer", "epoch", "gamma_before", "grad", "gamma_after"],
        [[cfg.run_id, g.layer, g.epoch, _fmt(g.gamma_before), _fmt(g.grad), _fmt(g.gamma_after)]
         for g in record.gamma_trace.records],
    ))
    (path / "summary.csv").write_text(_csv_text(
        ["run_id", "variant", "seed", "train_acc", "test_acc"],
        [[cfg.run_id, cfg.variant, cfg.seed, _fmt(record.train_report.accuracy), _fmt(record.test_report.accuracy)]],
    ))
    (path / "eval.json").write_text(json.dumps(
        {"train": record.train_report.to_dict(), "test": record.test_report.to_dict()}, indent=1) + "\n")
    (path / "timing.json").write_text(json.dumps(
        {"seconds_per_layer": record.seconds_per_layer, "peak_rss_mb_after_layer": record.peak_rss_mb}, indent=1) + "\n")
    save_network(record.net, path / "model")
    record.out_path = path
    return path


def save_network(net, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, layer in enumerate(net.layers):
        np.save(path / f"layer{i}_W.npy", layer.W)
        np.save(path / f"layer{i}_b.npy", layer.b)
    meta = {
        "widths": net.widths,
        "gamma": net.collab.gamma.tolist(),
        "alpha": net.collab.alpha.tolist(),
        "learnable": net.collab.learnable,
        "gamma_lr": net.collab.gamma_lr,
        "theta": net.goodness_cfg.theta,
        "goodness": net.goodness_cfg.reduction,
        "normalize_first": net.normalize_first,
    }
    (path / "network.json").write_text(json.dumps(meta, indent=1) + "\n")


def load_network(path):
    """Load a network saved by :func:`save_network` (a run dir or its model/ dir)."""
    path = Path(path)
    if not (path / "network.json").exists() and (path / "model" / "network.json").exists():
        path = path / "model"
    try:
        meta = json.loads((path / "network.json").read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError("model", f"cannot read {path / 'network.json'}: {exc}") from exc
    layers = [
        DenseLayer(np.load(path / f"layer{i}_W.npy"), np.load(path / f"layer{i}_b.npy"))
        for i in range(len(meta["widths"]) - 1)
    ]
    collab = CollabParams(meta["gamma"], meta["alpha"], meta["learnable"], meta["gamma_lr"])
    return NetworkState(layers, collab, GoodnessConfig(meta["theta"], meta["goodness"]), meta["normalize_first"])


@dataclass
class Comparison:
    seeds: list
    accuracies: dict  # variant -> {"train": [...], "test": [...]} in seed order
    table: list
    stats: dict  # (variant_a, variant_b) -> StatReport
    runs: list = field(default_factory=list)


STAT_PAIRS = (("fcff", "baseline"), ("acff", "baseline"), ("acff", "fcff"))


def summarize(accuracies, seeds, pairs=STAT_PAIRS):
    """Per-variant mean/sd rows plus paired statistics over seeds.

    Improvements are test-accuracy differences to the baseline mean, absolute
    (accuracy points as a fraction) and relative (divided by the baseline mean).
    """
    base = float(np.mean(accuracies["baseline"]["test"])) if "baseline" in accuracies else float("nan")
    table = []
    for variant, acc in accuracies.items():
        train, test = np.asarray(acc["train"]), np.asarray(acc["test"])
        sd = lambda a: float(np.std(a, ddof=1)) if a.size > 1 else float("nan")
        improvement = float(np.mean(test)) - base
        table.append({
            "variant": variant,
            "n_seeds": int(test.size),
            "train_acc_mean": float(np.mean(train)),
            "train_acc_sd": sd(train),
            "test_acc_mean": float(np.mean(test)),
            "test_acc_sd": sd(test),
            "improvement_abs": 0.0 if variant == "baseline" else improvement,
            "improvement_rel": 0.0 if variant == "baseline" else improvement / base,
        })
    stats = {}
    for a, b in pairs:
        if a not in accuracies or b not in accuracies:
            continue
        if len(seeds) < 2:
            diff = float(np.mean(accuracies[a]["test"]) - np.mean(accuracies[b]["test"]))
            stats[(a, b)] = StatReport(float("nan"), 0, float("nan"), diff, True, "need at least 2 seeds")
        else:
            stats[(a, b)] = compare_samples(accuracies[a]["test"], accuracies[b]["test"])
    return table, stats


def compare_variants(base_cfg, seeds, data=None, write=True, variants=VARIANTS):
    """Run every variant for every seed and compare test accuracies."""
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("seeds", "need at least one seed")
    data = data if data is not None else load_data(base_cfg)
    accuracies = {v: {"train": [], "test": []} for v in variants}
    runs = []
    for seed in seeds:
        for variant in variants:
            cfg = dataclasses.replace(base_cfg, variant=variant, seed=seed)
            record = run_experiment(cfg, data=data, write=write)
            accuracies[variant]["train"].append(record.train_report.accuracy)
            accuracies[variant]["test"].append(record.test_report.accuracy)
            runs.append(record)
    table, stats = summarize(accuracies, seeds)
    comparison = Comparison(seeds, accuracies, table, stats, runs)
    if write:
        write_comparison(comparison, Path(base_cfg.out_dir))
    return comparison


def write_comparison(comparison, path):
    path.mkdir(parents=True, exist_ok=True)
    cols = ["variant", "n_seeds", "train_acc_mean", "train_acc_sd", "test_acc_mean", "test_acc_sd",
            "improvement_abs", "improvement_rel"]
    (path / "comparison.csv").write_text(_csv_text(
        cols, [[row["variant"], row["n_seeds"]] + [_fmt(row[c]) for c in cols[2:]] for row in comparison.table]))
    (path / "stats.csv").write_text(_csv_text(
        ["variant_a", "variant_b", "mean_difference", "t_statistic", "degrees_of_freedom", "cohens_d", "degenerate", "note"],
        [[a, b, _fmt(s.mean_difference), _fmt(s.t_statistic), s.degrees_of_freedom, _fmt(s.cohens_d),
          int(s.degenerate), s.note] for (a, b), s in comparison.stats.items()]))
    (path / "seeds.csv").write_text(_csv_text(
        ["variant", "seed", "train_acc", "test_acc"],
        [[v, seed, _fmt(acc["train"][i]), _fmt(acc["test"][i])]
         for v, acc in comparison.accuracies.items() for i, seed in enumerate(comparison.seeds)]))


def check(cases=100, seed=0, h=1e-5, tol=1e-4, **kwargs):
    """Run the gradient-verification suite on built-in tiny networks."""
    if not h > 0:
        raise ContractError(f"h must be > 0, got {h}")
    return run_check_suite(cases=cases, seed=seed, h=h, tol=tol, **kwargs)
