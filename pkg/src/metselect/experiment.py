"""Sweep runner: train and evaluate every cell, then write CSV/JSON results.

A cell is one ``(model, policy, depth, budget, split)`` combination. Cells
are independent; a failing cell is recorded and the sweep carries on. Rows
are sorted by cell key before writing, so results never depend on the order
in which (possibly parallel) cells finish.
"""

from __future__ import annotations

import csv
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .encoders import ARCHITECTURES, EncoderConfig, GraphOperators
from .evaluation import (
    RESULT_COLUMNS, RunReport, SplitReport, delta_max, evaluate, mean_std, write_histogram_csv,
)
from .graph import Graph, SbmSpec, SplitSet, generate_sbm, load_dataset, make_splits
from .poison import AttackSpec, attack, masked_train_labels
from .selection import POLICIES
from .training import LOSSES, TrainConfig, train

log = logging.getLogger(__name__)

LR_GRID = (0.01, 0.001)
ECHO_COLUMNS = ("depth", "loss", "lr", "hidden", "epochs", "seed", "self_loops", "eq4_literal",
                "attack", "budget", "best_epoch")


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    sbm: str | dict | None = None
    models: list = field(default_factory=lambda: ["gcn"])
    policies: list = field(default_factory=lambda: ["metselect"])
    depths: list = field(default_factory=lambda: [2])
    hidden: int = 32
    self_loops: bool = False
    loss: str = "ce"
    eq4_literal: bool = False
    lr: str = "0.01"
    epochs: int = 500
    splits: int = 10
    seed: int = 0
    poison: str | None = None
    budgets: list = field(default_factory=lambda: [0.0])
    out: str = "results"
    jobs: int = 1
    record_timing: bool = False

    def __post_init__(self):
        for name in ("models", "policies", "depths", "budgets"):
            v = getattr(self, name)
            if isinstance(v, (str, int, float)):
                v = [v]
            setattr(self, name, list(v))
        self.depths = [int(d) for d in self.depths]
        self.budgets = [float(b) for b in self.budgets]
        self.lr = str(self.lr)
        self.validate()

    def validate(self) -> None:
        if (self.dataset is None) == (self.sbm is None):
            raise ConfigError("give exactly one of dataset and sbm")
        if not self.policies or not self.depths or not self.models:
            raise ConfigError("need at least one model, one policy and one depth")
        for m in self.models:
            if m not in ARCHITECTURES:
                raise ConfigError(f"unknown model {m!r}")
        for p in self.policies:
            if p not in POLICIES:
                raise ConfigError(f"unknown policy {p!r}")
        if any(d < 1 for d in self.depths):
            raise ConfigError("depths must be >= 1")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        self.learning_rates()
        if self.epochs < 1 or self.splits < 1 or self.hidden < 1 or self.jobs < 1:
            raise ConfigError("epochs, splits, hidden and jobs must be >= 1")
        if self.poison is not None:
            for b in self.budgets:
                AttackSpec(self.poison, b, 0)

    def learning_rates(self) -> tuple[float, ...]:
        if self.lr == "sweep":
            return LR_GRID
        try:
            lr = float(self.lr)
        except ValueError:
            raise ConfigError(f"--lr must be a number or 'sweep', got {self.lr!r}") from None
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        return (lr,)

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @property
    def dataset_name(self) -> str:
        if self.dataset is not None:
            return Path(self.dataset).name
        if isinstance(self.sbm, str):
            return Path(self.sbm).stem
        return "sbm"


@dataclass(frozen=True, order=True)
class Cell:
    model: str
    policy: str
    depth: int
    budget: float
    split: int

    @property
    def tag(self) -> str:
        return f"{self.model}_{self.policy}_d{self.depth}_p{self.budget:g}_s{self.split}"


def load_source(cfg: ExperimentConfig) -> tuple[Graph, SplitSet]:
    if cfg.dataset is not None:
        return load_dataset(cfg.dataset, n_splits=cfg.splits, seed=cfg.seed)
    spec = cfg.sbm
    if isinstance(spec, str):
        spec = SbmSpec.from_json(spec)
    elif isinstance(spec, dict):
        spec = SbmSpec(**spec)
    g = generate_sbm(spec)
    return g, make_splits(g, n_splits=cfg.splits, seed=cfg.seed)


def cells(cfg: ExperimentConfig, n_splits: int) -> list[Cell]:
    return sorted(
        Cell(m, p, d, b, s)
        for m in cfg.models for p in cfg.policies for d in cfg.depths
        for b in cfg.budgets for s in range(n_splits)
    )


def run_cell(cfg: ExperimentConfig, g: Graph, splits: SplitSet, cell: Cell) -> dict:
    """Train and evaluate one cell; with an lr grid the best validation run wins."""
    split = splits[cell.split]
    train_mask = split.masks(g.num_nodes)[0]
    atk = None
    if cfg.poison is not None and cell.budget > 0:
        atk = AttackSpec(cfg.poison, cell.budget, cfg.seed + cell.split)
        g = attack(g, atk, masked_train_labels(g, train_mask))
    enc = EncoderConfig(cell.model, cell.depth, cfg.hidden, g.num_features, cfg.self_loops)
    ops = GraphOperators(g, cfg.self_loops)
    best = None
    for lr in cfg.learning_rates():
        tc = TrainConfig(loss=cfg.loss, epochs=cfg.epochs, lr=lr, seed=cfg.seed + cell.split,
                         policy=cell.policy, eq4_literal=cfg.eq4_literal)
        model = train(g, split, enc, tc, ops)
        report = evaluate(model, g, split, cell.policy, cell.split, ops)
        if best is None or report.val_f1 > best[0].val_f1:
            best = (report, model)
    report, model = best
    report.config.update(attack=cfg.poison if atk else "", budget=cell.budget)
    return {"report": asdict(report), "history": [asdict(r) for r in model.history]}


def _run_cell_safe(args):
    cfg, g, splits, cell = args
    try:
        return cell, run_cell(cfg, g, splits, cell), None
    except Exception as exc:  # noqa: BLE001 - isolation boundary
        return cell, None, "".join(traceback.format_exception_only(type(exc), exc)).strip()


def _row(cfg: ExperimentConfig, cell: Cell, report: dict) -> dict:
    c = report["config"]
    row = {
        "dataset": cfg.dataset_name, "model": cell.model, "policy": cell.policy, "split": cell.split,
        "train_f1": f"{report['train_f1']:.6f}", "val_f1": f"{report['val_f1']:.6f}",
        "test_f1": f"{report['test_f1']:.6f}",
        # wall-clock varies between runs; kept out of the CSV unless asked for
        "sec_per_epoch": f"{report['sec_per_epoch']:.6f}" if cfg.record_timing else "",
        "depth": cell.depth, "loss": c["loss"], "lr": f"{c['lr']:g}", "hidden": c["hidden"],
        "epochs": c["epochs"], "seed": c["seed"], "self_loops": int(c["self_loops"]),
        "eq4_literal": int(c["eq4_literal"]), "attack": c["attack"], "budget": f"{cell.budget:g}",
        "best_epoch": report["best_epoch"],
    }
    return row


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def run_experiment(cfg: ExperimentConfig, write_histories: bool = False) -> int:
    """Run every cell and write results; returns the number of failed cells."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    g, splits = load_source(cfg)
    todo = cells(cfg, len(splits))
    jobs = [(cfg, g, splits, c) for c in todo]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            done = list(pool.map(_run_cell_safe, jobs))
    else:
        done = [_run_cell_safe(j) for j in jobs]
    done.sort(key=lambda t: t[0])

    rows, failures, reports = [], [], RunReport()
    hist_dir = out / "histograms"
    hist_dir.mkdir(exist_ok=True)
    for cell, result, err in done:
        if err is not None:
            log.error("cell %s failed: %s", cell.tag, err)
            failures.append({"cell": cell.tag, "error": err})
            continue
        rep = result["report"]
        reports.append(SplitReport(**rep))
        rows.append(_row(cfg, cell, rep))
        write_histogram_csv(hist_dir / f"{cell.tag}.csv", rep["histogram"])
        if write_histories:
            hdir = out / "history"
            hdir.mkdir(exist_ok=True)
            _write_csv(hdir / f"{cell.tag}.csv", ("epoch", "loss", "train_f1", "val_f1"),
                       [{k: (f"{h[k]:.6f}" if k != "epoch" else h[k]) for k in ("epoch", "loss", "train_f1", "val_f1")}
                        for h in result["history"]])
    _write_csv(out / "results.csv", RESULT_COLUMNS + ECHO_COLUMNS, rows)
    (out / "report.json").write_text(reports.to_json() + "\n")
    (out / "config.json").write_text(cfg.to_json() + "\n")
    (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")
    if rows:
        emit_summary(out)
        if cfg.poison is not None:
            emit_poison_table(out)
    return len(failures)


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _method_key(r: dict) -> tuple:
    return (r["model"], r["policy"], int(r.get("depth", 0) or 0), float(r.get("budget", 0) or 0))


def emit_summary(results_dir) -> Path:
    """Per-dataset, per-method mean and std of each metric plus the Δ-max column."""
    results_dir = Path(results_dir)
    rows = read_results(results_dir / "results.csv")
    if not rows:
        raise ValueError(f"no result rows in {results_dir / 'results.csv'}")
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["dataset"],) + _method_key(r), []).append(r)
    datasets = sorted({k[0] for k in groups})
    methods = sorted({k[1:] for k in groups})
    table = np.full((len(methods), len(datasets)), np.nan)
    stats = {}
    for key, rs in groups.items():
        agg = {m: mean_std([float(r[m]) for r in rs]) for m in ("train_f1", "val_f1", "test_f1")}
        stats[key] = (agg, len(rs))
        table[methods.index(key[1:]), datasets.index(key[0])] = agg["test_f1"][0]
    dmax = delta_max(table)
    out_rows = []
    for key in sorted(stats):
        agg, n = stats[key]
        row = {"dataset": key[0], "model": key[1], "policy": key[2], "depth": key[3],
               "budget": f"{key[4]:g}", "n": n}
        for m, (mu, sd) in agg.items():
            row[m + "_mean"] = f"{mu:.6f}"
            row[m + "_std"] = f"{sd:.6f}"
        row["delta_max"] = f"{dmax[methods.index(key[1:])]:.6f}"
        out_rows.append(row)
    cols = ["dataset", "model", "policy", "depth", "budget", "n",
            "train_f1_mean", "train_f1_std", "val_f1_mean", "val_f1_std",
            "test_f1_mean", "test_f1_std", "delta_max"]
    path = results_dir / "summary.csv"
    _write_csv(path, cols, out_rows)
    return path


def emit_poison_table(results_dir) -> Path:
    """Mean train/test micro-F1 per (budget, policy), the axes of a robustness curve."""
    results_dir = Path(results_dir)
    rows = read_results(results_dir / "results.csv")
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((float(r["budget"]), r["policy"]), []).append(r)
    out_rows = [
        {"budget": f"{b:g}", "policy": p,
         "train_f1": f"{mean_std([float(r['train_f1']) for r in rs])[0]:.6f}",
         "test_f1": f"{mean_std([float(r['test_f1']) for r in rs])[0]:.6f}"}
        for (b, p), rs in sorted(groups.items())
    ]
    path = results_dir / "poison.csv"
    _write_csv(path, ("budget", "policy", "train_f1", "test_f1"), out_rows)
    return path
