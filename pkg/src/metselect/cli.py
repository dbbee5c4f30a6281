"""Command-line entry point: ``metselect {train,sweep,poison,summarize,gen-sbm}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiment import ConfigError, ExperimentConfig, emit_poison_table, emit_summary, run_experiment
from .graph import SbmSpec, generate_sbm, make_splits, save_dataset

log = logging.getLogger("metselect")

DEFAULT_BUDGETS = "0,0.1,0.25,0.5"


def _csv_list(cast):
    def parse(text: str):
        try:
            return [cast(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--dataset", metavar="PATH", help="directory with features.csv, labels.csv, edges.csv")
    src.add_argument("--sbm", metavar="SPEC.json", help="generate a stochastic block model from this spec")
    p.add_argument("--config", metavar="FILE.json", help="experiment config; command-line flags win")
    p.add_argument("--model", dest="models", type=_csv_list(str), help="gcn|gat|gin (comma list allowed)")
    p.add_argument("--select", dest="policies", type=_csv_list(str),
                   help="final|metselect|metselect-max (comma list allowed)")
    p.add_argument("--eq4-literal", dest="eq4_literal", action="store_const", const=True,
                   help="use the argmin form of the selection rules")
    p.add_argument("--loss", choices=("ce", "distance"))
    p.add_argument("--depth", dest="depths", type=_csv_list(int), help="N[,N...]")
    p.add_argument("--hidden", type=int)
    p.add_argument("--self-loops", dest="self_loops", action="store_const", const=True)
    p.add_argument("--lr", help="0.01, 0.001 or 'sweep' (best of both by validation micro-F1)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--splits", type=int, help="number of stratified splits (one run each)")
    p.add_argument("--seed", type=int)
    p.add_argument("--poison", choices=("random", "greedy"))
    p.add_argument("--budgets", type=_csv_list(float), help="comma list of budget fractions")
    p.add_argument("--jobs", type=int, help="worker processes for independent cells")
    p.add_argument("--record-timing", dest="record_timing", action="store_const", const=True,
                   help="fill the sec_per_epoch column (makes results.csv run-dependent)")
    p.add_argument("--out", metavar="DIR")


OVERRIDES = ("dataset", "sbm", "models", "policies", "eq4_literal", "loss", "depths", "hidden",
             "self_loops", "lr", "epochs", "splits", "seed", "poison", "budgets", "jobs",
             "record_timing", "out")


def build_config(args: argparse.Namespace, **forced) -> ExperimentConfig:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
    for name in OVERRIDES:
        v = getattr(args, name, None)
        if v is not None:
            data[name] = v
    if args.dataset is not None or args.sbm is not None:
        # a source given on the command line replaces the config file's source
        data["dataset"], data["sbm"] = args.dataset, args.sbm
    for k, v in forced.items():
        data.setdefault(k, v)
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    return ExperimentConfig(**data)


def cmd_run(args, **forced) -> int:
    cfg = build_config(args, **forced)
    failed = run_experiment(cfg, write_histories=args.command == "train")
    print(f"wrote {Path(cfg.out) / 'results.csv'}")
    if failed:
        print(f"{failed} cell(s) failed; see {Path(cfg.out) / 'failures.json'}", file=sys.stderr)
        return 1
    return 0


def cmd_poison(args) -> int:
    if args.poison is None and not args.config:
        raise ConfigError("poison needs --poison random|greedy")
    if args.seeds is not None:
        args.splits = args.seeds
    cfg = build_config(args, budgets=_csv_list(float)(DEFAULT_BUDGETS))
    if cfg.poison is None:
        raise ConfigError("poison needs --poison random|greedy")
    if len(cfg.models) != 1 or len(cfg.depths) != 1:
        raise ConfigError("poison runs one model at one depth")
    failed = run_experiment(cfg)
    print(f"wrote {Path(cfg.out) / 'poison.csv'}")
    return 1 if failed else 0


def cmd_summarize(args) -> int:
    out = Path(args.out)
    path = emit_summary(out)
    print(f"wrote {path}")
    cfg_path = out / "config.json"
    if cfg_path.exists() and json.loads(cfg_path.read_text()).get("poison"):
        print(f"wrote {emit_poison_table(out)}")
    return 0


def cmd_gen_sbm(args) -> int:
    spec = SbmSpec.from_json(args.sbm) if args.sbm else SbmSpec()
    if args.seed is not None:
        spec = SbmSpec(**{**spec.__dict__, "seed": args.seed})
    g = generate_sbm(spec)
    splits = make_splits(g, n_splits=args.splits, seed=spec.seed)
    out = Path(args.out)
    save_dataset(g, out, splits)
    spec.to_json(out / "sbm.json")
    print(f"wrote {out} ({g.num_nodes} nodes, {g.num_edges} edges, {len(splits)} splits)")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metselect", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("train", "train and evaluate, writing per-epoch histories"),
                           ("sweep", "run the full model x policy x depth x split grid")):
        p = sub.add_parser(name, help=helptext)
        _add_run_flags(p)
    p = sub.add_parser("poison", help="train on poisoned graphs across budgets")
    _add_run_flags(p)
    p.add_argument("--seeds", type=int, help="alias for --splits")
    p = sub.add_parser("summarize", help="mean/std and delta-max tables from a results directory")
    p.add_argument("--out", metavar="DIR", required=True)
    p = sub.add_parser("gen-sbm", help="write a stochastic block model in the dataset format")
    p.add_argument("--sbm", metavar="SPEC.json")
    p.add_argument("--seed", type=int)
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--out", metavar="DIR", required=True)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("train", "sweep"):
            return cmd_run(args)
        if args.command == "poison":
            return cmd_poison(args)
        if args.command == "summarize":
            return cmd_summarize(args)
        return cmd_gen_sbm(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
