"""``odn`` command line.

Exit codes: 0 success, 2 usage or configuration error, 1 stage failure.
Resolution order for every setting: defaults < ``--config`` file < flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import classifier as clf
from .config import SessionConfig, read_config_file, resolve, write_config_file
from .dataset import Dataset, OpenSplit, load_csv, make_open_split, save_csv, synth_blobs
from .errors import ConfigError, ODNError
from .evaluation import (
    COMPARE_COLUMNS,
    METRICS_COLUMNS,
    SWEEP_COLUMNS,
    ablation_table,
    compare_init_strategies,
    emit_report,
    evaluate_closed,
    evaluate_open,
    metrics_rows,
    openness_sweep,
    sweep_rows,
)
from .openworld import run_open_world
from .thresholds import calibrate, load_thresholds, save_thresholds

log = logging.getLogger("odn")

# flag dest -> SessionConfig key
_SESSION_FLAGS = [
    ("--data", "data", str, "feature CSV; synthetic blobs when omitted"),
    ("--classes", "classes", int, None),
    ("--per-class", "per_class", int, None),
    ("--dim", "dim", int, None),
    ("--spread", "spread", float, None),
    ("--separation", "separation", float, None),
    ("--known", "n_known", int, "number of known categories"),
    ("--train-frac", "train_frac", float, None),
    ("--epsilon", "epsilon", float, "reject threshold scale"),
    ("--rho", "rho", float, "distance threshold scale"),
    ("--alpha", "alpha", float, None),
    ("--beta", "beta", float, None),
    ("--M", "M", int, "columns emphasised when initialising a new category"),
    ("--init", "init", str, "emphasis | stochastic"),
    ("--budget", "budget", int, "teacher labels per category"),
    ("--passes", "passes", int, None),
    ("--max-iterations", "max_iterations", int, None),
    ("--patience", "patience", int, None),
    ("--lr", "learning_rate", float, None),
    ("--epochs", "epochs", int, None),
    ("--finetune-epochs", "finetune_epochs", int, None),
    ("--batch-size", "batch_size", int, None),
    ("--l2", "l2", float, None),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _global_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat key = value session file")
    p.add_argument("--seed", type=int, help="base seed; derives data, split and train seeds")
    p.add_argument("--out", help="output file (synth) or directory (other commands)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--quiet", action="store_true")
    g = p.add_argument_group("session settings")
    for flag, dest, typ, hlp in _SESSION_FLAGS:
        g.add_argument(flag, dest=dest, type=typ, help=hlp)
    g.add_argument("--softmax", dest="confidence", action="store_const", const="softmax",
                   help="threshold post-softmax probabilities instead of activations")
    g.add_argument("--no-allometry", dest="allometry", action="store_const", const=False)
    g.add_argument("--no-emphasis", dest="emphasis", action="store_const", const=False)
    return p


def build_parser() -> argparse.ArgumentParser:
    parent = _global_parent()
    parser = _Parser(prog="odn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[parent], help="write a synthetic blob dataset")
    sub.add_parser("split", parents=[parent], help="write train / known-test / unknown-pool CSVs")
    p = sub.add_parser("train", parents=[parent], help="train the initial classifier")
    p.add_argument("--train", help="training CSV with labels 1..N (default: split of the configured data)")
    p = sub.add_parser("calibrate", parents=[parent], help="fit triplet thresholds")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    sub.add_parser("run", parents=[parent], help="full open-world session")
    p = sub.add_parser("eval", parents=[parent], help="evaluate a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--thresholds")
    p.add_argument("--test", required=True)
    p.add_argument("--closed", action="store_true", help="argmax accuracy without rejection")
    p = sub.add_parser("sweep", parents=[parent], help="accuracy versus number of unknown categories")
    p.add_argument("--unknowns", default="1,2,5,10", help="comma-separated unknown-category counts")
    for name, helptext in (("compare", "mean vs stochastic initialisation"), ("ablate", "emphasis / allometry ablation")):
        p = sub.add_parser(name, parents=[parent], help=helptext)
        p.add_argument("--seeds", default="5", help="a count (seeds 1..n) or a comma-separated list")
    return parser


def session_config(args) -> SessionConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {dest: getattr(args, dest, None) for _, dest, _, _ in _SESSION_FLAGS}
    for key in ("confidence", "allometry", "emphasis"):
        overrides[key] = getattr(args, key, None)
    cfg = resolve(file_values, overrides)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _dataset(cfg: SessionConfig) -> Dataset:
    if cfg.data:
        return load_csv(cfg.data)
    return synth_blobs(cfg.classes, cfg.per_class, cfg.dim, cfg.spread, cfg.separation, cfg.data_seed)


def _split(cfg: SessionConfig) -> OpenSplit:
    return make_open_split(_dataset(cfg), cfg.n_known, cfg.train_frac, cfg.split_seed)


def _out_dir(args) -> Path:
    out = Path(args.out or "odn_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed_list(text: str) -> list[int]:
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        return list(range(1, int(text) + 1))
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None


# ------------------------------------------------------------------------ commands


def cmd_synth(args, cfg):
    if not args.out:
        raise ConfigError("synth requires --out FILE")
    ds = synth_blobs(cfg.classes, cfg.per_class, cfg.dim, cfg.spread, cfg.separation, cfg.data_seed)
    save_csv(ds, args.out)
    write_config_file(cfg, f"{args.out}.config")
    return [args.out]


def cmd_split(args, cfg):
    out = _out_dir(args)
    split = _split(cfg)
    for name in ("train", "known_test", "unknown_pool"):
        save_csv(getattr(split, name), out / f"{name}.csv")
    meta = {
        "config": cfg.to_dict(),
        "known_labels": sorted(split.known_labels),
        "unknown_labels": sorted(split.unknown_labels),
        "label_map": {str(k): v for k, v in sorted(split.label_map.items())},
    }
    (out / "split.json").write_text(json.dumps(meta, indent=1) + "\n")
    return [out / "split.json"]


def cmd_train(args, cfg):
    out = _out_dir(args)
    train = load_csv(args.train) if args.train else _split(cfg).train
    state = clf.train_initial(train, cfg.train_config())
    clf.save_model(state, out / "model.json", cfg.to_dict())
    return [out / "model.json"]


def cmd_calibrate(args, cfg):
    out = _out_dir(args)
    state = clf.load_model(args.model)
    t = calibrate(state, load_csv(args.train), cfg.epsilon, cfg.rho, cfg.confidence)
    save_thresholds(t, out / "thresholds.json", cfg.to_dict())
    return [out / "thresholds.json"]


def cmd_run(args, cfg):
    out = _out_dir(args)
    session = run_open_world(_split(cfg), cfg)
    session.save(out / "session.json")
    curve = [{"iteration": 0, "arm": "session", "accuracy": session.initial.overall_accuracy}]
    curve += [{"iteration": r.iteration, "arm": "session", "accuracy": r.snapshot.overall_accuracy} for r in session.iterations]
    paths = [
        out / "session.json",
        emit_report(metrics_rows(session.final_report), METRICS_COLUMNS, args.format, out / f"metrics.{args.format}", cfg.to_dict()),
        emit_report(curve, COMPARE_COLUMNS, args.format, out / f"iterations.{args.format}", cfg.to_dict()),
    ]
    clf.save_model(session.state, out / "model.json", cfg.to_dict())
    save_thresholds(session.thresholds, out / "thresholds.json", cfg.to_dict())
    if not args.quiet:
        rep = session.final_report
        print(f"incorporated {len(session.iterations)} categories ({session.stop_reason}); "
              f"overall {rep.overall_accuracy:.4f} known {rep.known_accuracy:.4f} unknown {rep.unknown_accuracy:.4f}; "
              f"{session.average_labels_per_category:.2f} labels/category")
    return paths


def cmd_eval(args, cfg):
    state = clf.load_model(args.model)
    test = load_csv(args.test)
    if args.closed:
        rep = evaluate_closed(state, test)
    else:
        if not args.thresholds:
            raise ConfigError("open evaluation needs --thresholds (or pass --closed)")
        t = load_thresholds(args.thresholds)
        known = test.subset(k for k, l in enumerate(test.labels) if 1 <= l <= state.n_categories)
        unknown = test.subset(k for k, l in enumerate(test.labels) if not 1 <= l <= state.n_categories)
        rep = evaluate_open(state, t, known, unknown)
    rows = metrics_rows(rep)
    if args.out:
        return [emit_report(rows, METRICS_COLUMNS, args.format, _out_dir(args) / f"metrics.{args.format}", cfg.to_dict())]
    if not args.quiet:
        for r in rows:
            print(",".join(str(r[c]) for c in METRICS_COLUMNS))
    return []


def cmd_sweep(args, cfg):
    try:
        counts = [int(c) for c in args.unknowns.split(",") if c.strip()]
    except ValueError:
        raise ConfigError(f"bad --unknowns {args.unknowns!r}") from None
    table = openness_sweep(_dataset(cfg), cfg.n_known, counts, cfg)
    return [emit_report(sweep_rows(table), SWEEP_COLUMNS, args.format, _out_dir(args) / f"sweep.{args.format}", cfg.to_dict())]


def cmd_compare(args, cfg):
    rows = compare_init_strategies(_split(cfg), cfg, _seed_list(args.seeds))
    return [emit_report(rows, COMPARE_COLUMNS, args.format, _out_dir(args) / f"compare.{args.format}", cfg.to_dict())]


def cmd_ablate(args, cfg):
    rows = ablation_table(_split(cfg), cfg, _seed_list(args.seeds))
    return [emit_report(rows, COMPARE_COLUMNS, args.format, _out_dir(args) / f"ablation.{args.format}", cfg.to_dict())]


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "run": cmd_run,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = session_config(args)
        written = COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"odn {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except ODNError as exc:
        print(f"odn {args.command}: {exc.stage} stage failed: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        for path in written:
            print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
