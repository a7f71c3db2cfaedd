"""Command-line entry point: run, ablate, metrics, gen-data, gradcheck."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PRESETS, PROTOCOLS, ConfigurationError, ExperimentConfig, load_config, mode_for, preset
from .data import dump_schedule, schedule_from_config
from .metrics import cl_metrics, read_matrix
from .runner import (
    Experiment,
    emit_results,
    format_ablation_table,
    ablation_table,
    output_root,
    run_ablation_suite,
)

# flag -> dotted config key
_OVERRIDES = {
    "epochs": "epochs", "batch_size": "batch_size", "lr": "lr", "weight_decay": "weight_decay",
    "lambda_cls": "lambda_cls", "c": "c", "xi": "xi", "eval_every": "eval_every",
    "rank": "model.rank", "alpha": "model.alpha", "d_v": "model.d_v",
    "n_classes": "data.n_classes", "base": "data.base", "increment": "data.increment",
    "n_tasks": "data.n_tasks", "n_train": "data.n_train", "n_test": "data.n_test",
    "blur": "data.blur",
}
_FLOAT_FLAGS = {"lr", "weight_decay", "lambda_cls", "c", "xi", "alpha", "blur"}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=PRESETS, default="ss-desk")
    p.add_argument("--config", type=Path, help="TOML file overriding the preset")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--no-precond", action="store_true", help="disable audio pre-conditioning")
    p.add_argument("--no-lra", action="store_true", help="disable low-rank anchoring")
    p.add_argument("--out", type=Path, help="output directory")
    for flag in _OVERRIDES:
        kind = float if flag in _FLOAT_FLAGS else int
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=kind)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = preset(args.preset, args.protocol)
    if args.config is not None:
        cfg = load_config(args.config, cfg)
    changes = {key: getattr(args, flag) for flag, key in _OVERRIDES.items()
               if getattr(args, flag) is not None}
    if args.config is not None and args.protocol is not None:
        changes["protocol"] = args.protocol
        changes["model.mode"] = mode_for(args.protocol)
    if args.no_precond:
        changes["model.pre_conditioning"] = False
    if args.no_lra:
        changes["lra"] = False
    if getattr(args, "seeds", None):
        changes["seeds"] = args.seeds
    cfg = cfg.replace(**changes)
    cfg.validate()
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return args.out if args.out is not None else output_root(cfg.output_dir)


def cmd_run(args) -> int:
    cfg = build_config(args)
    out = _out_dir(args, cfg)
    ckpt = out / "checkpoints"
    exp = Experiment.from_checkpoint(args.resume) if args.resume else Experiment(cfg, args.seed)
    record = exp.run(checkpoint_dir=ckpt)
    paths = emit_results(record, out)
    print(json.dumps(record.cl.get("map", {}), indent=2))
    print(f"wrote {len(paths)} files to {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    out = _out_dir(args, cfg)
    results = run_ablation_suite(cfg, out_dir=out)
    print(format_ablation_table(ablation_table(results)))
    return 0


def cmd_metrics(args) -> int:
    m = cl_metrics(read_matrix(args.matrix))
    print(" ".join(f"{k}={'n/a' if v is None else f'{v:.6g}'}" for k, v in m.as_dict().items()))
    return 0


def cmd_gen_data(args) -> int:
    cfg = build_config(args)
    path = dump_schedule(schedule_from_config(cfg, args.seed), args.output)
    print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import run_gradcheck_suite

    results = run_gradcheck_suite(n_seeds=args.n_seeds)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: max rel err {r.max_rel_error:.2e}")
    return 0 if all(r.passed for r in results) else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atlas-avs", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate one seed")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", type=Path, help="checkpoint archive to continue from")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="all four component combinations over shared seeds")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("metrics", help="LA/AA/F/BWT/FWT from a matrix CSV or JSON file")
    p.add_argument("matrix", type=Path)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gen-data", help="dump a protocol schedule to an archive")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every block")
    p.add_argument("--n-seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
