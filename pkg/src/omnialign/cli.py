"""Command-line entry point: generate-data, train, eval, ablate.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import RunConfig, config_from_dict, load_config, save_config
from .errors import ConfigurationError, NumericalAbort, PreconditionError
from .modality import ALL_MODALITIES, Modality

log = logging.getLogger("omnialign")

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 2, 3, 4

# Modalities aligned by the end of each stage.
_SEEN = {
    "I": (Modality.IMAGE,),
    "II": (Modality.IMAGE, Modality.VIDEO, Modality.AUDIO, Modality.POINT),
    "III": ALL_MODALITIES,
    "instruct": ALL_MODALITIES,
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run configuration (defaults are the desk config)")
    p.add_argument("--seed", type=int, help="data/training seed (overrides data.seed)")
    p.add_argument("--out", type=Path, help="run directory (overrides io.run_dir)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omnialign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write one dataset manifest per modality")
    _common(p)

    p = sub.add_parser("train", help="run one training stage")
    _common(p)
    p.add_argument("--stage", required=True, choices=["I", "II", "III", "instruct"])

    p = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--task", default="all",
                   choices=["all", "caption-exact-match", "qa-token-accuracy", "perplexity"])

    p = sub.add_parser("ablate", help="run a matched ablation sweep")
    _common(p)
    p.add_argument("--axis", required=True, choices=["mode", "init", "experts", "router", "encoder"])
    return parser


def _limit_threads() -> None:
    value = os.environ.get("ONEREPO_THREADS")
    if not value:
        return
    try:
        n = int(value)
    except ValueError:
        raise ConfigurationError(f"ONEREPO_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigurationError("ONEREPO_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits

    threadpool_limits(n)


def _resolve(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        cfg.data.seed = args.seed
    if args.out is not None:
        cfg.io.run_dir = str(args.out)
    run_dir = Path(cfg.io.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.resolved.yaml")
    return cfg, run_dir


def cmd_generate_data(args) -> int:
    from .data.datasets import generate_manifests
    from .data.manifest import manifest_digest

    cfg, run_dir = _resolve(args)
    paths = generate_manifests(cfg, run_dir / "data", splits=("train",))
    index = {p.name: manifest_digest(p) for p in paths}
    (run_dir / "data" / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    for name, digest in index.items():
        print(f"{name}  {digest}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline.stages import run_stage

    cfg, run_dir = _resolve(args)
    data_dir = run_dir / "data"
    report = run_stage(cfg, args.stage, run_dir, data_dir=data_dir if data_dir.is_dir() else None)
    print(report.table())
    print(f"checkpoint: {report.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data.datasets import DatasetCache
    from .pipeline.evaluation import TASKS, evaluate
    from .pipeline.report import format_table, write_json
    from .pipeline.stages import load_model

    cfg, run_dir = _resolve(args)
    if not args.checkpoint.exists():
        raise PreconditionError(f"checkpoint not found: {args.checkpoint}")
    model, meta = load_model(args.checkpoint)
    stage = meta.get("phase", "I")
    phase = "instruction" if stage == "instruct" else "alignment"
    tasks = list(TASKS) if args.task == "all" else [args.task]
    cache = DatasetCache(cfg)
    evals = {m: cache.get(m, "eval") for m in _SEEN.get(stage, ALL_MODALITIES)}
    record = evaluate(model, evals, tasks, phase, max_new=cfg.eval.max_new)
    record.update({"checkpoint": str(args.checkpoint), "stage": stage, "data_seed": cfg.data.seed})
    out = write_json(record, run_dir / f"eval_{stage}_{args.task}.json")
    rows = [{"modality": m, **{t: r[t] for t in tasks}} for m, r in record["per_modality"].items()]
    print(format_table(rows, ["modality", *tasks], title=f"evaluation of {args.checkpoint}"))
    print(f"metrics: {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .pipeline.ablation import run_ablation

    cfg, run_dir = _resolve(args)
    table = run_ablation(cfg, args.axis, out_dir=run_dir)
    print(table.render())
    return EXIT_OK


COMMANDS = {"generate-data": cmd_generate_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        _limit_threads()
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, CheckpointError, FileNotFoundError) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
