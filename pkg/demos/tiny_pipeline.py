"""Run every stage of the pipeline on the tiny config and print what each stage learned.

This takes about a minute on one core. The tiny schedules are far too short for
good captions; run the same commands with configs/desk.yaml for real numbers.

    python demos/tiny_pipeline.py [run_dir]
"""

import sys
from pathlib import Path

from omnialign.config import load_config
from omnialign.data import DatasetCache
from omnialign.modality import Modality
from omnialign.pipeline.stages import replay_echo, run_stage

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "tiny.yaml"


def main(run_dir="runs/demo"):
    cfg = load_config(CONFIG)
    cache = DatasetCache(cfg)
    reports = {}
    for stage in ("I", "II", "III", "instruct"):
        reports[stage] = run_stage(cfg, stage, run_dir, cache=cache)
        print(reports[stage].table())
        print()

    # Same stage-I checkpoint, stage II with and without image replay.
    echo = replay_echo(cfg, reports["I"].checkpoint, cache=cache, out=run_dir)
    print("image validation loss after stage II")
    print(f"  with replay:    {echo['with_replay']['image_val_loss']:.4f}")
    print(f"  without replay: {echo['without_replay']['image_val_loss']:.4f}")

    ds = cache.get(Modality.IMAGE, "eval")
    samples = reports["instruct"].metrics["per_modality"]["image"].get("samples", [])
    print("\nfirst held-out image captions after instruction tuning")
    for gold, got in list(zip(ds.captions, samples))[:3]:
        print(f"  gold: {gold!r:40s} model: {got!r}")


if __name__ == "__main__":
    main(*sys.argv[1:])
