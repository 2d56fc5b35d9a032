#!/usr/bin/env python3
"""Train the desk-scale model on the synthetic world and report recall.

Writes the config used, the checkpoint, metrics JSONL, and a small report
with train/held-out triplet recall.
"""

import argparse
import json
from pathlib import Path

from seg2hoi.foundation import ToyFoundationModel
from seg2hoi.pipeline import (
    TrainConfig,
    dataset_recall,
    load_checkpoint,
    prepare_cache,
    synth_dataset,
    train,
)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="runs/synth")
    parser.add_argument("--config", help="config file; defaults to desk settings")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None)
    args = parser.parse_args()

    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        cfg.max_steps = args.steps

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.cfg")

    dataset = synth_dataset(cfg.synth_seed, cfg.synth_images, cfg.image_size)
    heldout = synth_dataset(cfg.synth_seed + 1, cfg.synth_images, cfg.image_size)
    foundation = ToyFoundationModel(cfg.foundation_config())
    cache = prepare_cache(foundation, dataset, cfg)

    result = train(cfg, dataset, foundation, out, cache=cache, verbose=True)
    decoder, _, _ = load_checkpoint(result.checkpoint_path, dataset)
    report = {
        "steps": result.steps,
        "final_loss": result.final_loss,
        "train_recall": dataset_recall(decoder, foundation, dataset, cfg, cache=cache),
        "heldout_recall": dataset_recall(decoder, foundation, heldout, cfg),
        "checkpoint": result.checkpoint_path,
        "foundation_hash": result.foundation_hash,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
