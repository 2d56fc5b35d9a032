#!/usr/bin/env python3
"""Mask-supervision ablation: train with and without the union-mask loss
over several seeds and compare held-out triplet recall."""

import argparse
import json
from pathlib import Path

import numpy as np

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
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--steps", type=int, default=None)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    base = TrainConfig()
    if args.steps is not None:
        base.max_steps = args.steps
    dataset = synth_dataset(base.synth_seed, base.synth_images, base.image_size)
    heldout = synth_dataset(base.synth_seed + 1, base.synth_images, base.image_size)
    foundation = ToyFoundationModel(base.foundation_config())
    cache = prepare_cache(foundation, dataset, base)
    heldout_cache = prepare_cache(foundation, heldout, base)

    results = {"with_mask": [], "without_mask": []}
    for seed in args.seeds:
        for label, overrides in (
            ("with_mask", {}),
            ("without_mask", {"use_union_mask": False, "match_mask_union": 0.0}),
        ):
            cfg = TrainConfig(**{**base.__dict__, "seed": seed, **overrides})
            run_dir = out / f"{label}_seed{seed}"
            res = train(cfg, dataset, foundation, run_dir, cache=cache)
            decoder, _, _ = load_checkpoint(res.checkpoint_path, dataset)
            recall = dataset_recall(
                decoder, foundation, heldout, cfg, cache=heldout_cache
            )
            results[label].append(recall)
            print(f"{label} seed {seed}: held-out recall {recall:.3f}", flush=True)

    summary = {
        "with_mask_mean": float(np.mean(results["with_mask"])),
        "without_mask_mean": float(np.mean(results["without_mask"])),
        "per_seed": results,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
