#!/usr/bin/env python3
"""Produce the assets the browser-client e2e run needs: a trained
checkpoint, a single-pair demo scene PNG, and the pixel coordinates of a
click on the scripted object."""

import argparse
import json
from pathlib import Path

import numpy as np
from PIL import Image

from seg2hoi.foundation import ToyFoundationModel
from seg2hoi.pipeline import TrainConfig, image_pixels, synth_dataset, train


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    parser.add_argument("--steps", type=int, default=120)
    parser.add_argument("--config", help="optional config file to start from")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    cfg.max_steps = args.steps
    dataset = synth_dataset(cfg.synth_seed, cfg.synth_images, cfg.image_size)
    foundation = ToyFoundationModel(cfg.foundation_config())
    result = train(cfg, dataset, foundation, out)

    # a one-pair scene gives the click-the-object flow an unambiguous target
    image = next(img for img in dataset.images if len(img.ground_truths) == 1)
    pixels = image_pixels(image)
    Image.fromarray(pixels).save(out / "demo.png")
    gt = image.ground_truths[0]
    click = [gt.object_box.cx * image.width, gt.object_box.cy * image.height]
    (out / "demo.json").write_text(
        json.dumps(
            {
                "image": "demo.png",
                "width": image.width,
                "height": image.height,
                "click": click,
                "image_id": image.image_id,
                "expected_verb": int(np.flatnonzero(gt.verb_vector)[0]),
                "expected_object": gt.object_class,
            }
        )
    )
    print(f"assets in {out}: checkpoint.pt, demo.png, demo.json (click {click})")


if __name__ == "__main__":
    main()
