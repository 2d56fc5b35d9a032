"""Command-line entry points: cache, train, eval, infer, serve."""

from __future__ import annotations

import argparse
import base64
import json
import sys
from pathlib import Path

import numpy as np


def _load_config(path):
    from .pipeline import TrainConfig

    return TrainConfig.load(path)


def _dataset_for(cfg, path=None, fmt=None):
    from .pipeline import load_annotations, synth_dataset

    if path:
        return load_annotations(path, fmt or "hico")
    return synth_dataset(cfg.synth_seed, cfg.synth_images, cfg.image_size)


def cmd_cache(args):
    from .foundation import ToyFoundationModel, save_foundation_output
    from .pipeline import image_pixels
    from .pseudolabel import pseudo_labels_for_image, pseudo_labels_to_json

    cfg = _load_config(args.config)
    dataset = _dataset_for(cfg, args.annotations, args.format)
    foundation = ToyFoundationModel(cfg.foundation_config())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fhash = foundation.param_hash()
    for image in dataset.images:
        found = foundation.extract(image_pixels(image))
        save_foundation_output(found, out_dir / f"{image.image_id}.s2hf", fhash)
        labels = pseudo_labels_for_image(
            found,
            image.ground_truths,
            gamma=cfg.pseudo_gamma,
            beta_b=cfg.pseudo_beta_box,
            beta_u=cfg.pseudo_beta_giou,
        )
        (out_dir / f"{image.image_id}.pseudo.json").write_text(
            pseudo_labels_to_json(labels, cfg.pseudo_gamma)
        )
    print(f"cached {len(dataset.images)} images to {out_dir} (foundation {fhash[:12]})")


def cmd_train(args):
    from .foundation import ToyFoundationModel
    from .pipeline import train

    cfg = _load_config(args.config)
    dataset = _dataset_for(cfg, args.annotations, args.format)
    foundation = ToyFoundationModel(cfg.foundation_config())
    result = train(cfg, dataset, foundation, args.out, verbose=not args.quiet)
    print(
        json.dumps(
            {
                "checkpoint": result.checkpoint_path,
                "metrics": result.metrics_path,
                "steps": result.steps,
                "final_loss": result.final_loss,
                "foundation_hash": result.foundation_hash,
            }
        )
    )


def cmd_eval(args):
    from .evalinfer import (
        RolePrediction,
        TripletGroundTruth,
        TripletPrediction,
        hico_map,
        vcoco_role_ap,
    )
    from .foundation import ToyFoundationModel
    from .pipeline import dataset_recall, load_checkpoint, predict_dataset

    cfg = _load_config(args.config)
    dataset = _dataset_for(cfg, args.annotations, args.format)
    decoder, cfg_ckpt, _ = load_checkpoint(args.checkpoint, dataset)
    foundation = ToyFoundationModel(cfg.foundation_config())
    preds_per_image = predict_dataset(decoder, foundation, dataset, cfg)

    if args.format == "vcoco":
        role_preds = [
            RolePrediction(
                image.image_id, q.human_box, q.verb, "obj", q.object_box, q.score
            )
            for image, quads in zip(dataset.images, preds_per_image)
            for q in quads
        ]
        role_gts = [g for image in dataset.images for g in image.role_ground_truths]
        report = {
            "ap_role_s1": vcoco_role_ap(role_preds, role_gts, "S1")["role_map"],
            "ap_role_s2": vcoco_role_ap(role_preds, role_gts, "S2")["role_map"],
        }
    else:
        pred_records, gt_records = [], []
        for image, quads in zip(dataset.images, preds_per_image):
            for q in quads:
                pred_records.append(
                    TripletPrediction(
                        image.image_id, q.human_box, q.object_box, q.object_class,
                        q.verb, q.score,
                    )
                )
            for gt in image.ground_truths:
                for verb in np.flatnonzero(gt.verb_vector):
                    gt_records.append(
                        TripletGroundTruth(
                            image.image_id, gt.human_box, gt.object_box,
                            gt.object_class, int(verb),
                        )
                    )
        report = hico_map(
            pred_records,
            gt_records,
            dataset.hoi_classes,
            rare_flags=dataset.rare_flags(),
            mode=args.mode,
        )
        report.pop("per_class")
        report["recall"] = dataset_recall(decoder, foundation, dataset, cfg)
    print(json.dumps(report))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))


def cmd_infer(args):
    from PIL import Image

    from .foundation import ToyFoundationModel
    from .evalinfer import assemble
    from .pipeline import load_checkpoint

    import torch

    decoder, cfg, _ = load_checkpoint(args.checkpoint)
    foundation = ToyFoundationModel(cfg.foundation_config())
    image = np.asarray(Image.open(args.image).convert("RGB"))
    found = foundation.extract(image)
    with torch.no_grad():
        out = decoder(found)
    quads = assemble(out, lam=cfg.score_lambda, top_k=args.top_k)
    from .pipeline import synth_dataset

    dataset = synth_dataset(cfg.synth_seed, 1, cfg.image_size)
    record = {
        "image_id": Path(args.image).stem,
        "quadruplets": [
            q.to_record(dataset.object_names, dataset.verb_names) for q in quads
        ],
    }
    Path(args.out).write_text(json.dumps(record))
    print(f"wrote {len(quads)} quadruplets to {args.out}")


def cmd_serve(args):
    from .service import serve

    serve(args.checkpoint, args.port, host=args.host, static_dir=args.static)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="seg2hoi")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cache", help="run the frozen backbone over a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--annotations")
    p.add_argument("--format", choices=["hico", "vcoco"])
    p.set_defaults(func=cmd_cache)

    p = sub.add_parser("train", help="train the HOI decoder")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="runs/train")
    p.add_argument("--annotations")
    p.add_argument("--format", choices=["hico", "vcoco"])
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--annotations")
    p.add_argument("--format", choices=["hico", "vcoco"])
    p.add_argument("--mode", choices=["default", "known_object"], default="default")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="quadruplets for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=int, default=100)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static", help="directory with the built browser client")
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
