"""Quadruplet assembly, confidence scoring, and mAP evaluation.

A prediction is a true positive when both its human and object boxes
overlap a ground truth of the same class above 0.5 IoU; each ground truth
matches at most one prediction, greedily in score order. Average precision
integrates the precision-recall curve with the all-points interpolation
used by the official benchmark tooling.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .geometry import BinaryMask, Box, rle_encode
from .hoi_decoder import DecoderOutput, prediction_rows


def box_iou(a: Box, b: Box) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@dataclass
class Quadruplet:
    """Final prediction record for one (query, verb) hypothesis."""

    human_box: Box
    object_box: Box
    object_class: int
    verb: int
    score: float
    union_mask: BinaryMask
    intersection_mask: Optional[BinaryMask]
    query_index: int

    def to_record(self, object_names=None, verb_names=None) -> dict:
        rec = {
            "human_box": list(self.human_box.as_array()),
            "object_box": list(self.object_box.as_array()),
            "object_class": {"id": self.object_class},
            "verb": {"id": self.verb},
            "score": self.score,
            "union_mask": rle_encode(self.union_mask),
            "intersection_mask": (
                None
                if self.intersection_mask is None
                else rle_encode(self.intersection_mask)
            ),
            "query_index": self.query_index,
        }
        if object_names is not None:
            rec["object_class"]["name"] = object_names[self.object_class]
        if verb_names is not None:
            rec["verb"]["name"] = verb_names[self.verb]
        return rec


def confidence_score(
    class_probs: np.ndarray, verb_logit: float, lam: float = 0.5
) -> float:
    """(max_k c_o(k))^lam * sigmoid(c_v(j))."""
    return float(np.max(class_probs)) ** lam / (1.0 + math.exp(-verb_logit))


def assemble(
    decoder_output: DecoderOutput,
    lam: float = 0.5,
    top_k: int = 100,
    score_floor: float = 0.0,
) -> list[Quadruplet]:
    """Score-ranked quadruplets from the final decoder layer.

    Object-branch rows pair their own frozen box (object) with the
    predicted counterpart (human); human-branch rows do the reverse.
    Masks threshold at probability 0.5. Deterministic tie-break by
    (query index, verb id).
    """
    rows = prediction_rows(
        decoder_output.final, decoder_output.objects, decoder_output.humans
    )
    with torch.no_grad():
        class_probs = rows.class_logits.softmax(dim=-1).numpy()
        verb_logits = rows.verb_logits.numpy()
        human_boxes, object_boxes = (
            b.numpy() for b in rows.human_object_boxes()
        )
        union = (rows.union_mask_logits > 0).numpy().astype(np.uint8)
        inter = (rows.inter_mask_logits > 0).numpy().astype(np.uint8)
    out = []
    for i in range(len(rows)):
        fg_probs = class_probs[i, :-1]
        cls = int(np.argmax(fg_probs))
        inter_mask = BinaryMask(inter[i])
        for j in range(verb_logits.shape[1]):
            score = confidence_score(fg_probs, float(verb_logits[i, j]), lam)
            if score < score_floor:
                continue
            out.append(
                Quadruplet(
                    human_box=Box(*human_boxes[i]),
                    object_box=Box(*object_boxes[i]),
                    object_class=cls,
                    verb=j,
                    score=score,
                    union_mask=BinaryMask(union[i]),
                    intersection_mask=inter_mask if inter_mask.area else None,
                    query_index=int(rows.row_index[i]),
                )
            )
    out.sort(key=lambda q: (-q.score, q.query_index, q.verb))
    return out[:top_k]


@dataclass
class TripletPrediction:
    image_id: object
    human_box: Box
    object_box: Box
    object_class: int
    verb: int
    score: float


@dataclass
class TripletGroundTruth:
    image_id: object
    human_box: Box
    object_box: Box
    object_class: int
    verb: int


def _ap_from_flags(flags: list[bool], num_positive: int) -> float:
    """All-points interpolated AP from score-ordered TP/FP flags."""
    if num_positive == 0:
        return float("nan")
    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=np.float64))
    recall = tp / num_positive
    precision = tp / np.maximum(tp + fp, 1e-12)
    # all-points interpolation: running max of precision from the right
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, interp):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def _greedy_match(
    preds: list[TripletPrediction],
    gts: list[TripletGroundTruth],
    iou_thresh: float = 0.5,
) -> list[bool]:
    """Score-ordered TP flags; every GT matches at most once."""
    by_image: dict[object, list] = defaultdict(list)
    for g in gts:
        by_image[g.image_id].append([g, False])
    flags = []
    for p in preds:
        best, best_iou = None, iou_thresh
        for entry in by_image.get(p.image_id, []):
            g, used = entry
            if used:
                continue
            overlap = min(
                box_iou(p.human_box, g.human_box),
                box_iou(p.object_box, g.object_box),
            )
            if overlap > best_iou:
                best, best_iou = entry, overlap
        if best is not None:
            best[1] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def hico_map(
    predictions: Sequence[TripletPrediction],
    ground_truths: Sequence[TripletGroundTruth],
    hoi_classes: Sequence[tuple[int, int]],
    rare_flags: Optional[Sequence[bool]] = None,
    mode: str = "default",
) -> dict:
    """Per-HOI-class AP averaged over Full / Rare / Non-Rare partitions.

    `hoi_classes` maps hoi id -> (verb id, object id). Known-object mode
    only evaluates images whose ground truth contains the object class.
    Classes with no ground truth are excluded from every mean.
    """
    if mode not in ("default", "known_object"):
        raise ValueError(f"unknown mode {mode!r}")
    class_of = {vo: i for i, vo in enumerate(hoi_classes)}
    gts_by_class: dict[int, list] = defaultdict(list)
    images_with_object: dict[int, set] = defaultdict(set)
    for g in ground_truths:
        key = (g.verb, g.object_class)
        if key not in class_of:
            raise ValueError(f"ground truth {key} outside the HOI class table")
        gts_by_class[class_of[key]].append(g)
        images_with_object[g.object_class].add(g.image_id)
    preds_by_class: dict[int, list] = defaultdict(list)
    for p in predictions:
        key = (p.verb, p.object_class)
        if key in class_of:
            preds_by_class[class_of[key]].append(p)

    ap: dict[int, float] = {}
    for cid, class_gts in gts_by_class.items():
        preds = preds_by_class.get(cid, [])
        if mode == "known_object":
            keep = images_with_object[hoi_classes[cid][1]]
            preds = [p for p in preds if p.image_id in keep]
        preds = sorted(
            enumerate(preds), key=lambda ip: (-ip[1].score, ip[0])
        )
        flags = _greedy_match([p for _, p in preds], class_gts)
        ap[cid] = _ap_from_flags(flags, len(class_gts))

    def mean_over(ids):
        vals = [ap[i] for i in ids if i in ap]
        return float(np.mean(vals)) if vals else float("nan")

    all_ids = list(ap.keys())
    if rare_flags is None:
        rare_ids, nonrare_ids = [], all_ids
    else:
        rare_ids = [i for i in all_ids if rare_flags[i]]
        nonrare_ids = [i for i in all_ids if not rare_flags[i]]
    return {
        "full": mean_over(all_ids),
        "rare": mean_over(rare_ids),
        "nonrare": mean_over(nonrare_ids),
        "per_class": ap,
    }


@dataclass
class RolePrediction:
    image_id: object
    human_box: Box
    verb: int
    role: str
    object_box: Optional[Box]
    score: float


@dataclass
class RoleGroundTruth:
    image_id: object
    human_box: Box
    verb: int
    role: str
    object_box: Optional[Box]  # None when the role has no object


def vcoco_role_ap(
    predictions: Sequence[RolePrediction],
    ground_truths: Sequence[RoleGroundTruth],
    scenario: str = "S1",
    iou_thresh: float = 0.5,
) -> dict:
    """Role AP per (verb, role), averaged.

    Scenario S1 requires the object box to match (an absent-object ground
    truth only accepts predictions with no object box); scenario S2
    ignores the predicted object box for absent-object ground truths.
    """
    if scenario not in ("S1", "S2"):
        raise ValueError(f"unknown scenario {scenario!r}")
    gts_by_class: dict[tuple, list] = defaultdict(list)
    for g in ground_truths:
        gts_by_class[(g.verb, g.role)].append([g, False])
    preds_by_class: dict[tuple, list] = defaultdict(list)
    for p in predictions:
        preds_by_class[(p.verb, p.role)].append(p)

    def matches(p: RolePrediction, g: RoleGroundTruth) -> bool:
        if box_iou(p.human_box, g.human_box) <= iou_thresh:
            return False
        if g.object_box is None:
            if scenario == "S2":
                return True
            return p.object_box is None or p.object_box.area == 0
        if p.object_box is None:
            return False
        return box_iou(p.object_box, g.object_box) > iou_thresh

    ap: dict[tuple, float] = {}
    for key, entries in gts_by_class.items():
        preds = sorted(
            enumerate(preds_by_class.get(key, [])),
            key=lambda ip: (-ip[1].score, ip[0]),
        )
        flags = []
        for _, p in preds:
            hit = None
            for entry in entries:
                g, used = entry
                if used or g.image_id != p.image_id:
                    continue
                if matches(p, g):
                    hit = entry
                    break
            if hit is not None:
                hit[1] = True
                flags.append(True)
            else:
                flags.append(False)
        ap[key] = _ap_from_flags(flags, len(entries))

    values = list(ap.values())
    return {
        "role_map": float(np.mean(values)) if values else float("nan"),
        "per_class": ap,
    }


@dataclass
class ZeroShotSplit:
    kind: str
    seen: list[int]
    unseen: list[int]


def zero_shot_split(
    hoi_classes: Sequence[tuple[int, int]],
    instance_counts: Sequence[int],
    kind: str,
    num_unseen: int = 120,
    unseen_objects: Optional[Sequence[int]] = None,
) -> ZeroShotSplit:
    """Seen/unseen HOI category partition.

    rf-uc holds out the rarest compositions, nf-uc the most frequent, and
    uo every composition touching the designated unseen object classes.
    """
    ids = list(range(len(hoi_classes)))
    if kind == "rf-uc":
        order = sorted(ids, key=lambda i: (instance_counts[i], i))
        unseen = sorted(order[:num_unseen])
    elif kind == "nf-uc":
        order = sorted(ids, key=lambda i: (-instance_counts[i], i))
        unseen = sorted(order[:num_unseen])
    elif kind == "uo":
        if unseen_objects is None:
            raise ValueError("uo split needs the unseen object class list")
        held = set(unseen_objects)
        unseen = [i for i in ids if hoi_classes[i][1] in held]
    else:
        raise ValueError(f"unknown zero-shot split kind {kind!r}")
    unseen_set = set(unseen)
    return ZeroShotSplit(
        kind=kind, seen=[i for i in ids if i not in unseen_set], unseen=unseen
    )


def filter_training_pairs(gt_hoi_ids: Sequence[int], split: ZeroShotSplit) -> list[int]:
    """Indices of training annotations whose HOI id stays seen."""
    unseen = set(split.unseen)
    return [i for i, hid in enumerate(gt_hoi_ids) if hid not in unseen]


def triplet_recall(
    quadruplets_per_image: Sequence[Sequence[Quadruplet]],
    gts_per_image: Sequence[Sequence],
    iou_thresh: float = 0.5,
    score_thresh: float = 0.1,
) -> float:
    """Fraction of GT (pair, verb) triplets recovered by any quadruplet."""
    total = 0
    hit = 0
    for quads, gts in zip(quadruplets_per_image, gts_per_image):
        kept = [q for q in quads if q.score >= score_thresh]
        for gt in gts:
            for verb in np.flatnonzero(gt.verb_vector):
                total += 1
                for q in kept:
                    if (
                        q.verb == int(verb)
                        and q.object_class == gt.object_class
                        and box_iou(q.human_box, gt.human_box) > iou_thresh
                        and box_iou(q.object_box, gt.object_box) > iou_thresh
                    ):
                        hit += 1
                        break
    return hit / total if total else float("nan")
