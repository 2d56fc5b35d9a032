"""Union/intersection mask pseudo-labels from frozen instance masks.

For every ground-truth human-object pair we find the frozen model's best
matching human and object queries by box cost, union their thresholded
masks, and crop that union to the overlap of the gamma-expanded mask
boxes. Pairs whose masks cannot be matched are dropped from mask
supervision rather than guessed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    BinaryMask,
    Box,
    NoForegroundError,
    box_intersection,
    box_l1,
    crop_mask,
    expand_box,
    giou,
    mask_to_box,
    mask_union,
    rle_decode,
    rle_encode,
)

DEFAULT_GAMMA = 0.1
DEFAULT_BETA_BOX = 5.0
DEFAULT_BETA_GIOU = 2.0


class UnmatchableError(ValueError):
    """No usable candidate query for a ground-truth instance."""


@dataclass
class PseudoLabel:
    union_mask: BinaryMask
    intersection_mask: Optional[BinaryMask]
    intersection_box: Optional[Box]
    sigma_h: int
    sigma_o: int

    def __post_init__(self):
        # intersection mask and box are present or absent together
        assert (self.intersection_mask is None) == (self.intersection_box is None)


def match_instance(
    gt_box: Box,
    candidates: Sequence[Box],
    beta_b: float = DEFAULT_BETA_BOX,
    beta_u: float = DEFAULT_BETA_GIOU,
) -> int:
    """Index of the candidate minimizing beta_b*L1 + beta_u*(1 - giou).

    Ties resolve to the lowest index; no candidates raises UnmatchableError.
    """
    if len(candidates) == 0:
        raise UnmatchableError("no candidate instances for this ground truth")
    costs = [
        beta_b * box_l1(gt_box, c) + beta_u * (1.0 - giou(gt_box, c))
        for c in candidates
    ]
    return int(np.argmin(costs))


def build_pseudo_label(
    sigma_h: int,
    sigma_o: int,
    mask_logits: np.ndarray,
    gamma: float = DEFAULT_GAMMA,
) -> PseudoLabel:
    """Union and cropped-intersection masks for one matched pair.

    `mask_logits` is the frozen model's [N_k, h, w] stack; masks threshold
    at logit 0. An empty matched mask raises UnmatchableError. When the
    expanded mask boxes do not overlap (or the crop holds no cells) the
    intersection is absent and only the union supervises.
    """
    m_h = BinaryMask(mask_logits[sigma_h] > 0)
    m_o = BinaryMask(mask_logits[sigma_o] > 0)
    if m_h.area == 0 or m_o.area == 0:
        raise UnmatchableError("matched instance mask is empty")
    union = mask_union(m_h, m_o)
    inter_box = box_intersection(
        expand_box(mask_to_box(m_h), gamma), expand_box(mask_to_box(m_o), gamma)
    )
    inter_mask = crop_mask(union, inter_box) if inter_box is not None else None
    if inter_mask is not None and inter_mask.area == 0:
        inter_box, inter_mask = None, None
    return PseudoLabel(union, inter_mask, inter_box, sigma_h, sigma_o)


def pseudo_labels_for_image(
    foundation_output,
    gt_pairs,
    gamma: float = DEFAULT_GAMMA,
    beta_b: float = DEFAULT_BETA_BOX,
    beta_u: float = DEFAULT_BETA_GIOU,
    human_class: int = 0,
) -> list[Optional[PseudoLabel]]:
    """Pseudo-label per GT pair; None where no match exists.

    Candidates are gated by the frozen classifier's argmax: a GT human is
    only matched against human-classified queries, a GT object against
    queries of its own class.
    """
    logits = foundation_output.instance_mask_logits
    classes = foundation_output.instance_class_logits.argmax(axis=1)

    def candidates(class_id):
        idx, boxes = [], []
        for q in np.flatnonzero(classes == class_id):
            try:
                boxes.append(mask_to_box(BinaryMask(logits[q] > 0)))
            except NoForegroundError:
                continue
            idx.append(int(q))
        return idx, boxes

    out = []
    for gt in gt_pairs:
        try:
            h_idx, h_boxes = candidates(human_class)
            o_idx, o_boxes = candidates(gt.object_class)
            sigma_h = h_idx[match_instance(gt.human_box, h_boxes, beta_b, beta_u)]
            sigma_o = o_idx[match_instance(gt.object_box, o_boxes, beta_b, beta_u)]
            out.append(build_pseudo_label(sigma_h, sigma_o, logits, gamma))
        except (UnmatchableError, IndexError):
            out.append(None)
    return out


def pseudo_labels_to_json(labels: list[Optional[PseudoLabel]], gamma: float) -> str:
    pairs = []
    for lab in labels:
        if lab is None:
            pairs.append(None)
            continue
        pairs.append(
            {
                "sigma_h": lab.sigma_h,
                "sigma_o": lab.sigma_o,
                "union": rle_encode(lab.union_mask),
                "intersection": (
                    None
                    if lab.intersection_mask is None
                    else rle_encode(lab.intersection_mask)
                ),
                "intersection_box": (
                    None
                    if lab.intersection_box is None
                    else list(lab.intersection_box.as_array())
                ),
            }
        )
    return json.dumps({"gamma": gamma, "pairs": pairs}, sort_keys=True)


def pseudo_labels_from_json(text: str) -> tuple[list[Optional[PseudoLabel]], float]:
    doc = json.loads(text)
    labels: list[Optional[PseudoLabel]] = []
    for rec in doc["pairs"]:
        if rec is None:
            labels.append(None)
            continue
        labels.append(
            PseudoLabel(
                union_mask=rle_decode(rec["union"]),
                intersection_mask=(
                    None if rec["intersection"] is None else rle_decode(rec["intersection"])
                ),
                intersection_box=(
                    None
                    if rec["intersection_box"] is None
                    else Box(*rec["intersection_box"])
                ),
                sigma_h=rec["sigma_h"],
                sigma_o=rec["sigma_o"],
            )
        )
    return labels, doc["gamma"]
