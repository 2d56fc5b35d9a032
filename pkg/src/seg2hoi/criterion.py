"""Hungarian quadruplet matching and the full training loss.

Matching assigns every ground-truth pair to one prediction row via an
exact minimum-cost bipartite solve over verb, class, box and mask cost
terms. The loss applies focal verb supervision, object-class cross
entropy with a no-object class for unmatched rows, L1/GIoU on the
counterpart box, and point-sampled BCE + dice on union (and optionally
intersection) mask logits against the pseudo-labels, summed over the
auxiliary layer outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch import Tensor
from torch.nn import functional as F

from .geometry import Box
from .hoi_decoder import PredictionRows
from .pseudolabel import PseudoLabel


@dataclass
class GroundTruthHOI:
    """One annotated human-object pair with its multi-label verb vector."""

    human_box: Box
    object_box: Box
    object_class: int
    verb_vector: np.ndarray  # [N_verb] bool
    pseudo: Optional[PseudoLabel] = None  # None = unmatchable, no mask terms

    def __post_init__(self):
        self.verb_vector = np.asarray(self.verb_vector, dtype=bool)
        if not self.verb_vector.any():
            raise ValueError("ground truth needs at least one verb")


@dataclass(frozen=True)
class MatchWeights:
    """Hungarian cost weights (verb, class, box L1, box GIoU, masks)."""

    verb: float = 5.0
    cls: float = 4.0
    box: float = 5.0
    giou: float = 2.0
    mask_union: float = 2.0
    mask_inter: float = 0.1
    # the intersection-mask cost is optional and off by default; the
    # union cost participates whenever mask supervision is available
    include_inter_cost: bool = False


@dataclass(frozen=True)
class LossWeights:
    verb: float = 5.0
    cls: float = 5.0
    box: float = 3.0
    giou: float = 4.0
    mask_union: float = 2.0
    mask_inter: float = 0.1
    focal_alpha: float = 0.5
    focal_gamma: float = 2.0
    eos_coef: float = 0.1  # down-weight for the no-object class
    num_points: int = 1024  # mask points sampled per loss evaluation
    use_union_mask: bool = True
    use_inter_mask: bool = False


@dataclass
class Assignment:
    """Injective prediction-to-GT pairing; every GT is matched."""

    pairs: list[tuple[int, int]]  # (prediction row, gt index)
    unmatched: list[int]  # prediction rows without a GT


def box_cxcywh_to_xyxy(x: Tensor) -> Tensor:
    cx, cy, w, h = x.unbind(-1)
    return torch.stack(
        [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=-1
    )


def generalized_box_iou_pairwise(boxes1: Tensor, boxes2: Tensor) -> Tensor:
    """GIoU matrix [N, M] for xyxy boxes; degenerate-safe."""
    area1 = (boxes1[:, 2] - boxes1[:, 0]) * (boxes1[:, 3] - boxes1[:, 1])
    area2 = (boxes2[:, 2] - boxes2[:, 0]) * (boxes2[:, 3] - boxes2[:, 1])
    lt = torch.max(boxes1[:, None, :2], boxes2[None, :, :2])
    rb = torch.min(boxes1[:, None, 2:], boxes2[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area1[:, None] + area2[None, :] - inter
    iou = inter / union.clamp(min=1e-12)
    lt = torch.min(boxes1[:, None, :2], boxes2[None, :, :2])
    rb = torch.max(boxes1[:, None, 2:], boxes2[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    enclose = (wh[..., 0] * wh[..., 1]).clamp(min=1e-12)
    return iou - (enclose - union) / enclose


def _gt_tensors(gts: Sequence[GroundTruthHOI], dtype, grid: tuple[int, int]):
    human = torch.stack(
        [torch.as_tensor(g.human_box.as_array(), dtype=dtype) for g in gts]
    )
    obj = torch.stack(
        [torch.as_tensor(g.object_box.as_array(), dtype=dtype) for g in gts]
    )
    verbs = torch.stack(
        [torch.as_tensor(g.verb_vector, dtype=dtype) for g in gts]
    )
    classes = torch.as_tensor([g.object_class for g in gts], dtype=torch.long)
    h, w = grid
    unions, inters, has_mask, has_inter = [], [], [], []
    for g in gts:
        if g.pseudo is None:
            unions.append(torch.zeros(h, w, dtype=dtype))
            inters.append(torch.zeros(h, w, dtype=dtype))
            has_mask.append(False)
            has_inter.append(False)
        else:
            unions.append(
                torch.as_tensor(g.pseudo.union_mask.data, dtype=dtype)
            )
            if g.pseudo.intersection_mask is None:
                inters.append(torch.zeros(h, w, dtype=dtype))
                has_inter.append(False)
            else:
                inters.append(
                    torch.as_tensor(g.pseudo.intersection_mask.data, dtype=dtype)
                )
                has_inter.append(True)
            has_mask.append(True)
    return {
        "human": human,
        "object": obj,
        "verbs": verbs,
        "classes": classes,
        "union": torch.stack(unions),
        "inter": torch.stack(inters),
        "has_mask": torch.as_tensor(has_mask),
        "has_inter": torch.as_tensor(has_inter),
    }


def _verb_match_cost(verb_logits: Tensor, gt_verbs: Tensor) -> Tensor:
    """Action matching cost: mean prob on positive verbs plus mean
    complement on negatives, negated (the standard set-prediction form
    for multi-label actions)."""
    prob = verb_logits.sigmoid()
    pos = prob @ gt_verbs.T / (gt_verbs.sum(dim=1)[None, :] + 1e-4)
    neg = (1 - prob) @ (1 - gt_verbs).T / ((1 - gt_verbs).sum(dim=1)[None, :] + 1e-4)
    return -(pos + neg) / 2


def _mask_cost(pred_logits: Tensor, gt_masks: Tensor) -> Tensor:
    """Dense BCE + dice cost matrix [P, G] over flattened cells."""
    p = pred_logits.flatten(1)
    t = gt_masks.flatten(1)
    n = p.shape[1]
    pos = F.binary_cross_entropy_with_logits(
        p, torch.ones_like(p), reduction="none"
    )
    neg = F.binary_cross_entropy_with_logits(
        p, torch.zeros_like(p), reduction="none"
    )
    bce = (pos @ t.T + neg @ (1 - t).T) / n
    prob = p.sigmoid()
    numer = 2 * prob @ t.T
    denom = prob.sum(dim=1)[:, None] + t.sum(dim=1)[None, :]
    dice = 1 - (numer + 1) / (denom + 1)
    return bce + dice


def pair_cost_matrix(
    rows: PredictionRows,
    gts: Sequence[GroundTruthHOI],
    weights: MatchWeights = MatchWeights(),
) -> np.ndarray:
    """[P, G] matching cost; mask terms vanish for unmatchable pseudo."""
    dtype = rows.verb_logits.dtype
    grid = rows.union_mask_logits.shape[1:]
    gt = _gt_tensors(gts, dtype, grid)
    with torch.no_grad():
        cost = weights.verb * _verb_match_cost(rows.verb_logits, gt["verbs"])
        prob = rows.class_logits.softmax(dim=-1)
        cost += weights.cls * (-prob[:, gt["classes"]])

        pred_h, pred_o = rows.human_object_boxes()
        l1 = torch.cdist(pred_h, gt["human"], p=1) + torch.cdist(
            pred_o, gt["object"], p=1
        )
        cost += weights.box * l1
        giou_term = (
            1
            - generalized_box_iou_pairwise(
                box_cxcywh_to_xyxy(pred_h), box_cxcywh_to_xyxy(gt["human"])
            )
        ) + (
            1
            - generalized_box_iou_pairwise(
                box_cxcywh_to_xyxy(pred_o), box_cxcywh_to_xyxy(gt["object"])
            )
        )
        cost += weights.giou * giou_term

        mask_gate = gt["has_mask"].to(dtype)[None, :]
        cost += (
            weights.mask_union
            * _mask_cost(rows.union_mask_logits, gt["union"])
            * mask_gate
        )
        if weights.include_inter_cost:
            inter_gate = gt["has_inter"].to(dtype)[None, :]
            cost += (
                weights.mask_inter
                * _mask_cost(rows.inter_mask_logits, gt["inter"])
                * inter_gate
            )
    return cost.cpu().numpy()


def hungarian(cost: np.ndarray) -> Assignment:
    """Exact minimum-cost assignment; requires rows >= columns."""
    cost = np.asarray(cost, dtype=np.float64)
    p, g = cost.shape
    if p < g:
        raise ValueError(f"need at least as many predictions as targets ({p} < {g})")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: rc[1])
    matched = {r for r, _ in pairs}
    return Assignment(
        pairs=[(int(r), int(c)) for r, c in pairs],
        unmatched=[i for i in range(p) if i not in matched],
    )


def _focal_loss(logits: Tensor, targets: Tensor, alpha: float, gamma: float) -> Tensor:
    prob = logits.sigmoid()
    ce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    p_t = prob * targets + (1 - prob) * (1 - targets)
    a_t = alpha * targets + (1 - alpha) * (1 - targets)
    return a_t * (1 - p_t) ** gamma * ce


def _sample_points(total: int, k: int, rng: np.random.Generator) -> Tensor:
    """K distinct flat cell indices; all cells when k covers the grid."""
    if k >= total:
        return torch.arange(total)
    return torch.as_tensor(rng.choice(total, size=k, replace=False))


class HOICriterion:
    """Loss over matched predictions for one image, summed across layers."""

    def __init__(
        self,
        loss_weights: LossWeights = LossWeights(),
        match_weights: MatchWeights = MatchWeights(),
    ):
        self.w = loss_weights
        self.match_weights = match_weights

    def match(
        self, per_layer_rows: Sequence[PredictionRows], gts: Sequence[GroundTruthHOI]
    ) -> list[Assignment]:
        return [
            hungarian(pair_cost_matrix(rows, gts, self.match_weights))
            for rows in per_layer_rows
        ]

    def loss(
        self,
        per_layer_rows: Sequence[PredictionRows],
        gts: Sequence[GroundTruthHOI],
        assignments: Sequence[Assignment],
        point_rng: Optional[np.random.Generator] = None,
    ) -> tuple[Tensor, dict[str, float]]:
        """Weighted total plus a per-term breakdown (floats)."""
        if point_rng is None:
            point_rng = np.random.default_rng(0)
        w = self.w
        dtype = per_layer_rows[0].verb_logits.dtype
        total = torch.zeros((), dtype=dtype)
        breakdown: dict[str, float] = {}
        num_gt = max(len(gts), 1)
        grid = per_layer_rows[0].union_mask_logits.shape[1:]
        gt = _gt_tensors(gts, dtype, grid) if gts else None
        cells = grid[0] * grid[1]
        points = _sample_points(cells, w.num_points, point_rng)

        for rows, assign in zip(per_layer_rows, assignments):
            terms = self._layer_loss(rows, gts, gt, assign, num_gt, points)
            for name, value in terms.items():
                weight = getattr(w, name)
                total = total + weight * value
                breakdown[name] = breakdown.get(name, 0.0) + float(value.detach())
        breakdown["total"] = float(total.detach())
        return total, breakdown

    def _layer_loss(self, rows, gts, gt, assign, num_gt, points):
        w = self.w
        dtype = rows.verb_logits.dtype
        n, n_verb = rows.verb_logits.shape

        verb_target = torch.zeros(n, n_verb, dtype=dtype)
        class_target = torch.full(
            (n,), rows.class_logits.shape[1] - 1, dtype=torch.long
        )
        matched_rows = [r for r, _ in assign.pairs]
        matched_gts = [g for _, g in assign.pairs]
        if matched_rows:
            idx = torch.as_tensor(matched_rows)
            gidx = torch.as_tensor(matched_gts)
            verb_target[idx] = gt["verbs"][gidx]
            class_target[idx] = gt["classes"][gidx]

        terms: dict[str, Tensor] = {}
        terms["verb"] = (
            _focal_loss(rows.verb_logits, verb_target, w.focal_alpha, w.focal_gamma)
            .sum()
            / num_gt
        )
        class_weight = torch.ones(rows.class_logits.shape[1], dtype=dtype)
        class_weight[-1] = w.eos_coef
        terms["cls"] = F.cross_entropy(
            rows.class_logits, class_target, weight=class_weight
        )

        zero = torch.zeros((), dtype=dtype)
        terms["box"] = zero
        terms["giou"] = zero
        terms["mask_union"] = zero
        terms["mask_inter"] = zero
        if not matched_rows:
            return terms

        idx = torch.as_tensor(matched_rows)
        gidx = torch.as_tensor(matched_gts)
        # the frozen own box needs no supervision; the counterpart head
        # regresses the other member of the pair
        target_box = torch.where(
            rows.is_object_row[idx][:, None], gt["human"][gidx], gt["object"][gidx]
        )
        pred_box = rows.counterpart_box[idx]
        terms["box"] = F.l1_loss(pred_box, target_box, reduction="sum") / num_gt
        giou_diag = generalized_box_iou_pairwise(
            box_cxcywh_to_xyxy(pred_box), box_cxcywh_to_xyxy(target_box)
        ).diagonal()
        terms["giou"] = (1 - giou_diag).sum() / num_gt

        if w.use_union_mask:
            terms["mask_union"] = self._mask_loss(
                rows.union_mask_logits, gt["union"], gt["has_mask"], idx, gidx,
                points, num_gt,
            )
        if w.use_inter_mask:
            terms["mask_inter"] = self._mask_loss(
                rows.inter_mask_logits, gt["inter"], gt["has_inter"], idx, gidx,
                points, num_gt,
            )
        return terms

    @staticmethod
    def _mask_loss(pred_logits, gt_masks, gate, idx, gidx, points, num_gt):
        keep = gate[gidx]
        if not bool(keep.any()):
            return torch.zeros((), dtype=pred_logits.dtype)
        p = pred_logits[idx][keep].flatten(1)[:, points]
        t = gt_masks[gidx][keep].flatten(1)[:, points]
        bce = F.binary_cross_entropy_with_logits(p, t, reduction="none").mean(dim=1)
        prob = p.sigmoid()
        dice = 1 - (2 * (prob * t).sum(dim=1) + 1) / (
            prob.sum(dim=1) + t.sum(dim=1) + 1
        )
        return (bce + dice).sum() / num_gt
