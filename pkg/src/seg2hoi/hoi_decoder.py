"""Two-branch HOI decoder over frozen backbone outputs.

Queries are split into an object branch (top confidence) and a human
branch (human-classified queries repeated four times, padded to a fixed
slot count). Each decoder layer runs self-attention, cross-attention into
the counterpart branch, and cross-attention into flattened backbone
features, all with residual connections; padded slots are removed from
every key set so they can never influence valid slots. Relation features
come from a per-branch feed-forward network applied to the layer state,
and a shared head module predicts verbs, classes, the counterpart box and
union/intersection mask logits (via the pixel embedding map) after every
layer for deep supervision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import Tensor, nn

from .foundation import BACKGROUND_INDEX, FoundationOutput


def sinusoid_features(x: Tensor, dim: int, temperature: float = 10000.0) -> Tensor:
    """Alternating (sin, cos) encoding of a scalar per position.

    x: [...]; returns [..., dim]. x = 0 gives the (0, 1, 0, 1, ...) pattern.
    """
    if dim % 2:
        raise ValueError("sinusoid dim must be even")
    freq = temperature ** (
        2 * torch.arange(dim // 2, dtype=x.dtype, device=x.device) / dim
    )
    angles = 2 * math.pi * x[..., None] / freq
    out = torch.zeros(*x.shape, dim, dtype=x.dtype, device=x.device)
    out[..., 0::2] = angles.sin()
    out[..., 1::2] = angles.cos()
    return out


class BoxSelfEmbed(nn.Module):
    """Self-attention positional embedding from a box.

    Sinusoids of the center, concatenated with raw (w, h), projected to
    the hidden dimension.
    """

    def __init__(self, hidden_dim: int):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.proj = nn.Linear(hidden_dim + 2, hidden_dim)

    def encode(self, boxes: Tensor) -> Tensor:
        """Pre-projection encoding [N, hidden_dim + 2]."""
        half = self.hidden_dim // 2
        return torch.cat(
            [
                sinusoid_features(boxes[:, 0], half),
                sinusoid_features(boxes[:, 1], half),
                boxes[:, 2:4],
            ],
            dim=-1,
        )

    def forward(self, boxes: Tensor) -> Tensor:
        return self.proj(self.encode(boxes))


class BoxCrossEmbed(nn.Module):
    """Cross-attention positional embedding, scale-modulated by the query.

    Sinusoids of the box center are rescaled by reference sizes predicted
    from the content query: cat(phi(cx) * w_ref / w, phi(cy) * h_ref / h).
    """

    def __init__(self, hidden_dim: int, eps: float = 1e-6):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.eps = eps
        self.ref = nn.Sequential(
            nn.Linear(hidden_dim, hidden_dim), nn.ReLU(), nn.Linear(hidden_dim, 2)
        )

    def forward(self, boxes: Tensor, queries: Tensor) -> Tensor:
        ref = torch.sigmoid(self.ref(queries))
        half = self.hidden_dim // 2
        sx = ref[:, 0] / boxes[:, 2].clamp(min=self.eps)
        sy = ref[:, 1] / boxes[:, 3].clamp(min=self.eps)
        return torch.cat(
            [
                sinusoid_features(boxes[:, 0], half) * sx[:, None],
                sinusoid_features(boxes[:, 1], half) * sy[:, None],
            ],
            dim=-1,
        )


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with per-use q/k/v projections.

    No output projection or biases; an empty key set yields a zero update
    so the surrounding residual acts as identity.
    """

    def __init__(self, hidden_dim: int, num_heads: int):
        super().__init__()
        if hidden_dim % num_heads:
            raise ValueError("hidden_dim must divide evenly into heads")
        self.num_heads = num_heads
        self.head_dim = hidden_dim // num_heads
        self.w_q = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.w_k = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.w_v = nn.Linear(hidden_dim, hidden_dim, bias=False)

    def forward(
        self,
        query_x: Tensor,
        key_x: Tensor,
        value_x: Tensor,
        key_mask: Optional[Tensor] = None,
    ) -> Tensor:
        if key_mask is not None:
            if not bool(key_mask.any()):
                return torch.zeros_like(query_x)
            key_x = key_x[key_mask]
            value_x = value_x[key_mask]
        nq, nk = query_x.shape[0], key_x.shape[0]
        q = self.w_q(query_x).view(nq, self.num_heads, self.head_dim)
        k = self.w_k(key_x).view(nk, self.num_heads, self.head_dim)
        v = self.w_v(value_x).view(nk, self.num_heads, self.head_dim)
        scores = torch.einsum("qhd,khd->hqk", q, k) / math.sqrt(self.head_dim)
        attn = torch.softmax(scores, dim=-1)
        out = torch.einsum("hqk,khd->qhd", attn, v)
        return out.reshape(nq, -1)


@dataclass
class BranchBundle:
    """Aligned content queries plus positional embeddings for one branch."""

    content: Tensor  # [N, C] initial aligned queries (also the heads' Q_d)
    p1: Tensor  # [N, C] self-attention positions
    p2: Tensor  # [N, C] cross-attention positions
    valid: Tensor  # [N] bool, False = padded slot
    source: Tensor  # [N] long, foundation query index (0 for padding)
    own_box: Tensor  # [N, 4] frozen instance box

    def __len__(self) -> int:
        return self.content.shape[0]


class DecoderLayer(nn.Module):
    """Self-attn, counterpart cross-attn, backbone cross-attn per branch."""

    def __init__(self, hidden_dim: int, num_heads: int):
        super().__init__()
        self.self_obj = MultiHeadAttention(hidden_dim, num_heads)
        self.self_hum = MultiHeadAttention(hidden_dim, num_heads)
        self.cross_obj = MultiHeadAttention(hidden_dim, num_heads)
        self.cross_hum = MultiHeadAttention(hidden_dim, num_heads)
        self.back_obj = MultiHeadAttention(hidden_dim, num_heads)
        self.back_hum = MultiHeadAttention(hidden_dim, num_heads)

    def forward(
        self,
        q_obj: Tensor,
        obj: BranchBundle,
        q_hum: Tensor,
        hum: BranchBundle,
        backbone: Tensor,
    ) -> tuple[Tensor, Tensor]:
        q_obj = q_obj + self.self_obj(q_obj + obj.p1, q_obj + obj.p1, q_obj, obj.valid)
        q_hum = q_hum + self.self_hum(q_hum + hum.p1, q_hum + hum.p1, q_hum, hum.valid)
        # both cross updates read the same post-self snapshot
        s_obj, s_hum = q_obj, q_hum
        q_obj = s_obj + self.cross_obj(s_obj + obj.p2, s_hum + hum.p2, s_hum, hum.valid)
        q_hum = s_hum + self.cross_hum(s_hum + hum.p2, s_obj + obj.p2, s_obj, obj.valid)
        q_obj = q_obj + self.back_obj(q_obj + obj.p2, backbone, backbone)
        q_hum = q_hum + self.back_hum(q_hum + hum.p2, backbone, backbone)
        return q_obj, q_hum


def _mlp3(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_dim, hidden),
        nn.ReLU(),
        nn.Linear(hidden, hidden),
        nn.ReLU(),
        nn.Linear(hidden, out_dim),
    )


@dataclass
class HeadOutputs:
    """Six per-query predictions; rows are object slots then human slots."""

    verb_logits: Tensor  # [N_f, N_verb]
    self_class_logits: Tensor  # [N_o, N_obj + 1]
    inter_class_logits: Tensor  # [N_h, N_obj + 1]
    counterpart_box: Tensor  # [N_f, 4]
    union_mask_logits: Tensor  # [N_f, h, w]
    inter_mask_logits: Tensor  # [N_f, h, w]

    @property
    def class_logits(self) -> Tensor:
        """Self and interacting class heads concatenated, row-aligned."""
        return torch.cat([self.self_class_logits, self.inter_class_logits])


@dataclass
class LayerOutput:
    heads: HeadOutputs
    relation: Tensor  # [N_f, C] concatenated branch relation features
    e_verb: Tensor  # [N_f, C]
    e_object: Tensor  # [N_f, C]
    e_union: Tensor  # [N_f, C] union-mask embedding (pre pixel product)


@dataclass
class DecoderOutput:
    layers: list[LayerOutput]
    objects: BranchBundle
    humans: BranchBundle

    @property
    def final(self) -> LayerOutput:
        return self.layers[-1]


@dataclass(frozen=True)
class DecoderConfig:
    hidden_dim: int = 64
    num_heads: int = 8
    num_layers: int = 6
    num_object_queries: int = 25
    human_slot_cap: int = 60
    human_repeat: int = 4
    num_object_classes: int = 4
    num_verb_classes: int = 3
    classifier: str = "linear"  # or "cosine"
    temperature: float = 0.07
    # similarity logits are (cos - bias) / temperature; a positive bias
    # lets "negative" rows rest near zero cosine instead of anti-aligning,
    # which keeps prompt-similarity products well ordered
    similarity_bias: float = 0.0
    human_class_id: int = 0
    init_seed: int = 0

    def __post_init__(self):
        if self.hidden_dim % 4:
            raise ValueError("hidden_dim must be divisible by 4")
        if self.classifier not in ("linear", "cosine"):
            raise ValueError(f"unknown classifier {self.classifier!r}")


def select_branch_sources(
    class_logits: np.ndarray,
    num_object_queries: int,
    human_class_id: int,
    human_repeat: int,
    human_slot_cap: int,
) -> tuple[list[int], list[int]]:
    """Foundation query indices feeding each branch.

    Object branch: top queries by max foreground class logit (stable on
    index). Human branch: queries classified as human, each repeated, then
    truncated to the slot cap.
    """
    fg_max = class_logits[:, :BACKGROUND_INDEX].max(axis=1)
    order = np.argsort(-fg_max, kind="stable")
    obj_src = [int(i) for i in order[:num_object_queries]]
    argmax = class_logits.argmax(axis=1)
    hum_src: list[int] = []
    for i in np.flatnonzero(argmax == human_class_id):
        hum_src.extend([int(i)] * human_repeat)
    return obj_src, hum_src[:human_slot_cap]


class PredictionHeads(nn.Module):
    """Shared head stack applied to the bundle state after every layer."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.hidden_dim
        n_cls = cfg.num_object_classes + 1  # trailing no-object logit
        self.verb = nn.Linear(2 * c, cfg.num_verb_classes)
        self.self_class = nn.Linear(2 * c, n_cls)
        self.inter_class = nn.Linear(c, n_cls)
        self.box = _mlp3(c, c, 4)
        self.union_embed = _mlp3(2 * c, c, c)
        self.inter_embed_obj = _mlp3(c, c, c)
        self.inter_embed_hum = _mlp3(2 * c, c, c)
        self.e_verb = nn.Linear(2 * c, c)
        self.e_obj_self = nn.Linear(2 * c, c)
        self.e_obj_inter = nn.Linear(c, c)
        # near-zero init keeps the category embeddings inside the span the
        # classifier gradients build (the text-bank directions), so cosine
        # comparisons against prompts carry no untrained residue
        for head in (self.e_verb, self.e_obj_self, self.e_obj_inter):
            nn.init.normal_(head.weight, std=1e-3)
            nn.init.zeros_(head.bias)
        if cfg.classifier == "cosine":
            self.register_buffer("bank_obj", torch.zeros(cfg.num_object_classes, c))
            self.register_buffer("bank_verb", torch.zeros(cfg.num_verb_classes, c))
            self.background_embed = nn.Parameter(torch.randn(c) / math.sqrt(c))

    def set_text_banks(self, objects: np.ndarray, verbs: np.ndarray) -> None:
        self.bank_obj.copy_(torch.as_tensor(objects, dtype=self.bank_obj.dtype))
        self.bank_verb.copy_(torch.as_tensor(verbs, dtype=self.bank_verb.dtype))

    def _cosine(self, e: Tensor, bank: Tensor) -> Tensor:
        e = e / e.norm(dim=-1, keepdim=True).clamp(min=1e-8)
        bank = bank / bank.norm(dim=-1, keepdim=True).clamp(min=1e-8)
        return e @ bank.T

    def embeddings(
        self, r_obj: Tensor, r_hum: Tensor, qd_obj: Tensor, qd_hum: Tensor
    ) -> tuple[Tensor, Tensor, Tensor]:
        """(E_v, E_o, E_U) rows aligned with the N_f prediction rows."""
        r = torch.cat([r_obj, r_hum])
        qd = torch.cat([qd_obj, qd_hum])
        e_v = self.e_verb(torch.cat([r, qd], dim=-1))
        e_o = torch.cat(
            [
                self.e_obj_self(torch.cat([r_obj, qd_obj], dim=-1)),
                self.e_obj_inter(r_hum),
            ]
        )
        e_u = self.union_embed(torch.cat([r, qd], dim=-1))
        return e_v, e_o, e_u

    def forward(
        self,
        r_obj: Tensor,
        r_hum: Tensor,
        qd_obj: Tensor,
        qd_hum: Tensor,
        f_seg: Tensor,
    ) -> LayerOutput:
        r = torch.cat([r_obj, r_hum])
        qd = torch.cat([qd_obj, qd_hum])
        rq = torch.cat([r, qd], dim=-1)
        e_v, e_o, e_u = self.embeddings(r_obj, r_hum, qd_obj, qd_hum)

        if self.cfg.classifier == "cosine":
            tau = self.cfg.temperature
            bias = self.cfg.similarity_bias
            n_o = r_obj.shape[0]
            bg = self.background_embed[None, :]
            verb_logits = (self._cosine(e_v, self.bank_verb) - bias) / tau
            self_cls = (
                torch.cat(
                    [
                        self._cosine(e_o[:n_o], self.bank_obj),
                        self._cosine(e_o[:n_o], bg),
                    ],
                    dim=-1,
                )
                / tau
            )
            inter_cls = (
                torch.cat(
                    [
                        self._cosine(e_o[n_o:], self.bank_obj),
                        self._cosine(e_o[n_o:], bg),
                    ],
                    dim=-1,
                )
                / tau
            )
        else:
            verb_logits = self.verb(rq)
            self_cls = self.self_class(torch.cat([r_obj, qd_obj], dim=-1))
            inter_cls = self.inter_class(r_hum)

        boxes = torch.sigmoid(self.box(r))
        union_logits = torch.einsum("nc,hwc->nhw", e_u, f_seg)
        inter_embed = torch.cat(
            [
                self.inter_embed_obj(r_obj + qd_obj),
                self.inter_embed_hum(torch.cat([r_hum, qd_hum], dim=-1)),
            ]
        )
        inter_logits = torch.einsum("nc,hwc->nhw", inter_embed, f_seg)
        heads = HeadOutputs(
            verb_logits=verb_logits,
            self_class_logits=self_cls,
            inter_class_logits=inter_cls,
            counterpart_box=boxes,
            union_mask_logits=union_logits,
            inter_mask_logits=inter_logits,
        )
        return LayerOutput(
            heads=heads, relation=r, e_verb=e_v, e_object=e_o, e_union=e_u
        )


class HOIDecoder(nn.Module):
    """Trainable decoder; the frozen backbone output is its only input."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        torch.manual_seed(cfg.init_seed)
        self.cfg = cfg
        c = cfg.hidden_dim
        self.pos_self = BoxSelfEmbed(c)
        self.pos_cross = BoxCrossEmbed(c)
        self.layers = nn.ModuleList(
            DecoderLayer(c, cfg.num_heads) for _ in range(cfg.num_layers)
        )
        # relation FFNs use the conventional expanded hidden width
        self.rel_obj = nn.Sequential(nn.Linear(c, 2 * c), nn.ReLU(), nn.Linear(2 * c, c))
        self.rel_hum = nn.Sequential(nn.Linear(c, 2 * c), nn.ReLU(), nn.Linear(2 * c, c))
        self.heads = PredictionHeads(cfg)

    @property
    def _dtype(self) -> torch.dtype:
        return self.pos_self.proj.weight.dtype

    def _bundle(self, found: FoundationOutput, sources: list[int], slots: int) -> BranchBundle:
        dtype = self._dtype
        n_valid = min(len(sources), slots)
        src = torch.zeros(slots, dtype=torch.long)
        valid = torch.zeros(slots, dtype=torch.bool)
        src[:n_valid] = torch.as_tensor(sources[:n_valid], dtype=torch.long)
        valid[:n_valid] = True
        queries = torch.as_tensor(found.decoder_queries, dtype=dtype)[src]
        boxes = torch.as_tensor(found.instance_boxes, dtype=dtype)[src]
        keep = valid.to(dtype)[:, None]
        queries = queries * keep
        boxes = boxes * keep
        p1 = self.pos_self(boxes) * keep
        p2 = self.pos_cross(boxes, queries) * keep
        return BranchBundle(
            content=queries, p1=p1, p2=p2, valid=valid, source=src, own_box=boxes
        )

    def align_queries(self, found: FoundationOutput) -> tuple[BranchBundle, BranchBundle]:
        cfg = self.cfg
        obj_src, hum_src = select_branch_sources(
            found.instance_class_logits,
            cfg.num_object_queries,
            cfg.human_class_id,
            cfg.human_repeat,
            cfg.human_slot_cap,
        )
        return (
            self._bundle(found, obj_src, cfg.num_object_queries),
            self._bundle(found, hum_src, cfg.human_slot_cap),
        )

    def forward(self, found: FoundationOutput) -> DecoderOutput:
        dtype = self._dtype
        obj, hum = self.align_queries(found)
        backbone = torch.cat(
            [
                torch.as_tensor(f.reshape(-1, f.shape[-1]), dtype=dtype)
                for f in found.multi_scale_features
            ]
        )
        f_seg = torch.as_tensor(found.pixel_embedding, dtype=dtype)
        q_obj, q_hum = obj.content, hum.content
        outputs = []
        for layer in self.layers:
            q_obj, q_hum = layer(q_obj, obj, q_hum, hum, backbone)
            r_obj = self.rel_obj(q_obj)
            r_hum = self.rel_hum(q_hum)
            outputs.append(self.heads(r_obj, r_hum, obj.content, hum.content, f_seg))
        return DecoderOutput(layers=outputs, objects=obj, humans=hum)


@dataclass
class PredictionRows:
    """Per-valid-row view used by matching, losses and inference."""

    verb_logits: Tensor  # [M, N_verb]
    class_logits: Tensor  # [M, N_obj + 1] branch-appropriate head
    counterpart_box: Tensor  # [M, 4]
    own_box: Tensor  # [M, 4]
    union_mask_logits: Tensor  # [M, h, w]
    inter_mask_logits: Tensor  # [M, h, w]
    is_object_row: Tensor  # [M] bool
    row_index: Tensor  # [M] long, position among the N_f slots
    source: Tensor  # [M] long, foundation query index

    def __len__(self) -> int:
        return self.verb_logits.shape[0]

    def human_object_boxes(self) -> tuple[Tensor, Tensor]:
        """(human, object) box pairs in branch-appropriate order."""
        human = torch.where(
            self.is_object_row[:, None], self.counterpart_box, self.own_box
        )
        obj = torch.where(
            self.is_object_row[:, None], self.own_box, self.counterpart_box
        )
        return human, obj


def prediction_rows(
    layer: LayerOutput, objects: BranchBundle, humans: BranchBundle
) -> PredictionRows:
    """Flatten a layer's heads to valid rows in branch order."""
    n_o = len(objects)
    valid = torch.cat([objects.valid, humans.valid])
    keep = torch.nonzero(valid, as_tuple=False).squeeze(1)
    heads = layer.heads
    own_box = torch.cat([objects.own_box, humans.own_box])
    source = torch.cat([objects.source, humans.source])
    is_obj = torch.cat(
        [
            torch.ones(n_o, dtype=torch.bool),
            torch.zeros(len(humans), dtype=torch.bool),
        ]
    )
    return PredictionRows(
        verb_logits=heads.verb_logits[keep],
        class_logits=heads.class_logits[keep],
        counterpart_box=heads.counterpart_box[keep],
        own_box=own_box[keep],
        union_mask_logits=heads.union_mask_logits[keep],
        inter_mask_logits=heads.inter_mask_logits[keep],
        is_object_row=is_obj[keep],
        row_index=keep,
        source=source[keep],
    )
