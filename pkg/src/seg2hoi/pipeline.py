"""Dataset ingestion, configuration, and the decoder training loop.

Only the HOI decoder trains; the frozen backbone runs once per image and
its outputs (plus derived pseudo-labels) are cached. Training uses AdamW
with stepwise learning-rate drops, logs one JSON object per step, and
aborts with a diagnostic snapshot if the loss stops being finite.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .criterion import GroundTruthHOI, HOICriterion, LossWeights, MatchWeights
from .evalinfer import (
    Quadruplet,
    RoleGroundTruth,
    assemble,
    triplet_recall,
)
from .foundation import (
    CLASS_NAMES,
    FoundationConfig,
    FoundationOutput,
    Scene,
    Shape,
    ToyFoundationModel,
    shape_color,
)
from .geometry import Box, box_intersection
from .hoi_decoder import DecoderConfig, HOIDecoder, prediction_rows
from .openvocab import HashWordEmbedder, build_text_bank
from .pseudolabel import pseudo_labels_for_image

VERB_NAMES = ("hold", "near", "over")
V_HOLD, V_NEAR, V_OVER = 0, 1, 2
SYNTH_OBJECT_KINDS = ("rectangle", "ellipse", "triangle")  # cup, ball, book


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class HOIImage:
    image_id: str
    width: int
    height: int
    ground_truths: list[GroundTruthHOI]
    scene: Optional[Scene] = None
    path: Optional[str] = None
    role_ground_truths: list[RoleGroundTruth] = field(default_factory=list)


@dataclass
class HOIDataset:
    object_names: list[str]
    verb_names: list[str]
    hoi_classes: list[tuple[int, int]]  # (verb id, object id)
    images: list[HOIImage]
    roles: dict = field(default_factory=dict)

    @property
    def num_objects(self) -> int:
        return len(self.object_names)

    @property
    def num_verbs(self) -> int:
        return len(self.verb_names)

    def hoi_id(self, verb: int, obj: int) -> int:
        return self.hoi_classes.index((verb, obj))

    def instance_counts(self) -> list[int]:
        counts = [0] * len(self.hoi_classes)
        lookup = {vo: i for i, vo in enumerate(self.hoi_classes)}
        for image in self.images:
            for gt in image.ground_truths:
                for verb in np.flatnonzero(gt.verb_vector):
                    key = (int(verb), gt.object_class)
                    if key in lookup:
                        counts[lookup[key]] += 1
        return counts

    def rare_flags(self, threshold: int = 10) -> list[bool]:
        return [c < threshold for c in self.instance_counts()]


# ---------------------------------------------------------------------------
# annotation loading


def _check_bbox(raw, errors, where):
    if (
        not isinstance(raw, (list, tuple))
        or len(raw) != 4
        or not all(isinstance(v, (int, float)) for v in raw)
        or raw[2] < raw[0]
        or raw[3] < raw[1]
    ):
        errors.append(where)
        return None
    return raw


def _normalize_bbox(raw, width, height) -> Box:
    x0, y0, x1, y1 = raw
    return Box.from_corners(x0 / width, y0 / height, x1 / width, y1 / height)


def load_annotations(path, fmt: str) -> HOIDataset:
    """Read a HICO- or V-COCO-style annotation file.

    Boxes arrive as absolute pixel corners and are normalized to center
    form. Malformed pair records or out-of-range category ids raise with
    the offending (image, pair) indices listed.
    """
    if fmt not in ("hico", "vcoco"):
        raise ValueError(f"unknown annotation format {fmt!r}")
    with open(path) as f:
        doc = json.load(f)
    objects = list(doc["objects"])
    verbs = list(doc["verbs"])
    errors: list[tuple[int, int]] = []
    images: list[HOIImage] = []

    if fmt == "hico":
        hoi_classes = [(rec["verb"], rec["object"]) for rec in doc["hoi_classes"]]
        for vid, oid in hoi_classes:
            if not (0 <= vid < len(verbs) and 0 <= oid < len(objects)):
                raise ValueError(f"hoi class ({vid}, {oid}) out of range")
        for i, rec in enumerate(doc["images"]):
            width, height = rec["width"], rec["height"]
            gts = []
            for j, pair in enumerate(rec.get("pairs", [])):
                hb = _check_bbox(pair.get("human_bbox"), errors, (i, j))
                ob = _check_bbox(pair.get("object_bbox"), errors, (i, j))
                oid = pair.get("object")
                vids = pair.get("verbs")
                if hb is None or ob is None:
                    continue
                if not isinstance(oid, int) or not (0 <= oid < len(objects)):
                    errors.append((i, j))
                    continue
                if not vids or any(
                    not isinstance(v, int) or not (0 <= v < len(verbs)) for v in vids
                ):
                    errors.append((i, j))
                    continue
                vec = np.zeros(len(verbs), dtype=bool)
                vec[list(vids)] = True
                gts.append(
                    GroundTruthHOI(
                        human_box=_normalize_bbox(hb, width, height),
                        object_box=_normalize_bbox(ob, width, height),
                        object_class=oid,
                        verb_vector=vec,
                    )
                )
            images.append(
                HOIImage(str(rec["id"]), width, height, gts, path=rec.get("file"))
            )
        if errors:
            raise ValueError(f"malformed annotation records at (image, pair): {errors}")
        return HOIDataset(objects, verbs, hoi_classes, images)

    roles = {int(k): list(v) for k, v in doc.get("roles", {}).items()}
    for i, rec in enumerate(doc["images"]):
        width, height = rec["width"], rec["height"]
        gts, role_gts = [], []
        for j, pair in enumerate(rec.get("pairs", [])):
            hb = _check_bbox(pair.get("human_bbox"), errors, (i, j))
            vid = pair.get("verb")
            if hb is None:
                continue
            if not isinstance(vid, int) or not (0 <= vid < len(verbs)):
                errors.append((i, j))
                continue
            role = pair.get("role", "obj")
            ob_raw = pair.get("object_bbox")
            object_box = None
            if ob_raw is not None:
                ob = _check_bbox(ob_raw, errors, (i, j))
                if ob is None:
                    continue
                object_box = _normalize_bbox(ob, width, height)
            human_box = _normalize_bbox(hb, width, height)
            role_gts.append(RoleGroundTruth(str(rec["id"]), human_box, vid, role, object_box))
            if object_box is not None:
                oid = pair.get("object", 0)
                if not (0 <= oid < len(objects)):
                    errors.append((i, j))
                    continue
                vec = np.zeros(len(verbs), dtype=bool)
                vec[vid] = True
                gts.append(GroundTruthHOI(human_box, object_box, oid, vec))
        images.append(
            HOIImage(
                str(rec["id"]), width, height, gts,
                path=rec.get("file"), role_ground_truths=role_gts,
            )
        )
    if errors:
        raise ValueError(f"malformed annotation records at (image, pair): {errors}")
    # V-COCO has no composition table; enumerate observed (verb, object) pairs
    seen = sorted(
        {
            (int(v), gt.object_class)
            for img in images
            for gt in img.ground_truths
            for v in np.flatnonzero(gt.verb_vector)
        }
    )
    return HOIDataset(objects, verbs, seen, images, roles=roles)


# ---------------------------------------------------------------------------
# synthetic data


def scripted_verbs(
    human: Box,
    obj: Box,
    image_size: int,
    near_gap_px: float = 8.0,
    over_gap_px: float = 10.0,
    tol_px: float = 1.0,
) -> np.ndarray:
    """Geometry-scripted verb vector, exclusive by priority.

    Overlapping boxes hold; otherwise an object hovering just above the
    human is over; otherwise a small edge gap is near.
    """
    verbs = np.zeros(len(VERB_NAMES), dtype=bool)
    inter = box_intersection(human, obj)
    if inter is not None and inter.area > 0:
        verbs[V_HOLD] = True
        return verbs
    hx0, hy0, hx1, hy1 = human.corners()
    ox0, oy0, ox1, oy1 = obj.corners()
    tol = tol_px / image_size
    ocx = 0.5 * (ox0 + ox1)
    if (
        hx0 <= ocx <= hx1
        and oy1 <= hy0 + tol
        and hy0 - oy1 <= over_gap_px / image_size
    ):
        verbs[V_OVER] = True
        return verbs
    gap_x = max(ox0 - hx1, hx0 - ox1, 0.0)
    gap_y = max(oy0 - hy1, hy0 - oy1, 0.0)
    if max(gap_x, gap_y) <= near_gap_px / image_size:
        verbs[V_NEAR] = True
    return verbs


def _place_object(rng, human: Shape, size: int, regime: str) -> tuple[float, float, float, float]:
    # placements keep a comfortable margin from the scripted-rule
    # boundaries so the regimes stay visually unambiguous
    half_w = rng.uniform(4.0, 7.0)
    half_h = rng.uniform(4.0, 7.0)
    if regime == "overlap":
        angle = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(0.3, 0.7) * human.half_w
        cx = human.cx + np.cos(angle) * dist
        cy = human.cy + np.sin(angle) * dist
    elif regime == "over":
        cx = human.cx + rng.uniform(-0.35, 0.35) * human.half_w
        cy = (human.cy - human.half_h) - rng.uniform(2.0, 6.0) - half_h
    else:  # near
        angle = rng.uniform(0, 2 * np.pi)
        gap = rng.uniform(2.5, 6.0)
        cx = human.cx + np.cos(angle) * (human.half_w + half_w + gap)
        cy = human.cy + np.sin(angle) * (human.half_h + half_h + gap)
    return cx, cy, half_w, half_h


def _regime_margin_ok(human_box: Box, obj_box: Box, regime: str, size: int) -> bool:
    """Reject placements that sit close to a scripted-rule boundary.

    Diagonal placements can leave a tiny per-axis box gap even when the
    radial gap is comfortable, which makes hold/near visually ambiguous.
    """
    hx0, hy0, hx1, hy1 = human_box.corners()
    ox0, oy0, ox1, oy1 = obj_box.corners()
    px = 1.0 / size
    gap_x = max(ox0 - hx1, hx0 - ox1, 0.0)
    gap_y = max(oy0 - hy1, hy0 - oy1, 0.0)
    if regime == "overlap":
        inter = box_intersection(human_box, obj_box)
        return (
            inter is not None and inter.w >= 3.0 * px and inter.h >= 3.0 * px
        )
    if regime == "over":
        return 2.0 * px <= gap_y <= 5.5 * px
    return 3.5 * px <= max(gap_x, gap_y) <= 5.5 * px


def _make_scene(rng, size: int, image_id: str) -> HOIImage:
    human = Shape(
        "disk",
        shape_color("disk", 0),
        cx=rng.uniform(size * 0.35, size * 0.65),
        cy=rng.uniform(size * 0.55, size * 0.7),
        half_w=0.0,
        half_h=0.0,
    )
    radius = rng.uniform(8.0, 11.0)
    human = dataclasses.replace(human, half_w=radius, half_h=radius)
    human_box = human.box(size, size)

    shapes = [human]
    gts = []
    n_objects = 2 if rng.random() < 0.85 else 1
    for tone in range(n_objects):
        regime = ("overlap", "near", "over")[int(rng.integers(0, 3))]
        kind = SYNTH_OBJECT_KINDS[int(rng.integers(0, len(SYNTH_OBJECT_KINDS)))]
        for _ in range(200):
            cx, cy, hw, hh = _place_object(rng, human, size, regime)
            if not (hw + 1 <= cx <= size - hw - 1 and hh + 1 <= cy <= size - hh - 1):
                continue
            shape = Shape(kind, shape_color(kind, tone), cx, cy, hw, hh)
            obj_box = shape.box(size, size)
            verbs = scripted_verbs(human_box, obj_box, size)
            if not verbs.any():
                continue
            if not _regime_margin_ok(human_box, obj_box, regime, size):
                continue
            # objects never occlude each other
            clear = all(
                box_intersection(obj_box, other.box(size, size)) is None
                for other in shapes[1:]
            )
            if not clear:
                continue
            shapes.append(shape)
            gts.append(
                GroundTruthHOI(
                    human_box=human_box,
                    object_box=obj_box,
                    object_class=1 + SYNTH_OBJECT_KINDS.index(kind),
                    verb_vector=verbs,
                )
            )
            break
    scene = Scene(size, size, tuple(shapes))
    return HOIImage(image_id, size, size, gts, scene=scene)


def synth_dataset(seed: int, n_images: int, image_size: int = 64) -> HOIDataset:
    """Deterministic scripted scenes: one human disk plus 1-2 objects."""
    if n_images < 1:
        raise ValueError("need at least one image")
    rng = np.random.default_rng(seed)
    images = []
    for idx in range(n_images):
        image = _make_scene(rng, image_size, f"synth-{seed}-{idx}")
        while not image.ground_truths:
            image = _make_scene(rng, image_size, f"synth-{seed}-{idx}")
        images.append(image)
    hoi_classes = [
        (v, o) for v in range(len(VERB_NAMES)) for o in range(1, len(CLASS_NAMES))
    ]
    return HOIDataset(
        object_names=list(CLASS_NAMES),
        verb_names=list(VERB_NAMES),
        hoi_classes=hoi_classes,
        images=images,
    )


# ---------------------------------------------------------------------------
# configuration


def _cfg(default, key):
    return field(default=default, metadata={"key": key})


@dataclass
class TrainConfig:
    seed: int = _cfg(0, "train.seed")
    epochs: int = _cfg(500, "train.epochs")
    max_steps: int = _cfg(2000, "train.max_steps")  # 0 = epochs decide
    batch_size: int = _cfg(8, "train.batch_size")
    lr: float = _cfg(3e-4, "train.lr")
    lr_drop_epochs: tuple = _cfg((350, 450), "train.lr_drop_epochs")
    lr_drop_factor: float = _cfg(5.0, "train.lr_drop_factor")
    weight_decay: float = _cfg(1e-4, "train.weight_decay")
    num_threads: int = _cfg(1, "train.num_threads")
    log_every: int = _cfg(50, "train.log_every")

    hidden_dim: int = _cfg(64, "decoder.hidden_dim")
    num_heads: int = _cfg(4, "decoder.num_heads")
    num_layers: int = _cfg(2, "decoder.num_layers")
    num_object_queries: int = _cfg(4, "decoder.num_object_queries")
    human_slot_cap: int = _cfg(8, "decoder.human_slot_cap")
    human_repeat: int = _cfg(4, "decoder.human_repeat")
    classifier: str = _cfg("cosine", "decoder.classifier")
    temperature: float = _cfg(0.08, "decoder.temperature")
    similarity_bias: float = _cfg(0.3, "decoder.similarity_bias")

    foundation_top_k: int = _cfg(8, "foundation.top_k")
    foundation_seed: int = _cfg(0, "foundation.seed")
    foundation_scales: int = _cfg(2, "foundation.num_scales")
    mask_logit_scale: float = _cfg(4.0, "foundation.mask_logit_scale")

    match_verb: float = _cfg(5.0, "match.verb")
    match_cls: float = _cfg(4.0, "match.cls")
    match_box: float = _cfg(5.0, "match.box")
    match_giou: float = _cfg(2.0, "match.giou")
    match_mask_union: float = _cfg(2.0, "match.mask_union")
    match_mask_inter: float = _cfg(0.1, "match.mask_inter")
    match_include_inter: bool = _cfg(False, "match.include_inter")

    loss_verb: float = _cfg(5.0, "loss.verb")
    loss_cls: float = _cfg(5.0, "loss.cls")
    loss_box: float = _cfg(3.0, "loss.box")
    loss_giou: float = _cfg(4.0, "loss.giou")
    loss_mask_union: float = _cfg(2.0, "loss.mask_union")
    loss_mask_inter: float = _cfg(0.1, "loss.mask_inter")
    focal_alpha: float = _cfg(0.5, "loss.focal_alpha")
    focal_gamma: float = _cfg(2.0, "loss.focal_gamma")
    eos_coef: float = _cfg(0.1, "loss.eos_coef")
    num_points: int = _cfg(1024, "loss.num_points")
    use_union_mask: bool = _cfg(True, "loss.use_union_mask")
    use_inter_mask: bool = _cfg(False, "loss.use_inter_mask")

    pseudo_gamma: float = _cfg(0.1, "pseudo.gamma")
    pseudo_beta_box: float = _cfg(5.0, "pseudo.beta_box")
    pseudo_beta_giou: float = _cfg(2.0, "pseudo.beta_giou")

    synth_seed: int = _cfg(0, "data.synth_seed")
    synth_images: int = _cfg(32, "data.synth_images")
    image_size: int = _cfg(64, "data.image_size")

    score_lambda: float = _cfg(0.5, "infer.score_lambda")
    infer_top_k: int = _cfg(100, "infer.top_k")
    score_floor: float = _cfg(0.0, "infer.score_floor")

    def __post_init__(self):
        if isinstance(self.lr_drop_epochs, list):
            self.lr_drop_epochs = tuple(self.lr_drop_epochs)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            lines.append(f"{f.metadata['key']} = {json.dumps(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        lookup = {f.metadata["key"]: f.name for f in dataclasses.fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in lookup:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            values[lookup[key]] = json.loads(raw.strip())
        return cls(**values)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())

    def foundation_config(self) -> FoundationConfig:
        return FoundationConfig(
            hidden_dim=self.hidden_dim,
            top_k=self.foundation_top_k,
            num_scales=self.foundation_scales,
            mask_logit_scale=self.mask_logit_scale,
            seed=self.foundation_seed,
        )

    def decoder_config(self, num_object_classes: int, num_verb_classes: int) -> DecoderConfig:
        return DecoderConfig(
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            num_layers=self.num_layers,
            num_object_queries=self.num_object_queries,
            human_slot_cap=self.human_slot_cap,
            human_repeat=self.human_repeat,
            num_object_classes=num_object_classes,
            num_verb_classes=num_verb_classes,
            classifier=self.classifier,
            temperature=self.temperature,
            similarity_bias=self.similarity_bias,
            init_seed=self.seed,
        )

    def match_weights(self) -> MatchWeights:
        return MatchWeights(
            verb=self.match_verb,
            cls=self.match_cls,
            box=self.match_box,
            giou=self.match_giou,
            mask_union=self.match_mask_union,
            mask_inter=self.match_mask_inter,
            include_inter_cost=self.match_include_inter,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            verb=self.loss_verb,
            cls=self.loss_cls,
            box=self.loss_box,
            giou=self.loss_giou,
            mask_union=self.loss_mask_union,
            mask_inter=self.loss_mask_inter,
            focal_alpha=self.focal_alpha,
            focal_gamma=self.focal_gamma,
            eos_coef=self.eos_coef,
            num_points=self.num_points,
            use_union_mask=self.use_union_mask,
            use_inter_mask=self.use_inter_mask,
        )


# ---------------------------------------------------------------------------
# cache + training


@dataclass
class CachedImage:
    image: HOIImage
    found: FoundationOutput
    ground_truths: list[GroundTruthHOI]  # pseudo-labels attached


def image_pixels(image: HOIImage) -> np.ndarray:
    if image.scene is not None:
        return image.scene.render()
    if image.path is not None:
        from PIL import Image

        return np.asarray(Image.open(image.path).convert("RGB"))
    raise ValueError(f"image {image.image_id} has no pixels")


def prepare_cache(
    foundation: ToyFoundationModel, dataset: HOIDataset, cfg: TrainConfig
) -> list[CachedImage]:
    """Run the frozen model once per image and attach pseudo-labels."""
    cached = []
    for image in dataset.images:
        found = foundation.extract(image_pixels(image))
        labels = pseudo_labels_for_image(
            found,
            image.ground_truths,
            gamma=cfg.pseudo_gamma,
            beta_b=cfg.pseudo_beta_box,
            beta_u=cfg.pseudo_beta_giou,
        )
        gts = [
            dataclasses.replace(gt, verb_vector=gt.verb_vector, pseudo=lab)
            for gt, lab in zip(image.ground_truths, labels)
        ]
        cached.append(CachedImage(image, found, gts))
    return cached


def build_decoder(cfg: TrainConfig, dataset: HOIDataset) -> HOIDecoder:
    decoder = HOIDecoder(cfg.decoder_config(dataset.num_objects, dataset.num_verbs))
    if cfg.classifier == "cosine":
        bank = build_text_bank(
            dataset.object_names,
            dataset.verb_names,
            HashWordEmbedder(dim=cfg.hidden_dim, seed=cfg.foundation_seed),
        )
        decoder.heads.set_text_banks(bank.objects, bank.verbs)
    return decoder


def checkpoint_hash(decoder: HOIDecoder) -> str:
    h = hashlib.sha256()
    state = decoder.state_dict()
    for name in sorted(state):
        h.update(name.encode())
        h.update(state[name].detach().cpu().numpy().tobytes())
    return h.hexdigest()


CHECKPOINT_VERSION = 1


def save_checkpoint(path, decoder: HOIDecoder, cfg: TrainConfig, foundation_hash: str):
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "config_text": cfg.to_text(),
            "state_dict": decoder.state_dict(),
            "foundation_hash": foundation_hash,
            "decoder_hash": checkpoint_hash(decoder),
        },
        path,
    )


def load_checkpoint(path, dataset: Optional[HOIDataset] = None):
    """(decoder, config, metadata); dataset defaults to the configured synth set."""
    blob = torch.load(path, weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version")
    cfg = TrainConfig.from_text(blob["config_text"])
    if dataset is None:
        dataset = synth_dataset(cfg.synth_seed, cfg.synth_images, cfg.image_size)
    decoder = build_decoder(cfg, dataset)
    decoder.load_state_dict(blob["state_dict"])
    decoder.eval()
    return decoder, cfg, blob


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    drops = sum(1 for e in cfg.lr_drop_epochs if epoch >= e)
    return cfg.lr / (cfg.lr_drop_factor**drops)


@dataclass
class TrainResult:
    checkpoint_path: str
    metrics_path: str
    steps: int
    final_loss: float
    foundation_hash: str


def train(
    cfg: TrainConfig,
    dataset: HOIDataset,
    foundation: ToyFoundationModel,
    out_dir,
    cache: Optional[list[CachedImage]] = None,
    verbose: bool = False,
) -> TrainResult:
    """Train the decoder on cached frozen outputs.

    Deterministic for a fixed config: single-threaded torch, seeded
    shuffling, seeded mask-point sampling, and seeded parameter init.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(cfg.num_threads)
    hash_before = foundation.param_hash()
    if cache is None:
        cache = prepare_cache(foundation, dataset, cfg)

    decoder = build_decoder(cfg, dataset)
    criterion = HOICriterion(cfg.loss_weights(), cfg.match_weights())
    optimizer = torch.optim.AdamW(
        decoder.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    metrics_path = out_dir / "metrics.jsonl"
    checkpoint_path = out_dir / "checkpoint.pt"

    step = 0
    last_total = float("nan")
    with open(metrics_path, "w") as log:
        for epoch in range(cfg.epochs):
            if cfg.max_steps and step >= cfg.max_steps:
                break
            lr = lr_at_epoch(cfg, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = np.random.default_rng((cfg.seed, epoch)).permutation(len(cache))
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps and step >= cfg.max_steps:
                    break
                batch = [cache[i] for i in order[start : start + cfg.batch_size]]
                optimizer.zero_grad()
                point_rng = np.random.default_rng((cfg.seed, step, 7))
                totals = []
                breakdowns = []
                try:
                    for item in batch:
                        out = decoder(item.found)
                        rows = [
                            prediction_rows(layer, out.objects, out.humans)
                            for layer in out.layers
                        ]
                        assigns = criterion.match(rows, item.ground_truths)
                        total, breakdown = criterion.loss(
                            rows, item.ground_truths, assigns, point_rng
                        )
                        totals.append(total)
                        breakdowns.append(breakdown)
                    loss = torch.stack(totals).mean()
                    value = float(loss.detach())
                except ValueError:
                    # a non-finite cost matrix means the weights blew up
                    value = float("nan")
                if not np.isfinite(value):
                    snap = out_dir / "diverged.pt"
                    save_checkpoint(snap, decoder, cfg, hash_before)
                    raise TrainingDiverged(
                        f"non-finite loss at step {step}; snapshot at {snap}"
                    )
                loss.backward()
                optimizer.step()
                last_total = value
                if step % cfg.log_every == 0 or (
                    cfg.max_steps and step == cfg.max_steps - 1
                ):
                    entry = {"step": step, "epoch": epoch, "lr": lr, "loss": value}
                    keys = sorted({k for b in breakdowns for k in b})
                    for key in keys:
                        entry[f"loss_{key}"] = float(
                            np.mean([b.get(key, 0.0) for b in breakdowns])
                        )
                    log.write(json.dumps(entry) + "\n")
                    if verbose:
                        print(json.dumps(entry), flush=True)
                step += 1

    if foundation.param_hash() != hash_before:
        raise RuntimeError("frozen foundation parameters changed during training")
    decoder.eval()
    save_checkpoint(checkpoint_path, decoder, cfg, hash_before)
    return TrainResult(
        checkpoint_path=str(checkpoint_path),
        metrics_path=str(metrics_path),
        steps=step,
        final_loss=last_total,
        foundation_hash=hash_before,
    )


def predict_dataset(
    decoder: HOIDecoder,
    foundation: ToyFoundationModel,
    dataset: HOIDataset,
    cfg: TrainConfig,
    cache: Optional[list[CachedImage]] = None,
) -> list[list[Quadruplet]]:
    if cache is None:
        cache = prepare_cache(foundation, dataset, cfg)
    preds = []
    with torch.no_grad():
        for item in cache:
            out = decoder(item.found)
            preds.append(
                assemble(
                    out,
                    lam=cfg.score_lambda,
                    top_k=cfg.infer_top_k,
                    score_floor=cfg.score_floor,
                )
            )
    return preds


def dataset_recall(
    decoder: HOIDecoder,
    foundation: ToyFoundationModel,
    dataset: HOIDataset,
    cfg: TrainConfig,
    cache: Optional[list[CachedImage]] = None,
    score_thresh: float = 0.1,
) -> float:
    preds = predict_dataset(decoder, foundation, dataset, cfg, cache)
    gts = [img.ground_truths for img in dataset.images]
    return triplet_recall(preds, gts, score_thresh=score_thresh)
