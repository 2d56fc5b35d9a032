"""Frozen segmentation backbone contract plus a deterministic toy model.

The toy world draws solid-color shapes on a dark canvas. Color families
encode the category (red disk = person, green rectangle = cup, yellow
ellipse = ball, blue triangle = book), so a rule-based color segmenter
recovers instance masks and classes exactly. Query and pixel features come
from seeded fixed random projections of local statistics; instance mask
logits factor as projection(query) . pixel_embedding at every cell, which
keeps the query/pixel-embedding contract honest.

Everything here is read-only after construction: extract() never mutates
model state, and param_hash() certifies that across a training run.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import BinaryMask, Box, rle_decode, rle_encode

# c_inst categories: the three toy object kinds plus person and a
# trailing no-object class (person is also a valid object category,
# mirroring COCO-style label spaces).
CLASS_NAMES = ("person", "cup", "ball", "book")
BACKGROUND_INDEX = len(CLASS_NAMES)  # index 4 in the logit vector
NUM_INSTANCE_CLASSES = len(CLASS_NAMES) + 1

BACKGROUND_COLOR = (30, 30, 30)

# Optional remapping of toy categories onto HICO/COCO ids for exports.
COCO_ID_FOR_CLASS = {"person": 1, "cup": 47, "ball": 37, "book": 84}

_KIND_TO_CLASS = {"disk": 0, "rectangle": 1, "ellipse": 2, "triangle": 3}

# class one-hot (4) + center box (4) + corner box (4) + tone + occupancy + bias
_QUERY_STAT_DIM = 15
_PIXEL_STAT_DIM = 6  # rgb means + cell center + bias


def shape_color(kind: str, tone: int) -> tuple[int, int, int]:
    """Palette entry for a shape; `tone` separates instances of one kind."""
    base = 210 + 9 * int(tone)
    if base > 255:
        raise ValueError("tone out of palette range")
    if kind == "disk":
        return (base, 80, 80)
    if kind == "rectangle":
        return (80, base, 80)
    if kind == "ellipse":
        return (base, base, 80)
    if kind == "triangle":
        return (80, 80, base)
    raise ValueError(f"unknown kind {kind!r}")


def classify_color(rgb: tuple[int, int, int]) -> Optional[int]:
    """Class id from the channel pattern, or None for background-ish colors."""
    hot = tuple(c > 150 for c in rgb)
    return {
        (True, False, False): 0,
        (False, True, False): 1,
        (True, True, False): 2,
        (False, False, True): 3,
    }.get(hot)


@dataclass(frozen=True)
class Shape:
    """One solid shape; geometry in pixel units."""

    kind: str  # disk | rectangle | ellipse | triangle
    color: tuple[int, int, int]
    cx: float
    cy: float
    half_w: float
    half_h: float

    def box(self, width: int, height: int) -> Box:
        """Analytic bounding box, normalized."""
        return Box(
            self.cx / width,
            self.cy / height,
            2 * self.half_w / width,
            2 * self.half_h / height,
        )

    def raster(self, height: int, width: int) -> np.ndarray:
        """Pixel-center occupancy grid (uint8 [H, W])."""
        ys = (np.arange(height) + 0.5)[:, None]
        xs = (np.arange(width) + 0.5)[None, :]
        dx = xs - self.cx
        dy = ys - self.cy
        if self.kind == "disk" or self.kind == "ellipse":
            inside = (dx / self.half_w) ** 2 + (dy / self.half_h) ** 2 <= 1.0
        elif self.kind == "rectangle":
            inside = (np.abs(dx) <= self.half_w) & (np.abs(dy) <= self.half_h)
        elif self.kind == "triangle":
            # up-pointing isoceles triangle inscribed in the bounding box
            t = (dy + self.half_h) / (2 * self.half_h)  # 0 at apex row
            inside = (
                (np.abs(dy) <= self.half_h)
                & (np.abs(dx) <= self.half_w * np.clip(t, 0, 1))
            )
        else:
            raise ValueError(f"unknown kind {self.kind!r}")
        return inside.astype(np.uint8)

    @property
    def class_id(self) -> int:
        return _KIND_TO_CLASS[self.kind]


@dataclass(frozen=True)
class Scene:
    """Ordered shape list; later shapes occlude earlier ones when drawn."""

    width: int
    height: int
    shapes: tuple[Shape, ...]

    def render(self) -> np.ndarray:
        img = np.empty((self.height, self.width, 3), dtype=np.uint8)
        img[:] = BACKGROUND_COLOR
        for s in self.shapes:
            img[s.raster(self.height, self.width) > 0] = s.color
        return img

    def visible_rasters(self) -> list[np.ndarray]:
        """Per-shape pixel masks after z-order occlusion."""
        rasters = [s.raster(self.height, self.width) for s in self.shapes]
        out = []
        for i, r in enumerate(rasters):
            vis = r.copy()
            for later in rasters[i + 1 :]:
                vis &= 1 - later
            out.append(vis)
        return out


@dataclass
class FoundationOutput:
    """Per-image products of the frozen model."""

    multi_scale_features: list[np.ndarray]  # each [hs, ws, C]
    decoder_queries: np.ndarray  # [N_k, C]
    instance_boxes: np.ndarray  # [N_k, 4] normalized cxcywh
    instance_class_logits: np.ndarray  # [N_k, NUM_INSTANCE_CLASSES]
    instance_mask_logits: np.ndarray  # [N_k, h, w]
    pixel_embedding: np.ndarray  # [h, w, C]
    image_size: tuple[int, int]  # (H, W) in pixels

    @property
    def num_queries(self) -> int:
        return self.decoder_queries.shape[0]

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.pixel_embedding.shape[0], self.pixel_embedding.shape[1]

    def binary_masks(self) -> np.ndarray:
        """Instance masks thresholded at logit 0 (probability 0.5)."""
        return (self.instance_mask_logits > 0).astype(np.uint8)

    def validate(self) -> None:
        n = self.num_queries
        assert self.instance_boxes.shape == (n, 4)
        assert self.instance_class_logits.shape[0] == n
        assert self.instance_mask_logits.shape[0] == n
        assert self.instance_mask_logits.shape[1:] == self.grid_size


@dataclass(frozen=True)
class FoundationConfig:
    hidden_dim: int = 64
    top_k: int = 25
    num_scales: int = 2
    mask_logit_scale: float = 4.0
    seed: int = 0
    version: int = 1

    def __post_init__(self):
        if self.hidden_dim < self.top_k + 1 + _QUERY_STAT_DIM:
            raise ValueError(
                "hidden_dim must cover slot channels, the constant channel "
                "and the statistics block"
            )


def _block_stats(image: np.ndarray, block: int) -> np.ndarray:
    """Per-cell [r, g, b, xc, yc, 1] statistics for `block`-pixel cells."""
    height, width, _ = image.shape
    hs = (height + block - 1) // block
    ws = (width + block - 1) // block
    stats = np.zeros((hs, ws, _PIXEL_STAT_DIM), dtype=np.float64)
    for r in range(hs):
        for c in range(ws):
            patch = image[r * block : (r + 1) * block, c * block : (c + 1) * block]
            stats[r, c, :3] = patch.reshape(-1, 3).mean(axis=0) / 255.0
    stats[:, :, 3] = ((np.arange(ws) + 0.5) / ws)[None, :]
    stats[:, :, 4] = ((np.arange(hs) + 0.5) / hs)[:, None]
    stats[:, :, 5] = 1.0
    return stats


def _downsample_majority(pixel_mask: np.ndarray, block: int = 4) -> np.ndarray:
    h, w = pixel_mask.shape
    return (
        pixel_mask.reshape(h // block, block, w // block, block)
        .mean(axis=(1, 3))
        >= 0.5
    ).astype(np.uint8)


class ToyFoundationModel:
    """Rule-based color/shape segmenter with seeded projection features."""

    def __init__(self, config: FoundationConfig = FoundationConfig()):
        self.config = config
        c = config.hidden_dim
        self._info_dim = c - config.top_k - 1
        self._const_channel = config.top_k
        rng = np.random.default_rng(config.seed)
        self._w_query = rng.standard_normal((_QUERY_STAT_DIM, self._info_dim))
        self._w_query /= np.sqrt(_QUERY_STAT_DIM)
        self._w_pixel = rng.standard_normal((_PIXEL_STAT_DIM, self._info_dim))
        self._w_pixel /= np.sqrt(_PIXEL_STAT_DIM)
        self._w_scales = [
            rng.standard_normal((_PIXEL_STAT_DIM, c)) / np.sqrt(_PIXEL_STAT_DIM)
            for _ in range(config.num_scales)
        ]
        # Fixed projection realizing mask logits = proj(q) . f_seg[cell]:
        # slot channels map to +2G, the constant channel subtracts G.
        g = config.mask_logit_scale
        proj = np.zeros((c, c))
        for j in range(config.top_k):
            proj[j, j] = 2.0 * g
            proj[self._const_channel, j] = -g
        self._mask_proj = proj

    def param_hash(self) -> str:
        """Digest of every parameter; must be invariant across HOI training."""
        h = hashlib.sha256()
        h.update(json.dumps(self.config.__dict__, sort_keys=True).encode())
        for arr in [self._w_query, self._w_pixel, *self._w_scales, self._mask_proj]:
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()

    def instance_mask_from_query(
        self, query: np.ndarray, pixel_embedding: np.ndarray
    ) -> np.ndarray:
        """Mask logits at every cell: projected query dotted with f_seg."""
        proj = self._mask_proj @ np.asarray(query, dtype=np.float64)
        return np.einsum("hwc,c->hw", pixel_embedding.astype(np.float64), proj)

    def _segment(self, image: np.ndarray) -> list[tuple[int, np.ndarray, float]]:
        """(class_id, pixel mask, tone) per recognized solid-color instance."""
        flat = image.reshape(-1, 3)
        colors, first_idx = np.unique(flat, axis=0, return_index=True)
        order = np.argsort(first_idx, kind="stable")
        found = []
        for idx in order:
            rgb = tuple(int(v) for v in colors[idx])
            cls = classify_color(rgb)
            if cls is None:
                continue
            mask = np.all(image == np.array(rgb, dtype=np.uint8), axis=2)
            if mask.sum() < 4:
                continue
            tone = (max(rgb) - 210) / 45.0
            found.append((cls, mask.astype(np.uint8), tone))
        return found

    def extract(self, image: np.ndarray) -> FoundationOutput:
        """Frozen forward pass; deterministic for a fixed model and image."""
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError("expected an RGB image [H, W, 3]")
        height, width = image.shape[:2]
        if height % 4 or width % 4:
            raise ValueError("image dimensions must be divisible by 4")
        cfg = self.config
        gh, gw = height // 4, width // 4

        instances = self._segment(image)[: cfg.top_k]
        n_pad = cfg.top_k - len(instances)

        # Per-query class logits; padding queries favor no-object.
        logits = np.full((cfg.top_k, NUM_INSTANCE_CLASSES), -3.0)
        stats = np.zeros((cfg.top_k, _QUERY_STAT_DIM))
        boxes = np.zeros((cfg.top_k, 4))
        grid_rasters = np.zeros((cfg.top_k, gh, gw), dtype=np.uint8)
        for i, (cls, pmask, tone) in enumerate(instances):
            logits[i, cls] = 3.0
            rows = np.flatnonzero(pmask.any(axis=1))
            cols = np.flatnonzero(pmask.any(axis=0))
            box = Box.from_corners(
                cols[0] / width,
                rows[0] / height,
                (cols[-1] + 1) / width,
                (rows[-1] + 1) / height,
            )
            boxes[i] = box.as_array()
            grid_rasters[i] = _downsample_majority(pmask)
            onehot = np.zeros(len(CLASS_NAMES))
            onehot[cls] = 1.0
            occupancy = pmask.mean()
            stats[i] = np.concatenate(
                [onehot, box.as_array(), box.corners(), [tone, occupancy, 1.0]]
            )
        for i in range(len(instances), cfg.top_k):
            logits[i, BACKGROUND_INDEX] = 3.0
            stats[i, -1] = 1.0

        # Top-k contract: sort by max foreground class logit, descending,
        # stable on the original index.
        fg_max = logits[:, :BACKGROUND_INDEX].max(axis=1)
        order = np.argsort(-fg_max, kind="stable")
        logits, stats, boxes = logits[order], stats[order], boxes[order]
        grid_rasters = grid_rasters[order]

        # Queries: slot one-hot + constant channel + projected statistics.
        queries = np.zeros((cfg.top_k, cfg.hidden_dim))
        for i in range(cfg.top_k):
            queries[i, i] = 1.0
            queries[i, self._const_channel] = 1.0
            queries[i, self._const_channel + 1 :] = stats[i] @ self._w_query

        # Pixel embedding map: slot indicator channels + constant + stats.
        f_seg = np.zeros((gh, gw, cfg.hidden_dim))
        for i in range(cfg.top_k):
            f_seg[:, :, i] = grid_rasters[i]
        f_seg[:, :, self._const_channel] = 1.0
        f_seg[:, :, self._const_channel + 1 :] = _block_stats(image, 4) @ self._w_pixel

        mask_logits = np.stack(
            [self.instance_mask_from_query(queries[i], f_seg) for i in range(cfg.top_k)]
        )

        features = [
            (_block_stats(image, 4 * (s + 1)) @ self._w_scales[s]).astype(np.float32)
            for s in range(cfg.num_scales)
        ]
        out = FoundationOutput(
            multi_scale_features=features,
            decoder_queries=queries.astype(np.float32),
            instance_boxes=boxes.astype(np.float32),
            instance_class_logits=logits.astype(np.float32),
            instance_mask_logits=mask_logits.astype(np.float32),
            pixel_embedding=f_seg.astype(np.float32),
            image_size=(height, width),
        )
        out.validate()
        return out


_CACHE_MAGIC = b"S2HF"
_CACHE_VERSION = 1


def save_foundation_output(out: FoundationOutput, path, foundation_hash: str) -> None:
    """Single binary record: versioned header, float32 LE arrays, RLE masks."""
    header = {
        "image_size": list(out.image_size),
        "grid": list(out.grid_size),
        "hidden_dim": int(out.pixel_embedding.shape[2]),
        "num_queries": int(out.num_queries),
        "scales": [list(f.shape) for f in out.multi_scale_features],
        "mask_logit_scale": float(np.abs(out.instance_mask_logits).max() or 1.0),
        "foundation_hash": foundation_hash,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<HI", _CACHE_VERSION, len(blob)))
        f.write(blob)
        for arr in out.multi_scale_features:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        for arr in (
            out.decoder_queries,
            out.instance_boxes,
            out.instance_class_logits,
            out.pixel_embedding,
        ):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        for i in range(out.num_queries):
            rle = rle_encode(BinaryMask(out.instance_mask_logits[i] > 0))
            counts = rle["counts"]
            f.write(struct.pack("<I", len(counts)))
            f.write(np.asarray(counts, dtype="<u4").tobytes())


def load_foundation_output(path) -> tuple[FoundationOutput, dict]:
    with open(path, "rb") as f:
        if f.read(4) != _CACHE_MAGIC:
            raise ValueError("not a foundation cache record")
        version, hlen = struct.unpack("<HI", f.read(6))
        if version != _CACHE_VERSION:
            raise ValueError(f"unsupported cache version {version}")
        header = json.loads(f.read(hlen).decode())

        def read_array(shape):
            n = int(np.prod(shape))
            return np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape).copy()

        scales = [read_array(s) for s in header["scales"]]
        n, c = header["num_queries"], header["hidden_dim"]
        gh, gw = header["grid"]
        queries = read_array((n, c))
        boxes = read_array((n, 4))
        logits = read_array((n, NUM_INSTANCE_CLASSES))
        f_seg = read_array((gh, gw, c))
        scale = header["mask_logit_scale"]
        masks = np.empty((n, gh, gw), dtype=np.float32)
        for i in range(n):
            (nruns,) = struct.unpack("<I", f.read(4))
            counts = np.frombuffer(f.read(4 * nruns), dtype="<u4").tolist()
            bits = rle_decode({"size": [gh, gw], "counts": counts}).data
            masks[i] = scale * (2.0 * bits - 1.0)
    out = FoundationOutput(
        multi_scale_features=scales,
        decoder_queries=queries,
        instance_boxes=boxes,
        instance_class_logits=logits,
        instance_mask_logits=masks,
        pixel_embedding=f_seg,
        image_size=tuple(header["image_size"]),
    )
    return out, header
