"""Text-embedding classifiers and prompt-based quadruplet retrieval.

Category names are templated into sentences, embedded, and unit-normalized
into classifier banks; visual prompts pool the pixel embedding map under
the prompt points. Retrieval is a cosine argmax against decoder-side
embeddings, so it is invariant to positive rescaling of either side.

The bundled embedder is a deterministic stand-in for a real text encoder:
each word hashes to a fixed random direction and a sentence is the
normalized sum of its word vectors. It is versioned so frozen test vectors
stay stable; any callable str -> vector can replace it.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

OBJECT_TEMPLATE = "A photo of a person and a/an {}"
VERB_TEMPLATE = "A photo of a person {}"

_EPS = 1e-8


def verb_ing(verb: str) -> str:
    """Naive -ing form used by the verb template."""
    if verb.endswith("e") and not verb.endswith("ee"):
        return verb[:-1] + "ing"
    return verb + "ing"


def object_sentence(name: str) -> str:
    return OBJECT_TEMPLATE.format(name)


def verb_sentence(name: str) -> str:
    return VERB_TEMPLATE.format(verb_ing(name))


class HashWordEmbedder:
    """Seeded content-word sentence embedder.

    Every content word hashes to a fixed random unit direction; a sentence
    embeds as the normalized sum of its content words, so distinct
    category names land on near-orthonormal directions and filler words
    carry no signal (mimicking how a real text encoder keys on content).
    """

    VERSION = 2

    STOPWORDS = frozenset(
        {"a", "an", "the", "of", "and", "photo", "person", "doing", "with"}
    )

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def _word_vector(self, word: str) -> np.ndarray:
        digest = hashlib.sha256(
            f"v{self.VERSION}:{self.seed}:{word}".encode()
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def __call__(self, text: str) -> np.ndarray:
        words = re.findall(r"[a-z0-9]+", text.lower())
        if not words:
            raise ValueError("cannot embed empty text")
        content = [w for w in words if w not in self.STOPWORDS]
        total = np.zeros(self.dim)
        for w in content or words:  # all-stopword texts fall back to every word
            total += self._word_vector(w)
        norm = np.linalg.norm(total)
        return total / norm if norm > _EPS else total


@dataclass
class TextClassifierBank:
    """Unit-norm embeddings per object and verb category."""

    objects: np.ndarray  # [N_obj, C]
    verbs: np.ndarray  # [N_verb, C]
    object_sentences: list[str]
    verb_sentences: list[str]

    def __post_init__(self):
        for rows in (self.objects, self.verbs):
            norms = np.linalg.norm(rows, axis=1)
            assert np.allclose(norms, 1.0, atol=1e-6), "bank rows must be unit norm"


def build_text_bank(
    object_names: Sequence[str],
    verb_names: Sequence[str],
    embedder: Callable[[str], np.ndarray],
) -> TextClassifierBank:
    if not object_names or not verb_names:
        raise ValueError("category name lists must be non-empty")
    obj_sentences = [object_sentence(n) for n in object_names]
    verb_sentences = [verb_sentence(n) for n in verb_names]

    def embed_rows(sentences):
        rows = np.stack([np.asarray(embedder(s), dtype=np.float64) for s in sentences])
        return rows / np.linalg.norm(rows, axis=1, keepdims=True).clip(min=_EPS)

    return TextClassifierBank(
        objects=embed_rows(obj_sentences),
        verbs=embed_rows(verb_sentences),
        object_sentences=obj_sentences,
        verb_sentences=verb_sentences,
    )


def similarity_logits(
    embeddings: np.ndarray, bank_rows: np.ndarray, temperature: float = 1.0
) -> np.ndarray:
    """Row-wise cosine similarity [N, K]; zero-norm rows score 0."""
    e = np.asarray(embeddings, dtype=np.float64)
    b = np.asarray(bank_rows, dtype=np.float64)
    e_norm = np.linalg.norm(e, axis=1, keepdims=True)
    b_norm = np.linalg.norm(b, axis=1, keepdims=True)
    sims = (e / np.clip(e_norm, _EPS, None)) @ (b / np.clip(b_norm, _EPS, None)).T
    sims[np.squeeze(e_norm, -1) < _EPS] = 0.0
    sims[:, np.squeeze(b_norm, -1) < _EPS] = 0.0
    return sims / temperature


def retrieve_visual(prompt_embedding: np.ndarray, union_embeddings: np.ndarray) -> int:
    """Query index whose union-mask embedding best matches the prompt."""
    sims = similarity_logits(union_embeddings, prompt_embedding[None, :])[:, 0]
    return int(np.argmax(sims))


def retrieve_text(
    prompt_embedding: np.ndarray,
    object_embeddings: np.ndarray,
    verb_embeddings: np.ndarray,
) -> int:
    """Query index maximizing the object-similarity * verb-similarity product."""
    s_obj = similarity_logits(object_embeddings, prompt_embedding[None, :])[:, 0]
    s_verb = similarity_logits(verb_embeddings, prompt_embedding[None, :])[:, 0]
    return int(np.argmax(s_obj * s_verb))


def pool_visual_prompt(
    pixel_embedding: np.ndarray,
    points: Sequence[tuple[float, float]],
    image_size: tuple[int, int],
) -> np.ndarray:
    """Mean of f_seg cells under the prompt pixels (visual-sampler stand-in).

    Points are (x, y) pixel coordinates; duplicates collapse so strokes act
    as point sets.
    """
    if not points:
        raise ValueError("visual prompt needs at least one point")
    height, width = image_size
    gh, gw = pixel_embedding.shape[:2]
    cells = set()
    for x, y in points:
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"point ({x}, {y}) outside the image")
        cells.add((min(int(y * gh / height), gh - 1), min(int(x * gw / width), gw - 1)))
    rows = np.stack([pixel_embedding[r, c] for r, c in sorted(cells)])
    return rows.mean(axis=0)
