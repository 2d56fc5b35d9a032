"""Shared heavyweight fixtures: the desk-scale training runs reused by the
acceptance criteria (overfit seeds, plus matched runs without union-mask
supervision for the ablation direction)."""

import dataclasses

import pytest

from seg2hoi.foundation import ToyFoundationModel
from seg2hoi.pipeline import (
    TrainConfig,
    load_checkpoint,
    prepare_cache,
    synth_dataset,
    train,
)


def desk_config(**overrides) -> TrainConfig:
    """The canonical desk-scale training configuration."""
    base = dict(
        seed=0,
        epochs=100_000,  # max_steps decides
        max_steps=2000,
        batch_size=8,
        lr=3e-4,
        lr_drop_epochs=(350, 450),
        num_threads=2,
        log_every=500,
        num_layers=2,
        num_heads=4,
        hidden_dim=64,
        num_object_queries=4,
        human_slot_cap=8,
        foundation_top_k=8,
        classifier="cosine",
        temperature=0.08,
        similarity_bias=0.3,
        synth_seed=0,
        synth_images=32,
    )
    base.update(overrides)
    return TrainConfig(**base)


OVERFIT_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def train_dataset():
    cfg = desk_config()
    return synth_dataset(cfg.synth_seed, cfg.synth_images, cfg.image_size)


@pytest.fixture(scope="session")
def heldout_dataset():
    cfg = desk_config()
    return synth_dataset(1, cfg.synth_images, cfg.image_size)


@pytest.fixture(scope="session")
def foundation():
    return ToyFoundationModel(desk_config().foundation_config())


@pytest.fixture(scope="session")
def train_cache(foundation, train_dataset):
    return prepare_cache(foundation, train_dataset, desk_config())


@pytest.fixture(scope="session")
def heldout_cache(foundation, heldout_dataset):
    return prepare_cache(foundation, heldout_dataset, desk_config())


def _run_seeds(tmp_root, foundation, train_dataset, cache, **overrides):
    runs = {}
    for seed in OVERFIT_SEEDS:
        cfg = desk_config(seed=seed, **overrides)
        result = train(
            cfg, train_dataset, foundation, tmp_root / f"seed{seed}", cache=cache
        )
        decoder, _, blob = load_checkpoint(result.checkpoint_path, train_dataset)
        runs[seed] = {
            "config": cfg,
            "result": result,
            "decoder": decoder,
            "blob": blob,
        }
    return runs


@pytest.fixture(scope="session")
def overfit_runs(tmp_path_factory, foundation, train_dataset, train_cache):
    """Criterion-3 training runs (union-mask supervision on), one per seed."""
    before = foundation.param_hash()
    root = tmp_path_factory.mktemp("overfit")
    runs = _run_seeds(root, foundation, train_dataset, train_cache)
    for seed, run in runs.items():
        run["foundation_hash_before"] = before
    return runs


@pytest.fixture(scope="session")
def nomask_runs(tmp_path_factory, foundation, train_dataset, train_cache):
    """Matched runs with union-mask supervision disabled (ablation side)."""
    root = tmp_path_factory.mktemp("nomask")
    return _run_seeds(
        root, foundation, train_dataset, train_cache,
        use_union_mask=False, match_mask_union=0.0,
    )
