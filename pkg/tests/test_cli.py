import json

import numpy as np
import pytest
from PIL import Image

from seg2hoi.cli import main
from seg2hoi.foundation import load_foundation_output
from seg2hoi.pipeline import TrainConfig, image_pixels, synth_dataset
from seg2hoi.pseudolabel import pseudo_labels_from_json

CFG = TrainConfig(
    max_steps=4,
    epochs=10_000,
    batch_size=4,
    log_every=1,
    num_layers=1,
    num_heads=2,
    hidden_dim=32,
    foundation_top_k=6,
    num_object_queries=4,
    human_slot_cap=4,
    synth_images=4,
)


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "desk.cfg"
    CFG.save(path)
    return path


@pytest.fixture(scope="module")
def checkpoint(config_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_train")
    main(["train", "--config", str(config_path), "--out", str(out), "--quiet"])
    return out / "checkpoint.pt"


class TestCacheCommand:
    def test_writes_foundation_and_pseudo_records(self, config_path, tmp_path):
        out = tmp_path / "cache"
        main(["cache", "--config", str(config_path), "--out", str(out)])
        records = sorted(out.glob("*.s2hf"))
        assert len(records) == CFG.synth_images
        found, header = load_foundation_output(records[0])
        assert header["hidden_dim"] == CFG.hidden_dim
        pseudo = sorted(out.glob("*.pseudo.json"))
        assert len(pseudo) == CFG.synth_images
        labels, gamma = pseudo_labels_from_json(pseudo[0].read_text())
        assert gamma == CFG.pseudo_gamma


class TestTrainEvalInfer:
    def test_train_produces_checkpoint(self, checkpoint):
        assert checkpoint.exists()

    def test_eval_reports_map_partitions(self, config_path, checkpoint, capsys):
        main(
            [
                "eval", "--config", str(config_path),
                "--checkpoint", str(checkpoint),
            ]
        )
        report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert {"full", "rare", "nonrare", "recall"} <= set(report)

    def test_infer_dumps_prediction_json(self, checkpoint, tmp_path, capsys):
        ds = synth_dataset(CFG.synth_seed, 1, CFG.image_size)
        img_path = tmp_path / "scene.png"
        Image.fromarray(image_pixels(ds.images[0])).save(img_path)
        out_path = tmp_path / "preds.json"
        main(
            [
                "infer", "--image", str(img_path),
                "--checkpoint", str(checkpoint),
                "--out", str(out_path), "--top-k", "5",
            ]
        )
        record = json.loads(out_path.read_text())
        assert record["image_id"] == "scene"
        assert len(record["quadruplets"]) <= 5
        for q in record["quadruplets"]:
            assert {"human_box", "object_box", "object_class", "verb", "score",
                    "union_mask", "query_index"} <= set(q)
