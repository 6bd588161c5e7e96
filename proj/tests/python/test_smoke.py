import json

import numpy as np
import pytest

import mmfuse


def test_metrics_hand_case():
    assert mmfuse.score_a([1.0, 0.0, 0.0, 0.0], [1, 1, 0, 0]) == pytest.approx(11 / 15)
    assert mmfuse.score_b([[0.9, 0.9], [0.1, 0.9]], [[1, 1], [0, 1]]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mmfuse.score_a([], [])


def test_lr_schedule_anchors():
    assert mmfuse.lr_at(0, 10, 110, 1.0) == 0.0
    assert mmfuse.lr_at(10, 10, 110, 1.0) == 1.0
    assert mmfuse.lr_at(60, 10, 110, 1.0) == 0.5


def test_detr_mask_fallback_keeps_four():
    logits = np.zeros((10, 5), dtype=np.float32)
    logits[:, 4] = 10.0
    logits[:, 0] = np.arange(10, dtype=np.float32)
    mask = mmfuse.detr_object_mask(logits, no_object_index=4)
    assert mask.tolist() == [0] * 6 + [1] * 4


def test_ablation_rounds():
    ids = [[e[0] for e in mmfuse.ablation_round(r)] for r in (1, 2, 3, 4)]
    assert ids == [["00", "01", "02", "03"], ["02", "10", "12", "13"], ["10", "20", "21"], ["10", "30"]]
    r3 = dict(mmfuse.ablation_round(3))
    assert r3["20"]["backbones"] == ["IMAGE_PATCH"]
    assert r3["21"]["backbones"] == ["OBJECT"]


def test_series_stats_quartiles():
    s = mmfuse.series_stats([5, 1, 4, 2, 3])
    assert (s["q1"], s["median"], s["q3"]) == (2, 3, 4)
    one = mmfuse.series_stats([0.5])
    assert one["ci_low"] is None and one["warnings"]


def test_synthetic_data_and_split(tmp_path):
    out = tmp_path / "mami"
    info = mmfuse.generate_synthetic("mami", str(out), records=40, text_dim=8, image_dim=6, max_boxes=6, max_text=6)
    assert info == {"dataset": "MAMI", "records": 40}
    data = mmfuse.read_dataset(str(out))
    assert data["labels"].shape == (40, 5)
    assert data["spec"]["label_names"][0] == "misogynous"
    # misogynous is the OR of the other labels
    assert (data["labels"][:, 0] == data["labels"][:, 1:].max(axis=1)).all()
    train, dev = mmfuse.stratified_split(str(out), 0.8, 1)
    assert sorted(train + dev) == sorted(data["ids"])


def test_cli_train_and_exit_codes(tmp_path):
    data = tmp_path / "d"
    mmfuse.generate_synthetic("mami", str(data), records=16, text_dim=8, image_dim=6, max_boxes=6, max_text=6)
    config = {
        "hidden_dim": 8, "shared_layers": 1, "shared_heads": 2, "image_patch_layers": 1, "image_patch_heads": 2,
        "object_layers": 1, "object_heads": 2, "text_layers": 1, "text_heads": 2, "decoder_layers": 1,
        "decoder_heads": 2, "mlp_hidden": 8, "ff_multiplier": 2, "batch_size": 4, "epochs": 1,
        "accumulation_every": 2, "lr": 1e-3,
    }
    (tmp_path / "c.json").write_text(json.dumps(config))
    code, out, err = mmfuse.run_cli(["train", "--config", str(tmp_path / "c.json"), "--data", str(data),
                                     "--out", str(tmp_path / "run")])
    assert code == 0, err
    assert json.loads(out)["complete"] is True
    assert (tmp_path / "run" / "trace.jsonl").read_text().strip()

    code, _, err = mmfuse.run_cli(["train", "--nope"])
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["error"] == "usage"
