import json
from pathlib import Path

import numpy as np
import pytest

import dres

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


def test_parse_tagged_text():
    t = dres.parse_tagged_text("[the red chair](3) next to [the tables](1,2)")
    assert t["tokens"] == ["the", "red", "chair", "next", "to", "the", "tables"]
    assert [p["target_ids"] for p in t["phrases"]] == [[3], [1, 2]]
    assert t["phrases"][0]["head_index"] == 2


def test_parse_errors_carry_code_and_offset():
    with pytest.raises(dres.ParseError) as info:
        dres.parse_tagged_text("[the chair (3)")
    assert info.value.code == "UnbalancedDelimiters"
    assert isinstance(info.value.offset, int)
    assert isinstance(info.value, dres.DresError)


def test_fixture_dataset_and_stats():
    descs, violations = dres.load_dataset(FIXTURES / "records.jsonl", FIXTURES / "scenes")
    assert len(descs) == 12
    assert violations == []
    stats = dres.dataset_stats(FIXTURES / "records.jsonl")
    assert stats["num_descriptions"] == 12
    assert stats["avg_token_length"] == pytest.approx(15.0)
    _, broken = dres.load_dataset(FIXTURES / "broken_records.jsonl", FIXTURES / "scenes")
    assert len(broken) == 4
    checks = dres.reference_check(FIXTURES / "records.jsonl")
    assert not all(c["pass"] for c in checks)


def test_scene_round_trip(tmp_path):
    pts = np.array([[0, 0, 0, 0.1, 0.2, 0.3], [1, 0, 0, 0.5, 0.5, 0.5], [5, 5, 5, 1, 1, 1]], dtype=float)
    scene = dres.Scene("tiny", pts, [0, 0, 1])
    dres.write_scene(tmp_path / "tiny.scene", scene)
    back = dres.read_scene(tmp_path / "tiny.scene")
    assert back.scene_id == "tiny"
    np.testing.assert_array_equal(back.points, pts)
    assert list(back.labels) == [0, 0, 1]
    with pytest.raises(dres.DresError):
        dres.Scene("bad", pts, [0, 1])


def test_oversegment_partitions_every_point():
    scene = dres.gen_scene({"seed": 2}, 0)
    sp = dres.oversegment(scene, {"overseg": {"target_max_superpoints": 10}})
    assert len(sp) == len(scene)
    assert 1 <= len(set(sp.tolist())) <= 10


def test_metrics():
    assert dres.miou([[1.0], [0.0, 0.0, 0.0]]) == 0.25
    assert dres.miou_s([[1.0], [0.0, 0.0, 0.0]]) == 0.5
    assert dres.acc_at([[0.3, 0.2, 0.6]], 0.25) == pytest.approx(2 / 3)
    rep = dres.metrics_report([[0.2, 0.6], [0.3, 0.9, 1.0, 0.5]], [True, False], [False, True])
    assert rep["overall"]["miou"] == pytest.approx(3.5 / 6)
    assert "mIoU-S" in dres.format_metrics(rep)


def test_synth_train_predict_evaluate(tmp_path):
    data = tmp_path / "data"
    dres.write_synthetic_dataset(data, {"num_scenes": 3, "descriptions_per_scene": 2, "seed": 1})
    cfg = {
        "model": {"d": 16, "e": 16, "c": 8, "num_layers": 1, "heads": 2, "ffn_hidden": 32},
        "overseg": {"target_max_superpoints": 12},
        "schedule": {"base_lr": 0.01, "decay_epochs": [], "epochs": 3, "batch_size": 2},
    }
    ckpt = tmp_path / "m.ckpt"
    result = dres.train(data, ckpt, cfg, seed=3)
    assert ckpt.exists()
    assert len(result["log"]) == 3
    assert result["steps"] == 9
    preds = dres.predict(data, ckpt, cfg)
    assert len(preds) == 6
    report = dres.evaluate(data, preds)
    assert 0.0 <= report["overall"]["miou"] <= 1.0

    descs, _ = dres.load_dataset(data / "records.jsonl")
    scenes = dres.load_scenes(data / "scenes")
    perfect = []
    for d in descs:
        labels = scenes[d["scene_id"]].labels
        masks = [np.flatnonzero(np.isin(labels, p["target_ids"])).tolist() for p in d["phrases"]]
        perfect.append({"description_id": d["description_id"], "masks": masks})
    assert dres.evaluate(data, perfect)["overall"]["miou"] == 1.0


def test_cli_entry_point(tmp_path):
    code, out, _ = dres.run_cli(["stats", str(FIXTURES / "records.jsonl"), "--format", "structured"])
    assert code == 0
    assert json.loads(out)["num_descriptions"] == 12
    code, _, err = dres.run_cli([])
    assert code == 2
    assert "Usage" in err
