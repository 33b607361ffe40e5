import json
import math
import os
import tempfile

import numpy as np
import pytest

import flowtune as ft


def test_version():
    assert ft.__version__


def test_time_embedding_endpoints():
    emb = ft.sinusoidal_time_embedding(0.0, 8)
    assert np.allclose(emb[0::2], 0.0)
    assert np.allclose(emb[1::2], 1.0)
    with pytest.raises(Exception):
        ft.sinusoidal_time_embedding(0.5, 3)


def test_conditional_path_endpoints():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(4, 3))
    x1 = rng.normal(size=(4, 3))
    assert np.array_equal(ft.conditional_path(x0, x1, 0.0), x0)
    at1 = ft.conditional_path(x0, x1, 1.0, 1e-5)
    assert np.allclose(at1, 1e-5 * x0 + x1)
    tf = ft.target_field(np.zeros_like(x1), x1)
    assert np.allclose(tf, x1)


def test_euler_on_linear_field():
    out = ft.integrate_field(lambda x, t: x, np.array([1.0]), method="euler", n_steps=4)
    assert out[0] == 1.25**4


def test_gradient_check():
    assert ft.gradient_check(0) <= 1e-5


def test_f1_cases():
    gold = [[(0, "emphasis"), (2, "emphasis")]]
    same = ft.f1_micro(gold, gold, ["emphasis"])
    assert same["micro_f1"] == 1.0
    mixed = ft.f1_micro([[(0, "emphasis"), (3, "emphasis")]], gold, ["emphasis"])
    assert mixed["micro_f1"] == 0.5


def test_feature_file_roundtrip():
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(6, 4)).astype(np.float32).astype(np.float64)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "f.bin")
        ft.write_feature_file(path, feats)
        back = ft.read_feature_file(path)
        assert np.array_equal(back, feats)


def test_corpus_and_detector_roundtrip():
    configs = os.environ.get("FLOWTUNE_CONFIGS")
    if not configs:
        pytest.skip("FLOWTUNE_CONFIGS not set")
    with tempfile.TemporaryDirectory() as d:
        out = os.path.join(d, "corpus")
        ft.run_corpus(os.path.join(configs, "smoke.json"), out)
        with open(os.path.join(out, "manifest.jsonl")) as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        assert records
        rec = next(r for r in records if r["annotations"])
        feats = ft.read_feature_file(os.path.join(out, rec["features"]))
        durations = list(rec["durations"])
        for ann in rec["annotations"]:
            durations[ann["position"]] += ann["inserted_len"]
        detected = ft.detect_annotations(feats, rec["symbols"], durations, "emphasis")
        gold = [(a["position"], a["type"]) for a in rec["annotations"]]
        report = ft.f1_micro([detected], [gold], ["emphasis"])
        assert report["micro_f1"] >= 0.99


def test_symbol_duration_range():
    durations = {ft.symbol_duration(s) for s in range(16)}
    assert durations == {2, 3, 4, 5, 6}
    assert math.isfinite(float(min(durations)))
