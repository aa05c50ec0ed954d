import json
import random

import pytest

import sponge


def test_energy_of_a_dense_layer():
    r = sponge.simulate_layers([[10, 10, 0, 0, 0, 0]])
    assert r["energy_optimized_pj"] == pytest.approx(37.0)
    half = sponge.simulate_layers([[10, 5, 0, 0, 0, 0]])
    assert half["energy_ratio"] == pytest.approx(0.5)


def test_invalid_trace_raises():
    with pytest.raises(ValueError):
        sponge.simulate_layers([[5, 6, 0, 0, 0, 0]])


def test_tokenizer_inflation():
    assert len(sponge.tokenize("athazagoraphobia")) == 4
    assert len(sponge.tokenize("athazagoraphpbia")) == 7


def test_translator_attack_beats_natural_text():
    t = sponge.Translator(7)
    natural = [t.energy(s) for s in sponge.natural_corpus(20, 8, 1)]
    found = t.attack(length=8, pool=20, generations=5, seed=1)
    assert len(found["best"]) == 8
    assert found["energy_pj"] > max(natural)
    assert found["history"] == sorted(found["history"])
    assert t.translate("the cat")["output_tokens"] >= 1


def test_cnn_sponge_is_denser():
    rng = random.Random(0)
    start = [rng.random() for _ in range(64)]
    sponged = sponge.lbfgs_sponge(start)
    assert sponge.cnn_density(sponged)["overall"] >= sponge.cnn_density(start)["overall"]
    assert sponge.cnn_density(sponged)["overall"] <= sponge.cnn_max_density() + 1e-12


def test_statistics():
    r = sponge.mann_whitney_u([1, 2], [3, 4])
    assert r["u_a"] == 0
    assert sponge.percentile([3.0, 1.0, 2.0], 100) == 3.0


def test_run_experiment(tmp_path):
    trace = tmp_path / "trace.txt"
    trace.write_text("l0 10 5 4 2 0 0\n")
    config = {"task": "simulate", "simulate": {"trace": str(trace)}}
    assert sponge.run_experiment(json.dumps(config), str(tmp_path / "out")) == 0
    report = json.loads((tmp_path / "out" / "energy_report.json").read_text())
    assert report["energy_optimized_pj"] == pytest.approx(18.5)
    assert "ga" in json.loads(sponge.default_config())
