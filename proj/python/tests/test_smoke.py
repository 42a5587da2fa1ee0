import json
import math

import numpy as np
import pytest

import afp


def mcl_reference(h, hp, tau):
    a = h / np.linalg.norm(h, axis=1, keepdims=True)
    b = hp / np.linalg.norm(hp, axis=1, keepdims=True)
    s = a @ b.T / tau
    s = s - s.max(axis=1, keepdims=True)
    return float(np.mean(np.log(np.exp(s).sum(axis=1)) - np.diag(s)))


def test_mcl_matches_numpy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        h, hp = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
        assert afp.mcl_loss(h, hp, 0.1) == pytest.approx(mcl_reference(h, hp, 0.1), abs=1e-10)


def test_mcl_hand_values():
    same = np.ones((4, 3))
    assert afp.mcl_loss(same, same, 0.05) == pytest.approx(math.log(4), abs=1e-12)
    eye = np.eye(2)
    assert afp.mcl_loss(eye, eye, 1.0) == pytest.approx(math.log1p(math.exp(-1)), abs=1e-12)


def test_metrics():
    a, b = np.array([[1.0, 0.0]]), np.array([[-1.0, 0.0]])
    assert afp.alignment(a, b) == pytest.approx(4.0)
    assert afp.uniformity(np.array([[1.0, 0.0], [-1.0, 0.0]])) == pytest.approx(-8.0)
    x = np.random.default_rng(1).normal(size=(8, 3))
    assert afp.retrieval_acc_at_1(x, 2 * x) == 1.0
    p = afp.pca2(x)
    assert p["coords"].shape == (8, 2)
    assert np.allclose(p["coords"].mean(axis=0), 0, atol=1e-9)


def test_errors_are_typed():
    with pytest.raises(afp.UsageError):
        afp.mcl_loss(np.ones((1, 2)), np.ones((1, 2)), 0.1)
    with pytest.raises(afp.DimensionError):
        afp.alignment(np.ones((2, 2)), np.ones((3, 2)))
    assert issubclass(afp.UsageError, afp.AfpError)


def test_bleu_and_family():
    assert afp.bleu([[1, 2, 3, 4]], [[1, 2, 3, 4]]) == 1.0
    fam = afp.Family(concept_count=16, seed=3)
    s = fam.sample(0, seed=5)
    t = fam.translate(s, 0, 1)
    assert fam.translate(t, 1, 0) == s
    assert set(s).isdisjoint(t)


def test_cli_round_trip(tmp_path):
    cfg = {
        "seed": 1,
        "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "max_seq_len": 32},
        "train": {"steps": 2, "eval_every": 1, "mcl_batch": 4, "cif_batch": 4},
        "corpus": {"n_pairs_per_combination": 16, "n_cif": 8, "n_heldout": 4, "n_heldout_cif": 4,
                   "family": {"concept_count": 16}},
        "paths": {"corpus_dir": str(tmp_path / "corpus"), "run_dir": str(tmp_path / "run")},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    assert afp.run_cli(["gen-corpus", "--config", str(path)])[0] == 0
    code, out, err = afp.run_cli(["train", "--config", str(path)])
    assert code == 0, err
    assert (tmp_path / "run" / "checkpoint.afpt").exists()
    code, out, _ = afp.run_cli(["metrics", "--config", str(path)])
    assert code == 0
    assert "l_align" in json.loads(out)
    assert afp.run_cli(["eval", "--config", str(path), "--task", "nope"])[0] == 2
