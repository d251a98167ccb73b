import filecmp
import json

import numpy as np
import pytest

from bwfreg.errors import OddDimension, RankDeficientSurrogate
from bwfreg.regression import Dataset
from bwfreg.simulation import (
    MEAN_ABS_V,
    V_MAX_ABS,
    V_MIN_ABS,
    ExampleConfig,
    _rng,
    diagonal_profile,
    generate,
    generate_example1,
    generate_example2,
    haar_orthogonal,
    run_qq_experiment,
    run_size_power,
    surrogate_responses,
    trial_seed,
)


def test_haar_one_dimensional_signs():
    draws = haar_orthogonal(1, np.random.default_rng(0), size=10_000)[:, 0, 0]
    assert set(np.unique(draws)) == {-1.0, 1.0}
    assert np.mean(draws > 0) == pytest.approx(0.5, abs=0.02)


def test_haar_orthogonality_and_sphere_moment():
    O = haar_orthogonal(10, np.random.default_rng(1))
    assert np.linalg.norm(O.T @ O - np.eye(10)) < 1e-12
    cols = haar_orthogonal(3, np.random.default_rng(2), size=10_000)[:, :, 0]
    # uniform on the sphere: mean 0 with per-coordinate sd sqrt(1/3) / 100
    assert np.abs(cols.mean(axis=0)).max() < 4 * np.sqrt(1 / 3) / 100
    assert np.allclose(np.mean(cols**2, axis=0), 1 / 3, atol=0.02)


def test_profiles():
    assert np.array_equal(diagonal_profile(np.zeros(5), 0.0, 5, 1), [2.0, 2.5, 3.0, 3.5, 4.0])
    got = diagonal_profile(np.ones(5), 0.2, 5, 1)
    assert np.allclose(got, 1.5 + np.arange(1, 6) / 2 + 1.0)
    assert np.array_equal(diagonal_profile(np.zeros(5), 0.0, 6, 2), [2.0, 2.0, 2.5, 2.5, 3.0, 3.0])


def test_config_validation():
    with pytest.raises(ValueError):
        ExampleConfig(delta=0.4, p=5)
    with pytest.raises(OddDimension):
        generate(ExampleConfig(which=2, d=5))


def test_example1_structure():
    cfg = ExampleConfig(1, 50, 3, 4, 0.1, 7)
    data, true_mean = generate_example1(cfg)
    X, Q = data.covariates, data.responses
    assert X.min() >= -1 and X.max() <= 1
    # shared eigenbasis: all responses commute
    for i in range(0, 50, 7):
        for j in range(1, 50, 5):
            assert np.abs(Q[i] @ Q[j] - Q[j] @ Q[i]).max() < 1e-10 * np.abs(Q).max() ** 2
    # spectrum is (v f)^2 regardless of the rotation
    rng = _rng(cfg.seed)
    rng.uniform(-1, 1, size=(50, 3))
    haar_orthogonal(4, rng)
    v = rng.uniform(-V_MAX_ABS, V_MAX_ABS, size=(50, 4))
    assert np.all(np.abs(v) >= V_MIN_ABS)  # no redraw happened for this seed
    f = diagonal_profile(X, 0.1, 4, 1)
    assert np.allclose(np.linalg.eigvalsh(Q), np.sort((v * f) ** 2, axis=1), rtol=1e-9)


def test_example1_true_mean_is_exact_frechet_mean():
    # in the commuting model the conditional Frechet mean is (E|v|)^2 U f^2 U^T, and E|v| is
    # the midpoint of [V_MIN_ABS, V_MAX_ABS] because small draws are redrawn
    cfg = ExampleConfig(1, 10, 2, 3, 0.0, 1)
    data, true_mean = generate_example1(cfg)
    M = true_mean(np.zeros(2))
    lam = np.linalg.eigvalsh(M)
    assert np.allclose(lam, (MEAN_ABS_V * np.array([2.0, 2.5, 3.0])) ** 2)
    assert MEAN_ABS_V == pytest.approx(0.05005)
    v = np.abs(np.random.default_rng(0).uniform(-0.1, 0.1, 2_000_000))
    assert np.mean(v[v >= V_MIN_ABS]) == pytest.approx(MEAN_ABS_V, rel=1e-3)


def test_example2_structure():
    cfg = ExampleConfig(2, 30, 5, 6, 0.0, 3)
    data, true_mean = generate_example2(cfg)
    Q = data.responses
    mask = np.kron(np.eye(3), np.ones((2, 2))) == 0
    assert np.abs(Q[:, mask]).max() == 0.0
    assert np.allclose(true_mean(np.zeros(5)), MEAN_ABS_V**2 * np.diag([4.0, 4.0, 6.25, 6.25, 9.0, 9.0]))
    # responses do not share an eigenbasis
    assert np.abs(Q[0] @ Q[1] - Q[1] @ Q[0]).max() > 1e-8


def test_generation_is_deterministic():
    a, _ = generate(ExampleConfig(2, 20, 2, 4, 0.1, 5))
    b, _ = generate(ExampleConfig(2, 20, 2, 4, 0.1, 5))
    c, _ = generate(ExampleConfig(2, 20, 2, 4, 0.1, 6))
    assert np.array_equal(a.responses, b.responses)
    assert not np.array_equal(a.responses, c.responses)
    assert trial_seed(3, 4) == trial_seed(3, 4) != trial_seed(3, 5)


def test_surrogate_lln():
    data = Dataset(np.array([[0.0], [1.0]]), np.stack([np.eye(2)] * 2))
    out = surrogate_responses(data, 100_000, np.random.default_rng(0))
    assert np.linalg.norm(out.responses[0] - np.eye(2)) < 0.05


def test_surrogate_unbiased():
    rng = np.random.default_rng(1)
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    data = Dataset(np.zeros((1000, 1)) + np.arange(1000)[:, None], np.stack([Q] * 1000))
    out = surrogate_responses(data, 10, rng)
    # each entry of the sample covariance has sd below sqrt(2 * 4 / 10); average of 1000 draws
    assert np.abs(out.responses.mean(axis=0) - Q).max() < 4 * np.sqrt(0.8 / 1000)


def test_surrogate_full_rank_at_minimum_size():
    data, _ = generate(ExampleConfig(1, 1000, 1, 3, 0.0, 2))
    surrogate_responses(data, 3, np.random.default_rng(3))
    with pytest.raises(RankDeficientSurrogate):
        surrogate_responses(data, 2, np.random.default_rng(3))


def test_empty_qq_report():
    rep = run_qq_experiment(ExampleConfig(1, 50, 2, 3, 0.0, 0), 0)
    assert rep.rows == [] and rep.summary == []


def test_qq_report_rows_and_files(tmp_path):
    cfg = ExampleConfig(1, 60, 2, 3, 0.0, 0)
    rep = run_qq_experiment(cfg, 4, seed=1)
    assert len(rep.rows) == 8
    r = rep.rows[0]
    assert r["normalized_error"] == pytest.approx(np.sqrt(60) * (r["estimate"] - r["truth"]) / np.sqrt(r["variance"]))
    assert r["covered"] == (r["lo"] <= r["truth"] <= r["hi"])
    paths = rep.write(str(tmp_path / "qq"))
    meta = json.load(open(paths["metadata"]))
    assert meta["metadata"]["master_seed"] == 1 and "version" in meta
    assert open(paths["rows"]).readline().startswith("trial,")


def test_always_reject_at_alpha_one():
    rep = run_size_power(ExampleConfig(1, 40, 2, 2, 0.0, 0), [0.0], 3, alpha=1.0, mc=1000)
    assert rep.summary[0]["rejection_rate"] == 1.0
    assert rep.kind == "Size"


def test_reports_are_byte_identical(tmp_path):
    cfg = ExampleConfig(2, 40, 2, 2, 0.0, 0)
    for name in ("a", "b"):
        run_qq_experiment(cfg, 3, seed=5).write(str(tmp_path / f"qq_{name}"))
        run_size_power(cfg, [0.0, 0.3], 3, mc=1000, seed=5).write(str(tmp_path / f"sp_{name}"))
    for stem in ("qq", "sp"):
        for suffix in (".csv", "_summary.csv", ".json"):
            assert filecmp.cmp(tmp_path / f"{stem}_a{suffix}", tmp_path / f"{stem}_b{suffix}", shallow=False)


def test_parallel_matches_serial(tmp_path, monkeypatch):
    cfg = ExampleConfig(1, 40, 2, 2, 0.0, 0)
    serial = run_size_power(cfg, [0.0], 4, mc=1000, seed=2)
    monkeypatch.setenv("BWF_NUM_THREADS", "2")
    parallel = run_size_power(cfg, [0.0], 4, mc=1000, seed=2)
    assert serial.rows == parallel.rows
