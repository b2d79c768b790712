import csv
import io
import json
from dataclasses import replace

import numpy as np
import pytest

from nntopo.datagen import DatasetSpec, LabeledPointCloud, save_csv
from nntopo.nn import Mlp, TrainConfig
from nntopo.persistence import INF
from nntopo.simplicial import BettiVector
from nntopo.vr import ScaleParams, vr_betti
from nntopo.pipeline import (
    ExperimentConfig,
    ExperimentError,
    ScaleSearchError,
    TopologyProfile,
    aggregate,
    aggregate_csv,
    barcode_complexity,
    default_layers,
    distinct_points,
    middle_of_longest_run,
    omega_nonincreasing,
    pca_project,
    profiles_csv,
    read_profiles_csv,
    run_experiment,
    select_scale,
    topological_complexity,
    track_persistence,
    track_topology,
    write_report,
)


def clusters(n_clusters: int, per: int, seed: int = 0, spread: float = 0.05) -> np.ndarray:
    rng = np.random.default_rng(seed)
    centers = np.c_[np.arange(n_clusters) * 10.0, np.zeros(n_clusters)]
    return np.vstack([c + rng.normal(scale=spread, size=(per, 2)) for c in centers])


def circle(n: int) -> np.ndarray:
    t = 2 * np.pi * np.arange(n) / n
    return np.c_[np.cos(t), np.sin(t)]


def test_topological_complexity_examples():
    assert topological_complexity((1, 0, 0)) == 1
    assert topological_complexity((9, 9, 0)) == 18
    assert topological_complexity(BettiVector((18, 0, 9))) == 27


def test_middle_of_longest_run():
    vals = list(range(10))
    assert middle_of_longest_run(vals, [0, 1, 1, 0, 1, 1, 1, 1, 0, 0]) == 5
    assert middle_of_longest_run(vals, [1, 1, 1, 0, 0, 0, 1, 1, 1, 0]) == 1
    assert middle_of_longest_run(vals, [0] * 10) is None


def test_select_scale_on_separated_clusters():
    x = clusters(5, 12)
    res = select_scale(x, (5, 0), k_range=range(1, 20), eps_range=(0.5, 1.0, 1.5))
    assert res.chosen is not None
    assert (res.chosen.k, res.chosen.eps) in res.valid_region
    assert vr_betti(x, res.chosen.k, res.chosen.eps, 1) == (5, 0)
    valid_k = [k for k in range(1, 20) if res.stage1_valid(k)]
    assert valid_k == list(range(valid_k[0], valid_k[-1] + 1))
    assert res.chosen.k == valid_k[(len(valid_k) - 1) // 2]


def test_select_scale_circle_and_validity_map():
    x = circle(60)
    res = select_scale(x, (1, 1), k_range=range(2, 9), eps_range=(0.5, 1.0, 1.5, 2.0), full_map=True)
    assert len(res.cells) == 7 * 4
    for key in res.valid_region:
        assert res.cells[key]["a"] == (1, 1)
    assert res.cells[(res.chosen.k, res.chosen.eps)]["a"] == (1, 1)
    rows = list(csv.DictReader(io.StringIO(res.to_csv())))
    assert sum(int(r["chosen"]) for r in rows) == 1


def test_select_scale_joint_classes_and_failure():
    clouds = {"a": clusters(3, 10), "b": circle(50)}
    res = select_scale(clouds, {"a": (3, 0), "b": (1, 1)}, k_range=range(2, 8), eps_range=(0.5, 1.0))
    assert res.cells[(res.chosen.k, res.chosen.eps)] == {"a": (3, 0), "b": (1, 1)}
    with pytest.raises(ScaleSearchError) as err:
        select_scale(circle(30), (1, 5), k_range=range(2, 5), eps_range=(0.5, 1.0))
    assert err.value.result.chosen is None and err.value.result.cells


def identity_net(d: int) -> Mlp:
    net = Mlp.init((d, d), "relu", 0)
    net.weights[0][:] = np.eye(d)
    net.biases[0][:] = 0
    return net


def test_identity_network_profile_is_constant():
    x = np.vstack([circle(40), clusters(2, 15) + 5])
    labels = np.r_[np.zeros(40, dtype=int), np.ones(30, dtype=int)]
    data = LabeledPointCloud(x, labels)
    audit = []
    a, b = track_topology(identity_net(2), data, ScaleParams(6, 1.0), dmax=1, audit=audit)
    assert a.betti[0] == a.betti[1] == (1, 1)
    assert b.betti[0] == b.betti[1] == (2, 0)
    assert a.omega == tuple(sum(v) for v in a.betti)
    assert {(k, e) for *_, k, e in audit} == {(6, 1.0)}
    assert len(audit) == 2 * 3


def test_distinct_points_and_persistence_of_constant_cloud():
    x = np.zeros((20, 2))
    assert distinct_points(x).shape == (1, 2)
    data = LabeledPointCloud(np.vstack([x, np.ones((5, 2))]), np.r_[np.zeros(20, int), np.ones(5, int)])
    bars = track_persistence(identity_net(2), data, 4, layers=[0])
    assert bars[(0, "a")].nonzero().intervals == ((0, 0.0, INF),)


def test_persistence_agrees_with_fixed_scale_homology():
    x = np.vstack([circle(30), circle(30) * 0.5 + 5])
    labels = np.r_[np.zeros(30, dtype=int), np.ones(30, dtype=int)]
    data = LabeledPointCloud(x, labels)
    net = Mlp.init((2, 4, 2), "tanh", 0)
    scale = ScaleParams(3, 1.0)
    profiles = track_topology(net, data, scale)
    bars = track_persistence(net, data, 3, eps_max=1.0)
    assert default_layers(4) == [0, 1, 3]
    for (j, c), bc in bars.items():
        prof = profiles[0] if c == "a" else profiles[1]
        assert bc.betti_at(1.0, 2) == tuple(prof.betti[j])
        assert barcode_complexity(bc, 1.0) == prof.omega[j]


def test_pca_matches_dense_eigensolver():
    x = np.random.default_rng(0).normal(size=(50, 5)) @ np.diag([5, 3, 2, 1, 0.5])
    res = pca_project(x, 3)
    c = np.cov(x.T)
    vals, vecs = np.linalg.eigh(c)
    order = np.argsort(vals)[::-1][:3]
    for i, j in enumerate(order):
        v = vecs[:, j] * np.sign(vecs[np.argmax(np.abs(vecs[:, j])), j])
        assert np.abs(res.components[i] - v).max() < 1e-8
        assert res.explained_variance_ratio[i] == pytest.approx(vals[j] / vals.sum(), abs=1e-10)
    assert np.allclose(res.points, (x - x.mean(0)) @ res.components.T)
    assert not res.rank_deficient


def test_pca_plane_and_isotropy():
    rng = np.random.default_rng(1)
    plane = np.c_[rng.normal(size=(200, 2)), np.zeros(200)]
    res = pca_project(plane, 3)
    assert res.rank_deficient and res.points.shape == (200, 2)
    centered = plane[:, :2] - plane[:, :2].mean(0)
    assert np.allclose(np.linalg.norm(res.points, axis=1), np.linalg.norm(centered, axis=1))
    iso = pca_project(rng.normal(size=(20000, 3)), 3)
    assert np.allclose(iso.explained_variance_ratio, 1 / 3, atol=0.02)


def fake_profiles():
    s = ScaleParams(5, 1.0)
    rows = [((3, 1), (2, 0), (1, 0)), ((3, 1), (1, 1), (1, 0)), ((4, 0), (2, 1), (1, 0))]
    return [(r, TopologyProfile("a", tuple(BettiVector(b) for b in bs), s, {"seed": r}))
            for r, bs in enumerate(rows)]


def test_aggregate_matches_recomputation_from_csv():
    profs = fake_profiles()
    text = profiles_csv(profs, 1)
    rows = read_profiles_csv(text)
    stats = aggregate(profs)
    for s in stats:
        omegas = [r["omega"] for r in rows if r["layer"] == s.layer and r["class"] == s.cls]
        assert s.omega_mean == pytest.approx(np.mean(omegas))
        assert s.omega_std == pytest.approx(np.std(omegas, ddof=1))
        lo, hi = s.band
        assert hi - lo == pytest.approx(s.omega_std)
    assert omega_nonincreasing(stats, "a", 2)


def test_single_run_has_empty_std_columns():
    stats = aggregate(fake_profiles()[:1])
    rows = list(csv.DictReader(io.StringIO(aggregate_csv(stats, 1))))
    assert all(r["std_omega"] == "" for r in rows)


def test_omega_nonincreasing_detects_rise():
    s = ScaleParams(5, 1.0)
    profs = [(r, TopologyProfile("a", (BettiVector((1, 0)), BettiVector((3, 0))), s)) for r in range(3)]
    assert not omega_nonincreasing(aggregate(profs), "a", 1)


def blobs_csv(path, n=120, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, 2)) * 0.3
    b = rng.normal(size=(n, 2)) * 0.3 + 6
    data = LabeledPointCloud(np.vstack([a, b]), np.r_[np.zeros(n, int), np.ones(n, int)])
    save_csv(data, path)


def tiny_config(path, **kw) -> ExperimentConfig:
    base = dict(dataset=DatasetSpec("CSV", n_train=240, n_homology=120, path=str(path)),
                widths=(2, 4, 4, 2), activation="tanh",
                train=TrainConfig(max_epochs=400, patience=5, learning_rate=0.03),
                repetitions=3, scale=ScaleParams(10, 1.5), persist_layers=(0, 3), persist_eps_max=1.5,
                seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_experiment_report_bundle(tmp_path):
    blobs_csv(tmp_path / "blobs.csv")
    cfg = tiny_config(tmp_path / "blobs.csv")
    res = run_experiment(cfg)
    assert res.success_rate == 1.0
    assert {(k, e) for *_, k, e in res.audit} == {(10, 1.5)}
    out = write_report(res, tmp_path / "report")
    for name in ("profiles.csv", "aggregate.csv", "training.csv", "scale_search.csv", "config.json",
                 "metadata.json"):
        assert (out / name).exists(), name
    assert len(list((out / "barcodes").glob("*.csv"))) == 4
    assert (out / "pca" / "layer0.csv").exists()
    rows = read_profiles_csv((out / "profiles.csv").read_text())
    assert len(rows) == 3 * 2 * 5
    assert all(r["b0"] == 1 and r["omega"] == 1 for r in rows if r["layer"] == 0)
    assert ExperimentConfig.from_dict(json.loads((out / "config.json").read_text())) == cfg


def test_reports_identical_across_worker_counts(tmp_path):
    blobs_csv(tmp_path / "blobs.csv")
    one = write_report(run_experiment(tiny_config(tmp_path / "blobs.csv", workers=1)), tmp_path / "r1")
    two = write_report(run_experiment(tiny_config(tmp_path / "blobs.csv", workers=2)), tmp_path / "r2")
    for name in ("profiles.csv", "aggregate.csv", "training.csv"):
        assert (one / name).read_bytes() == (two / name).read_bytes()


def test_target_successes_and_failure(tmp_path):
    blobs_csv(tmp_path / "blobs.csv")
    res = run_experiment(tiny_config(tmp_path / "blobs.csv", repetitions=1, target_successes=2))
    assert sum(r.well_trained for r in res.runs) == 2
    hopeless = replace(tiny_config(tmp_path / "blobs.csv", repetitions=2),
                       train=TrainConfig(max_epochs=1, learning_rate=1e-9))
    with pytest.raises(ExperimentError) as err:
        run_experiment(hopeless)
    assert len(err.value.diagnostics) == 2


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(repetitions=0)
    with pytest.raises(ValueError):
        ExperimentConfig(dataset=DatasetSpec("D-I", n_train=100, n_homology=200))
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
