import math

import numpy as np
import pytest

import csipreid


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(0).normal(size=(4, 7))
    y = csipreid.softmax(x)
    assert y.shape == (4, 7)
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(csipreid.softmax(np.zeros((1, 2)))[0], [0.5, 0.5])


def test_pairwise_distances_match_numpy():
    rng = np.random.default_rng(1)
    q = rng.normal(size=(3, 5))
    g = rng.normal(size=(4, 5))
    d = csipreid.pairwise_distances(q, g)
    expect = np.linalg.norm(q[:, None, :] - g[None, :, :], axis=-1)
    np.testing.assert_allclose(d, expect, atol=1e-12)


def test_laplacian_pe_path_graph():
    pe = csipreid.laplacian_pe(3, [(0, 1), (1, 2)], 1)
    expect = np.array([[1.0], [0.0], [-1.0]]) / math.sqrt(2.0)
    np.testing.assert_allclose(pe, expect, atol=1e-9)


def test_contrastive_losses_log2_case():
    sim = np.full((2, 2), 0.3)
    v2s, s2v = csipreid.contrastive_losses(sim, [5, 5], tau=0.07)
    assert v2s == pytest.approx(math.log(2.0), abs=1e-12)
    assert s2v == pytest.approx(math.log(2.0), abs=1e-12)


def test_batch_hard_triplet_margin_case():
    feats = np.zeros((4, 3))
    assert csipreid.batch_hard_triplet(feats, [0, 0, 1, 1], margin=0.3) == pytest.approx(0.3)


def test_csip_loss_uniform_is_log_k():
    feats = np.zeros((2, 4))
    protos = np.zeros((5, 4))
    loss = csipreid.csip_loss(feats, [0, 4], protos)
    assert loss == pytest.approx(math.log(5.0), abs=1e-12)


def test_intra_id_pool_means():
    feats = np.array([[1.0, 2.0], [3.0, 4.0], [10.0, 20.0]])
    pooled = csipreid.intra_id_pool(feats, [0, 0, 1], 2)
    np.testing.assert_allclose(pooled, [[2.0, 3.0], [10.0, 20.0]])


def test_evaluate_perfect_retrieval():
    dist = np.array([[0.0, 1.0, 2.0]])
    out = csipreid.evaluate(dist, [7], [0], [7, 1, 2], [1, 1, 1], True)
    assert out["mAP"] == pytest.approx(1.0)
    assert out["cmc"][0] == pytest.approx(1.0)


def test_lr_schedule_published_values():
    assert csipreid.lr_at(0) == 5e-7
    assert csipreid.lr_at(10) == 5e-6
    assert csipreid.lr_at(31) == pytest.approx(5e-7, rel=1e-12)


def test_gradcheck_subset_passes():
    rows = csipreid.gradcheck(seeds=1, tolerance=1e-3)
    assert len(rows) > 40
    assert all(r["passed"] for r in rows)


def test_dataset_and_pipeline_round_trip(tmp_path):
    data_dir = str(tmp_path / "ds")
    out_dir = str(tmp_path / "run")
    (tmp_path / "run").mkdir()
    overrides = [
        "data.identities=3",
        "data.tracklets_per_id=4",
        "data.frames=2",
        "data.height=8",
        "data.width=8",
        "model.dim=8",
        "model.visual.patch_h=4",
        "model.visual.patch_w=4",
        "model.visual.depth=1",
        "model.visual.heads=2",
        "model.sgt.layers=1",
        "model.sgt.heads=2",
        "model.sgt.pe_dim=2",
        "model.sgtm.heads=2",
        "stage1.epochs=1",
        "stage2.epochs=1",
        "stage2.p=2",
        "stage2.k=2",
    ]
    counts = csipreid.generate_dataset(data_dir, overrides)
    assert counts == {"train": 6, "query": 3, "gallery": 3}
    result = csipreid.run_pipeline(data_dir, out_dir, overrides, seed=3)
    assert 0.0 <= result["mAP"] <= 1.0
    assert 0.0 <= result["rank1"] <= 1.0
