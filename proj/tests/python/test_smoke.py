import math

import numpy as np
import pytest

import protoecg


def test_taxonomy_partition():
    tax = protoecg.taxonomy()
    assert len(tax) == 71
    counts = {}
    for _, branch in tax:
        counts[branch] = counts.get(branch, 0) + 1
    assert counts == {"rhythm": 16, "morph": 52, "global": 3}


def test_similarity_scale_invariant():
    rng = np.random.default_rng(0)
    z, p = rng.normal(size=24), rng.normal(size=24)
    assert protoecg.similarity(3.0 * z, 0.1 * p, 2.0) == pytest.approx(protoecg.similarity(z, p, 2.0), abs=1e-9)
    assert protoecg.similarity(np.array([1.0, 0.0]), np.array([1.0, 1.0]), 2.0) == pytest.approx(math.sqrt(2))
    with pytest.raises(protoecg.DegenerateInputError):
        protoecg.similarity(np.zeros(3), np.ones(3), 1.0)


def test_pooling_and_windows():
    assert protoecg.topk_pool([1.0, 5.0, 3.0, 4.0], 2) == pytest.approx(4.5)
    latent = np.random.default_rng(1).normal(size=(8, 32))
    assert len(protoecg.sliding_similarity(latent, np.ones(24), 3, 1.0)) == 30
    assert protoecg.latent_window_to_seconds(0, 1) == pytest.approx((0.0, 0.3125))


def test_losses_and_init():
    z = np.zeros((2, 3))
    # summed over classes, averaged over records
    assert protoecg.bce_loss(z, np.ones((2, 3)), np.ones(3)) == pytest.approx(3 * math.log(2), rel=1e-9)
    w = protoecg.init_classifier([0, 1, 1], 2)
    assert w.tolist() == [[1.0, -0.5, -0.5], [-0.5, 1.0, 1.0]]
    assert protoecg.orthogonality_loss(np.eye(3)) == pytest.approx(0.0)
    labels = np.array([[1, 1, 0], [1, 0, 0], [0, 1, 1]], dtype=float)
    j = protoecg.jaccard_matrix(labels, [0, 1, 2])
    assert np.allclose(j, j.T) and np.allclose(np.diag(j), 1.0)
    assert j[0, 1] == pytest.approx(1 / 3)


def test_auroc_and_bootstrap():
    assert protoecg.auroc(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0.0, 0.0, 1.0, 1.0])) == pytest.approx(0.75)
    assert protoecg.auroc(np.ones(3), np.ones(3)) is None
    assert protoecg.weighted_auroc([1.0, None, 0.5], [3, 1, 1]) == pytest.approx(0.875)
    rng = np.random.default_rng(2)
    labels = np.zeros((60, 2))
    labels[::2, 0] = 1
    labels[5, 1] = 1
    scores = labels + rng.normal(size=labels.shape)
    r = protoecg.bootstrap(scores, labels, 500, 3)
    assert r["n_resamples"] == 500 and r["weighted_undefined"] == 0 and r["macro_undefined"] > 0
    assert r["weighted"]["lo"] <= r["weighted"]["hi"]


def test_highpass_removes_offset():
    t = np.arange(5000) / 500.0
    x = np.stack([np.full_like(t, 2.0), np.sin(2 * np.pi * 10 * t)], axis=1)
    y = protoecg.highpass_filter(x)
    assert np.max(np.abs(y[:, 0])) < 1e-9
    assert protoecg.highpass_magnitude(0.5) == pytest.approx(1 / math.sqrt(2), abs=1e-3)
