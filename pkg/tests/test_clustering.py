import numpy as np
import pytest

from eagleeye import NOISE, ClusteringParams, cluster_flagged
from eagleeye.errors import EmptyInput


def two_blobs(rng, n_a=40, n_b=40, sep=10.0, scale=0.5):
    a = rng.normal(scale=scale, size=(n_a, 2))
    b = rng.normal(scale=scale, size=(n_b, 2)) + [sep, 0.0]
    return np.vstack([a, b])


def test_two_separated_blobs_form_two_clusters():
    rng = np.random.default_rng(0)
    pts = two_blobs(rng)
    labels = cluster_flagged(pts)
    assert set(labels.values()) == {0, 1}
    # labels are canonical: the cluster containing the smallest id is 0
    assert labels[0] == 0
    first_of_b = min(i for i in range(40, 80))
    assert labels[first_of_b] == 1
    # blob memberships are coherent
    assert len({labels[i] for i in range(40)}) == 1
    assert len({labels[i] for i in range(40, 80)}) == 1


def test_single_point_respects_min_size():
    pts = np.zeros((1, 3))
    assert cluster_flagged(pts, ClusteringParams(min_cluster_size=1)) == {0: 0}
    assert cluster_flagged(pts) == {0: NOISE}


def test_small_groups_become_noise():
    """A group bigger than k_density but below min_cluster_size is demoted."""
    rng = np.random.default_rng(1)
    pts = np.vstack([
        rng.normal(scale=0.3, size=(30, 2)),
        rng.normal(scale=0.05, size=(4, 2)) + [40.0, 0.0],
    ])
    labels = cluster_flagged(pts, ClusteringParams(k_density=3, min_cluster_size=5))
    assert NOISE not in {labels[i] for i in range(30)}
    assert {labels[i] for i in range(30, 34)} == {NOISE}


def test_merge_ratio_controls_splitting():
    """Raising merge_ratio can only split more, never merge more."""
    rng = np.random.default_rng(7)
    a = rng.normal(scale=0.6, size=(60, 2))
    b = rng.normal(scale=0.6, size=(60, 2)) + [2.6, 0.0]
    pts = np.vstack([a, b])
    counts = []
    for ratio in (0.05, 0.5, 0.95):
        labels = cluster_flagged(pts, ClusteringParams(merge_ratio=ratio))
        counts.append(len({v for v in labels.values() if v != NOISE}))
    assert counts == sorted(counts)
    assert counts[0] == 1  # a tiny bar fuses the overlapping pair


def test_labels_cover_all_input_ids():
    rng = np.random.default_rng(3)
    pts = two_blobs(rng, n_a=25, n_b=31)
    labels = cluster_flagged(pts)
    assert sorted(labels) == list(range(56))


def test_duplicate_points_cluster_together():
    pts = np.repeat([[0.0, 0.0], [5.0, 5.0]], 10, axis=0)
    labels = cluster_flagged(pts, ClusteringParams(k_density=3))
    assert len({labels[i] for i in range(10)}) == 1
    assert len({labels[i] for i in range(10, 20)}) == 1
    assert labels[0] != labels[10]


def test_deterministic():
    rng = np.random.default_rng(5)
    pts = two_blobs(rng)
    assert cluster_flagged(pts) == cluster_flagged(pts.copy())


def test_rejects_empty_input():
    with pytest.raises(EmptyInput):
        cluster_flagged(np.zeros((0, 2)))
