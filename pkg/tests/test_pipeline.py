"""Equalization, repechage, injection, estimators, and the full run."""

from fractions import Fraction

import numpy as np
import numpy.testing as npt
import pytest

import eagleeye.pipeline as pipeline_module
from eagleeye import (
    Dataset,
    Direction,
    EagleEyeConfig,
    Role,
    TailTable,
    assign_injected,
    build_union_index,
    flag,
    ide_prune,
    ide_prune_rescan,
    inject_background,
    purity_estimate,
    repechage,
    run,
    s_over_sqrt_b_estimate,
    serialize_report,
    ReportDocument,
)
from eagleeye.errors import (
    DivisionByZero,
    DomainError,
    ZeroAnomaly,
    ZeroBackground,
)
from eagleeye.scoring import scan_p_success, upsilons_from_counts


def blob_pair(seed, n_ref=90, n_test=110, d=3, quantize=None, blob=25):
    """Background plus one dense blob in the test sample."""
    rng = np.random.default_rng(seed)
    ref = rng.uniform(size=(n_ref, d))
    test = rng.uniform(size=(n_test - blob, d))
    dense = rng.normal(scale=0.02, size=(blob, d)) + 0.5
    test = np.vstack([test, dense])
    if quantize is not None:
        ref = np.round(ref * quantize) / quantize
        test = np.round(test * quantize) / quantize
    return Dataset(ref, Role.REFERENCE), Dataset(test, Role.TEST)


# -- equalization against the brute-force twin --------------------------------


@pytest.mark.parametrize("d", [2, 3, 5])
@pytest.mark.parametrize("direction", [Direction.TEST, Direction.REFERENCE])
def test_equalization_matches_full_rescan(d, direction):
    ref, test = blob_pair(seed=d, d=d)
    config = EagleEyeConfig(k_max=18)
    fast = ide_prune(ref, test, direction, 3.5, config)
    slow = ide_prune_rescan(ref, test, direction, 3.5, config)
    assert fast.flagged == slow.flagged
    assert fast.pruned == slow.pruned
    assert fast.equalized == slow.equalized


def test_equalization_matches_rescan_on_duplicates():
    """Coincident points exercise the (distance, id) tie rules end to end."""
    ref, test = blob_pair(seed=42, quantize=3)
    config = EagleEyeConfig(k_max=15)
    for direction in (Direction.TEST, Direction.REFERENCE):
        fast = ide_prune(ref, test, direction, 3.0, config)
        slow = ide_prune_rescan(ref, test, direction, 3.0, config)
        assert fast.pruned == slow.pruned


def test_equalization_matches_rescan_unequal_sizes():
    ref, test = blob_pair(seed=8, n_ref=200, n_test=100, blob=20)
    config = EagleEyeConfig(k_max=16)
    for direction in (Direction.TEST, Direction.REFERENCE):
        fast = ide_prune(ref, test, direction, 3.0, config)
        slow = ide_prune_rescan(ref, test, direction, 3.0, config)
        assert fast.pruned == slow.pruned


def test_equalization_with_no_cache_padding(monkeypatch):
    """Forcing constant cache escalation must not change the outcome."""
    monkeypatch.setattr(pipeline_module, "_CACHE_PAD", 0)
    ref, test = blob_pair(seed=5, d=2)
    config = EagleEyeConfig(k_max=12)
    fast = ide_prune(ref, test, Direction.TEST, 3.0, config)
    slow = ide_prune_rescan(ref, test, Direction.TEST, 3.0, config)
    assert fast.pruned == slow.pruned


def test_equalization_high_threshold_is_a_no_op():
    ref, test = blob_pair(seed=13)
    part = ide_prune(ref, test, Direction.TEST, 1e9, EagleEyeConfig(k_max=10))
    assert part.flagged == frozenset()
    assert part.pruned == frozenset()
    assert part.equalized == frozenset(range(test.n))


def test_equalization_partition_invariants():
    ref, test = blob_pair(seed=2)
    part = ide_prune(ref, test, Direction.TEST, 4.0, EagleEyeConfig(k_max=18))
    # Removal batches sweep up same-sample neighbors that were never flagged
    # themselves, so pruned is not a subset of flagged; but every batch is
    # anchored at a flagged point, so the two sets must overlap.
    assert part.pruned & part.flagged
    assert part.equalized == frozenset(range(test.n)) - part.pruned
    assert part.equalized.isdisjoint(part.pruned)
    assert len(part.pruned) > 0
    assert part.flagged <= frozenset(range(test.n))


def test_equalized_sample_is_quiet_afterwards():
    """Rescoring the equalized configuration finds nothing above threshold."""
    ref, test = blob_pair(seed=3)
    config = EagleEyeConfig(k_max=18)
    threshold = 4.0
    part = ide_prune(ref, test, Direction.TEST, threshold, config)
    keep = sorted(part.equalized)
    # success probability stays frozen at the original sizes
    p0 = test.n / (ref.n + test.n)
    table = TailTable(config.k_max, p0)
    sub_test = Dataset(test.points[keep], Role.TEST)
    index = build_union_index(ref, sub_test)
    uids = index.union_ids(Role.TEST)
    rows = index.member_neighbor_ids(uids, config.k_max)
    counts = np.cumsum(index.labels[rows] == 1, axis=1, dtype=np.int32)
    ups, _ = upsilons_from_counts(table, counts)
    assert ups.max() < threshold


def test_flag_thresholds_inclusively():
    ref, test = blob_pair(seed=1)
    index = build_union_index(ref, test)
    from eagleeye import score_all

    scores = score_all(index, Direction.TEST, EagleEyeConfig(k_max=10))
    t = float(np.median(scores.upsilon))
    picked = flag(scores, t)
    assert picked == {int(i) for i in scores.point_ids[scores.upsilon >= t]}


# -- repechage -----------------------------------------------------------------


def test_repechage_uses_lower_quantile_of_pruned_core():
    flagged = {0, 1, 2, 3, 4, 5}
    labels = {i: 0 for i in flagged}
    pruned = {1, 2, 3, 4}
    scores = {0: 4.5, 1: 5.0, 2: 6.0, 3: 7.0, 4: 8.0, 5: 9.0}
    out = repechage(flagged, labels, pruned, scores, q=0.5)
    # lower median of [5, 6, 7, 8] is 6
    assert out.clusters[0].threshold == 6.0
    assert out.clusters[0].members == (2, 3, 4, 5)
    assert out.dropped == ()


def test_repechage_q_zero_takes_cluster_minimum():
    flagged = {0, 1, 2}
    labels = {0: 0, 1: 0, 2: 0}
    out = repechage(flagged, labels, {1, 2}, {0: 1.0, 1: 3.0, 2: 2.0}, q=0.0)
    assert out.clusters[0].threshold == 2.0
    assert out.clusters[0].members == (1, 2)


def test_repechage_drops_clusters_without_pruned_core():
    flagged = {0, 1, 10, 11}
    labels = {0: 0, 1: 0, 10: 1, 11: 1}
    out = repechage(flagged, labels, {0}, {0: 5.0, 1: 6.0, 10: 4.0, 11: 4.5}, q=0.0)
    assert 0 in out.clusters
    assert out.dropped == (1,)


def test_repechage_ignores_noise_points():
    flagged = {0, 1, 2}
    labels = {0: 0, 1: 0, 2: -1}
    out = repechage(flagged, labels, {0, 2}, {0: 5.0, 1: 6.0, 2: 9.0}, q=0.0)
    assert out.clusters[0].members == (0, 1)


def test_repechage_rejects_bad_quantile():
    with pytest.raises(DomainError):
        repechage({0}, {0: 0}, {0}, {0: 1.0}, q=1.5)


# -- injection -----------------------------------------------------------------


def test_injection_finds_reference_points_inside_test_blob():
    rng = np.random.default_rng(10)
    blob_center = np.array([0.5, 0.5])
    ref_bg = rng.uniform(size=(150, 2))
    ref_in_blob = rng.normal(scale=0.01, size=(5, 2)) + blob_center
    ref = Dataset(np.vstack([ref_bg, ref_in_blob]), Role.REFERENCE)
    test = Dataset(np.vstack([
        rng.uniform(size=(120, 2)),
        rng.normal(scale=0.01, size=(40, 2)) + blob_center,
    ]), Role.TEST)
    injected = inject_background(ref, test, threshold=5.0,
                                 config=EagleEyeConfig(k_max=20))
    planted = set(range(150, 155))
    assert planted <= injected
    # far-away background reference points stay quiet
    assert len(injected - planted) < 10


def test_assign_injected_nearest_cluster_and_threshold():
    clusters = {0: [0, 1], 1: [2, 3]}
    scanned = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]])
    injected_points = np.array([[0.2, 0.1], [10.4, 0.0], [5.5, 0.0], [10.0, 1.0]])
    injected = {0: 9.0, 1: 9.0, 2: 9.0, 3: 3.0}
    out = assign_injected(injected, clusters, {0: 5.0, 1: 5.0},
                          injected_points, scanned)
    assert out[0] == (0, 2)  # id 2 ties between clusters, smaller flagged id wins
    assert out[1] == (1,)    # id 3 is close enough but scores below the bar


def test_assign_injected_skips_noise_and_unthresholded():
    clusters = {0: [0], -1: [1]}
    scanned = np.array([[0.0, 0.0], [10.0, 0.0]])
    injected_points = np.array([[9.9, 0.0]])
    out = assign_injected({0: 99.0}, clusters, {0: 1.0}, injected_points, scanned)
    assert out == {0: ()}


def test_assign_injected_empty_inputs():
    assert assign_injected({}, {0: [0]}, {0: 1.0}, np.zeros((0, 2)),
                           np.zeros((1, 2))) == {0: ()}


# -- estimators ----------------------------------------------------------------


def test_purity_estimate_exact_value():
    # ratio = (1000 - 100) / 900 = 1, purity = (50 - 4) / 50
    got = purity_estimate(50, 4, 1000, 100, 900, 0)
    assert got == pytest.approx(float(Fraction(46, 50)), rel=1e-15)
    skewed = purity_estimate(50, 4, 1000, 0, 800, 0)
    assert skewed == pytest.approx(float(Fraction(50 * 800 - 4 * 1000, 50 * 800)),
                                   rel=1e-14)


def test_s_over_sqrt_b_exact_value():
    got = s_over_sqrt_b_estimate(50, 4, 1000, 100, 900, 0)
    assert got == pytest.approx(46 / 2.0, rel=1e-15)


def test_estimator_error_types():
    with pytest.raises(ZeroAnomaly):
        purity_estimate(0, 1, 10, 0, 10, 0)
    with pytest.raises(DivisionByZero):
        purity_estimate(5, 1, 10, 0, 10, 10)
    with pytest.raises(ZeroBackground):
        s_over_sqrt_b_estimate(5, 0, 10, 0, 10, 0)


# -- the full pipeline ---------------------------------------------------------


@pytest.fixture(scope="module")
def small_run():
    ref, test = blob_pair(seed=20, n_ref=400, n_test=400, blob=60)
    config = EagleEyeConfig(k_max=40, p_ext=1e-3)
    return ref, test, config, run(ref, test, config)


def test_run_report_structure(small_run):
    ref, test, config, result = small_run
    rep = result.reports[Direction.TEST]
    part = result.partitions[Direction.TEST]
    assert len(rep.clusters) >= 1
    for cluster in rep.clusters.values():
        members = set(cluster.members)
        assert members <= part.flagged
        assert 0.0 <= cluster.purity_estimate <= 1.0
        for i in cluster.injected:
            assert 0 <= i < ref.n
    assert part.pruned & part.flagged
    assert part.equalized == frozenset(range(test.n)) - part.pruned


def test_run_totals_are_consistent(small_run):
    _, _, _, result = small_run
    rep = result.reports[Direction.TEST]
    members = set()
    injected = set()
    for cluster in rep.clusters.values():
        members |= set(cluster.members)
        injected |= set(cluster.injected)
    assert rep.totals.anom_count == len(members)
    assert rep.totals.injected_count == len(injected)


def test_run_provenance_fields(small_run):
    ref, test, config, result = small_run
    prov = result.provenance
    assert prov["n_reference"] == ref.n
    assert prov["n_test"] == test.n
    assert prov["dimension"] == ref.dimension
    assert prov["p_hat"] == 0.5
    assert prov["threshold_method"] == "exact"
    assert prov["seed"] == config.seed
    assert prov["runtime_seconds"]["total"] >= 0.0


def test_run_is_deterministic(small_run):
    ref, test, config, result = small_run
    again = run(ref, test, config)
    a = serialize_report(ReportDocument.from_run(result))
    b = serialize_report(ReportDocument.from_run(again))
    assert a == b


def test_run_finds_the_planted_blob(small_run):
    ref, test, _, result = small_run
    rep = result.reports[Direction.TEST]
    planted = set(range(test.n - 60, test.n))
    recovered = set()
    for cluster in rep.clusters.values():
        recovered |= set(cluster.members) & planted
    assert len(recovered) >= 45
    # nothing comparable on the reference side
    assert result.reports[Direction.REFERENCE].totals.anom_count <= 5


def test_run_swapping_samples_mirrors_directions(small_run):
    """Scanning B against A must not depend on which slot holds B."""
    ref, test, config, result = small_run
    swapped = run(Dataset(test.points, Role.REFERENCE),
                  Dataset(ref.points, Role.TEST), config)
    fwd = result.partitions[Direction.TEST]
    mirror = swapped.partitions[Direction.REFERENCE]
    assert fwd.flagged == mirror.flagged
    assert fwd.pruned == mirror.pruned
    fwd_rep = result.reports[Direction.TEST]
    mirror_rep = swapped.reports[Direction.REFERENCE]
    assert fwd_rep.totals.anom_count == mirror_rep.totals.anom_count
    assert fwd_rep.totals.injected_count == mirror_rep.totals.injected_count
    fwd_members = {c.members for c in fwd_rep.clusters.values()}
    mirror_members = {c.members for c in mirror_rep.clusters.values()}
    assert fwd_members == mirror_members


def test_run_without_injection(small_run):
    ref, test, _, _ = small_run
    config = EagleEyeConfig(k_max=40, p_ext=1e-3, run_injection=False)
    result = run(ref, test, config)
    rep = result.reports[Direction.TEST]
    assert rep.totals.injected_count == 0
    for cluster in rep.clusters.values():
        assert cluster.injected == ()
