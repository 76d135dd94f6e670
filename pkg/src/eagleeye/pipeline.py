"""End-to-end detection: flag, equalize, cluster, repechage, inject, estimate.

Both scan directions share one union index and one set of cached neighbor
rows. Equalization is incremental: after each removal only points whose
score window touched the removed set are rescored, with a full-rescan
twin (ide_prune_rescan) kept around to validate that machinery.
"""

import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .clustering import NOISE, cluster_flagged
from .data import ClusteringParams, Dataset, Direction, EagleEyeConfig, Role, validate
from .errors import (
    DivisionByZero,
    DomainError,
    KMaxTooLarge,
    NonTermination,
    ZeroAnomaly,
    ZeroBackground,
)
from .neighbors import UnionIndex, build_union_index, worker_count
from .scoring import (
    NullModel,
    ScoreSet,
    TailTable,
    counts_dtype,
    null_threshold,
    scan_p_success,
    upsilons_from_counts,
)

# cached neighbor rows run this far past k_max so a few removals near a
# point do not force an immediate re-query
_CACHE_PAD = 64
# relative slack when comparing kd-tree distances against recomputed radii
_RADIUS_SLACK = 1.0 + 1e-12


def _scan_role(direction: Direction) -> Role:
    return Role.TEST if direction is Direction.TEST else Role.REFERENCE


def _query_label(direction: Direction) -> int:
    return 1 if direction is Direction.TEST else 0


@dataclass(frozen=True)
class PartitionResult:
    """Per-direction split of the scanned sample after equalization."""

    direction: Direction
    threshold: float
    flagged: frozenset
    pruned: frozenset
    equalized: frozenset


def flag(scores, threshold: float) -> set:
    """ids of scored points with upsilon >= threshold."""
    if isinstance(scores, ScoreSet):
        return {int(i) for i in scores.point_ids[scores.upsilon >= threshold]}
    return {int(r.point_id) for r in scores if r.upsilon >= threshold}


def _direction_scores(index: UnionIndex, direction: Direction,
                      config: EagleEyeConfig, table: TailTable,
                      rows: np.ndarray) -> ScoreSet:
    """ScoreSet for one direction from cached neighbor rows."""
    k = config.k_max
    role = _scan_role(direction)
    uids = index.union_ids(role)
    same = index.labels[rows[:, :k]] == _query_label(direction)
    counts = np.cumsum(same, axis=1, dtype=np.int32)
    ups, k_star = upsilons_from_counts(table, counts)
    return ScoreSet(direction, table.p_success, index.to_local(uids, role),
                    ups, k_star, counts.astype(counts_dtype(k)))


# -- iterative density equalization ----------------------------------------


class _EqualizationEngine:
    """Incremental removal loop over one scan direction.

    Keeps per-point neighbor id rows (distance-ordered, self excluded)
    from one big initial query. After removing a batch, points whose
    current score radius reaches the removed set are rescored from their
    cached rows; rows that run out of active entries are re-fetched from
    the tree and kept in an override map.
    """

    def __init__(self, index, direction, threshold, config, table, rows, initial):
        self.index = index
        self.direction = direction
        self.threshold = threshold
        self.k_max = config.k_max
        self.table = table
        self.rows = rows
        self.label = _query_label(direction)
        role = _scan_role(direction)
        self.uids = index.union_ids(role)
        self.offset = int(self.uids[0])
        self.scan_points = index.points[self.uids]
        m = len(self.uids)
        self.m = m
        self.active_union = np.ones(index.n, dtype=bool)
        self.active_local = np.ones(m, dtype=bool)
        self.ups = initial.upsilon.copy()
        self.overrides = {}
        # distance to the k_max-th neighbor, maintained for active points
        nbr = index.points[rows[:, self.k_max - 1]]
        self.radius = np.linalg.norm(self.scan_points - nbr, axis=1)
        self.rescored = 0

    def _active_prefix(self, j: int, need: int) -> np.ndarray:
        """First `need` active neighbors of local point j, re-fetching when
        the cached row is exhausted."""
        row = self.overrides.get(j)
        if row is None:
            row = self.rows[j]
        keep = row[self.active_union[row]]
        if len(keep) >= need:
            return keep[:need]
        avail = int(self.active_union.sum()) - 1
        if need > avail:
            raise KMaxTooLarge(
                f"k_max={self.k_max} exceeds surviving union size {avail} during equalization"
            )
        fetch = min(need + _CACHE_PAD, avail)
        fresh = self.index.neighbor_ids_masked(int(self.uids[j]), fetch,
                                               self.active_union)
        self.overrides[j] = fresh
        return fresh[:need]

    def _rescore(self, j: int):
        ids = self._active_prefix(j, self.k_max)
        counts = np.cumsum(self.index.labels[ids] == self.label)
        profile = self.table.profile_from_counts(counts)
        self.ups[j] = profile.max()
        self.radius[j] = np.linalg.norm(self.scan_points[j]
                                        - self.index.points[ids[-1]])
        self.rescored += 1

    def _removal_batch(self, j: int) -> np.ndarray:
        """j plus the same-set prefix of its active neighbor list (capped)."""
        avail = int(self.active_union.sum()) - 1
        want = min(self.k_max, avail)
        ids = self._active_prefix(j, want) if want > 0 else np.empty(0, np.int64)
        same = self.index.labels[ids] == self.label
        stop = int(np.argmin(same)) if not same.all() else len(same)
        return np.concatenate(([self.uids[j]], ids[:stop]))

    def run(self):
        iterations = 0
        while True:
            j = int(np.argmax(self.ups))
            if self.ups[j] < self.threshold:
                break
            iterations += 1
            if iterations > self.m:
                raise NonTermination(
                    f"equalization exceeded {self.m} iterations; removal is not progressing"
                )
            batch = self._removal_batch(j)
            local = batch - self.offset
            self.active_union[batch] = False
            self.active_local[local] = False
            self.ups[local] = -np.inf
            # points whose score window can reach the removed batch
            removed_tree = cKDTree(self.index.points[batch])
            cand = np.flatnonzero(self.active_local)
            dmin, _ = removed_tree.query(self.scan_points[cand], k=1)
            for c in cand[dmin <= self.radius[cand] * _RADIUS_SLACK]:
                self._rescore(int(c))
        pruned = frozenset(int(i) for i in np.flatnonzero(~self.active_local))
        return pruned, iterations


def _equalize(index, direction, threshold, config, table, rows, initial):
    engine = _EqualizationEngine(index, direction, threshold, config, table,
                                 rows, initial)
    pruned, iterations = engine.run()
    all_ids = frozenset(range(engine.m))
    part = PartitionResult(direction, float(threshold),
                           frozenset(flag(initial, threshold)),
                           pruned, all_ids - pruned)
    return part, {"iterations": iterations, "rescored": engine.rescored}


def ide_prune(reference: Dataset, test: Dataset, direction,
              threshold: float, config: EagleEyeConfig) -> PartitionResult:
    """Iterative density equalization for one scan direction.

    Repeatedly removes the highest-scoring active point together with the
    run of same-sample neighbors preceding its first other-sample
    neighbor (at most k_max of them), rescoring what the removal touched,
    until every surviving score sits below the threshold. The flagged set
    in the result is computed on the original, unpruned configuration.
    """
    direction = Direction(direction)
    index = build_union_index(reference, test)
    k_cache = min(config.k_max + _CACHE_PAD, index.n - 1)
    if config.k_max > index.n - 1:
        raise KMaxTooLarge(f"k_max={config.k_max} exceeds available neighbors {index.n - 1}")
    uids = index.union_ids(_scan_role(direction))
    rows = index.member_neighbor_ids(uids, k_cache)
    table = TailTable(config.k_max, scan_p_success(index, direction))
    initial = _direction_scores(index, direction, config, table, rows)
    part, _ = _equalize(index, direction, threshold, config, table, rows, initial)
    return part


def ide_prune_rescan(reference: Dataset, test: Dataset, direction,
                     threshold: float, config: EagleEyeConfig) -> PartitionResult:
    """Equalization by brute force: rebuild the index and rescore every
    active point after each removal. Quadratic; kept as the validation
    twin for ide_prune, which must match it exactly.
    """
    direction = Direction(direction)
    scan_role = _scan_role(direction)
    label = _query_label(direction)
    ref_pts, test_pts = reference.points, test.points
    active_ref = np.ones(reference.n, dtype=bool)
    active_test = np.ones(test.n, dtype=bool)
    active_scan = active_test if scan_role is Role.TEST else active_ref
    # success probability stays frozen at the original sample sizes
    p0 = test.n / (reference.n + test.n)
    table = TailTable(config.k_max,
                      p0 if direction is Direction.TEST else 1.0 - p0)

    def rebuild():
        sub_ref = Dataset(ref_pts[active_ref], Role.REFERENCE)
        sub_test = Dataset(test_pts[active_test], Role.TEST)
        idx = build_union_index(sub_ref, sub_test)
        # positions of surviving scanned points in the original sample
        back = np.flatnonzero(active_scan)
        return idx, back

    def score_active(idx):
        if config.k_max > idx.n - 1:
            raise KMaxTooLarge(
                f"k_max={config.k_max} exceeds surviving union size {idx.n - 1} during equalization"
            )
        uids = idx.union_ids(scan_role)
        rows = idx.member_neighbor_ids(uids, config.k_max)
        counts = np.cumsum(idx.labels[rows] == label, axis=1, dtype=np.int32)
        ups, _ = upsilons_from_counts(table, counts)
        return ups

    index, back = rebuild()
    flagged = None
    ups = score_active(index)
    iterations = 0
    n_scan = len(back)
    while True:
        if flagged is None:
            flagged = frozenset(int(i) for i in back[ups >= threshold])
        j = int(np.argmax(ups))
        if ups[j] < threshold:
            break
        iterations += 1
        if iterations > n_scan:
            raise NonTermination("equalization is not progressing")
        uids = index.union_ids(scan_role)
        avail = index.n - 1
        want = min(config.k_max, avail)
        nbrs = index.query_sorted(index.points[uids[j]][None, :], want,
                                  exclude_ids=[uids[j]])[0]
        same = index.labels[nbrs] == label
        stop = int(np.argmin(same)) if not same.all() else len(same)
        removal_local = np.concatenate(([j], index.to_local(nbrs[:stop], scan_role)))
        original = back[removal_local]
        active_scan[original] = False
        index, back = rebuild()
        ups = score_active(index)

    pruned = frozenset(int(i) for i in np.flatnonzero(~active_scan))
    m = len(active_scan)
    return PartitionResult(direction, float(threshold), flagged, pruned,
                           frozenset(range(m)) - pruned)


# -- repechage ---------------------------------------------------------------


@dataclass(frozen=True)
class RepechageCluster:
    threshold: float
    members: tuple


@dataclass(frozen=True)
class RepechageResult:
    """Per-cluster recovery thresholds and member sets.

    clusters maps label -> RepechageCluster; dropped lists labels whose
    clusters had no pruned representative and therefore no quantile.
    """

    clusters: dict
    dropped: tuple


def repechage(flagged, cluster_labels, pruned, scores, q: float) -> RepechageResult:
    """Recover full anomalies from their pruned cores.

    For each cluster of flagged points that intersects the pruned set,
    the recovery threshold is the lower q-quantile of the pruned members'
    original scores, and the cluster's anomaly set is every flagged
    member at or above it. scores may be a ScoreSet or an id -> upsilon
    mapping from the original configuration.
    """
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"q must be in [0, 1], got {q}")
    score_of = scores.upsilon_by_id() if isinstance(scores, ScoreSet) else dict(scores)
    pruned = set(pruned)
    groups = {}
    for i in flagged:
        alpha = cluster_labels.get(i, NOISE)
        if alpha != NOISE:
            groups.setdefault(alpha, []).append(i)
    clusters, dropped = {}, []
    for alpha in sorted(groups):
        members = groups[alpha]
        core = [score_of[i] for i in members if i in pruned]
        if not core:
            dropped.append(alpha)
            continue
        thr = float(np.quantile(core, q, method="lower"))
        kept = tuple(sorted(i for i in members if score_of[i] >= thr))
        clusters[alpha] = RepechageCluster(thr, kept)
    return RepechageResult(clusters, tuple(dropped))


# -- injection ----------------------------------------------------------------


def _injection_upsilons(index, direction, config, table, other_rows):
    """Scores of the non-scanned sample's points played as scanned members.

    Each point keeps its own neighbor row (self excluded) but is counted
    with the scanned sample's label and success probability; p_hat stays
    fixed, so this is a single vectorized pass.
    """
    k = config.k_max
    same = index.labels[other_rows[:, :k]] == _query_label(direction)
    counts = np.cumsum(same, axis=1, dtype=np.int32)
    ups, _ = upsilons_from_counts(table, counts)
    return ups


def inject_background(reference: Dataset, test: Dataset, threshold: float,
                      config: EagleEyeConfig) -> set:
    """Reference points that score as anomalous when treated as test points.

    The returned ids index the reference sample. Used to estimate how
    much plain background an anomaly's neighborhood would capture.
    """
    index = build_union_index(reference, test)
    if config.k_max > index.n - 1:
        raise KMaxTooLarge(f"k_max={config.k_max} exceeds available neighbors {index.n - 1}")
    uids = index.union_ids(Role.REFERENCE)
    rows = index.member_neighbor_ids(uids, config.k_max)
    table = TailTable(config.k_max, index.p_hat)
    ups = _injection_upsilons(index, Direction.TEST, config, table, rows)
    return {int(i) for i in np.flatnonzero(ups >= threshold)}


def assign_injected(injected, clusters, repechage_thresholds,
                    injected_points, scanned_points) -> dict:
    """Attach injected points to clusters and keep the ones above the bar.

    injected maps injecting-sample ids to their injected scores;
    injected_points is that sample's coordinate array. clusters maps
    label -> flagged scanned ids (a NOISE entry is allowed), with
    coordinates looked up in scanned_points. Each injected point goes to
    the cluster of its nearest flagged point (ties to the smaller id) and
    is kept when its score reaches that cluster's repechage threshold;
    points landing on noise or on clusters without thresholds are
    dropped.
    """
    out = {alpha: set() for alpha in repechage_thresholds}
    if not injected or not clusters:
        return {alpha: tuple(sorted(v)) for alpha, v in out.items()}
    flat_ids, flat_alpha = [], []
    for alpha, members in clusters.items():
        for i in members:
            flat_ids.append(i)
            flat_alpha.append(alpha)
    order = np.argsort(flat_ids)
    flat_ids = np.asarray(flat_ids, dtype=np.int64)[order]
    flat_alpha = np.asarray(flat_alpha, dtype=np.int64)[order]
    coords = scanned_points[flat_ids]

    inj_ids = np.array(sorted(injected), dtype=np.int64)
    pts = injected_points[inj_ids]
    for s in range(0, len(inj_ids), 512):
        e = min(len(inj_ids), s + 512)
        d2 = ((pts[s:e, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
        best = d2.min(axis=1)
        pick = np.argmax(d2 == best[:, None], axis=1)  # first hit = smallest id
        for i, p in zip(inj_ids[s:e], pick):
            alpha = int(flat_alpha[p])
            if alpha in repechage_thresholds and injected[int(i)] >= repechage_thresholds[alpha]:
                out[alpha].add(int(i))
    return {alpha: tuple(sorted(v)) for alpha, v in out.items()}


# -- estimators ---------------------------------------------------------------


def _background_ratio(n_test, pruned_test_total, n_ref, pruned_ref_total):
    denom = n_ref - pruned_ref_total
    if denom == 0:
        raise DivisionByZero(
            "background reweighting is undefined: the injecting sample was fully pruned"
        )
    return (n_test - pruned_test_total) / denom


def purity_estimate(anom_count, inj_count, n_test, pruned_test_total,
                    n_ref, pruned_ref_total) -> float:
    """Estimated signal fraction of one anomaly.

    The injected count, reweighted by the ratio of surviving background
    sizes, estimates how many of the anomaly's members are plain
    background. For the reference scan direction, pass the arguments
    with the two samples' roles interchanged.
    """
    if anom_count == 0:
        raise ZeroAnomaly("purity is undefined for an empty anomaly")
    ratio = _background_ratio(n_test, pruned_test_total, n_ref, pruned_ref_total)
    return (anom_count - inj_count * ratio) / anom_count


def s_over_sqrt_b_estimate(anom_count, inj_count, n_test, pruned_test_total,
                           n_ref, pruned_ref_total) -> float:
    """Poisson-style significance: estimated signal over sqrt(background)."""
    ratio = _background_ratio(n_test, pruned_test_total, n_ref, pruned_ref_total)
    background = inj_count * ratio
    if background == 0:
        raise ZeroBackground("significance is undefined with no estimated background")
    return (anom_count - background) / math.sqrt(background)


# -- orchestration ------------------------------------------------------------


@dataclass(frozen=True)
class ClusterReport:
    label: int
    members: tuple
    repechage_threshold: float
    injected: tuple
    purity_estimate: float
    s_over_sqrt_b_estimate: float | None
    quality_flags: tuple


@dataclass(frozen=True)
class AnomalyTotals:
    anom_count: int
    injected_count: int
    purity_estimate: float | None
    s_over_sqrt_b_estimate: float | None
    quality_flags: tuple


@dataclass(frozen=True)
class AnomalyReport:
    direction: Direction
    clusters: dict
    dropped_clusters: tuple
    totals: AnomalyTotals


@dataclass(frozen=True)
class PipelineRun:
    config: EagleEyeConfig
    null_models: dict
    partitions: dict
    reports: dict
    scores: dict
    injected_scores: dict
    provenance: dict


def _empty_report(direction: Direction) -> AnomalyReport:
    totals = AnomalyTotals(0, 0, None, None, ("no_anomalies",))
    return AnomalyReport(direction, {}, (), totals)


def _cluster_statistics(direction, rep, assigned, sizes):
    """Per-cluster and total estimator evaluation for one direction."""
    n_scan, pruned_scan, n_other, pruned_other = sizes
    clusters = {}
    all_members, all_injected = set(), set()
    for alpha, rc in rep.clusters.items():
        inj = assigned.get(alpha, ())
        flags = []
        purity = purity_estimate(len(rc.members), len(inj),
                                 n_scan, pruned_scan, n_other, pruned_other)
        if purity < 0:
            flags.append("negative_purity")
        try:
            sig = s_over_sqrt_b_estimate(len(rc.members), len(inj),
                                         n_scan, pruned_scan, n_other, pruned_other)
        except ZeroBackground:
            sig = None
            flags.append("zero_background")
        clusters[alpha] = ClusterReport(alpha, rc.members, rc.threshold,
                                        tuple(inj), purity, sig, tuple(flags))
        all_members.update(rc.members)
        all_injected.update(inj)
    if not clusters:
        return _empty_report(direction)
    flags = []
    purity = purity_estimate(len(all_members), len(all_injected),
                             n_scan, pruned_scan, n_other, pruned_other)
    if purity < 0:
        flags.append("negative_purity")
    try:
        sig = s_over_sqrt_b_estimate(len(all_members), len(all_injected),
                                     n_scan, pruned_scan, n_other, pruned_other)
    except ZeroBackground:
        sig = None
        flags.append("zero_background")
    totals = AnomalyTotals(len(all_members), len(all_injected), purity, sig,
                           tuple(flags))
    return AnomalyReport(direction, clusters, rep.dropped, totals)


def run(reference: Dataset, test: Dataset, config: EagleEyeConfig) -> PipelineRun:
    """Run both scan directions end to end and collect one immutable result."""
    t0 = time.perf_counter()
    validate(reference, test, config)
    timings = {}
    index = build_union_index(reference, test)
    datasets = {Direction.TEST: test, Direction.REFERENCE: reference}

    k_cache = min(config.k_max + _CACHE_PAD, index.n - 1)
    rows, tables, nulls, scores = {}, {}, {}, {}
    for d in (Direction.TEST, Direction.REFERENCE):
        t = time.perf_counter()
        uids = index.union_ids(_scan_role(d))
        rows[d] = index.member_neighbor_ids(uids, k_cache)
        timings[f"query_{d.value}"] = time.perf_counter() - t
        tables[d] = TailTable(config.k_max, scan_p_success(index, d))
        nulls[d] = null_threshold(config.k_max, tables[d].p_success,
                                  config.p_ext, config.threshold_method,
                                  config.seed, config.n_null_sequences,
                                  table=tables[d])
        t = time.perf_counter()
        scores[d] = _direction_scores(index, d, config, tables[d], rows[d])
        timings[f"score_{d.value}"] = time.perf_counter() - t

    partitions, ide_stats = {}, {}
    for d in (Direction.TEST, Direction.REFERENCE):
        t = time.perf_counter()
        partitions[d], ide_stats[d] = _equalize(index, d, nulls[d].threshold,
                                                config, tables[d], rows[d],
                                                scores[d])
        timings[f"equalize_{d.value}"] = time.perf_counter() - t

    reports, injected_scores = {}, {}
    for d in (Direction.TEST, Direction.REFERENCE):
        other = d.other
        scanned = datasets[d]
        injecting = datasets[other]
        part = partitions[d]
        flagged = sorted(part.flagged)
        if not flagged:
            reports[d] = _empty_report(d)
            injected_scores[d] = {}
            continue

        t = time.perf_counter()
        positional = cluster_flagged(scanned.points[flagged], config.clustering)
        cluster_labels = {flagged[pos]: lab for pos, lab in positional.items()}
        rep = repechage(part.flagged, cluster_labels, part.pruned, scores[d],
                        config.q)
        timings[f"cluster_{d.value}"] = time.perf_counter() - t

        if config.run_injection:
            t = time.perf_counter()
            inj_ups = _injection_upsilons(index, d, config, tables[d], rows[other])
            inj_ids = np.flatnonzero(inj_ups >= part.threshold)
            injected = {int(i): float(inj_ups[i]) for i in inj_ids}
            groups = {}
            for i, alpha in cluster_labels.items():
                groups.setdefault(alpha, []).append(i)
            thresholds = {a: rc.threshold for a, rc in rep.clusters.items()}
            assigned = assign_injected(injected, groups, thresholds,
                                       injecting.points, scanned.points)
            timings[f"inject_{d.value}"] = time.perf_counter() - t
        else:
            injected, assigned = {}, {}
        injected_scores[d] = injected

        sizes = (scanned.n, len(part.pruned),
                 injecting.n, len(partitions[other].pruned))
        reports[d] = _cluster_statistics(d, rep, assigned, sizes)

    timings["total"] = time.perf_counter() - t0
    provenance = {
        "seed": config.seed,
        "threshold_method": config.threshold_method,
        "n_reference": reference.n,
        "n_test": test.n,
        "dimension": reference.dimension,
        "p_hat": index.p_hat,
        "workers": worker_count(),
        "equalization": {d.value: s for d, s in ide_stats.items()},
        "runtime_seconds": {k: round(v, 4) for k, v in timings.items()},
    }
    return PipelineRun(config, nulls, partitions, reports, scores,
                       injected_scores, provenance)
