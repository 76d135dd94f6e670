"""Binomial scan statistics over neighbor-membership sequences.

The anomaly score of a point is Upsilon = max over K <= k_max of
-ln P[Binomial(K, p) >= B(K)], where B(K) counts same-label points among
its K nearest union neighbors. Everything here is natural-log based and
shares one tail-probability table so scores, exact thresholds, and
simulated nulls can never drift apart numerically.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .data import Direction, EagleEyeConfig, Role
from .errors import (
    DomainError,
    EmptySample,
    KMaxTooLarge,
    UnreachableExtremeness,
    ValidationError,
)
from .neighbors import UnionIndex

# Below this value the regularized incomplete beta is close enough to the
# double-precision floor that we switch to explicit log-space summation.
_BETAINC_FLOOR = 1e-280
_PROFILE_CHUNK = 4096
_MC_BATCH_ROWS = 8192


def _check_bernoulli_p(p_success: float):
    if not 0.0 < p_success < 1.0:
        raise DomainError(f"p_success must be in (0, 1), got {p_success}")


def log_binomial_tail(b_obs: int, k: int, p_success: float) -> float:
    """Natural log of P[Binomial(k, p_success) >= b_obs].

    Uses the regularized incomplete beta identity for the bulk and an
    explicit log-space term summation once the beta value underflows,
    keeping relative error on the p-value itself around 1e-12 even for
    p-values near 1e-300.
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if not 0 <= b_obs <= k:
        raise DomainError(f"b_obs must be in [0, {k}], got {b_obs}")
    _check_bernoulli_p(p_success)
    if b_obs == 0:
        return 0.0
    val = special.betainc(b_obs, k - b_obs + 1, p_success)
    if val > _BETAINC_FLOOR:
        return float(np.log(val))
    # deep tail: sum C(k,j) p^j q^(k-j) from j = b_obs upward in log space;
    # terms decay geometrically here, so the loop exits quickly
    ln_p = math.log(p_success)
    ln_q = math.log1p(-p_success)
    lgk = math.lgamma(k + 1)

    def log_term(j):
        return (lgk - math.lgamma(j + 1) - math.lgamma(k - j + 1)
                + j * ln_p + (k - j) * ln_q)

    total = log_term(b_obs)
    for j in range(b_obs + 1, k + 1):
        t = log_term(j)
        if t < total - 40.0:
            break
        total = np.logaddexp(total, t)
    return float(total)


def binomial_tail_pvalue(b_obs: int, k: int, p_success: float) -> float:
    """Right-tail binomial p-value P[Binomial(k, p_success) >= b_obs]."""
    return float(math.exp(log_binomial_tail(b_obs, k, p_success)))


class TailTable:
    """-ln P[Binomial(K, p) >= b] on the grid 0 <= b <= K <= k_max.

    Built bottom-up with the conditioning recurrence
    P[K, b] = p * P[K-1, b-1] + (1-p) * P[K-1, b]
    carried out entirely in log space. One table serves per-point
    profiles, the boundary-crossing recursion, and null simulation, so
    all three see bit-identical tail values. Entries above the diagonal
    (b > K) are +inf.
    """

    def __init__(self, k_max: int, p_success: float):
        if k_max < 1:
            raise DomainError(f"k_max must be >= 1, got {k_max}")
        _check_bernoulli_p(p_success)
        self.k_max = int(k_max)
        self.p_success = float(p_success)
        ln_p = math.log(p_success)
        ln_q = math.log1p(-p_success)
        log_tail = np.full((k_max + 1, k_max + 1), -np.inf)
        log_tail[:, 0] = 0.0
        for K in range(1, k_max + 1):
            log_tail[K, 1:K + 1] = np.logaddexp(
                ln_p + log_tail[K - 1, 0:K],
                ln_q + log_tail[K - 1, 1:K + 1],
            )
        self.neg_log = -log_tail
        self._ranks = np.arange(1, k_max + 1)

    @property
    def max_score(self) -> float:
        """Largest achievable score: the all-same-label sequence."""
        return float(self.neg_log[self.k_max, self.k_max])

    def neg_log_pvalue(self, b_obs, k):
        return self.neg_log[k, b_obs]

    def profile_from_counts(self, counts: np.ndarray) -> np.ndarray:
        """Score profile for cumulative counts B(K), K = 1..k_max (last axis)."""
        counts = np.asarray(counts)
        if counts.shape[-1] != self.k_max:
            raise DomainError(
                f"counts last axis must have length k_max={self.k_max}, got {counts.shape[-1]}"
            )
        return self.neg_log[self._ranks, counts]


def upsilon_profile(b, p_success: float, table: TailTable | None = None):
    """Score profile of one membership sequence.

    Returns (upsilon, k_star, profile): profile[K-1] is the negative log
    tail p-value of the first K entries, upsilon its maximum, and k_star
    the smallest rank attaining it. Passing a prebuilt TailTable avoids
    the O(k_max^2) table construction on repeated calls.
    """
    seq = np.asarray(b)
    if seq.ndim != 1 or seq.size == 0:
        raise DomainError("membership sequence must be a non-empty 1-d array")
    if not np.isin(seq, (0, 1)).all():
        raise DomainError("membership sequence entries must be 0 or 1")
    if table is None:
        table = TailTable(seq.size, p_success)
    elif table.k_max != seq.size or table.p_success != p_success:
        raise DomainError("table does not match (len(b), p_success)")
    counts = np.cumsum(seq.astype(np.int64))
    profile = table.profile_from_counts(counts)
    k_star = int(np.argmax(profile)) + 1
    return float(profile[k_star - 1]), k_star, profile


@dataclass(frozen=True)
class ScoreRecord:
    """Per-point score: Upsilon, its argmax rank, and the count curve."""

    point_id: int
    upsilon: float
    k_star: int
    b_counts: np.ndarray


class ScoreSet(Sequence):
    """Array-backed sequence of ScoreRecord for one scan direction.

    point_ids are row ids within the scanned sample. The bulk arrays
    (upsilon, k_star, b_counts) are exposed directly for vectorized use.
    """

    def __init__(self, direction: Direction, p_success: float,
                 point_ids: np.ndarray, upsilon: np.ndarray,
                 k_star: np.ndarray, b_counts: np.ndarray):
        self.direction = direction
        self.p_success = p_success
        self.point_ids = point_ids
        self.upsilon = upsilon
        self.k_star = k_star
        self.b_counts = b_counts

    def __len__(self):
        return len(self.point_ids)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return ScoreSet(self.direction, self.p_success, self.point_ids[i],
                            self.upsilon[i], self.k_star[i], self.b_counts[i])
        return ScoreRecord(int(self.point_ids[i]), float(self.upsilon[i]),
                           int(self.k_star[i]), self.b_counts[i])

    def upsilon_by_id(self) -> dict:
        return {int(i): float(u) for i, u in zip(self.point_ids, self.upsilon)}


def counts_dtype(k_max: int):
    return np.int16 if k_max < 2 ** 15 else np.int32


def upsilons_from_counts(table: TailTable, counts: np.ndarray):
    """Vectorized (upsilon, k_star) over rows of cumulative counts."""
    m = counts.shape[0]
    ups = np.empty(m)
    k_star = np.empty(m, dtype=np.int32)
    for s in range(0, m, _PROFILE_CHUNK):
        e = min(m, s + _PROFILE_CHUNK)
        prof = table.profile_from_counts(counts[s:e])
        idx = np.argmax(prof, axis=1)
        k_star[s:e] = idx + 1
        ups[s:e] = prof[np.arange(e - s), idx]
    return ups, k_star


def _normalize_scan(scan) -> Direction:
    if isinstance(scan, Direction):
        return scan
    key = str(scan).lower()
    if key in ("test", "testscan", "testoverdensity"):
        return Direction.TEST
    if key in ("reference", "referencescan", "referenceoverdensity"):
        return Direction.REFERENCE
    raise ValidationError(f"unknown scan direction {scan!r}")


def scan_p_success(index: UnionIndex, scan: Direction) -> float:
    return index.p_hat if scan is Direction.TEST else 1.0 - index.p_hat


def score_all(index: UnionIndex, scan, config: EagleEyeConfig,
              active_mask=None, table: TailTable | None = None) -> ScoreSet:
    """Score every point of the scanned sample against the union.

    scan selects which sample is searched for overdensities; its points
    are scored with success probability p_hat (test scan) or 1 - p_hat
    (reference scan). active_mask, when given, is a boolean array over
    union ids restricting which points are visible as neighbors; scanned
    points outside the mask are not scored. The masked path re-queries
    point by point and is meant for oracles and small inputs.
    """
    scan = _normalize_scan(scan)
    role = Role.TEST if scan is Direction.TEST else Role.REFERENCE
    k_max = config.k_max
    p = scan_p_success(index, scan)
    if table is None:
        table = TailTable(k_max, p)
    query_label = 1 if scan is Direction.TEST else 0
    uids = index.union_ids(role)

    if active_mask is None:
        if k_max > index.n - 1:
            raise KMaxTooLarge(f"k_max={k_max} exceeds available neighbors {index.n - 1}")
        rows = index.member_neighbor_ids(uids, k_max)
        labels = (index.labels[rows] == query_label)
        counts = np.cumsum(labels, axis=1, dtype=np.int32)
    else:
        mask = np.asarray(active_mask, dtype=bool)
        if mask.shape != (index.n,):
            raise ValidationError("active_mask must be a boolean array over union ids")
        uids = uids[mask[uids]]
        if k_max > int(mask.sum()) - 1:
            raise KMaxTooLarge(f"k_max={k_max} exceeds active neighbors {int(mask.sum()) - 1}")
        counts = np.empty((len(uids), k_max), dtype=np.int32)
        for i, uid in enumerate(uids):
            ids = index.neighbor_ids_masked(int(uid), k_max, mask)
            counts[i] = np.cumsum(index.labels[ids] == query_label)

    ups, k_star = upsilons_from_counts(table, counts)
    return ScoreSet(scan, p, index.to_local(uids, role),
                    ups, k_star, counts.astype(counts_dtype(k_max)))


# -- null thresholds ------------------------------------------------------


@dataclass(frozen=True)
class NullModel:
    """A critical score threshold under the Bernoulli null.

    exceedance_probability is P[max_K Upsilon(K) >= threshold]: exact for
    the dynamic program, empirical for Monte Carlo. standard_error is a
    rank-bracketing estimate of quantile noise (Monte Carlo only).
    """

    k_max: int
    p_success: float
    p_ext: float
    threshold: float
    method: str
    mc_sample_count: int
    exceedance_probability: float
    standard_error: float | None = None


def crossing_probability(table: TailTable, t: float) -> float:
    """Exact P[max_K -ln pval(S_K, K) >= t] for a Bernoulli(p) walk S_K.

    Dynamic program over (K, S_K) with the absorbing boundary
    b*(K) = min{b : -ln pval(b, K) >= t}; absorbed mass is summed and
    removed so each state's probability counts only paths that never
    crossed before.
    """
    k_max, p = table.k_max, table.p_success
    q = 1.0 - p
    neg = table.neg_log
    crossed = 0.0
    alive = np.array([1.0])
    for K in range(1, k_max + 1):
        nxt = np.empty(K + 1)
        nxt[0] = alive[0] * q
        nxt[K] = alive[K - 1] * p
        if K > 1:
            nxt[1:K] = alive[1:K] * q + alive[0:K - 1] * p
        boundary = int(np.searchsorted(neg[K, :K + 1], t, side="left"))
        if boundary <= K:
            crossed += nxt[boundary:].sum()
            nxt[boundary:] = 0.0
        alive = nxt
    return float(crossed)


def achievable_scores(table: TailTable) -> np.ndarray:
    """Sorted distinct values of -ln pval(b, K) over 0 <= b <= K <= k_max."""
    k = table.k_max
    rows, cols = np.tril_indices(k + 1)
    vals = table.neg_log[rows, cols]
    return np.unique(vals[np.isfinite(vals)])


def _exact_threshold(table: TailTable, p_ext: float):
    candidates = achievable_scores(table)
    top_prob = crossing_probability(table, candidates[-1])
    if top_prob > p_ext:
        raise UnreachableExtremeness(
            f"no achievable score is rare enough: the most extreme score "
            f"{candidates[-1]:.6g} has null probability {top_prob:.6g} > p_ext={p_ext:.6g} "
            f"(k_max={table.k_max}, p_success={table.p_success:.6g})",
            max_achievable_probability=top_prob,
        )
    lo, hi = 0, len(candidates) - 1
    # invariant: crossing(candidates[hi]) <= p_ext; candidates[lo] untested or violating
    while lo < hi:
        mid = (lo + hi) // 2
        if crossing_probability(table, candidates[mid]) <= p_ext:
            hi = mid
        else:
            lo = mid + 1
    return float(candidates[hi]), crossing_probability(table, candidates[hi])


def simulate_null_scores(k_max: int, p_success: float, n_sequences: int,
                         seed: int, table: TailTable | None = None) -> np.ndarray:
    """Max scores of simulated Bernoulli membership sequences.

    Counter-based generator (Philox) keyed by seed; results do not depend
    on batching, so a given (k_max, p, n, seed) always yields the same
    sample in the same order.
    """
    if n_sequences < 1:
        raise DomainError(f"n_sequences must be >= 1, got {n_sequences}")
    if table is None:
        table = TailTable(k_max, p_success)
    rng = np.random.Generator(np.random.Philox(seed))
    out = np.empty(n_sequences)
    for s in range(0, n_sequences, _MC_BATCH_ROWS):
        e = min(n_sequences, s + _MC_BATCH_ROWS)
        draws = rng.random((e - s, k_max)) < p_success
        counts = np.cumsum(draws, axis=1, dtype=np.int32)
        out[s:e] = table.profile_from_counts(counts).max(axis=1)
    return out


def _smallest_value_with_count_at_most(sorted_scores: np.ndarray, m: int):
    """Smallest observed value whose exceedance count is <= m, or None."""
    n = len(sorted_scores)
    uniq = np.unique(sorted_scores)
    counts_ge = n - np.searchsorted(sorted_scores, uniq, side="left")
    idx = np.searchsorted(-counts_ge, -m, side="left")
    if idx >= len(uniq):
        return None, None
    return float(uniq[idx]), int(counts_ge[idx])


def _mc_threshold(table: TailTable, p_ext: float, n_sequences: int, seed: int):
    m = math.floor(n_sequences * p_ext)
    if m < 1:
        raise ValidationError(
            f"n_null_sequences={n_sequences} cannot resolve p_ext={p_ext}; "
            f"need at least {math.ceil(1.0 / p_ext)} sequences"
        )
    scores = np.sort(simulate_null_scores(table.k_max, table.p_success,
                                          n_sequences, seed, table))
    threshold, count = _smallest_value_with_count_at_most(scores, m)
    if threshold is None:
        raise UnreachableExtremeness(
            f"no simulated score is rare enough for p_ext={p_ext:.6g}",
            max_achievable_probability=1.0,
        )
    # 3-sigma rank bracket around the target exceedance count
    z = math.ceil(3.0 * math.sqrt(n_sequences * p_ext * (1.0 - p_ext)))
    lo_thr, _ = _smallest_value_with_count_at_most(scores, m + z)
    hi_thr, _ = _smallest_value_with_count_at_most(scores, max(m - z, 1))
    if hi_thr is None:
        hi_thr = float(scores[-1])
    se = (hi_thr - lo_thr) / 6.0
    return threshold, count / n_sequences, se


def null_threshold(k_max: int, p_success: float, p_ext: float,
                   method: str = "exact", seed: int = 0,
                   n_null_sequences: int = 1_000_000,
                   table: TailTable | None = None) -> NullModel:
    """Critical score threshold with null exceedance probability <= p_ext.

    "exact" runs the boundary-crossing dynamic program over all
    achievable score values and returns the smallest one whose crossing
    probability is within p_ext (the next smaller achievable value
    violates the bound). "mc" simulates n_null_sequences membership
    sequences and returns the empirical (1 - p_ext)-quantile, taken as
    the smallest observed score whose empirical exceedance is <= p_ext
    so that both methods estimate the same population quantity.
    """
    if not 0.0 < p_ext < 1.0:
        raise DomainError(f"p_ext must be in (0, 1), got {p_ext}")
    if table is None:
        table = TailTable(k_max, p_success)
    elif table.k_max != k_max or table.p_success != p_success:
        raise DomainError("table does not match (k_max, p_success)")
    if method == "exact":
        threshold, xprob = _exact_threshold(table, p_ext)
        return NullModel(k_max, p_success, p_ext, threshold, "exact", 0, xprob)
    if method == "mc":
        threshold, xprob, se = _mc_threshold(table, p_ext, n_null_sequences, seed)
        return NullModel(k_max, p_success, p_ext, threshold, "mc",
                         n_null_sequences, xprob, se)
    raise ValidationError(f"threshold method must be 'exact' or 'mc', got {method!r}")


# -- global distribution tests ---------------------------------------------


@dataclass(frozen=True)
class TwoSampleTests:
    ks_statistic: float
    ks_pvalue: float
    cvm_statistic: float
    cvm_pvalue: float


def _cvm_counts(count_a: np.ndarray, count_b: np.ndarray, n: int, m: int) -> float:
    """Discrete Cramer-von Mises statistic from per-atom sample counts."""
    f_a = np.cumsum(count_a) / n
    f_b = np.cumsum(count_b) / m
    h = (count_a + count_b) / (n + m)
    return n * m / (n + m) * float(((f_a - f_b) ** 2 * h).sum())


def two_sample_tests(upsilons_a, upsilons_b, n_permutations: int = 999,
                     seed: int = 0) -> TwoSampleTests:
    """Two-sample Kolmogorov-Smirnov and Cramer-von Mises comparisons.

    Score distributions are heavily tied (the achievable values form a
    finite set), which breaks the rank-based asymptotics of the usual
    two-sample Cramer-von Mises formula outright. The CvM statistic here
    is therefore the discrete form, an integral of the squared ECDF
    difference against the pooled ECDF, with its p-value taken from
    label permutations drawn atom by atom (hypergeometric splits of the
    pooled counts). The KS p-value stays asymptotic; its statistic is a
    plain ECDF supremum and tolerates ties.
    """
    a = np.asarray(upsilons_a, dtype=np.float64).ravel()
    b = np.asarray(upsilons_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySample("two_sample_tests requires two non-empty samples")
    ks = stats.ks_2samp(a, b, method="asymp")

    n, m = a.size, b.size
    _, inverse = np.unique(np.concatenate([a, b]), return_inverse=True)
    atoms = inverse.max() + 1
    count_a = np.bincount(inverse[:n], minlength=atoms)
    count_b = np.bincount(inverse[n:], minlength=atoms)
    t_obs = _cvm_counts(count_a, count_b, n, m)

    pooled = count_a + count_b
    rng = np.random.Generator(np.random.Philox(seed))
    left = np.full(n_permutations, n, dtype=np.int64)
    unassigned = n + m
    perm_a = np.empty((n_permutations, atoms), dtype=np.int64)
    for j, c in enumerate(pooled):
        if c:
            draw = rng.hypergeometric(left, unassigned - left, c)
        else:
            draw = np.zeros(n_permutations, dtype=np.int64)
        perm_a[:, j] = draw
        left = left - draw
        unassigned -= c
    f_a = np.cumsum(perm_a, axis=1) / n
    f_b = np.cumsum(pooled[None, :] - perm_a, axis=1) / m
    h = pooled / (n + m)
    t_perm = n * m / (n + m) * ((f_a - f_b) ** 2 * h[None, :]).sum(axis=1)
    cvm_pvalue = (1 + int((t_perm >= t_obs).sum())) / (n_permutations + 1)
    return TwoSampleTests(float(ks.statistic), float(ks.pvalue),
                          float(t_obs), float(cvm_pvalue))
