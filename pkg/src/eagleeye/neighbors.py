"""Exact nearest-neighbor machinery over the stacked reference+test union.

Union ids number the reference rows 0..n_ref-1 and the test rows
n_ref..n_ref+n_test-1. All queries return neighbors ordered by
(distance, union id) ascending, never include an excluded id, and are
exact: the kd-tree is only an accelerator. A truncated tree result is
trustworthy strictly below its last returned distance (every point
closer than that must be present), so rows whose answer would touch the
trailing tie group are re-queried with a wider fetch until the prefix
is provably complete.
"""

import os

import numpy as np
from scipy.spatial import cKDTree

from .data import Dataset, Role
from .errors import KMaxTooLarge, ValidationError

# Extra neighbors fetched beyond the request so boundary ties rarely
# force a second query.
_TIE_PAD = 8
_CHUNK_ROWS = 4096


def worker_count() -> int:
    """Worker cap for neighbor queries; EAGLEEYE_THREADS overrides."""
    env = os.environ.get("EAGLEEYE_THREADS")
    if env is not None:
        try:
            w = int(env)
        except ValueError as exc:
            raise ValidationError(
                f"EAGLEEYE_THREADS must be a positive integer, got {env!r}"
            ) from exc
        if w < 1:
            raise ValidationError(f"EAGLEEYE_THREADS must be a positive integer, got {env!r}")
        return w
    return os.cpu_count() or 1


class UnionIndex:
    """Immutable spatial index over the union of a reference and a test sample.

    Attributes
    ----------
    points : (n, d) float64 array, reference block first.
    labels : (n,) uint8 array, 0 = reference, 1 = test.
    n_reference, n_test : block sizes.
    """

    def __init__(self, reference: Dataset, test: Dataset):
        if reference.dimension != test.dimension:
            raise ValidationError(
                f"dimension mismatch: {reference.dimension} vs {test.dimension}"
            )
        self.points = np.vstack([reference.points, test.points])
        self.n_reference = reference.n
        self.n_test = test.n
        self.n = self.n_reference + self.n_test
        self.dimension = reference.dimension
        self.labels = np.zeros(self.n, dtype=np.uint8)
        self.labels[self.n_reference:] = 1
        self.tree = cKDTree(self.points)
        self._workers = worker_count()

    # -- id conventions --------------------------------------------------

    def union_ids(self, role: Role) -> np.ndarray:
        if role is Role.REFERENCE:
            return np.arange(self.n_reference)
        return np.arange(self.n_reference, self.n)

    def to_local(self, union_ids, role: Role) -> np.ndarray:
        """Union ids -> row ids within the given sample."""
        ids = np.asarray(union_ids)
        return ids if role is Role.REFERENCE else ids - self.n_reference

    def to_union(self, local_ids, role: Role) -> np.ndarray:
        ids = np.asarray(local_ids)
        return ids if role is Role.REFERENCE else ids + self.n_reference

    @property
    def p_hat(self) -> float:
        return self.n_test / self.n

    # -- queries ----------------------------------------------------------

    def _query_one(self, point: np.ndarray, k: int, exclude_id=None,
                   return_distances: bool = False):
        """Exact k neighbors of one point, escalating to a full scan if needed."""
        kq = min(self.n, k + (exclude_id is not None) + _TIE_PAD)
        while True:
            dist, ids = self.tree.query(point, k=kq, workers=self._workers)
            dist = np.atleast_1d(dist)
            ids = np.atleast_1d(ids)
            order = np.lexsort((ids, dist))
            dist, ids = dist[order], ids[order]
            if kq >= self.n:
                good = kq
            else:
                # entries strictly below the truncation distance are complete
                good = int(np.searchsorted(dist, dist[-1], side="left"))
            keep = slice(0, good)
            if exclude_id is not None:
                keep = np.flatnonzero(ids[:good] != exclude_id)
            kept_ids = ids[keep]
            if len(kept_ids) >= k or kq >= self.n:
                if return_distances:
                    return kept_ids[:k], dist[keep][:k]
                return kept_ids[:k]
            kq = min(self.n, kq * 2)

    def query_sorted(self, query_points: np.ndarray, k: int,
                     exclude_ids=None, return_distances: bool = False):
        """Exact k nearest neighbors for each query row.

        exclude_ids, when given, holds one union id per row to drop from
        that row's result (a member point excludes itself). Neighbors
        available are n minus the exclusion; asking for more raises
        KMaxTooLarge. Returns (m, k) int64 ids, plus distances if asked.
        """
        pts = np.atleast_2d(np.asarray(query_points, dtype=np.float64))
        m = pts.shape[0]
        excl = None
        if exclude_ids is not None:
            excl = np.broadcast_to(np.asarray(exclude_ids, dtype=np.int64), (m,))
        available = self.n - (1 if excl is not None else 0)
        if k > available:
            raise KMaxTooLarge(f"requested k={k} exceeds available neighbors {available}")

        out_ids = np.empty((m, k), dtype=np.int64)
        out_dist = np.empty((m, k), dtype=np.float64) if return_distances else None
        kq = min(self.n, k + (1 if excl is not None else 0) + _TIE_PAD)
        for start in range(0, m, _CHUNK_ROWS):
            stop = min(m, start + _CHUNK_ROWS)
            dist, ids = self.tree.query(pts[start:stop], k=kq, workers=self._workers)
            if kq == 1:
                dist, ids = dist[:, None], ids[:, None]
            order = np.lexsort((ids, dist), axis=-1)
            rows = np.arange(stop - start)[:, None]
            dist = np.take_along_axis(dist, order, axis=1)
            ids = np.take_along_axis(ids, order, axis=1)
            if kq >= self.n:
                exact_len = np.full(stop - start, kq)
            else:
                exact_len = (dist < dist[:, -1][:, None]).sum(axis=1)
            if excl is None:
                kept_ids, kept_dist = ids[:, :k], dist[:, :k]
                ok = exact_len >= k
            else:
                mask = ids != excl[start:stop, None]
                # stable argsort floats kept entries to the front in order
                keep_pos = np.argsort(~mask, axis=1, kind="stable")[:, :k]
                kept_ids = np.take_along_axis(ids, keep_pos, axis=1)
                kept_dist = np.take_along_axis(dist, keep_pos, axis=1)
                ok = (mask.sum(axis=1) >= k) & (keep_pos[:, -1] < exact_len)
            out_ids[start:stop] = kept_ids
            if return_distances:
                out_dist[start:stop] = kept_dist
            for i in np.flatnonzero(~ok):
                e = None if excl is None else excl[start + i]
                if return_distances:
                    rid, rdist = self._query_one(pts[start + i], k, e, return_distances=True)
                    out_ids[start + i], out_dist[start + i] = rid, rdist
                else:
                    out_ids[start + i] = self._query_one(pts[start + i], k, e)
        if return_distances:
            return out_ids, out_dist
        return out_ids

    def member_neighbor_ids(self, union_ids, k: int, return_distances: bool = False):
        """Neighbors of member points, each excluding itself."""
        uids = np.asarray(union_ids, dtype=np.int64)
        return self.query_sorted(self.points[uids], k, exclude_ids=uids,
                                 return_distances=return_distances)

    def neighbor_ids_masked(self, union_id: int, k: int, active: np.ndarray) -> np.ndarray:
        """First k active neighbors of a member point, self excluded.

        active is a boolean visibility mask over union ids; the entry for
        the query point itself is ignored. Exact but unaccelerated; meant
        for reference oracles and small-scale rescoring.
        """
        avail = int(active.sum()) - (1 if active[union_id] else 0)
        if k > avail:
            raise KMaxTooLarge(f"requested k={k} exceeds active neighbors {avail}")
        fetch = min(self.n, k + _TIE_PAD)
        while True:
            ids = self._query_one(self.points[union_id], fetch, union_id)
            keep = ids[active[ids]]
            if len(keep) >= k or fetch >= self.n:
                return keep[:k]
            fetch = min(self.n, fetch * 2)


def build_union_index(reference: Dataset, test: Dataset) -> UnionIndex:
    """Build the exact k-NN index over the stacked union, reference block first."""
    if reference.role is not Role.REFERENCE or test.role is not Role.TEST:
        raise ValidationError("build_union_index expects (reference, test) roles in that order")
    return UnionIndex(reference, test)


def membership_sequence(index: UnionIndex, query_point: np.ndarray,
                        exclude_id: int | None, k_max: int,
                        query_label: int) -> np.ndarray:
    """Binary same-label sequence over a point's k_max nearest neighbors.

    Entry k is 1 when the (k+1)-th nearest neighbor of query_point
    (excluding exclude_id, ordered by distance then union id) carries
    query_label. query_point is a coordinate vector, so non-member
    probes are allowed by leaving exclude_id unset.
    """
    if query_label not in (0, 1):
        raise ValidationError(f"query_label must be 0 or 1, got {query_label}")
    point = np.asarray(query_point, dtype=np.float64).reshape(1, -1)
    if point.shape[1] != index.dimension:
        raise ValidationError(
            f"query point has dimension {point.shape[1]}, index has {index.dimension}"
        )
    excl = None if exclude_id is None else np.asarray([exclude_id])
    ids = index.query_sorted(point, k_max, exclude_ids=excl)[0]
    return (index.labels[ids] == query_label).astype(np.uint8)
