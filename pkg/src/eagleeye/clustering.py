"""Density-peaks partitioning of flagged points into anomaly candidates.

A deliberately small clusterer: k-NN volume densities, links to the
nearest denser point, saddle-based merging, and a size filter. It runs
behind a narrow interface (points in, label map out) so a fancier method
can be swapped in without touching the pipeline.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .data import ClusteringParams
from .errors import EmptyInput

NOISE = -1

_LINK_CHUNK = 256


@dataclass
class _Partition:
    labels: np.ndarray          # final canonical labels, NOISE for noise
    log_density: np.ndarray
    peak_ids: dict              # label -> id of the densest member


def _priority_rank(log_density: np.ndarray) -> np.ndarray:
    """rank[i] = position in the processing order: density desc, id asc."""
    m = len(log_density)
    order = np.lexsort((np.arange(m), -log_density))
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m)
    return rank


def _nearest_higher(points: np.ndarray, rank: np.ndarray):
    """Distance to, and id of, the nearest point of strictly higher priority.

    Distance ties break to the smaller id. The top-priority point gets
    (inf, -1).
    """
    m = len(points)
    link = np.full(m, -1, dtype=np.int64)
    link_dist = np.full(m, np.inf)
    for s in range(0, m, _LINK_CHUNK):
        e = min(m, s + _LINK_CHUNK)
        d2 = ((points[s:e, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        higher = rank[None, :] < rank[s:e, None]
        d2[~higher] = np.inf
        best = d2.min(axis=1)
        have = np.isfinite(best)
        # first True along axis 1 is the smallest qualifying id
        link[s:e][have] = np.argmax(d2[have] == best[have, None], axis=1)
        link_dist[s:e][have] = np.sqrt(best[have])
    return link_dist, link


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _merge_rounds(seed_labels, log_density, edges, merge_ratio):
    """Iteratively fuse cluster pairs whose saddle beats the merge bar.

    edges is an (n_edges, 2) array of neighbor pairs. A pair of current
    components merges when the best cross edge's min-density (the saddle)
    exceeds merge_ratio times the lower of the two component peak
    densities. Rounds repeat until no pair qualifies.
    """
    n_seeds = seed_labels.max() + 1
    uf = _UnionFind(n_seeds)
    log_ratio = math.log(merge_ratio)
    peak_log = np.full(n_seeds, -np.inf)
    np.maximum.at(peak_log, seed_labels, log_density)

    edge_min = np.minimum(log_density[edges[:, 0]], log_density[edges[:, 1]])
    while True:
        roots = np.fromiter((uf.find(s) for s in range(n_seeds)),
                            dtype=np.int64, count=n_seeds)
        ra = roots[seed_labels[edges[:, 0]]]
        rb = roots[seed_labels[edges[:, 1]]]
        cross = ra != rb
        if not cross.any():
            break
        lo = np.minimum(ra[cross], rb[cross])
        hi = np.maximum(ra[cross], rb[cross])
        saddle = edge_min[cross]
        comp_peak = np.full(n_seeds, -np.inf)
        np.maximum.at(comp_peak, roots, peak_log)
        bar = log_ratio + np.minimum(comp_peak[lo], comp_peak[hi])
        ok = saddle > bar
        if not ok.any():
            break
        for a, b in zip(lo[ok], hi[ok]):
            uf.union(int(a), int(b))
    roots = np.fromiter((uf.find(s) for s in range(n_seeds)),
                        dtype=np.int64, count=n_seeds)
    return roots[seed_labels]


def cluster_flagged(points, params: ClusteringParams | None = None) -> dict:
    """Partition flagged points into clusters; returns {id: label}.

    ids are positions 0..m-1 in the input array and labels are
    consecutive integers ordered by each cluster's smallest member id,
    with -1 marking noise (clusters below min_cluster_size). Density is
    the inverse k-NN volume 1 / r_k^d; every non-peak point joins the
    cluster of its nearest denser point.
    """
    if params is None:
        params = ClusteringParams()
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise EmptyInput("cluster_flagged requires a non-empty 2-d point array")
    m, dim = pts.shape
    if m == 1:
        return {0: 0 if params.min_cluster_size <= 1 else NOISE}

    k = min(params.k_density, m - 1)
    tree = cKDTree(pts)
    dist, idx = tree.query(pts, k=k + 1)
    r_k = dist[:, k]
    with np.errstate(divide="ignore"):
        log_density = -dim * np.log(r_k)

    rank = _priority_rank(log_density)
    link_dist, link = _nearest_higher(pts, rank)
    is_peak = link_dist > r_k

    order = np.argsort(rank)
    seed_labels = np.full(m, -1, dtype=np.int64)
    n_seeds = 0
    for i in order:
        if is_peak[i]:
            seed_labels[i] = n_seeds
            n_seeds += 1
        else:
            seed_labels[i] = seed_labels[link[i]]

    src = np.repeat(np.arange(m), k)
    dst = idx[:, 1:k + 1].ravel()
    edges = np.column_stack([src, dst])
    merged = _merge_rounds(seed_labels, log_density, edges, params.merge_ratio)

    counts = np.bincount(merged)
    labels = np.where(counts[merged] >= params.min_cluster_size, merged, NOISE)

    # canonical names: order clusters by their smallest member id
    final = np.full(m, NOISE, dtype=np.int64)
    next_label = 0
    seen = {}
    for i in range(m):
        lab = labels[i]
        if lab == NOISE:
            continue
        if lab not in seen:
            seen[lab] = next_label
            next_label += 1
        final[i] = seen[lab]
    return {int(i): int(final[i]) for i in range(m)}
