"""Array-based access to the eagleeye anomaly detection core.

Everything here is marshaling: coerce caller arrays, forward to the
core, and mirror the results in array-friendly containers. Float64
C-contiguous inputs are passed through without copying; other inputs
are converted exactly once. Core errors are re-raised as BindingError
carrying the core's numeric error code (the same codes the command
line uses as exit codes) and message. The core's internal threading is
untouched; the heavy numerics release the interpreter lock inside
numpy and scipy.
"""

from contextlib import contextmanager
from dataclasses import dataclass, fields

import numpy as np

import eagleeye
from eagleeye import ClusteringParams, Dataset, Direction, EagleEyeConfig, Role
from eagleeye.errors import EagleEyeError
from eagleeye.io import REPORT_FORMAT_VERSION, ReportDocument

__all__ = [
    "BindingError",
    "BoundCluster",
    "BoundDirection",
    "BoundReport",
    "BoundThreshold",
    "BoundTotals",
    "detect",
    "null_threshold",
    "score_all",
]

__version__ = "0.1.0"


class BindingError(Exception):
    """A core failure, with the core's numeric error code and message."""

    def __init__(self, code: int, message: str):
        super().__init__(f"[code {code}] {message}")
        self.code = code
        self.message = message


@contextmanager
def _translated():
    try:
        yield
    except EagleEyeError as e:
        raise BindingError(getattr(e, "exit_code", 2), str(e)) from e


def _as_points(name, values):
    """Coerce to a float64 C-contiguous array; no copy when already one."""
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise BindingError(2, f"{name}: not interpretable as a float array: {e}") from e
    return np.ascontiguousarray(arr)


_CONFIG_FIELDS = {f.name for f in fields(EagleEyeConfig)}


def _config_from(options):
    unknown = set(options) - _CONFIG_FIELDS
    if unknown:
        raise BindingError(
            2, f"unknown option(s) {sorted(unknown)}; allowed: {sorted(_CONFIG_FIELDS)}"
        )
    if "k_max" not in options:
        raise BindingError(2, "the k_max option is required")
    clustering = options.get("clustering")
    if isinstance(clustering, dict):
        options = dict(options)
        with _translated():
            options["clustering"] = ClusteringParams(**clustering)
    with _translated():
        return EagleEyeConfig(**options)


def _id_array(ids):
    return np.asarray(sorted(int(i) for i in ids), dtype=np.int64)


@dataclass(frozen=True)
class BoundThreshold:
    value: float
    p_ext: float
    method: str
    exceedance_probability: float
    standard_error: float | None
    mc_sample_count: int


@dataclass(frozen=True)
class BoundCluster:
    members: np.ndarray
    repechage_threshold: float
    injected: np.ndarray
    purity_estimate: float
    s_over_sqrt_b_estimate: float | None
    quality_flags: tuple


@dataclass(frozen=True)
class BoundTotals:
    anom_count: int
    injected_count: int
    purity_estimate: float | None
    s_over_sqrt_b_estimate: float | None
    quality_flags: tuple


@dataclass(frozen=True)
class BoundDirection:
    threshold: BoundThreshold
    flagged_count: int
    pruned_count: int
    equalized_count: int
    clusters: dict
    dropped_clusters: np.ndarray
    totals: BoundTotals


@dataclass(frozen=True)
class BoundReport:
    """Mirror of the core report with ids as integer arrays."""

    config: dict
    inputs: dict
    test: BoundDirection
    reference: BoundDirection

    @classmethod
    def _from_payload(cls, payload):
        sides = {}
        for name in ("test", "reference"):
            block = payload["directions"][name]
            thr = block["threshold"]
            clusters = {
                int(alpha): BoundCluster(
                    members=_id_array(c["members"]),
                    repechage_threshold=c["repechage_threshold"],
                    injected=_id_array(c["injected"]),
                    purity_estimate=c["purity_estimate"],
                    s_over_sqrt_b_estimate=c["s_over_sqrt_b_estimate"],
                    quality_flags=tuple(c["quality_flags"]),
                )
                for alpha, c in block["clusters"].items()
            }
            tot = block["totals"]
            sides[name] = BoundDirection(
                threshold=BoundThreshold(
                    value=thr["value"],
                    p_ext=thr["p_ext"],
                    method=thr["method"],
                    exceedance_probability=thr["exceedance_probability"],
                    standard_error=thr["standard_error"],
                    mc_sample_count=thr["mc_sample_count"],
                ),
                flagged_count=block["counts"]["flagged"],
                pruned_count=block["counts"]["pruned"],
                equalized_count=block["counts"]["equalized"],
                clusters=clusters,
                dropped_clusters=np.asarray(block["dropped_clusters"], dtype=np.int64),
                totals=BoundTotals(
                    anom_count=tot["anom_count"],
                    injected_count=tot["injected_count"],
                    purity_estimate=tot["purity_estimate"],
                    s_over_sqrt_b_estimate=tot["s_over_sqrt_b_estimate"],
                    quality_flags=tuple(tot["quality_flags"]),
                ),
            )
        return cls(config=dict(payload["config"]), inputs=dict(payload["inputs"]),
                   test=sides["test"], reference=sides["reference"])

    def to_payload(self) -> dict:
        """Rebuild the core report document payload, field for field."""
        directions = {}
        for name in ("test", "reference"):
            side: BoundDirection = getattr(self, name)
            thr = side.threshold
            directions[name] = {
                "threshold": {
                    "value": thr.value,
                    "p_ext": thr.p_ext,
                    "method": thr.method,
                    "exceedance_probability": thr.exceedance_probability,
                    "standard_error": thr.standard_error,
                    "mc_sample_count": thr.mc_sample_count,
                },
                "counts": {
                    "flagged": side.flagged_count,
                    "pruned": side.pruned_count,
                    "equalized": side.equalized_count,
                },
                "clusters": {
                    str(alpha): {
                        "members": [int(i) for i in c.members],
                        "repechage_threshold": c.repechage_threshold,
                        "injected": [int(i) for i in c.injected],
                        "purity_estimate": c.purity_estimate,
                        "s_over_sqrt_b_estimate": c.s_over_sqrt_b_estimate,
                        "quality_flags": list(c.quality_flags),
                    }
                    for alpha, c in side.clusters.items()
                },
                "dropped_clusters": [int(a) for a in side.dropped_clusters],
                "totals": {
                    "anom_count": side.totals.anom_count,
                    "injected_count": side.totals.injected_count,
                    "purity_estimate": side.totals.purity_estimate,
                    "s_over_sqrt_b_estimate": side.totals.s_over_sqrt_b_estimate,
                    "quality_flags": list(side.totals.quality_flags),
                },
            }
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "config": dict(self.config),
            "inputs": dict(self.inputs),
            "directions": directions,
        }


def detect(reference, test, **options) -> BoundReport:
    """Run the full pipeline on two 2-d arrays of points.

    options are the core configuration fields; k_max is required. The
    result matches what the detect command writes for the same data.
    """
    ref_arr = _as_points("reference", reference)
    test_arr = _as_points("test", test)
    config = _config_from(options)
    with _translated():
        ref = Dataset(ref_arr, Role.REFERENCE)
        tst = Dataset(test_arr, Role.TEST)
        result = eagleeye.run(ref, tst, config)
        payload = ReportDocument.from_run(result).payload
    return BoundReport._from_payload(payload)


def null_threshold(k_max, p_success, p_ext, method="exact", seed=0,
                   n_null_sequences=1_000_000) -> dict:
    """Flagging threshold for the given neighborhood cap, as plain scalars."""
    with _translated():
        model = eagleeye.null_threshold(k_max, p_success, p_ext, method=method,
                                        seed=seed,
                                        n_null_sequences=n_null_sequences)
    return {
        "value": float(model.threshold),
        "p_ext": float(model.p_ext),
        "method": model.method,
        "exceedance_probability": float(model.exceedance_probability),
        "standard_error": None if model.standard_error is None
        else float(model.standard_error),
        "mc_sample_count": int(model.mc_sample_count),
    }


def score_all(reference, test, direction="test", **options) -> dict:
    """Per-point scores for one scan direction, as a dict of arrays."""
    ref_arr = _as_points("reference", reference)
    test_arr = _as_points("test", test)
    config = _config_from(options)
    try:
        scan = Direction(direction)
    except ValueError as e:
        raise BindingError(2, str(e)) from e
    with _translated():
        ref = Dataset(ref_arr, Role.REFERENCE)
        tst = Dataset(test_arr, Role.TEST)
        index = eagleeye.build_union_index(ref, tst)
        scores = eagleeye.score_all(index, scan, config)
    return {
        "direction": scan.value,
        "p_success": float(scores.p_success),
        "point_ids": scores.point_ids,
        "upsilon": scores.upsilon,
        "k_star": scores.k_star,
        "b_counts": scores.b_counts,
    }
