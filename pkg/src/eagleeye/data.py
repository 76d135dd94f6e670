"""Core containers: datasets, configuration, validation.

A detection run compares a reference sample against a test sample drawn
over the same feature space. Points are addressed by their row index
(0..n-1 within each sample) and by a union id once the two samples are
stacked: reference rows first, test rows after.
"""

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimensionMismatch, KMaxTooLarge, NonFiniteInput, ValidationError

# Above this fraction of the union size the fixed-probability null model
# drifts away from the true without-replacement draw, so we warn.
SATURATION_FRACTION = 0.05


class Role(str, Enum):
    REFERENCE = "reference"
    TEST = "test"


class Direction(str, Enum):
    """Which sample is scanned for overdensities."""

    TEST = "test"
    REFERENCE = "reference"

    @property
    def other(self):
        return Direction.REFERENCE if self is Direction.TEST else Direction.TEST


class ApproximationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Dataset:
    """A point sample with a fixed role.

    points : float64 array of shape (n, d); rows are points.
    role : whether this sample acts as reference or test.

    Row index doubles as the point id; duplicate rows are permitted.
    """

    points: np.ndarray
    role: Role

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValidationError(
                f"points must be a non-empty 2-d array, got shape {np.asarray(self.points).shape}"
            )
        if not np.isfinite(pts).all():
            bad = np.argwhere(~np.isfinite(pts))[0]
            raise NonFiniteInput(
                f"non-finite coordinate at point {bad[0]}, column {bad[1]} ({self.role.value} set)"
            )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "role", Role(self.role))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.n)


@dataclass(frozen=True)
class ClusteringParams:
    """Knobs for the density-peaks grouping of flagged points.

    k_density : neighbor rank used for the local density estimate.
    merge_ratio : saddle-to-peak density ratio below which two peaks
        stay separate clusters (higher values split more).
    min_cluster_size : clusters smaller than this become noise.
    """

    k_density: int = 20
    merge_ratio: float = 0.6
    min_cluster_size: int = 5

    def __post_init__(self):
        if self.k_density < 2:
            raise ValidationError(f"k_density must be >= 2, got {self.k_density}")
        if not 0.0 < self.merge_ratio <= 1.0:
            raise ValidationError(f"merge_ratio must be in (0, 1], got {self.merge_ratio}")
        if self.min_cluster_size < 1:
            raise ValidationError(
                f"min_cluster_size must be >= 1, got {self.min_cluster_size}"
            )


@dataclass(frozen=True)
class EagleEyeConfig:
    """Run parameters.

    k_max : deepest neighbor rank inspected by the scan statistic.
    p_ext : target null exceedance probability for the flagging threshold.
    q : lower-quantile level used when re-admitting cluster members
        (0 means the cluster minimum).
    threshold_method : "exact" for the boundary-crossing recursion,
        "mc" for the simulated null quantile.
    n_null_sequences : sample count for the "mc" method.
    run_injection : score reference points as pseudo test members to
        estimate the background contamination of each cluster.
    seed : base seed for every stochastic step (only "mc" draws here).
    metric : only "euclidean" is implemented; the field exists so report
        provenance stays explicit about the geometry.
    """

    k_max: int
    p_ext: float = 1e-5
    q: float = 0.01
    threshold_method: str = "exact"
    n_null_sequences: int = 1_000_000
    run_injection: bool = True
    seed: int = 0
    metric: str = "euclidean"
    clustering: ClusteringParams = field(default_factory=ClusteringParams)

    def __post_init__(self):
        if self.k_max < 1:
            raise ValidationError(f"k_max must be a positive integer, got {self.k_max}")
        if not 0.0 < self.p_ext < 1.0:
            raise ValidationError(f"p_ext must be in (0, 1), got {self.p_ext}")
        if not 0.0 <= self.q <= 1.0:
            raise ValidationError(f"q must be in [0, 1], got {self.q}")
        if self.threshold_method not in ("exact", "mc"):
            raise ValidationError(
                f"threshold_method must be 'exact' or 'mc', got {self.threshold_method!r}"
            )
        if self.n_null_sequences < 1:
            raise ValidationError(
                f"n_null_sequences must be >= 1, got {self.n_null_sequences}"
            )
        if self.metric != "euclidean":
            raise ValidationError(f"unsupported metric {self.metric!r}")


@dataclass(frozen=True)
class ValidationOutcome:
    ok: bool
    violations: tuple
    warnings: tuple
    p_hat: float


def p_hat_for(n_reference: int, n_test: int) -> float:
    """Null probability that a neighbor of a test point is itself a test point."""
    return n_test / (n_reference + n_test)


def validate(reference: Dataset, test: Dataset, config: EagleEyeConfig,
             raise_on_error: bool = True) -> ValidationOutcome:
    """Cross-check a dataset pair against a configuration.

    Returns a ValidationOutcome with the estimated same-set probability
    p_hat. With raise_on_error (the default) the first violation is
    raised as a typed ValidationError; pass False to collect them.
    Emits an ApproximationWarning when k_max exceeds 5% of the union,
    where the fixed-probability null noticeably overstates tail mass.
    """
    violations = []
    if reference.role is not Role.REFERENCE or test.role is not Role.TEST:
        violations.append(
            ValidationError(
                f"roles must be (reference, test), got ({reference.role.value}, {test.role.value})"
            )
        )
    if reference.dimension != test.dimension:
        violations.append(
            DimensionMismatch(
                f"dimension mismatch: reference has d={reference.dimension}, "
                f"test has d={test.dimension}"
            )
        )
    total = reference.n + test.n
    if config.k_max >= total:
        violations.append(
            KMaxTooLarge(f"k_max={config.k_max} must be below the union size {total}")
        )

    warn_msgs = []
    if not violations and config.k_max > SATURATION_FRACTION * total:
        msg = (
            f"k_max={config.k_max} exceeds {SATURATION_FRACTION:.0%} of the union size "
            f"{total}; fixed-probability tail values become conservative upper bounds"
        )
        warn_msgs.append(msg)
        warnings.warn(msg, ApproximationWarning, stacklevel=2)

    if violations and raise_on_error:
        raise violations[0]
    return ValidationOutcome(
        ok=not violations,
        violations=tuple(violations),
        warnings=tuple(warn_msgs),
        p_hat=p_hat_for(reference.n, test.n),
    )
