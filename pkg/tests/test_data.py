import numpy as np
import pytest

from eagleeye import (
    ApproximationWarning,
    ClusteringParams,
    Dataset,
    EagleEyeConfig,
    Role,
    validate,
)
from eagleeye.data import p_hat_for
from eagleeye.errors import (
    DimensionMismatch,
    KMaxTooLarge,
    NonFiniteInput,
    ValidationError,
)


def test_dataset_basics():
    ds = Dataset(np.arange(12.0).reshape(4, 3), Role.TEST)
    assert ds.n == 4
    assert ds.dimension == 3
    np.testing.assert_array_equal(ds.ids, [0, 1, 2, 3])
    assert ds.points.dtype == np.float64


def test_dataset_accepts_duplicates_and_lists():
    ds = Dataset([[1.0, 2.0], [1.0, 2.0]], Role.REFERENCE)
    assert ds.n == 2


def test_dataset_rejects_bad_shapes():
    with pytest.raises(ValidationError):
        Dataset(np.zeros(5), Role.TEST)
    with pytest.raises(ValidationError):
        Dataset(np.zeros((0, 3)), Role.TEST)
    with pytest.raises(ValidationError):
        Dataset(np.zeros((3, 0)), Role.TEST)


def test_dataset_rejects_non_finite():
    pts = np.ones((4, 2))
    pts[2, 1] = np.nan
    with pytest.raises(NonFiniteInput) as err:
        Dataset(pts, Role.TEST)
    assert "point 2" in str(err.value)
    pts[2, 1] = np.inf
    with pytest.raises(NonFiniteInput):
        Dataset(pts, Role.REFERENCE)


def test_config_validation():
    EagleEyeConfig(k_max=10)  # defaults are fine
    with pytest.raises(ValidationError):
        EagleEyeConfig(k_max=0)
    with pytest.raises(ValidationError):
        EagleEyeConfig(k_max=5, p_ext=0.0)
    with pytest.raises(ValidationError):
        EagleEyeConfig(k_max=5, p_ext=1.0)
    with pytest.raises(ValidationError):
        EagleEyeConfig(k_max=5, q=1.5)
    with pytest.raises(ValidationError):
        EagleEyeConfig(k_max=5, threshold_method="bootstrap")
    with pytest.raises(ValidationError):
        EagleEyeConfig(k_max=5, n_null_sequences=0)
    with pytest.raises(ValidationError):
        EagleEyeConfig(k_max=5, metric="manhattan")


def test_clustering_params_validation():
    ClusteringParams(k_density=2, merge_ratio=1.0, min_cluster_size=1)
    with pytest.raises(ValidationError):
        ClusteringParams(k_density=1)
    with pytest.raises(ValidationError):
        ClusteringParams(merge_ratio=0.0)
    with pytest.raises(ValidationError):
        ClusteringParams(merge_ratio=1.2)
    with pytest.raises(ValidationError):
        ClusteringParams(min_cluster_size=0)


def test_p_hat_is_test_share():
    assert p_hat_for(300, 100) == 0.25
    assert p_hat_for(100, 100) == 0.5


def make_pair(n_ref=60, n_test=40, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return (Dataset(rng.normal(size=(n_ref, d)), Role.REFERENCE),
            Dataset(rng.normal(size=(n_test, d)), Role.TEST))


def test_validate_accepts_good_pair():
    ref, test = make_pair()
    out = validate(ref, test, EagleEyeConfig(k_max=5))
    assert out.ok
    assert out.p_hat == 0.4
    assert out.violations == ()


def test_validate_rejects_swapped_roles():
    ref, test = make_pair()
    with pytest.raises(ValidationError):
        validate(test, ref, EagleEyeConfig(k_max=5))


def test_validate_rejects_dimension_mismatch():
    ref, _ = make_pair(d=2)
    _, test = make_pair(d=3)
    with pytest.raises(DimensionMismatch):
        validate(ref, test, EagleEyeConfig(k_max=5))


def test_validate_rejects_k_max_at_union_size():
    ref, test = make_pair(n_ref=10, n_test=10)
    with pytest.raises(KMaxTooLarge):
        validate(ref, test, EagleEyeConfig(k_max=20))
    with pytest.warns(ApproximationWarning):
        # 19 < union size, so this passes validation, but it saturates the
        # 5% guidance and is reported as an approximation concern.
        out = validate(ref, test, EagleEyeConfig(k_max=19), raise_on_error=False)
    assert out.ok


def test_validate_collect_mode_gathers_everything():
    ref, _ = make_pair(n_ref=10, d=2)
    _, test = make_pair(n_test=5, d=3)
    out = validate(ref, test, EagleEyeConfig(k_max=50), raise_on_error=False)
    assert not out.ok
    kinds = {type(v) for v in out.violations}
    assert DimensionMismatch in kinds
    assert KMaxTooLarge in kinds


def test_validate_warns_on_saturating_k_max():
    ref, test = make_pair(n_ref=100, n_test=100)
    with pytest.warns(ApproximationWarning):
        out = validate(ref, test, EagleEyeConfig(k_max=30))
    assert out.ok
    assert len(out.warnings) == 1


def test_direction_other():
    from eagleeye import Direction

    assert Direction.TEST.other is Direction.REFERENCE
    assert Direction.REFERENCE.other is Direction.TEST
