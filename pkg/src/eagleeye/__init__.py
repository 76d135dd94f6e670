"""Two-sample local density anomaly detection via binomial neighbor statistics."""

from .data import (
    ApproximationWarning,
    ClusteringParams,
    Dataset,
    Direction,
    EagleEyeConfig,
    Role,
    ValidationOutcome,
    p_hat_for,
    validate,
)
from .errors import (
    DimensionMismatch,
    DivisionByZero,
    DomainError,
    EagleEyeError,
    EmptyInput,
    EmptySample,
    KMaxTooLarge,
    NonFiniteInput,
    NonTermination,
    ParseError,
    SpecError,
    UnreachableExtremeness,
    ValidationError,
    ZeroAnomaly,
    ZeroBackground,
)
from .neighbors import UnionIndex, build_union_index, membership_sequence, worker_count
from .scoring import (
    NullModel,
    ScoreRecord,
    ScoreSet,
    TailTable,
    TwoSampleTests,
    achievable_scores,
    binomial_tail_pvalue,
    crossing_probability,
    log_binomial_tail,
    null_threshold,
    score_all,
    simulate_null_scores,
    two_sample_tests,
    upsilon_profile,
)

__version__ = "0.1.0"

from .clustering import NOISE, cluster_flagged
from .io import (
    ReportDocument,
    parse_report,
    read_dataset,
    serialize_report,
    write_dataset,
    write_report,
    write_scores,
)
from .pipeline import (
    AnomalyReport,
    AnomalyTotals,
    ClusterReport,
    PartitionResult,
    PipelineRun,
    RepechageResult,
    assign_injected,
    flag,
    ide_prune,
    ide_prune_rescan,
    inject_background,
    purity_estimate,
    repechage,
    run,
    s_over_sqrt_b_estimate,
)
from .synthetic import (
    BACKGROUND,
    GaussianBlob,
    ScenarioPair,
    ScenarioSpec,
    SphericalDeletion,
    StandardGaussian,
    TorusAnomaly,
    TruthEvaluation,
    UniformBox,
    evaluate_against_truth,
    generate,
    load_scenario,
    parse_scenario,
    preset_scenario,
)
