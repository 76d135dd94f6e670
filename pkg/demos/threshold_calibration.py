"""Check the null threshold machinery against itself and against data.

Three views of the same quantile. The exact threshold comes from a
dynamic program over the score's boundary-crossing probabilities, the
Monte-Carlo one from a million simulated coin-flip sequences, and the
empirical flag rate from scoring two samples drawn from one
distribution, where nothing should be flagged beyond the false-positive
budget.
"""

import numpy as np

from eagleeye import (
    Dataset,
    Direction,
    EagleEyeConfig,
    Role,
    TailTable,
    build_union_index,
    null_threshold,
    score_all,
    simulate_null_scores,
    two_sample_tests,
)

K_MAX = 100
P_EXT = 1e-3


def main():
    table = TailTable(K_MAX, 0.5)

    exact = null_threshold(K_MAX, 0.5, P_EXT, method="exact", table=table)
    print(f"exact threshold    {exact.threshold:.4f} "
          f"(exceedance {exact.exceedance_probability:.2e})")

    mc = null_threshold(K_MAX, 0.5, P_EXT, method="mc", seed=0,
                        n_null_sequences=10**6, table=table)
    print(f"monte-carlo        {mc.threshold:.4f} "
          f"(standard error {mc.standard_error:.4f})")

    rng = np.random.default_rng(42)
    reference = Dataset(rng.standard_normal((10_000, 3)), Role.REFERENCE)
    test = Dataset(rng.standard_normal((10_000, 3)), Role.TEST)
    index = build_union_index(reference, test)
    config = EagleEyeConfig(k_max=K_MAX, p_ext=P_EXT)
    scores = score_all(index, Direction.TEST, config, table=table)

    flagged = int((scores.upsilon >= exact.threshold).sum())
    print(f"i.i.d. pair        {flagged} of {test.n} test points flagged "
          f"(expected about {test.n * P_EXT:.0f})")

    null_scores = simulate_null_scores(K_MAX, 0.5, test.n, seed=7, table=table)
    tests = two_sample_tests(scores.upsilon, null_scores, seed=1)
    print(f"score distribution vs simulated null: "
          f"KS p={tests.ks_pvalue:.3f}, CvM p={tests.cvm_pvalue:.3f}")


if __name__ == "__main__":
    main()
