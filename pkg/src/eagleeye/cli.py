"""Command-line entry points: detect, threshold, simulate.

Exit codes: 0 success, 1 usage error, 2 input or validation failure,
3 unreachable extremeness level. Diagnostics go to standard error; the
report document goes to --out or standard output.
"""

import argparse
import sys
import time

from .data import ClusteringParams, EagleEyeConfig, Role
from .errors import EagleEyeError, UnreachableExtremeness
from .io import (ReportDocument, read_dataset, serialize_report, write_dataset,
                 write_scores, write_truth)
from .pipeline import run
from .scoring import null_threshold
from .synthetic import load_scenario


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def default_k_max(n_union: int) -> int:
    """One percent of the union size, clamped to [10, 1000]."""
    return max(10, min(1000, round(0.01 * n_union)))


def _build_parser() -> _Parser:
    parser = _Parser(prog="eagleeye",
                     description="Two-sample density anomaly detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="score a test sample against a reference")
    p.add_argument("--reference", required=True, help="reference dataset file")
    p.add_argument("--test", required=True, help="test dataset file")
    p.add_argument("--k-max", type=int, default=None,
                   help="largest neighborhood size (default: 1%% of the union)")
    p.add_argument("--p-ext", type=float, default=1e-5)
    p.add_argument("--q", type=float, default=0.01,
                   help="repechage quantile of pruned scores")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold-method", choices=("exact", "mc"), default="exact")
    p.add_argument("--n-sequences", type=int, default=1_000_000,
                   help="null sequences for --threshold-method mc")
    p.add_argument("--no-injection", action="store_true",
                   help="skip the background injection stage")
    p.add_argument("--out", default=None, help="report file (default: stdout)")
    p.add_argument("--scores-out", default=None, help="per-point score table")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("threshold", help="critical score for a null sequence")
    p.add_argument("--k-max", type=int, required=True)
    p.add_argument("--p-ext", type=float, required=True)
    p.add_argument("--p-hat", type=float, default=0.5)
    p.add_argument("--method", choices=("exact", "mc"), default="exact")
    p.add_argument("--n-sequences", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_threshold)

    p = sub.add_parser("simulate", help="generate a benchmark scenario")
    p.add_argument("--scenario", required=True, help="scenario file")
    p.add_argument("--out-reference", required=True)
    p.add_argument("--out-test", required=True)
    p.add_argument("--truth-out", default=None, help="ground-truth label file")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario file's seed")
    p.set_defaults(func=_cmd_simulate)
    return parser


def _cmd_detect(args) -> int:
    t0 = time.perf_counter()
    reference = read_dataset(args.reference, Role.REFERENCE)
    test = read_dataset(args.test, Role.TEST)
    k_max = args.k_max if args.k_max is not None else default_k_max(reference.n + test.n)
    config = EagleEyeConfig(k_max=k_max, p_ext=args.p_ext, q=args.q,
                            threshold_method=args.threshold_method,
                            n_null_sequences=args.n_sequences,
                            run_injection=not args.no_injection,
                            seed=args.seed, clustering=ClusteringParams())
    result = run(reference, test, config)
    text = serialize_report(ReportDocument.from_run(result))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.scores_out:
        write_scores(result, args.scores_out)
    for d, rep in result.reports.items():
        print(f"{d.value}: {len(rep.clusters)} clusters, "
              f"{rep.totals.anom_count} anomalous points", file=sys.stderr)
    print(f"done in {time.perf_counter() - t0:.1f}s (k_max={k_max})", file=sys.stderr)
    return 0


def _cmd_threshold(args) -> int:
    model = null_threshold(args.k_max, args.p_hat, args.p_ext,
                           method=args.method, seed=args.seed,
                           n_null_sequences=args.n_sequences)
    print(f"threshold {model.threshold!r}")
    print(f"exceedance_probability {model.exceedance_probability!r}")
    if model.standard_error is not None:
        print(f"standard_error {model.standard_error!r}")
    return 0


def _cmd_simulate(args) -> int:
    pair = load_scenario(args.scenario)
    reference, test, truth_ref, truth_test = pair.build(seed=args.seed)
    write_dataset(reference.points, args.out_reference)
    write_dataset(test.points, args.out_test)
    if args.truth_out:
        write_truth(args.truth_out, truth_ref, truth_test)
    print(f"wrote {reference.n} reference and {test.n} test points "
          f"(dimension {pair.dimension})", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except UnreachableExtremeness as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except EagleEyeError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
