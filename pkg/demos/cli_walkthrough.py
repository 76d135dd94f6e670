"""Drive the command-line interface end to end in a temp directory.

Writes a scenario file, simulates a dataset pair from it, runs the
detector on the resulting text files, and digs a few numbers out of the
JSON report. Everything goes through eagleeye.cli.main exactly as it
would from a shell.
"""

import json
import tempfile
from pathlib import Path

from eagleeye.cli import main as eagleeye_main

SCENARIO = """\
# a single off-center blob in an otherwise uniform square
dimension 2
seed 9
background uniform 0.0 1.0

[reference]
count 5000

[test]
count 4850
anomaly gaussian center=0.7,0.3 scale=0.01 count=150
"""


def run_command(argv):
    # flush so the command line prints before the CLI's stderr diagnostics
    print("$ eagleeye " + " ".join(argv), flush=True)
    code = eagleeye_main(argv)
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}")


def main():
    workdir = Path(tempfile.mkdtemp(prefix="eagleeye-demo-"))
    scenario = workdir / "blob.scenario"
    scenario.write_text(SCENARIO)

    ref_file = workdir / "reference.txt"
    test_file = workdir / "test.txt"
    run_command(["simulate", "--scenario", str(scenario),
                 "--out-reference", str(ref_file),
                 "--out-test", str(test_file),
                 "--truth-out", str(workdir / "truth.txt")])

    report_file = workdir / "report.json"
    run_command(["detect", "--reference", str(ref_file),
                 "--test", str(test_file),
                 "--k-max", "100", "--p-ext", "1e-4",
                 "--out", str(report_file),
                 "--scores-out", str(workdir / "scores.csv")])

    report = json.loads(report_file.read_text())
    test_side = report["directions"]["test"]
    print(f"\nthreshold {test_side['threshold']['value']:.3f}, "
          f"{test_side['counts']['flagged']} flagged points, "
          f"{len(test_side['clusters'])} cluster(s)")
    for alpha, cluster in test_side["clusters"].items():
        print(f"cluster {alpha}: {len(cluster['members'])} members, "
              f"purity estimate {cluster['purity_estimate']:.3f}")
    print(f"\nfiles left in {workdir} for inspection")


if __name__ == "__main__":
    main()
