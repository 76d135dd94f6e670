"""Dataset files, the canonical report document, and score tables.

Dataset files are delimited text, one point per row, with an optional
single header row and either comma or whitespace delimiters. The report
is JSON with sorted keys and sorted member id lists, so identical runs
serialize to identical bytes; wall-clock timings deliberately stay out
of it.
"""

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Direction, Role
from .errors import ParseError, ValidationError

REPORT_FORMAT_VERSION = "1"


# -- dataset files -------------------------------------------------------------


def _split_row(line: str, delimiter):
    return line.split(",") if delimiter == "," else line.split()


def read_dataset(path, role=Role.TEST) -> Dataset:
    """Parse a delimited text file of points into a validated Dataset.

    The delimiter (comma or whitespace) is taken from the first data
    row; a single leading non-numeric row is skipped as a header.
    Non-finite values are rejected with their line number.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    rows = []
    width = None
    delimiter = None
    header_allowed = True
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if delimiter is None:
            delimiter = "," if "," in line else " "
        cells = [c for c in _split_row(line, delimiter) if c.strip()]
        try:
            values = [float(c) for c in cells]
        except ValueError:
            if header_allowed:
                header_allowed = False
                delimiter = None
                continue
            raise ParseError(f"unparseable row: {line[:60]!r}", line=lineno) from None
        header_allowed = False
        if not all(np.isfinite(values)):
            raise ParseError("non-finite value", line=lineno)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ParseError(
                f"row has {len(values)} columns, expected {width}", line=lineno)
        rows.append(values)
    if not rows:
        raise ParseError(f"no data rows in {path}", line=len(lines))
    return Dataset(np.asarray(rows, dtype=np.float64), role)


def write_dataset(points: np.ndarray, path) -> None:
    """Write points as whitespace-delimited text, one row per point.

    Values use repr so a read-back reproduces the exact float64 bits.
    """
    pts = np.asarray(points, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for row in pts:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def write_truth(path, truth_reference, truth_test) -> None:
    """Write generation labels for both samples as 'sample row label' lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sample row label\n")
        for name, truth in (("reference", truth_reference), ("test", truth_test)):
            for i, lab in enumerate(truth):
                fh.write(f"{name} {i} {int(lab)}\n")


# -- report document -----------------------------------------------------------


@dataclass(frozen=True)
class ReportDocument:
    """JSON-native snapshot of a pipeline run's results."""

    payload: dict

    @classmethod
    def from_run(cls, result) -> "ReportDocument":
        cfg = result.config
        clustering = cfg.clustering
        directions = {}
        for d in (Direction.TEST, Direction.REFERENCE):
            nm = result.null_models[d]
            part = result.partitions[d]
            rep = result.reports[d]
            clusters = {}
            for alpha, cr in rep.clusters.items():
                clusters[str(alpha)] = {
                    "members": [int(i) for i in cr.members],
                    "repechage_threshold": float(cr.repechage_threshold),
                    "injected": [int(i) for i in cr.injected],
                    "purity_estimate": float(cr.purity_estimate),
                    "s_over_sqrt_b_estimate":
                        None if cr.s_over_sqrt_b_estimate is None
                        else float(cr.s_over_sqrt_b_estimate),
                    "quality_flags": list(cr.quality_flags),
                }
            tot = rep.totals
            directions[d.value] = {
                "threshold": {
                    "value": float(nm.threshold),
                    "p_ext": float(nm.p_ext),
                    "method": nm.method,
                    "exceedance_probability": float(nm.exceedance_probability),
                    "standard_error":
                        None if nm.standard_error is None else float(nm.standard_error),
                    "mc_sample_count": int(nm.mc_sample_count),
                },
                "counts": {
                    "flagged": len(part.flagged),
                    "pruned": len(part.pruned),
                    "equalized": len(part.equalized),
                },
                "clusters": clusters,
                "dropped_clusters": [int(a) for a in rep.dropped_clusters],
                "totals": {
                    "anom_count": int(tot.anom_count),
                    "injected_count": int(tot.injected_count),
                    "purity_estimate":
                        None if tot.purity_estimate is None else float(tot.purity_estimate),
                    "s_over_sqrt_b_estimate":
                        None if tot.s_over_sqrt_b_estimate is None
                        else float(tot.s_over_sqrt_b_estimate),
                    "quality_flags": list(tot.quality_flags),
                },
            }
        prov = result.provenance
        payload = {
            "format_version": REPORT_FORMAT_VERSION,
            "config": {
                "k_max": int(cfg.k_max),
                "p_ext": float(cfg.p_ext),
                "q": float(cfg.q),
                "threshold_method": cfg.threshold_method,
                "n_null_sequences": int(cfg.n_null_sequences),
                "run_injection": bool(cfg.run_injection),
                "seed": int(cfg.seed),
                "metric": cfg.metric,
                "clustering": {
                    "k_density": int(clustering.k_density),
                    "merge_ratio": float(clustering.merge_ratio),
                    "min_cluster_size": int(clustering.min_cluster_size),
                },
            },
            "inputs": {
                "n_reference": int(prov["n_reference"]),
                "n_test": int(prov["n_test"]),
                "dimension": int(prov["dimension"]),
                "p_hat": float(prov["p_hat"]),
            },
            "directions": directions,
        }
        return cls(payload)


def serialize_report(doc: ReportDocument) -> str:
    return json.dumps(doc.payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def parse_report(text: str) -> ReportDocument:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"not a report document: {e.msg}", line=e.lineno) from None
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise ParseError("report document lacks a format_version field", line=1)
    if payload["format_version"] != REPORT_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported report format version {payload['format_version']!r}")
    return ReportDocument(payload)


def write_report(result, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_report(ReportDocument.from_run(result)))


# -- per-point score table -------------------------------------------------------


def write_scores(result, path) -> None:
    """Per-point score table for external plotting.

    One row per scanned point and direction: score, argmax rank, and
    membership in each pipeline stage. The cluster column is the
    repechage cluster the point ended up in, empty otherwise.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("direction,point_id,upsilon,k_star,flagged,pruned,equalized,"
                 "cluster,repechaged\n")
        for d in (Direction.TEST, Direction.REFERENCE):
            scores = result.scores[d]
            part = result.partitions[d]
            cluster_of = {}
            for alpha, cr in result.reports[d].clusters.items():
                for i in cr.members:
                    cluster_of[i] = alpha
            for i, u, ks in zip(scores.point_ids, scores.upsilon, scores.k_star):
                i = int(i)
                alpha = cluster_of.get(i)
                fh.write(f"{d.value},{i},{repr(float(u))},{int(ks)},"
                         f"{int(i in part.flagged)},{int(i in part.pruned)},"
                         f"{int(i in part.equalized)},"
                         f"{'' if alpha is None else alpha},"
                         f"{int(alpha is not None)}\n")
