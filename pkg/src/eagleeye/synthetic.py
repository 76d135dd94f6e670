"""Deterministic scenario generators for the benchmark datasets.

A scenario file describes a reference and a test sample over a shared
background, in a small key-value format:

    dimension 3
    seed 1
    background uniform 0.0 1.0      # or: background gaussian

    [reference]
    count 48900
    anomaly gaussian center=0.5,0.5,0.15 scale=0.012 count=100

    [test]
    count 47250
    anomaly torus center=1,0,0 major_radius=0.3 minor_radius=0.05 pad_scale=0.3 count=200
    anomaly deletion center=0.5,0.5,0.5 radius=0.2 removal_probability=0.9

Blank lines and '#' comments are ignored. Generation is counter-based
(Philox) with one spawned stream per component: the background uses
child 0 and anomaly i uses child i+1, so adding or removing an anomaly
never changes the background draws. The reference and test samples of a
pair use seeds [seed, 0] and [seed, 1].
"""

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .data import Dataset, Role
from .errors import ParseError, SpecError

BACKGROUND = -1

_PRESETS = ("gauss7x3", "torus10d", "sphere-deletion")


# -- component types ---------------------------------------------------------


@dataclass(frozen=True)
class UniformBox:
    low: float = 0.0
    high: float = 1.0

    def sample(self, rng, n, d):
        return rng.uniform(self.low, self.high, size=(n, d))


@dataclass(frozen=True)
class StandardGaussian:
    def sample(self, rng, n, d):
        return rng.standard_normal(size=(n, d))


@dataclass(frozen=True)
class GaussianBlob:
    center: tuple
    scale: float
    count: int


@dataclass(frozen=True)
class TorusAnomaly:
    """Solid torus in the first three coordinates, Gaussian pad in the rest."""

    center: tuple
    major_radius: float
    minor_radius: float
    pad_scale: float
    count: int


@dataclass(frozen=True)
class SphericalDeletion:
    """Reassign in-sphere points to fresh background draws with given probability."""

    center: tuple
    radius: float
    removal_probability: float
    count: int = 0


@dataclass(frozen=True)
class ScenarioSpec:
    """One sample's generation recipe: background plus anomaly components."""

    dimension: int
    background: object
    background_count: int
    anomalies: tuple = ()
    seed: object = 0

    def __post_init__(self):
        if self.dimension < 1:
            raise SpecError(f"dimension must be >= 1, got {self.dimension}")
        if self.background_count < 0:
            raise SpecError("background count must be >= 0")
        for a in self.anomalies:
            if getattr(a, "count", 0) < 0:
                raise SpecError("component counts must be >= 0")
            center = getattr(a, "center", None)
            if center is not None and len(center) != self.dimension:
                raise SpecError(
                    f"center of length {len(center)} does not match dimension {self.dimension}"
                )
            if isinstance(a, GaussianBlob) and a.scale <= 0:
                raise SpecError("gaussian scale must be > 0")
            if isinstance(a, TorusAnomaly):
                if self.dimension < 3:
                    raise SpecError("torus components need dimension >= 3")
                if a.major_radius <= 0 or a.minor_radius <= 0 or a.pad_scale <= 0:
                    raise SpecError("torus radii and pad scale must be > 0")
                if a.minor_radius > a.major_radius:
                    raise SpecError("torus minor radius exceeds major radius")
            if isinstance(a, SphericalDeletion):
                if a.radius <= 0:
                    raise SpecError("deletion radius must be > 0")
                if not 0.0 <= a.removal_probability <= 1.0:
                    raise SpecError("removal probability must be in [0, 1]")


# -- generation ---------------------------------------------------------------


def _sample_torus(rng, a: TorusAnomaly, d: int) -> np.ndarray:
    """Uniform draws from a solid torus, padded with Gaussian coordinates.

    Cross-section points are taken by rejection with acceptance weight
    proportional to the axial distance s, which makes the solid torus
    uniform in 3-d volume.
    """
    out = np.empty((a.count, 3))
    got = 0
    lo, hi = a.major_radius - a.minor_radius, a.major_radius + a.minor_radius
    while got < a.count:
        m = max(4 * (a.count - got), 64)
        s = rng.uniform(lo, hi, size=m)
        z = rng.uniform(-a.minor_radius, a.minor_radius, size=m)
        u = rng.uniform(0.0, hi, size=m)
        keep = ((s - a.major_radius) ** 2 + z ** 2 <= a.minor_radius ** 2) & (u <= s)
        s, z = s[keep], z[keep]
        take = min(len(s), a.count - got)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=take)
        out[got:got + take, 0] = s[:take] * np.cos(phi)
        out[got:got + take, 1] = s[:take] * np.sin(phi)
        out[got:got + take, 2] = z[:take]
        got += take
    pts = np.empty((a.count, d))
    pts[:, :3] = out
    pts[:, 3:] = rng.normal(0.0, a.pad_scale, size=(a.count, d - 3))
    return pts + np.asarray(a.center)


def generate(spec: ScenarioSpec, role: Role = Role.TEST):
    """Build one sample and its ground-truth labels.

    Returns (Dataset, labels) where labels[i] is BACKGROUND or the index
    of the anomaly component that produced point i. Labels exist for
    evaluation only and are never visible to the detection pipeline.
    """
    d = spec.dimension
    root = np.random.SeedSequence(spec.seed)
    streams = root.spawn(len(spec.anomalies) + 1)
    rng_bg = np.random.Generator(np.random.Philox(streams[0]))
    blocks = [spec.background.sample(rng_bg, spec.background_count, d)]
    labels = [np.full(spec.background_count, BACKGROUND, dtype=np.int64)]
    deletions = []
    for i, a in enumerate(spec.anomalies):
        rng = np.random.Generator(np.random.Philox(streams[i + 1]))
        if isinstance(a, GaussianBlob):
            pts = rng.normal(0.0, a.scale, size=(a.count, d)) + np.asarray(a.center)
        elif isinstance(a, TorusAnomaly):
            pts = _sample_torus(rng, a, d)
        elif isinstance(a, SphericalDeletion):
            deletions.append((a, rng))
            continue
        else:
            raise SpecError(f"unknown anomaly component {type(a).__name__}")
        blocks.append(pts)
        labels.append(np.full(a.count, i, dtype=np.int64))
    points = np.concatenate(blocks, axis=0)
    truth = np.concatenate(labels)
    for a, rng in deletions:
        inside = np.flatnonzero(
            np.linalg.norm(points - np.asarray(a.center), axis=1) <= a.radius)
        move = inside[rng.uniform(size=inside.size) < a.removal_probability]
        points[move] = spec.background.sample(rng, move.size, d)
        truth[move] = BACKGROUND
    return Dataset(points, role), truth


# -- scenario files -----------------------------------------------------------


@dataclass(frozen=True)
class ScenarioPair:
    """Reference and test recipes sharing a dimension, background, and seed."""

    dimension: int
    background: object
    seed: int
    reference: ScenarioSpec
    test: ScenarioSpec

    def build(self, seed=None):
        """Generate both samples; returns (reference, test, truth_ref, truth_test)."""
        s = self.seed if seed is None else seed
        ref_spec = _with_seed(self.reference, [s, 0])
        test_spec = _with_seed(self.test, [s, 1])
        ref, truth_ref = generate(ref_spec, Role.REFERENCE)
        test, truth_test = generate(test_spec, Role.TEST)
        return ref, test, truth_ref, truth_test


def _with_seed(spec: ScenarioSpec, seed) -> ScenarioSpec:
    return ScenarioSpec(spec.dimension, spec.background, spec.background_count,
                        spec.anomalies, seed)


def _parse_floats(text, lineno):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ParseError(f"bad numeric list {text!r}", line=lineno) from None


def _parse_anomaly(kind, kv, lineno, dimension):
    def need(*names):
        for nm in names:
            if nm not in kv:
                raise ParseError(f"{kind} anomaly needs {nm}=", line=lineno)

    def num(nm):
        try:
            return float(kv[nm])
        except ValueError:
            raise ParseError(f"bad number for {nm}", line=lineno) from None

    try:
        if kind == "gaussian":
            need("center", "scale", "count")
            return GaussianBlob(_parse_floats(kv["center"], lineno), num("scale"),
                                int(kv["count"]))
        if kind == "torus":
            need("center", "major_radius", "minor_radius", "pad_scale", "count")
            return TorusAnomaly(_parse_floats(kv["center"], lineno),
                                num("major_radius"), num("minor_radius"),
                                num("pad_scale"), int(kv["count"]))
        if kind == "deletion":
            need("center", "radius", "removal_probability")
            if "count" in kv:
                raise ParseError("deletion components do not take a count", line=lineno)
            return SphericalDeletion(_parse_floats(kv["center"], lineno),
                                     num("radius"), num("removal_probability"))
    except ValueError:
        raise ParseError(f"bad integer in {kind} anomaly", line=lineno) from None
    raise ParseError(f"unknown anomaly kind {kind!r}", line=lineno)


def parse_scenario(text: str) -> ScenarioPair:
    """Parse the scenario file format described in the module docstring."""
    dimension = None
    seed = 0
    background = None
    sections = {"reference": {"count": None, "anomalies": []},
                "test": {"count": None, "anomalies": []}}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in sections:
                raise ParseError(f"unknown section [{name}]", line=lineno)
            current = sections[name]
            continue
        parts = line.split(None, 1)
        key = parts[0].lower()
        rest = parts[1].strip() if len(parts) > 1 else ""
        if current is None:
            if key == "dimension":
                try:
                    dimension = int(rest)
                except ValueError:
                    raise ParseError("dimension must be an integer", line=lineno) from None
            elif key == "seed":
                try:
                    seed = int(rest)
                except ValueError:
                    raise ParseError("seed must be an integer", line=lineno) from None
            elif key == "background":
                toks = rest.split()
                if toks and toks[0] == "uniform":
                    if len(toks) == 3:
                        background = UniformBox(float(toks[1]), float(toks[2]))
                    elif len(toks) == 1:
                        background = UniformBox()
                    else:
                        raise ParseError("background uniform takes low high", line=lineno)
                elif toks and toks[0] == "gaussian" and len(toks) == 1:
                    background = StandardGaussian()
                else:
                    raise ParseError(f"unknown background {rest!r}", line=lineno)
            else:
                raise ParseError(f"unknown key {key!r} before any section", line=lineno)
            continue
        if key == "count":
            try:
                current["count"] = int(rest)
            except ValueError:
                raise ParseError("count must be an integer", line=lineno) from None
        elif key == "anomaly":
            toks = rest.split()
            if not toks:
                raise ParseError("anomaly line needs a kind", line=lineno)
            kv = {}
            for tok in toks[1:]:
                if "=" not in tok:
                    raise ParseError(f"expected key=value, got {tok!r}", line=lineno)
                k, v = tok.split("=", 1)
                kv[k.lower()] = v
            current["anomalies"].append((toks[0].lower(), kv, lineno))
        else:
            raise ParseError(f"unknown key {key!r}", line=lineno)
    if dimension is None:
        raise ParseError("scenario file never sets dimension", line=0)
    if background is None:
        raise ParseError("scenario file never sets background", line=0)
    specs = {}
    for name, sec in sections.items():
        if sec["count"] is None:
            raise ParseError(f"section [{name}] never sets count", line=0)
        anomalies = tuple(_parse_anomaly(kind, kv, ln, dimension)
                          for kind, kv, ln in sec["anomalies"])
        try:
            specs[name] = ScenarioSpec(dimension, background, sec["count"],
                                       anomalies, seed)
        except SpecError:
            raise
    return ScenarioPair(dimension, background, seed,
                        specs["reference"], specs["test"])


def load_scenario(path) -> ScenarioPair:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def preset_scenario(name: str) -> ScenarioPair:
    """Load one of the shipped presets: gauss7x3, torus10d, sphere-deletion."""
    if name not in _PRESETS:
        raise SpecError(f"unknown preset {name!r}; choose from {', '.join(_PRESETS)}")
    ref = resources.files("eagleeye") / "scenarios" / f"{name}.scenario"
    return parse_scenario(ref.read_text(encoding="utf-8"))


# -- evaluation against ground truth ------------------------------------------


@dataclass(frozen=True)
class ClusterTruth:
    matched_anomaly: int | None
    size: int
    signal_count: int
    true_purity: float
    true_significance: float | None


@dataclass(frozen=True)
class AnomalyTruth:
    planted: int
    recovered: int
    recall: float


@dataclass(frozen=True)
class TruthEvaluation:
    clusters: dict
    anomalies: dict


def evaluate_against_truth(report, truth) -> TruthEvaluation:
    """Score a report against generation labels.

    Each reported cluster is matched to the planted anomaly holding the
    plurality of its non-background members (ties to the smaller index).
    Per-cluster true purity is the non-background member fraction; the
    true significance is signal over sqrt(background members). Recall
    per planted anomaly counts members of clusters matched to it.
    """
    truth = np.asarray(truth)
    planted_ids, planted_counts = np.unique(truth[truth != BACKGROUND],
                                            return_counts=True)
    recovered = {int(a): 0 for a in planted_ids}
    clusters = {}
    for alpha, cr in report.clusters.items():
        ids = np.fromiter(cr.members, dtype=np.int64, count=len(cr.members))
        lbl = truth[ids]
        sig = lbl[lbl != BACKGROUND]
        if sig.size:
            vals, counts = np.unique(sig, return_counts=True)
            matched = int(vals[np.argmax(counts)])
            signal = int(counts[np.argmax(counts)])
            if matched in recovered:
                recovered[matched] += signal
        else:
            matched, signal = None, 0
        n_bkg = int((lbl == BACKGROUND).sum())
        purity = 1.0 - n_bkg / len(lbl)
        significance = (len(lbl) - n_bkg) / np.sqrt(n_bkg) if n_bkg else None
        clusters[alpha] = ClusterTruth(matched, len(lbl), signal, purity,
                                       significance)
    anomalies = {
        int(a): AnomalyTruth(int(c), recovered[int(a)], recovered[int(a)] / int(c))
        for a, c in zip(planted_ids, planted_counts)
    }
    return TruthEvaluation(clusters, anomalies)
