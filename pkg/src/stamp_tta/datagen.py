"""Synthetic source data, corrupted mixed streams, and the dataset text format.

Source classes are isotropic Gaussian clusters spaced evenly on a circle of
radius 4 in the first two coordinates (sigma 0.5). A test stream corrupts
that geometry at a given severity and mixes in label-free outliers, either
fresh clusters at the unused angles (held-out-class) or uniform background
noise over the source bounding box. Everything is driven by explicit seeds
through numpy SeedSequence, so regeneration is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParseError

SOURCE_RADIUS = 4.0
SOURCE_SIGMA = 0.5
ROTATION_DEG_PER_SEVERITY = 9.0
NOISE_SIGMA_PER_SEVERITY = 0.08
SCALE_PER_SEVERITY = 0.04
AUG_DEG_PER_STRENGTH = 10.0
AUG_SIGMA_PER_STRENGTH = 0.05

OUTLIER_LABEL = -1
OUTLIER_MODES = ("held-out-class", "background-uniform")

# Tags keep the seed streams of unrelated draws disjoint.
_TAG_STREAM = 11
_TAG_CORRUPT = 12
_TAG_AUG = 13


def class_centroids(num_classes, input_dim):
    """Cluster means for the source classes: evenly spaced on the circle."""
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    if input_dim < 2:
        raise ConfigError("input_dim must be >= 2 for the circle geometry")
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    out = np.zeros((num_classes, input_dim))
    out[:, 0] = SOURCE_RADIUS * np.cos(angles)
    out[:, 1] = SOURCE_RADIUS * np.sin(angles)
    return out


def outlier_centroids(num_classes, input_dim):
    """Held-out cluster means: same circle, midway between source angles."""
    centers = class_centroids(num_classes, input_dim)
    angles = 2.0 * np.pi * (np.arange(num_classes) + 0.5) / num_classes
    centers[:, 0] = SOURCE_RADIUS * np.cos(angles)
    centers[:, 1] = SOURCE_RADIUS * np.sin(angles)
    return centers


def gen_source(num_classes, input_dim, n, seed):
    """Balanced labeled source draw of n samples; shuffled deterministically.

    Class c receives n // C samples plus one extra for the first n mod C
    classes, so counts never differ by more than one.
    """
    if n < num_classes:
        raise ConfigError("need at least one sample per class")
    centers = class_centroids(num_classes, input_dim)
    counts = np.full(num_classes, n // num_classes)
    counts[: n % num_classes] += 1
    rng = np.random.default_rng(np.random.SeedSequence((seed,)))
    xs, ys = [], []
    for c in range(num_classes):
        offsets = rng.normal(0.0, SOURCE_SIGMA, size=(counts[c], input_dim))
        xs.append(centers[c] + offsets)
        ys.append(np.full(counts[c], c, dtype=np.int64))
    features = np.concatenate(xs)
    labels = np.concatenate(ys)
    perm = rng.permutation(n)
    return features[perm], labels[perm]


@dataclass
class CorruptionConfig:
    """Which corruption components are active; all on by default."""

    rotate: bool = True
    noise: bool = True
    scale: bool = True


def corrupt(x, severity, seed, components=None):
    """Severity-scaled distribution shift, deterministic per (x, severity, seed).

    Composition: rotation by severity * 9 degrees in the circle plane, then a
    uniform per-coordinate scaling by 1 + severity * 0.04, then additive
    Gaussian noise with sigma severity * 0.08. Components can be toggled off;
    with noise and scale disabled the map is a pure rotation (an isometry).
    Accepts a single vector or a (n, d) matrix.
    """
    if severity < 0:
        raise ConfigError("severity must be >= 0")
    if components is None:
        components = CorruptionConfig()
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    out = np.atleast_2d(arr).copy()
    if out.shape[1] < 2 and components.rotate:
        raise ConfigError("rotation needs input_dim >= 2")
    if components.rotate:
        theta = math.radians(severity * ROTATION_DEG_PER_SEVERITY)
        c, s = math.cos(theta), math.sin(theta)
        x0, x1 = out[:, 0].copy(), out[:, 1].copy()
        out[:, 0] = c * x0 - s * x1
        out[:, 1] = s * x0 + c * x1
    if components.scale:
        out *= 1.0 + severity * SCALE_PER_SEVERITY
    if components.noise:
        sigma = severity * NOISE_SIGMA_PER_SEVERITY
        if sigma > 0:
            rng = np.random.default_rng(seed)
            out += rng.normal(0.0, sigma, size=out.shape)
    return out[0] if single else out


def augment_views(x, num_views, strength, seed, sample_id):
    """num_views randomized views of one sample for prediction averaging.

    Each view rotates by an angle uniform in +-(strength * 10 degrees) and
    adds isotropic Gaussian noise with sigma strength * 0.05. Deterministic
    per (seed, sample_id); strength 0 short-circuits to exact copies.
    """
    if num_views < 1:
        raise ConfigError("num_views must be >= 1")
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("augment_views expects a single feature vector")
    if strength == 0:
        return np.tile(v, (num_views, 1))
    if v.shape[0] < 2:
        raise ConfigError("rotation needs input_dim >= 2")
    rng = np.random.default_rng(np.random.SeedSequence((seed, _TAG_AUG, sample_id)))
    half = math.radians(strength * AUG_DEG_PER_STRENGTH)
    angles = rng.uniform(-half, half, size=num_views)
    noise = rng.normal(0.0, strength * AUG_SIGMA_PER_STRENGTH, size=(num_views, v.shape[0]))
    out = np.tile(v, (num_views, 1))
    c, s = np.cos(angles), np.sin(angles)
    out[:, 0] = c * v[0] - s * v[1]
    out[:, 1] = s * v[0] + c * v[1]
    return out + noise


@dataclass
class StreamConfig:
    """Geometry and mixing knobs for one test stream."""

    num_classes: int
    input_dim: int = 2
    num_samples: int = 10000
    batch_size: int = 64
    severity: float = 5.0
    outlier_ratio: float = 0.2
    outlier_mode: str = "background-uniform"
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.input_dim < 2:
            raise ConfigError("input_dim must be >= 2")
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.outlier_ratio <= 1.0:
            raise ConfigError("outlier_ratio must lie in [0, 1]")
        if self.severity < 0:
            raise ConfigError("severity must be >= 0")
        if self.outlier_mode not in OUTLIER_MODES:
            raise ConfigError(f"outlier_mode must be one of {OUTLIER_MODES}")
        return self


@dataclass
class Stream:
    """A generated test stream: features plus eval-only truth columns.

    The truth columns (labels, outlier flags) exist for scoring alone; the
    adaptation engine is handed feature batches only.
    """

    features: np.ndarray
    labels: np.ndarray
    outlier: np.ndarray
    batch_size: int

    def __len__(self):
        return self.features.shape[0]

    @property
    def num_batches(self):
        return -(-len(self) // self.batch_size)

    def batches(self):
        """Yield (start_index, feature_matrix) in stream order."""
        for start in range(0, len(self), self.batch_size):
            yield start, self.features[start : start + self.batch_size]


def _source_box(num_classes, input_dim):
    # Analytic 3-sigma bounding box of the source mixture.
    reach = SOURCE_RADIUS + 3.0 * SOURCE_SIGMA
    lo = np.full(input_dim, -3.0 * SOURCE_SIGMA)
    hi = np.full(input_dim, 3.0 * SOURCE_SIGMA)
    lo[:2], hi[:2] = -reach, reach
    return lo, hi


def gen_stream(cfg):
    """Build the corrupted mixed stream described by cfg.

    Each position is an outlier with probability outlier_ratio (independent
    Bernoulli draws). Normal samples come from the source clusters, outliers
    from the configured mode, and the corruption map is applied to every
    sample at the configured severity. Outlier rows carry label -1.
    """
    cfg.validate()
    n, d, c = cfg.num_samples, cfg.input_dim, cfg.num_classes
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _TAG_STREAM)))
    is_outlier = rng.random(n) < cfg.outlier_ratio
    n_out = int(is_outlier.sum())
    n_norm = n - n_out

    labels = np.full(n, OUTLIER_LABEL, dtype=np.int64)
    features = np.empty((n, d))

    normal_labels = rng.integers(0, c, size=n_norm)
    centers = class_centroids(c, d)
    features[~is_outlier] = centers[normal_labels] + rng.normal(
        0.0, SOURCE_SIGMA, size=(n_norm, d)
    )
    labels[~is_outlier] = normal_labels

    if n_out:
        if cfg.outlier_mode == "held-out-class":
            oc = outlier_centroids(c, d)
            pick = rng.integers(0, c, size=n_out)
            features[is_outlier] = oc[pick] + rng.normal(0.0, SOURCE_SIGMA, size=(n_out, d))
        else:
            lo, hi = _source_box(c, d)
            features[is_outlier] = rng.uniform(lo, hi, size=(n_out, d))

    features = corrupt(
        features, cfg.severity, np.random.SeedSequence((cfg.seed, _TAG_CORRUPT))
    )
    return Stream(
        features=features,
        labels=labels,
        outlier=is_outlier,
        batch_size=cfg.batch_size,
    )


def write_dataset(path, features, labels, outlier):
    """Write the dataset text format: x0..x{d-1},label,outlier per row.

    Floats are serialized with 17 significant digits so a read round-trips
    float64 exactly. Outlier rows must carry label -1.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    flags = np.asarray(outlier, dtype=bool)
    n, d = x.shape
    if y.shape != (n,) or flags.shape != (n,):
        raise ValueError("features, labels, outlier disagree on sample count")
    if np.any(flags & (y != OUTLIER_LABEL)) or np.any(~flags & (y < 0)):
        raise ValueError("outlier rows need label -1 and normal rows a class label")
    cols = [f"x{i}" for i in range(d)] + ["label", "outlier"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(n):
            vals = ["%.17g" % v for v in x[i]]
            fh.write(",".join(vals + [str(int(y[i])), str(int(flags[i]))]) + "\n")


def read_dataset(path):
    """Parse the dataset text format back into (features, labels, outlier).

    Raises ParseError with the offending 1-based line number on a malformed
    header, field count mismatch, unparseable value, or an inconsistent
    label/outlier pair. Lines starting with '#' are skipped.
    """
    with open(path) as fh:
        lines = fh.readlines()
    header_line = None
    for lineno, raw in enumerate(lines, start=1):
        if raw.strip() and not raw.startswith("#"):
            header_line = lineno
            break
    if header_line is None:
        raise ParseError("empty dataset file")
    cols = lines[header_line - 1].strip().split(",")
    if len(cols) < 3 or cols[-2:] != ["label", "outlier"]:
        raise ParseError("header must be x0..x{d-1},label,outlier", line=header_line)
    d = len(cols) - 2
    if cols[:d] != [f"x{i}" for i in range(d)]:
        raise ParseError("header must be x0..x{d-1},label,outlier", line=header_line)

    feats, labels, flags = [], [], []
    for lineno in range(header_line + 1, len(lines) + 1):
        raw = lines[lineno - 1]
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.strip().split(",")
        if len(parts) != d + 2:
            raise ParseError(f"expected {d + 2} fields, got {len(parts)}", line=lineno)
        try:
            row = [float(v) for v in parts[:d]]
            label = int(parts[d])
            flag = int(parts[d + 1])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if flag not in (0, 1):
            raise ParseError("outlier flag must be 0 or 1", line=lineno)
        if flag == 1 and label != OUTLIER_LABEL:
            raise ParseError("outlier rows must carry label -1", line=lineno)
        if flag == 0 and label < 0:
            raise ParseError("normal rows need a non-negative label", line=lineno)
        feats.append(row)
        labels.append(label)
        flags.append(bool(flag))
    return (
        np.asarray(feats, dtype=np.float64).reshape(len(feats), d),
        np.asarray(labels, dtype=np.int64),
        np.asarray(flags, dtype=bool),
    )
