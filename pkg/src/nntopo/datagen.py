"""Labeled point clouds with known topology, and CSV ingestion.

Three synthetic families, each with two classes ``a`` and ``b``:

* D-I (2-D): nine disks (class a) sitting inside the nine holes of a
  perforated square (class b).  Betti numbers (9, 0) and (1, 9).
* D-II (3-D): nine pairs of linked solid tori, one torus of each pair per
  class.  Betti numbers (9, 9, 0) for both classes.
* D-III (3-D): nine units of a sphere (class b) around a sphere (class a)
  around a ball (class b).  Betti numbers (9, 0, 9) and (18, 0, 9).

D-I and D-III are sampled on a regular grid, D-II uniformly by rejection.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .simplicial import BettiVector

LABELS = ("a", "b")
_LABEL_TOKENS = {"a": 0, "b": 1, "0": 0, "1": 1}


class GenerationError(ValueError):
    pass


class CsvFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class LabeledPointCloud:
    """Points with binary labels (0 = class a, 1 = class b)."""

    points: np.ndarray
    labels: np.ndarray
    ground_truth: dict[str, BettiVector] | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.ndim != 2:
            raise ValueError("points must be an n x d array")
        if self.labels.shape != (self.points.shape[0],):
            raise ValueError("one label per point required")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 (a) or 1 (b)")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def of_class(self, name: str) -> np.ndarray:
        return self.points[self.labels == LABELS.index(name)]

    def subset(self, idx) -> "LabeledPointCloud":
        return LabeledPointCloud(self.points[idx], self.labels[idx], self.ground_truth)

    def min_class_distance(self) -> float:
        """Smallest Euclidean distance between a point of a and a point of b."""
        a, b = self.of_class("a"), self.of_class("b")
        best = math.inf
        for start in range(0, len(a), 512):
            diff = a[start:start + 512, None, :] - b[None, :, :]
            best = min(best, float(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff).min())))
        return best


@dataclass(frozen=True)
class DatasetSpec:
    """What to generate.  ``family`` is one of D-I, D-II, D-III, CSV.

    ``n_train`` is the approximate size of the generated cloud and
    ``n_homology`` the size of the stratified subsample used for homology.
    ``geometry`` overrides the default shape parameters of the family.
    """

    family: str = "D-I"
    n_train: int = 7800
    n_homology: int = 2600
    seed: int = 0
    geometry: dict = field(default_factory=dict)
    jitter: float = 0.0
    path: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES and self.family != "CSV":
            raise ValueError(f"unknown family {self.family!r}")
        if self.n_train <= 0 or self.n_homology <= 0:
            raise ValueError("sample counts must be positive")


# Sample sizes used in the original experiments (training, homology).
TABLE_SIZES = {"D-I": (7800, 2600), "D-II": (45000, 11250), "D-III": (37800, 9450)}

D1_GEOMETRY = {"centers": (0.25, 0.5, 0.75), "hole_radius": 0.08, "disk_radius": 0.06}
D2_GEOMETRY = {"R": 1.0, "r": 0.25, "spacing": 4.0, "grid": 3}
D3_GEOMETRY = {"outer": 1.0, "middle": 0.6, "ball": 0.3, "thickness": 0.1, "spacing": 4.0, "grid": 3}


def _grid_centers(spacing: float, grid: int) -> list[np.ndarray]:
    return [np.array([i * spacing, j * spacing, 0.0]) for i in range(grid) for j in range(grid)]


def _finish(points, labels, truth, spec: DatasetSpec) -> LabeledPointCloud:
    points = np.asarray(points, dtype=np.float64)
    if spec.jitter > 0:
        rng = np.random.default_rng([spec.seed, 1])
        points = points + rng.normal(0.0, spec.jitter, points.shape)
    return LabeledPointCloud(points, labels, truth)


def gen_d1(spec: DatasetSpec) -> LabeledPointCloud:
    """Nine disks inside the nine holes of the unit square, grid sampled."""
    if spec.family != "D-I":
        raise ValueError("gen_d1 needs family D-I")
    g = {**D1_GEOMETRY, **spec.geometry}
    centers = np.array([(x, y) for x in g["centers"] for y in g["centers"]])
    r_hole, r_disk = g["hole_radius"], g["disk_radius"]
    if not 0 < r_disk < r_hole:
        raise GenerationError("disk radius must be positive and below the hole radius")
    area = 1.0 - len(centers) * math.pi * (r_hole**2 - r_disk**2)
    h = math.sqrt(area / spec.n_train)
    ticks = np.arange(h / 2, 1.0, h)
    xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
    pts = np.c_[xx.ravel(), yy.ravel()]
    dist = np.sqrt(((pts[:, None, :] - centers[None, :, :]) ** 2).sum(-1))
    nearest = dist.min(axis=1)
    in_disk = nearest < r_disk
    in_square = nearest > r_hole
    labels = np.where(in_disk, 0, 1)
    keep = in_disk | in_square
    counts = np.bincount(dist[in_disk].argmin(axis=1), minlength=len(centers))
    if counts.min() < 4:
        raise GenerationError(f"grid step {h:.4f} too coarse: a disk holds {counts.min()} points")
    truth = {"a": BettiVector((len(centers), 0)), "b": BettiVector((1, len(centers)))}
    return _finish(pts[keep], labels[keep], truth, spec)


def _solid_torus(rng, n: int, R: float, r: float) -> np.ndarray:
    """Uniform sample of the solid torus around the unit circle in the xy-plane."""
    out = np.empty((0, 3))
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        cand = rng.uniform([-(R + r), -(R + r), -r], [R + r, R + r, r], size=(m, 3))
        rho = np.hypot(cand[:, 0], cand[:, 1])
        ok = (rho - R) ** 2 + cand[:, 2] ** 2 <= r * r
        out = np.vstack([out, cand[ok]])
    return out[:n]


def gen_d2(spec: DatasetSpec) -> LabeledPointCloud:
    """Nine pairs of linked solid tori sampled uniformly by rejection.

    In each pair the class-a torus lies around a circle in the xy-plane and
    the class-b torus around a circle in the xz-plane through the center of
    the first, so the two core circles are linked.
    """
    if spec.family != "D-II":
        raise ValueError("gen_d2 needs family D-II")
    g = {**D2_GEOMETRY, **spec.geometry}
    R, r = g["R"], g["r"]
    # Core circles of a linked pair are exactly R apart.
    if 2 * r >= R:
        raise GenerationError("tube radius too large: linked tori would overlap")
    if g["spacing"] <= 3 * R + 2 * r:
        raise GenerationError("pair spacing too small: neighboring pairs would overlap")
    rng = np.random.default_rng([spec.seed, 2])
    centers = _grid_centers(g["spacing"], g["grid"])
    per = max(1, spec.n_train // (2 * len(centers)))
    pts, labels = [], []
    swap = np.array([[1.0, 0, 0], [0, 0, 1.0], [0, 1.0, 0]])
    for c in centers:
        pts.append(_solid_torus(rng, per, R, r) + c)
        labels.append(np.zeros(per, dtype=np.int64))
        pts.append(_solid_torus(rng, per, R, r) @ swap + c + np.array([R, 0, 0]))
        labels.append(np.ones(per, dtype=np.int64))
    m = len(centers)
    truth = {"a": BettiVector((m, m, 0)), "b": BettiVector((m, m, 0))}
    return _finish(np.vstack(pts), np.concatenate(labels), truth, spec)


def gen_d3(spec: DatasetSpec) -> LabeledPointCloud:
    """Nine units of sphere / sphere / ball on a cubic grid.

    Class a is the middle spherical shell; class b is the outer shell plus
    the inner ball.
    """
    if spec.family != "D-III":
        raise ValueError("gen_d3 needs family D-III")
    g = {**D3_GEOMETRY, **spec.geometry}
    outer, middle, ball, t = g["outer"], g["middle"], g["ball"], g["thickness"]
    if not ball + t < middle - t / 2 < middle + t / 2 < outer - t / 2:
        raise GenerationError("shells overlap")
    shell = lambda rad: 4 * math.pi * rad**2 * t
    unit_volume = shell(outer) + shell(middle) + 4 / 3 * math.pi * ball**3
    centers = _grid_centers(g["spacing"], g["grid"])
    h = (unit_volume * len(centers) / spec.n_train) ** (1 / 3)
    if h >= t:
        raise GenerationError(f"shell thickness {t} below grid resolution {h:.4f}")
    half = outer + t
    ticks = np.arange(-half + h / 2, half, h)
    xx, yy, zz = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    local = np.c_[xx.ravel(), yy.ravel(), zz.ravel()]
    rho = np.linalg.norm(local, axis=1)
    is_a = np.abs(rho - middle) < t / 2
    is_b = (np.abs(rho - outer) < t / 2) | (rho < ball)
    keep = is_a | is_b
    local, lab = local[keep], np.where(is_a[keep], 0, 1)
    pts = np.vstack([local + c for c in centers])
    labels = np.tile(lab, len(centers))
    m = len(centers)
    truth = {"a": BettiVector((m, 0, m)), "b": BettiVector((2 * m, 0, m))}
    return _finish(pts, labels, truth, spec)


FAMILIES = {"D-I": gen_d1, "D-II": gen_d2, "D-III": gen_d3}


def generate(spec: DatasetSpec) -> LabeledPointCloud:
    if spec.family == "CSV":
        if not spec.path:
            raise ValueError("CSV family needs a path")
        return load_csv(spec.path)
    return FAMILIES[spec.family](spec)


def default_spec(family: str, scale: float = 1.0, seed: int = 0) -> DatasetSpec:
    """Spec with the original sample sizes multiplied by ``scale``."""
    n_train, n_hom = TABLE_SIZES[family]
    return DatasetSpec(family, max(1, round(n_train * scale)), max(1, round(n_hom * scale)), seed)


def stratified_subsample(data: LabeledPointCloud, n: int, rng) -> np.ndarray:
    """Indices of a uniform random subsample, class proportions preserved."""
    if n >= data.n:
        return np.arange(data.n)
    out = []
    for label in (0, 1):
        idx = np.flatnonzero(data.labels == label)
        take = round(n * len(idx) / data.n)
        out.append(np.sort(rng.choice(idx, size=min(take, len(idx)), replace=False)))
    return np.sort(np.concatenate(out))


def homology_sample(data: LabeledPointCloud, spec: DatasetSpec, rng=None) -> LabeledPointCloud:
    if rng is None:
        rng = np.random.default_rng([spec.seed, 3])
    return data.subset(stratified_subsample(data, spec.n_homology, rng))


# ---------------------------------------------------------------------------
# single manifolds

KNOWN_MANIFOLDS = {
    "sphere": (1, 0, 1),
    "torus_surface": (1, 2, 1),
    "solid_torus": (1, 1, 0),
}


def sample_known_manifold(kind: str, n: int, seed: int = 0) -> LabeledPointCloud:
    """Uniform sample of a standard manifold in R^3, all points in class a."""
    rng = np.random.default_rng([seed, 4])
    if kind == "sphere":
        v = rng.normal(size=(n, 3))
        pts = v / np.linalg.norm(v, axis=1, keepdims=True)
    elif kind == "torus_surface":
        R, r = 2.0, 1.0
        # Rejection on the angle around the tube gives uniform surface density.
        pts = np.empty((0, 3))
        while len(pts) < n:
            m = 2 * (n - len(pts)) + 16
            theta, phi, u = rng.uniform(0, 2 * np.pi, m), rng.uniform(0, 2 * np.pi, m), rng.uniform(0, 1, m)
            ok = u <= (R + r * np.cos(theta)) / (R + r)
            theta, phi = theta[ok], phi[ok]
            pts = np.vstack([pts, np.c_[(R + r * np.cos(theta)) * np.cos(phi),
                                        (R + r * np.cos(theta)) * np.sin(phi),
                                        r * np.sin(theta)]])
        pts = pts[:n]
    elif kind == "solid_torus":
        pts = _solid_torus(rng, n, 1.0, 0.35)
    else:
        raise ValueError(f"unknown manifold {kind!r}")
    truth = BettiVector(KNOWN_MANIFOLDS[kind])
    return LabeledPointCloud(pts, np.zeros(n, dtype=np.int64), {"a": truth})


# ---------------------------------------------------------------------------
# CSV


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def parse_csv(text: str) -> LabeledPointCloud:
    """Rows ``x_1,...,x_d,label``; a non-numeric first row is a header."""
    rows = list(csv.reader(io.StringIO(text)))
    points, labels = [], []
    width = None
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        row = [c.strip() for c in row]
        if lineno == 1 and not all(_is_number(c) for c in row[:-1]):
            continue
        if len(row) < 2:
            raise CsvFormatError(lineno, "need at least one coordinate and a label")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise CsvFormatError(lineno, f"expected {width} fields, got {len(row)}")
        try:
            coords = [float(c) for c in row[:-1]]
        except ValueError:
            raise CsvFormatError(lineno, f"non-numeric coordinate in {row[:-1]}") from None
        if not all(math.isfinite(c) for c in coords):
            raise CsvFormatError(lineno, "non-finite coordinate")
        token = row[-1].lower()
        if token not in _LABEL_TOKENS:
            raise CsvFormatError(lineno, f"unknown label {row[-1]!r}")
        points.append(coords)
        labels.append(_LABEL_TOKENS[token])
    if not points:
        raise CsvFormatError(len(rows), "no data rows")
    return LabeledPointCloud(np.array(points), np.array(labels))


def load_csv(path) -> LabeledPointCloud:
    return parse_csv(Path(path).read_text(encoding="utf-8"))


def format_csv(data: LabeledPointCloud, header: bool = False) -> str:
    buf = io.StringIO()
    if header:
        buf.write(",".join([f"x{i + 1}" for i in range(data.d)] + ["label"]) + "\n")
    for p, lab in zip(data.points, data.labels):
        buf.write(",".join(repr(float(v)) for v in p) + "," + LABELS[lab] + "\n")
    return buf.getvalue()


def save_csv(data: LabeledPointCloud, path, header: bool = False) -> None:
    Path(path).write_text(format_csv(data, header), encoding="utf-8")
