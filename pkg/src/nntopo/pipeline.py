"""Experiment orchestration: scale search, per-layer homology, reports.

The flow for one experiment is

1. generate the data set and pick one scale (k*, eps*) on the input layer,
2. train a batch of networks and keep the well-trained ones,
3. for every kept network, push a fresh stratified homology subsample
   through the network and compute the Betti numbers of each class at
   every layer with that same (k*, eps*),
4. aggregate and write CSV files.

Training runs and (run, layer, class) homology computations are
independent jobs.  They are seeded from the master seed and their index
alone, so results do not depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import resource
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .datagen import LABELS, DatasetSpec, LabeledPointCloud, generate, stratified_subsample
from .nn import Mlp, TrainConfig, TrainResult, config_dict, forward_trace, train
from .persistence import Barcode, barcode_from_points
from .simplicial import BettiVector
from .vr import (
    BudgetExceeded,
    ParameterError,
    ScaleParams,
    as_cloud,
    flag_betti,
    graph_from_neighbors,
    hop_bitsets,
    hop_threshold,
    knn_indices,
    vr_betti,
)

DEFAULT_K_RANGE = tuple(range(5, 51))
DEFAULT_EPS_RANGE = tuple(j / 2 for j in range(1, 17))
DEFAULT_BUDGET = 3_000_000


class ScaleSearchError(RuntimeError):
    """No (k, eps) reproduced the ground truth; ``result`` holds the map."""

    def __init__(self, message: str, result: "ScaleSearchResult"):
        super().__init__(message)
        self.result = result


class ExperimentError(RuntimeError):
    def __init__(self, message: str, diagnostics: list | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class LayerHomologyError(RuntimeError):
    def __init__(self, layer: int, cls: str, cause: Exception):
        super().__init__(f"layer {layer}, class {cls}: {cause}")
        self.layer = layer
        self.cls = cls
        self.cause = cause


def topological_complexity(b: Iterable[int]) -> int:
    """Sum of the Betti numbers."""
    return int(sum(b))


def distinct_points(points) -> np.ndarray:
    """The cloud as a set: repeated rows collapse to one point.

    ReLU layers map whole regions onto the same point, and the image of a
    sample under a layer is a set of points, not a list.
    """
    x = as_cloud(points)
    return np.unique(x, axis=0)


def middle_of_longest_run(values: Sequence, ok: Sequence[bool]):
    """Middle element of the longest run of consecutive ``ok`` entries.

    Ties between runs of equal length go to the first one; within a run of
    even length the lower middle is taken.  Returns None if nothing is ok.
    """
    best: tuple[int, int] | None = None
    start = None
    for i, good in enumerate(list(ok) + [False]):
        if good and start is None:
            start = i
        elif not good and start is not None:
            if best is None or i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    if best is None:
        return None
    run = values[best[0]:best[1]]
    return run[(len(run) - 1) // 2]


# ---------------------------------------------------------------------------
# scale search


@dataclass
class ScaleSearchResult:
    """Outcome of the two-stage (k, eps) search.

    ``cells`` maps each evaluated (k, eps) to a per-class Betti vector, or
    to None when the complex exceeded the size budget.  Stage-1 cells only
    know beta_0 and are stored with ``stage1`` set instead.
    """

    truth: dict[str, BettiVector]
    k_range: tuple[int, ...]
    eps_range: tuple[float, ...]
    stage1: dict[int, dict[str, int]] = field(default_factory=dict)
    cells: dict[tuple[int, float], dict[str, BettiVector | None]] = field(default_factory=dict)
    chosen: ScaleParams | None = None

    def cell_valid(self, k: int, eps: float) -> bool:
        cell = self.cells.get((k, eps))
        if cell is None:
            return False
        return all(cell.get(c) is not None and tuple(cell[c]) == tuple(t) for c, t in self.truth.items())

    @property
    def valid_region(self) -> frozenset[tuple[int, float]]:
        return frozenset(key for key in self.cells if self.cell_valid(*key))

    def stage1_valid(self, k: int) -> bool:
        row = self.stage1.get(k)
        return row is not None and all(row[c] == t[0] for c, t in self.truth.items())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        dmax = max(len(t) for t in self.truth.values()) - 1
        w.writerow(["stage", "k", "eps", "class"] + [f"b{i}" for i in range(dmax + 1)]
                   + ["status", "valid", "chosen"])
        for k in sorted(self.stage1):
            for c in self.truth:
                w.writerow([1, k, 1.0, c, self.stage1[k][c]] + [""] * dmax
                           + ["ok", int(self.stage1_valid(k)), 0])
        for (k, eps) in sorted(self.cells):
            chosen = int(self.chosen is not None and (self.chosen.k, self.chosen.eps) == (k, eps))
            for c in self.truth:
                b = self.cells[(k, eps)].get(c)
                if b is None:
                    w.writerow([2, k, eps, c] + [""] * (dmax + 1) + ["budget", 0, chosen])
                else:
                    w.writerow([2, k, eps, c] + list(b) + ["ok", int(self.cell_valid(k, eps)), chosen])
        return buf.getvalue()


def _as_class_map(clouds, truth) -> tuple[dict[str, np.ndarray], dict[str, BettiVector]]:
    if isinstance(clouds, Mapping):
        if not isinstance(truth, Mapping) or set(truth) != set(clouds):
            raise ParameterError("need one ground truth per class")
        return ({c: as_cloud(clouds[c]) for c in clouds},
                {c: BettiVector(tuple(truth[c])) for c in clouds})
    return {"a": as_cloud(clouds)}, {"a": BettiVector(tuple(truth))}


def select_scale(clouds, truth, k_range: Sequence[int] = DEFAULT_K_RANGE,
                 eps_range: Sequence[float] = DEFAULT_EPS_RANGE, budget: int | None = DEFAULT_BUDGET,
                 full_map: bool = False, log: Callable[[str], None] | None = None) -> ScaleSearchResult:
    """Pick (k*, eps*) whose VR complexes reproduce the known Betti numbers.

    ``clouds`` is either one point cloud with a single ``truth`` vector or
    a mapping class -> cloud with a matching mapping of truths; a scale is
    valid only if it is right for every class at once.  The length of the
    truth vectors fixes dmax.

    Stage 1 sweeps k at eps = 1 and keeps the k whose beta_0 is right;
    k* is the middle of the longest run of such k.  Stage 2 sweeps eps at
    k* and takes the middle of the longest run of fully valid eps.  If no
    eps works at k*, the other stage-1 k values are tried in order of
    distance from k*.  With ``full_map`` every (k, eps) cell is evaluated
    as well, for a complete validity picture.
    """
    cmap, tmap = _as_class_map(clouds, truth)
    k_range = tuple(int(k) for k in k_range)
    eps_range = tuple(float(e) for e in eps_range)
    if not k_range or not eps_range:
        raise ParameterError("empty search range")
    if list(eps_range) != sorted(set(eps_range)) or list(k_range) != sorted(set(k_range)):
        raise ParameterError("search ranges must be strictly increasing")
    dmax = len(next(iter(tmap.values()))) - 1
    result = ScaleSearchResult(tmap, k_range, eps_range)
    say = log or (lambda msg: None)

    # At eps = 1 two points are joined iff they are within two hops, so
    # beta_0 is the number of components of the k-NN graph itself.
    rankings = {c: knn_indices(x, min(k_range[-1], x.shape[0] - 1)) for c, x in cmap.items()
                if x.shape[0] > 1}
    for k in k_range:
        result.stage1[k] = {}
        for c, x in cmap.items():
            if x.shape[0] == 1:
                result.stage1[k][c] = 1
            else:
                result.stage1[k][c] = graph_from_neighbors(rankings[c], min(k, x.shape[0] - 1)).components()
        say(f"stage 1 k={k} beta0={result.stage1[k]}")

    def evaluate(k: int, eps: float) -> bool:
        if (k, eps) not in result.cells:
            cell: dict[str, BettiVector | None] = {}
            for c, x in cmap.items():
                try:
                    if x.shape[0] == 1:
                        cell[c] = vr_betti(x, k, eps, dmax)
                    else:
                        graph = graph_from_neighbors(rankings[c], min(k, x.shape[0] - 1))
                        cell[c] = flag_betti(hop_bitsets(graph, hop_threshold(eps)), dmax, budget=budget)
                except BudgetExceeded:
                    cell[c] = None
                    break
            result.cells[(k, eps)] = cell
            say(f"stage 2 k={k} eps={eps} {cell}")
        return result.cell_valid(k, eps)

    def sweep(k: int) -> float | None:
        ok = []
        for eps in eps_range:
            ok.append(evaluate(k, eps))
            cell = result.cells[(k, eps)]
            if any(v is None for v in cell.values()):
                # Complexes only grow with eps; larger scales are over budget too.
                ok.extend([False] * (len(eps_range) - len(ok)))
                break
            if all(tuple(b) == trivial for b in cell.values()) and not ok[-1]:
                # Every class has become a single contractible blob; growing
                # eps only fills the complexes further.
                ok.extend([False] * (len(eps_range) - len(ok)))
                break
        return middle_of_longest_run(eps_range, ok)

    trivial = (1,) + (0,) * dmax
    good_k = [result.stage1_valid(k) for k in k_range]
    k_star = middle_of_longest_run(k_range, good_k)
    if k_star is not None:
        candidates = sorted((k for k, g in zip(k_range, good_k) if g),
                            key=lambda k: (abs(k - k_star), k))
        for k in candidates:
            eps_star = sweep(k)
            if eps_star is not None:
                result.chosen = ScaleParams(k, eps_star)
                break
    if full_map:
        for k in k_range:
            for eps in eps_range:
                evaluate(k, eps)
    if result.chosen is None:
        raise ScaleSearchError("no (k, eps) reproduces the ground truth", result)
    return result


# ---------------------------------------------------------------------------
# per-layer homology


@dataclass(frozen=True)
class TopologyProfile:
    """Betti vectors of one class at each layer of a trace."""

    cls: str
    betti: tuple[BettiVector, ...]
    scale: ScaleParams
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def omega(self) -> tuple[int, ...]:
        return tuple(topological_complexity(b) for b in self.betti)


def layer_betti(points, scale: ScaleParams, dmax: int = 2, budget: int | None = None) -> BettiVector:
    """Betti numbers of a (de-duplicated) layer image at a fixed scale."""
    return vr_betti(distinct_points(points), scale.k, scale.eps, dmax, budget=budget)


def track_topology(net: Mlp, data: LabeledPointCloud, scale: ScaleParams, dmax: int = 2,
                   classes: Sequence[str] = LABELS, budget: int | None = None,
                   audit: list | None = None, meta: dict | None = None) -> tuple[TopologyProfile, ...]:
    """Betti numbers of each class at every layer of ``net`` on ``data``.

    Layers run from 0 (the input) to l + 1 (the softmax scores).  Every
    homology call uses ``scale``; each call is appended to ``audit`` as
    (layer, class, k, eps) when a list is given.
    """
    trace = forward_trace(net, data.points)
    out = []
    for c in classes:
        mask = data.labels == LABELS.index(c)
        if not mask.any():
            raise ParameterError(f"class {c} has no points")
        betti = []
        for j, layer in enumerate(trace):
            if audit is not None:
                audit.append((j, c, scale.k, scale.eps))
            try:
                betti.append(layer_betti(layer[mask], scale, dmax, budget))
            except Exception as exc:
                raise LayerHomologyError(j, c, exc) from exc
        out.append(TopologyProfile(c, tuple(betti), scale, dict(meta or {})))
    return tuple(out)


def default_layers(n_trace: int) -> list[int]:
    """First, middle and last layer of a trace with ``n_trace`` entries."""
    return sorted({0, (n_trace - 1) // 2, n_trace - 1})


def track_persistence(net: Mlp, data: LabeledPointCloud, k: int, layers: Sequence[int] | None = None,
                      dmax: int = 2, eps_max: float = 2.0, classes: Sequence[str] = LABELS
                      ) -> dict[tuple[int, str], Barcode]:
    """Hop-metric barcodes of each class at the requested layers.

    The filtration runs over the half-integer scales up to ``eps_max``.
    By default the first, middle and last entries of the trace are used.
    """
    trace = forward_trace(net, data.points)
    if layers is None:
        layers = default_layers(len(trace))
    out = {}
    for j in layers:
        if not 0 <= j < len(trace):
            raise ParameterError(f"layer {j} outside 0..{len(trace) - 1}")
        for c in classes:
            pts = trace[j][data.labels == LABELS.index(c)]
            if len(pts) == 0:
                continue
            out[(j, c)] = barcode_from_points(distinct_points(pts), k, eps_max, dmax)
    return out


def barcode_complexity(barcode: Barcode, eps: float, dmax: int = 2) -> int:
    """Topological complexity read off a barcode at scale eps."""
    return topological_complexity(barcode.betti_at(eps, dmax))


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaResult:
    points: np.ndarray
    components: np.ndarray  # rows are principal directions
    explained_variance_ratio: np.ndarray
    rank_deficient: bool


def pca_project(points, components: int = 2, tol: float = 1e-12, max_iter: int = 2000,
                seed: int = 0) -> PcaResult:
    """Project a cloud onto its leading principal directions.

    The covariance eigenvectors come from block subspace iteration with a
    Rayleigh-Ritz step, run on a block a few columns wider than requested so
    that nearly equal eigenvalues still converge.  Each direction is signed
    so that its largest-magnitude coordinate is positive.  Directions with
    (numerically) zero variance are dropped and ``rank_deficient`` is set.
    """
    x = as_cloud(points)
    n, d = x.shape
    if components < 1:
        raise ParameterError("components must be positive")
    if n < components:
        raise ParameterError(f"need at least {components} points")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / max(n - 1, 1)
    total = float(np.trace(cov))
    want = min(components, d)
    block = min(d, want + 5)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(d, block)))
    prev = None
    for _ in range(max_iter):
        q, _ = np.linalg.qr(cov @ q)
        ritz, vecs = np.linalg.eigh(q.T @ cov @ q)
        order = np.argsort(ritz)[::-1]
        ritz, vecs = ritz[order], vecs[:, order]
        q = q @ vecs
        if prev is not None and np.allclose(ritz[:want], prev, rtol=tol, atol=tol * max(total, 1e-300)):
            break
        prev = ritz[:want].copy()
    values = np.clip(ritz[:want], 0.0, None)
    basis = q[:, :want].T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    keep = values > max(total, 1e-300) * 1e-10 if total > 0 else np.zeros(want, dtype=bool)
    rank_deficient = bool(want < components or not keep.all())
    basis, values = basis[keep], values[keep]
    ratio = values / total if total > 0 else values
    return PcaResult(centered @ basis.T, basis, ratio, rank_deficient)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentConfig:
    """One row of the reproduction grid.

    ``repetitions`` networks are trained; with ``target_successes`` set,
    training continues (up to ``max_attempts``) until that many are
    well-trained, and only the first ``target_successes`` are kept.
    ``scale`` fixes (k, eps); when None it is searched on the input layer.
    ``memory_mb`` caps the address space of each worker process.
    """

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    widths: tuple[int, ...] = (2,) + (15,) * 9 + (2,)
    activation: str = "relu"
    train: TrainConfig = field(default_factory=TrainConfig)
    repetitions: int = 30
    target_successes: int | None = None
    max_attempts: int | None = None
    scale: ScaleParams | None = None
    k_range: tuple[int, ...] = DEFAULT_K_RANGE
    eps_range: tuple[float, ...] = DEFAULT_EPS_RANGE
    dmax: int = 2
    workers: int = 1
    memory_mb: int | None = None
    budget: int | None = DEFAULT_BUDGET
    persist_layers: tuple[int, ...] = ()
    persist_eps_max: float = 2.0
    pca_layers: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.k_range = tuple(int(k) for k in self.k_range)
        self.eps_range = tuple(float(e) for e in self.eps_range)
        self.persist_layers = tuple(int(j) for j in self.persist_layers)
        if self.pca_layers is not None:
            self.pca_layers = tuple(int(j) for j in self.pca_layers)
        if self.repetitions < 1:
            raise ParameterError("repetitions must be >= 1")
        if self.target_successes is not None and self.target_successes < 1:
            raise ParameterError("target_successes must be >= 1")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")
        if self.dataset.n_homology > self.dataset.n_train:
            raise ParameterError("homology subsample larger than the data set")

    def attempts(self) -> int:
        if self.target_successes is None:
            return self.repetitions
        return self.max_attempts or max(self.repetitions, 3 * self.target_successes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"] = asdict(self.dataset)
        d["train"] = config_dict(self.train)
        d["scale"] = None if self.scale is None else {"k": self.scale.k, "eps": self.scale.eps}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        if "dataset" in d and isinstance(d["dataset"], Mapping):
            d["dataset"] = DatasetSpec(**d["dataset"])
        if "train" in d and isinstance(d["train"], Mapping):
            d["train"] = TrainConfig(**d["train"])
        if d.get("scale") is not None and isinstance(d["scale"], Mapping):
            d["scale"] = ScaleParams(int(d["scale"]["k"]), float(d["scale"]["eps"]))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunRecord:
    run: int
    seed: int
    epochs: int
    train_accuracy: float
    test_accuracy: float
    well_trained: bool
    net: Mlp | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    scale: ScaleParams
    search: ScaleSearchResult | None
    runs: list[RunRecord]
    profiles: list[tuple[int, TopologyProfile]]
    failures: list[tuple[int, int, str, str]]
    audit: list[tuple[int, int, str, int, float]]
    barcodes: dict[tuple[int, int, str], Barcode]
    pca: dict[int, tuple[np.ndarray, np.ndarray]]
    timings: dict[str, float]

    @property
    def success_rate(self) -> float:
        return sum(r.well_trained for r in self.runs) / len(self.runs)


def run_seed(master: int, run: int) -> int:
    """Seed of run ``run``; independent of scheduling."""
    return int(np.random.SeedSequence([master, run]).generate_state(1)[0])


def _limit_memory(memory_mb: int | None) -> None:
    if memory_mb:
        limit = int(memory_mb) << 20
        resource.setrlimit(resource.RLIMIT_AS, (limit, limit))


def _train_job(args) -> RunRecord:
    run, seed, widths, activation, train_cfg, points, labels = args
    net = Mlp.init(widths, activation, seed)
    res: TrainResult = train(net, points, labels, replace(train_cfg, seed=seed))
    return RunRecord(run, seed, res.epochs, res.train_accuracy, res.test_accuracy, res.well_trained, res.net)


def _homology_job(args):
    run, layer, cls, points, scale, dmax, budget = args
    try:
        return run, layer, cls, layer_betti(points, scale, dmax, budget), ""
    except BudgetExceeded as exc:
        return run, layer, cls, None, f"budget: {exc}"
    except MemoryError:
        return run, layer, cls, None, "memory cap exceeded"


def _persist_job(args):
    run, layer, cls, points, k, eps_max, dmax = args
    return run, layer, cls, barcode_from_points(distinct_points(points), k, eps_max, dmax)


class _JobQueue:
    """Map jobs over a process pool, or inline when one worker is asked for."""

    def __init__(self, workers: int, memory_mb: int | None):
        self.pool = None
        if workers > 1:
            self.pool = ProcessPoolExecutor(max_workers=workers, initializer=_limit_memory,
                                            initargs=(memory_mb,))

    def map(self, fn, jobs: list) -> list:
        if self.pool is None:
            return [fn(j) for j in jobs]
        return list(self.pool.map(fn, jobs))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def run_experiment(cfg: ExperimentConfig, log: Callable[[str], None] | None = None) -> ExperimentResult:
    """Generate data, choose the scale, train, track topology, aggregate."""
    say = log or (lambda msg: None)
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    spec = replace(cfg.dataset, seed=cfg.seed)
    data = generate(spec)
    if data.d != cfg.widths[0]:
        raise ParameterError(f"data dimension {data.d} does not match input width {cfg.widths[0]}")
    timings["generate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    search = None
    scale = cfg.scale
    if scale is None:
        if not data.ground_truth:
            raise ParameterError("scale search needs ground truth; pass a fixed scale")
        rng = np.random.default_rng([cfg.seed, 11])
        sample = data.subset(stratified_subsample(data, spec.n_homology, rng))
        truth = {c: BettiVector(tuple(t)[:cfg.dmax + 1]) for c, t in data.ground_truth.items()}
        search = select_scale({c: sample.of_class(c) for c in truth}, truth, cfg.k_range,
                              cfg.eps_range, budget=cfg.budget, log=say)
        scale = search.chosen
    say(f"scale k={scale.k} eps={scale.eps}")
    timings["scale_search"] = time.perf_counter() - t0

    queue = _JobQueue(cfg.workers, cfg.memory_mb)
    try:
        t0 = time.perf_counter()
        runs: list[RunRecord] = []
        attempts = cfg.attempts()
        wave = cfg.workers if cfg.target_successes is not None else attempts
        next_run = 0
        while next_run < attempts:
            if cfg.target_successes is not None and sum(r.well_trained for r in runs) >= cfg.target_successes:
                break
            batch = range(next_run, min(next_run + wave, attempts))
            jobs = [(r, run_seed(cfg.seed, r), cfg.widths, cfg.activation, cfg.train,
                     data.points, data.labels) for r in batch]
            for rec in queue.map(_train_job, jobs):
                say(f"run {rec.run}: epochs={rec.epochs} train={rec.train_accuracy:.5f} "
                    f"test={rec.test_accuracy:.5f} well_trained={rec.well_trained}")
                runs.append(rec)
            next_run = batch.stop
        kept = [r for r in runs if r.well_trained]
        if cfg.target_successes is not None:
            kept = kept[:cfg.target_successes]
            # Attempts beyond the last kept success are not part of the record.
            if kept and len(kept) == cfg.target_successes:
                runs = [r for r in runs if r.run <= kept[-1].run]
        timings["train"] = time.perf_counter() - t0
        if not kept:
            raise ExperimentError("no well-trained network", [
                (r.run, r.epochs, r.train_accuracy, r.test_accuracy) for r in runs])

        t0 = time.perf_counter()
        jobs = []
        samples = {}
        audit = []
        for rec in kept:
            rng = np.random.default_rng([cfg.seed, rec.run, 13])
            sample = data.subset(stratified_subsample(data, spec.n_homology, rng))
            samples[rec.run] = sample
            trace = forward_trace(rec.net, sample.points)
            for c in LABELS:
                mask = sample.labels == LABELS.index(c)
                for j, layer in enumerate(trace):
                    audit.append((rec.run, j, c, scale.k, scale.eps))
                    jobs.append((rec.run, j, c, layer[mask], scale, cfg.dmax, cfg.budget))
        results = queue.map(_homology_job, jobs)
        table: dict[tuple[int, str], dict[int, BettiVector]] = {}
        failures = []
        for run, j, c, b, err in results:
            if b is None:
                failures.append((run, j, c, err))
            else:
                table.setdefault((run, c), {})[j] = b
        profiles = []
        n_layers = len(cfg.widths) + 1
        for rec in kept:
            for c in LABELS:
                layers = table.get((rec.run, c), {})
                if len(layers) != n_layers:
                    continue
                meta = {"seed": rec.seed, "widths": cfg.widths, "activation": cfg.activation}
                profiles.append((rec.run, TopologyProfile(
                    c, tuple(layers[j] for j in range(n_layers)), scale, meta)))
        timings["homology"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        barcodes: dict[tuple[int, int, str], Barcode] = {}
        if cfg.persist_layers:
            first = kept[0]
            trace = forward_trace(first.net, samples[first.run].points)
            pjobs = []
            for j in cfg.persist_layers:
                for c in LABELS:
                    mask = samples[first.run].labels == LABELS.index(c)
                    pjobs.append((first.run, j, c, trace[j][mask], scale.k, cfg.persist_eps_max, cfg.dmax))
            for run, j, c, bc in queue.map(_persist_job, pjobs):
                barcodes[(run, j, c)] = bc
        timings["persistence"] = time.perf_counter() - t0
    finally:
        queue.close()

    pca: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    first = kept[0]
    trace = forward_trace(first.net, samples[first.run].points)
    pca_layers = cfg.pca_layers if cfg.pca_layers is not None else default_layers(len(trace))
    for j in pca_layers:
        layer = trace[j]
        comps = min(3, layer.shape[1])
        pca[j] = (pca_project(layer, comps).points, samples[first.run].labels)

    return ExperimentResult(cfg, scale, search, runs, profiles, failures, audit, barcodes, pca, timings)


# ---------------------------------------------------------------------------
# aggregation and reports


def profiles_csv(profiles: Sequence[tuple[int, TopologyProfile]], dmax: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "seed", "layer", "class"] + [f"b{i}" for i in range(dmax + 1)] + ["omega"])
    for run, p in sorted(profiles, key=lambda rp: (rp[0], rp[1].cls)):
        for j, b in enumerate(p.betti):
            w.writerow([run, p.meta.get("seed", ""), j, p.cls] + list(b) + [topological_complexity(b)])
    return buf.getvalue()


def read_profiles_csv(text: str) -> list[dict]:
    return [{k: (v if k == "class" else int(v)) for k, v in row.items()}
            for row in csv.DictReader(io.StringIO(text))]


@dataclass(frozen=True)
class LayerStats:
    layer: int
    cls: str
    count: int
    mean: tuple[float, ...]  # per Betti number, then omega last
    std: tuple[float, ...] | None  # sample std (ddof=1); None for a single run

    @property
    def omega_mean(self) -> float:
        return self.mean[-1]

    @property
    def omega_std(self) -> float | None:
        return None if self.std is None else self.std[-1]

    @property
    def band(self) -> tuple[float, float]:
        """mean +- half a standard deviation of omega."""
        s = 0.0 if self.std is None else self.std[-1]
        return self.omega_mean - s / 2, self.omega_mean + s / 2


def aggregate(profiles: Sequence[tuple[int, TopologyProfile]]) -> list[LayerStats]:
    """Per (class, layer) mean and sample standard deviation over runs."""
    groups: dict[tuple[str, int], list[list[int]]] = {}
    for _, p in profiles:
        for j, b in enumerate(p.betti):
            groups.setdefault((p.cls, j), []).append(list(b) + [topological_complexity(b)])
    out = []
    for (c, j), rows in sorted(groups.items()):
        arr = np.asarray(rows, dtype=np.float64)
        mean = tuple(float(v) for v in arr.mean(axis=0))
        std = tuple(float(v) for v in arr.std(axis=0, ddof=1)) if len(rows) > 1 else None
        out.append(LayerStats(j, c, len(rows), mean, std))
    return out


def aggregate_csv(stats: Sequence[LayerStats], dmax: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [f"b{i}" for i in range(dmax + 1)] + ["omega"]
    w.writerow(["class", "layer", "runs"] + [f"mean_{n}" for n in names] + [f"std_{n}" for n in names]
               + ["omega_lo", "omega_hi"])
    for s in stats:
        std = ["" for _ in names] if s.std is None else [f"{v:.6f}" for v in s.std]
        lo, hi = s.band
        w.writerow([s.cls, s.layer, s.count] + [f"{v:.6f}" for v in s.mean] + std + [f"{lo:.6f}", f"{hi:.6f}"])
    return buf.getvalue()


def training_csv(runs: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "seed", "epochs", "train_accuracy", "test_accuracy", "well_trained"])
    for r in runs:
        w.writerow([r.run, r.seed, r.epochs, repr(r.train_accuracy), repr(r.test_accuracy), int(r.well_trained)])
    return buf.getvalue()


def omega_nonincreasing(stats: Sequence[LayerStats], cls: str, last: int) -> bool:
    """Mean omega never rises, from layer 0 to ``last``, beyond half a std.

    A step j -> j+1 passes when mean[j+1] <= mean[j] + std/2 with std the
    larger of the two layers' standard deviations.
    """
    rows = {s.layer: s for s in stats if s.cls == cls}
    for j in range(last):
        a, b = rows[j], rows[j + 1]
        slack = max(a.omega_std or 0.0, b.omega_std or 0.0) / 2
        if b.omega_mean > a.omega_mean + slack + 1e-12:
            return False
    return True


def write_report(result: ExperimentResult, outdir) -> Path:
    """Write the report bundle; only metadata.json carries timestamps."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "profiles.csv").write_text(profiles_csv(result.profiles, cfg.dmax))
    (out / "aggregate.csv").write_text(aggregate_csv(aggregate(result.profiles), cfg.dmax))
    (out / "training.csv").write_text(training_csv(result.runs))
    if result.search is not None:
        (out / "scale_search.csv").write_text(result.search.to_csv())
    else:
        (out / "scale_search.csv").write_text(f"stage,k,eps,status\nfixed,{result.scale.k},{result.scale.eps},fixed\n")
    if result.failures:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "layer", "class", "error"])
        w.writerows(result.failures)
        (out / "failures.csv").write_text(buf.getvalue())
    if result.barcodes:
        bdir = out / "barcodes"
        bdir.mkdir(exist_ok=True)
        for (run, j, c), bc in sorted(result.barcodes.items()):
            (bdir / f"run{run}_layer{j}_{c}.csv").write_text(bc.to_csv())
    if result.pca:
        pdir = out / "pca"
        pdir.mkdir(exist_ok=True)
        for j, (pts, labels) in sorted(result.pca.items()):
            (pdir / f"layer{j}.csv").write_text(projection_csv(pts, labels))
    meta = {
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "timings_s": {k: round(v, 3) for k, v in result.timings.items()},
        "success_rate": result.success_rate,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pid": os.getpid(),
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def projection_csv(points: np.ndarray, labels: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"pc{i + 1}" for i in range(points.shape[1])] + ["label"])
    for row, lab in zip(points, labels):
        w.writerow([repr(float(v)) for v in row] + [LABELS[int(lab)]])
    return buf.getvalue()


__all__ = [
    "DEFAULT_BUDGET", "DEFAULT_EPS_RANGE", "DEFAULT_K_RANGE", "ExperimentConfig", "ExperimentError",
    "ExperimentResult", "LayerHomologyError", "LayerStats", "PcaResult", "RunRecord",
    "ScaleSearchError", "ScaleSearchResult", "TopologyProfile", "aggregate", "aggregate_csv",
    "barcode_complexity", "default_layers", "distinct_points", "layer_betti", "middle_of_longest_run",
    "omega_nonincreasing", "pca_project", "profiles_csv", "read_profiles_csv", "run_experiment",
    "run_seed", "select_scale", "topological_complexity", "track_persistence", "track_topology",
    "training_csv", "write_report",
]
