"""Experiment harness: retrain oracle, adversarial edges, and benchmark runs.

Runners produce :class:`Report` objects whose rows are deterministic given
the experiment spec (wall-clock fields aside).  Independent (seed, method)
cells may be fanned out to a thread pool capped by the ``UNLEARN_THREADS``
environment variable; timings are most trustworthy with a single worker.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import clone

from .datasets import DatasetDescriptor, load_dataset, random_split
from .engine import GifConfig, closed_form_one_layer, hessian_operator, suggest_scale, unlearn
from .errors import GraphUnlearnError, InputError
from .graph import EDGE, FEATURE, NODE, Graph, UnlearnRequest, apply_request, normalize_edge
from .models import BaseBackbone, ModelParams

HARNESS_METHODS = ("retrain", "gif", "if", "closed-form")

_SPLIT_SALT = 101
_REQUEST_SALT = 202
_ATTACK_SALT = 303


def worker_count() -> int:
    env = os.environ.get("UNLEARN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _map_cells(func, cells):
    workers = min(worker_count(), max(len(cells), 1))
    if workers <= 1:
        return [func(cell) for cell in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, cells))


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one experiment needs: data, model, task, methods, seeds."""

    dataset: DatasetDescriptor
    backbone: BaseBackbone
    task: str = EDGE
    ratio: float = 0.05
    attack_ratio: float = 0.0
    methods: tuple = ("retrain", "gif")
    scale_grid: tuple = (1e1, 1e2, 1e3, 1e4, 1e5)
    seeds: tuple = (0,)
    repetitions: int = 1
    gif: GifConfig = GifConfig()
    resplit_per_seed: bool = True

    def __post_init__(self):
        if self.task not in (NODE, EDGE, FEATURE):
            raise InputError(f"unknown task {self.task!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise InputError("ratio must lie in [0, 1]")
        if self.attack_ratio < 0:
            raise InputError("attack_ratio must be nonnegative")
        for method in self.methods:
            if method not in HARNESS_METHODS:
                raise InputError(f"unknown method {method!r}")
        if not self.seeds:
            raise InputError("seeds must be non-empty")
        if self.repetitions < 1:
            raise InputError("repetitions must be at least 1")

    def resolved(self) -> dict:
        """Plain-dict echo of the spec, for report provenance."""
        from dataclasses import asdict

        return {
            "dataset": asdict(self.dataset),
            "backbone": self.backbone.config(),
            "task": self.task,
            "ratio": self.ratio,
            "attack_ratio": self.attack_ratio,
            "methods": list(self.methods),
            "scale_grid": list(self.scale_grid),
            "seeds": list(self.seeds),
            "repetitions": self.repetitions,
            "gif": asdict(self.gif),
            "resplit_per_seed": self.resplit_per_seed,
        }


@dataclass(frozen=True)
class ReportRow:
    """One (method, seed, repetition) cell."""

    label: str
    method: str
    seed: int
    repetition: int
    f1: float | None = None
    seconds: float | None = None
    delta_norm: float | None = None
    residual: float | None = None
    scale: float | None = None
    status: str = "ok"
    detail: str = ""

    def sort_key(self):
        return (self.label, self.method, self.seed, self.repetition)


CSV_COLUMNS = (
    "label", "method", "seed", "repetition", "f1", "seconds",
    "delta_norm", "residual", "scale", "status", "detail",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, 17-significant-digit floats."""
    parts: list[str] = []
    _write_json(obj, parts)
    return "".join(parts)


def _write_json(obj, parts):
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value) or math.isinf(value):
            parts.append(f'"{value}"')
        else:
            parts.append(format(value, ".17g"))
    elif isinstance(obj, dict):
        parts.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                parts.append(",")
            _write_json(str(key), parts)
            parts.append(":")
            _write_json(obj[key], parts)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, item in enumerate(obj):
            if i:
                parts.append(",")
            _write_json(item, parts)
        parts.append("]")
    else:
        raise InputError(f"cannot serialize {type(obj).__name__}")


@dataclass
class Report:
    """Per-run rows plus per-label mean/std aggregates."""

    spec: dict
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.spec).encode()).hexdigest()

    def mean_f1(self, label: str) -> float:
        return self.aggregates[label]["f1_mean"]

    def mean_seconds(self, label: str) -> float:
        return self.aggregates[label]["seconds_mean"]

    def ok_rows(self, label: str | None = None) -> list:
        return [
            r
            for r in self.rows
            if r.status == "ok" and (label is None or r.label == label)
        ]

    def to_json(self, include_timings: bool = True) -> str:
        payload = {
            "config_hash": self.config_hash,
            "spec": self.spec,
            "rows": [self._row_dict(r, include_timings) for r in self.rows],
            "aggregates": self._aggregates_payload(include_timings),
        }
        return canonical_json(payload) + "\n"

    def to_csv(self, include_timings: bool = True) -> str:
        lines = [f"# config_hash={self.config_hash}", ",".join(CSV_COLUMNS)]
        for row in self.rows:
            record = self._row_dict(row, include_timings)
            lines.append(",".join(_fmt(record[c]) for c in CSV_COLUMNS))
        return "\n".join(lines) + "\n"

    @staticmethod
    def _row_dict(row: ReportRow, include_timings: bool) -> dict:
        record = {c: getattr(row, c) for c in CSV_COLUMNS}
        if not include_timings:
            record["seconds"] = 0.0 if record["seconds"] is not None else None
        return record

    def _aggregates_payload(self, include_timings: bool) -> dict:
        if include_timings:
            return self.aggregates
        out = {}
        for label, stats in self.aggregates.items():
            stats = dict(stats)
            for key in ("seconds_mean", "seconds_std"):
                if stats.get(key) is not None:
                    stats[key] = 0.0
            out[label] = stats
        return out


def _aggregate(rows) -> dict:
    out: dict[str, dict] = {}
    labels = sorted({r.label for r in rows})
    for label in labels:
        ok = [r for r in rows if r.label == label and r.status == "ok"]
        stats: dict[str, float | int | None] = {
            "count": len(ok),
            "failed": sum(1 for r in rows if r.label == label and r.status != "ok"),
        }
        for attr in ("f1", "seconds", "delta_norm", "residual"):
            values = [getattr(r, attr) for r in ok if getattr(r, attr) is not None]
            if values:
                stats[f"{attr}_mean"] = float(np.mean(values))
                stats[f"{attr}_std"] = float(np.std(values))
            else:
                stats[f"{attr}_mean"] = None
                stats[f"{attr}_std"] = None
        out[label] = stats
    return out


def _finish(spec: ExperimentSpec, rows) -> Report:
    rows = sorted(rows, key=ReportRow.sort_key)
    return Report(spec=spec.resolved(), rows=list(rows), aggregates=_aggregate(rows))


def retrain(graph: Graph, request: UnlearnRequest, model: BaseBackbone):
    """Train a fresh copy of ``model`` on the remaining graph.

    Returns ``(params, seconds)``; the timer covers applying the request and
    the full training run.
    """
    params, seconds, _, _ = _retrain_full(graph, request, model)
    return params, seconds


def _retrain_full(graph, request, model):
    start = time.perf_counter()
    remaining = apply_request(graph, request)
    if remaining.train_nodes.size == 0:
        raise InputError("remaining graph has no training nodes")
    fresh = clone(model)
    fresh.fit(remaining)
    seconds = time.perf_counter() - start
    return fresh.params_, seconds, remaining, fresh


def adversarial_edges(graph: Graph, ratio: float, seed) -> frozenset:
    """Sample new cross-class edges, ``ceil(ratio * |E|)`` of them.

    Pairs are drawn uniformly without replacement from node pairs with
    differing labels that are not already connected; deterministic per seed.
    """
    if ratio <= 0:
        raise InputError("attack ratio must be positive")
    if graph.num_classes < 2:
        raise InputError("graph needs at least two classes")
    wanted = math.ceil(ratio * graph.num_edges)
    counts = np.bincount(graph.labels, minlength=graph.num_classes)
    total_cross = (graph.num_nodes**2 - int(counts @ counts)) // 2
    existing_cross = sum(
        1 for u, v in graph.edges if graph.labels[u] != graph.labels[v]
    )
    if wanted > total_cross - existing_cross:
        raise InputError(
            f"requested {wanted} adversarial edges but only "
            f"{total_cross - existing_cross} cross-class pairs are available"
        )
    rng = np.random.default_rng(seed)
    chosen: set = set()
    labels = graph.labels
    while len(chosen) < wanted:
        batch = rng.integers(0, graph.num_nodes, size=(2 * (wanted - len(chosen)) + 8, 2))
        for u, v in batch:
            if len(chosen) == wanted:
                break
            if u == v or labels[u] == labels[v]:
                continue
            edge = normalize_edge(int(u), int(v))
            if edge in graph.edges or edge in chosen:
                continue
            chosen.add(edge)
    return frozenset(chosen)


def inject_edges(graph: Graph, new_edges) -> Graph:
    """Graph with extra edges added; rejects duplicates and self-loops."""
    new_edges = {normalize_edge(u, v) for u, v in new_edges}
    overlap = new_edges & graph.edges
    if overlap:
        raise InputError(f"{len(overlap)} injected edges already exist")
    return Graph(
        graph.num_nodes,
        graph.edges | new_edges,
        graph.features,
        graph.labels,
        graph.train_mask,
        graph.test_mask,
    )


def sample_request(graph: Graph, task: str, ratio: float, seed) -> UnlearnRequest:
    """Uniform request over the training subgraph's elements.

    Node and feature tasks sample training nodes; edge tasks sample edges
    whose endpoints are both training nodes.  ``ceil(ratio * eligible)``
    elements are drawn without replacement.
    """
    if not 0.0 <= ratio <= 1.0:
        raise InputError("ratio must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    if task in (NODE, FEATURE):
        eligible = graph.train_nodes
        count = math.ceil(ratio * eligible.size)
        picked = rng.choice(eligible, size=count, replace=False) if count else []
        ids = frozenset(int(v) for v in picked)
        return UnlearnRequest.nodes(ids) if task == NODE else UnlearnRequest.features(ids)
    if task == EDGE:
        mask = graph.train_mask
        eligible = [e for e in graph.edge_array.tolist() if mask[e[0]] and mask[e[1]]]
        count = math.ceil(ratio * len(eligible))
        picked = rng.choice(len(eligible), size=count, replace=False) if count else []
        return UnlearnRequest.edges(tuple(eligible[i]) for i in picked)
    raise InputError(f"unknown task {task!r}")


def _tuned_gif_config(spec: ExperimentSpec, model, graph, method: str) -> GifConfig:
    """Resolve the solver scale before the timed run when none is pinned.

    The tuned value sits a little above half the largest Hessian eigenvalue,
    which contracts both ends of the spectrum fastest while staying inside
    the convergence region; tuning happens once per cell, outside the timed
    unlearning computation, like any other hyperparameter search.
    """
    config = replace(spec.gif, method="gif" if method == "gif" else "if")
    if config.scale is None and config.solver == "neumann":
        operator = hessian_operator(model, graph, model.params_, form=config.hessian_form)
        sigma = suggest_scale(operator, iterations=50, margin=1.0)
        # Richardson-style balance between the spectrum ends; the l2 term is
        # the known lower edge.  Never drop below the convergence threshold.
        balanced = (sigma + 2.0 * operator.l2) / 2.0
        config = replace(config, scale=max(balanced, 0.55 * sigma))
    return config


def _method_row(spec, model, graph, request, remaining, method, seed, rep, label=None):
    label = label or method
    theta0 = model.params_
    try:
        if method == "retrain":
            params, seconds, remaining_r, fresh = _retrain_full(graph, request, model)
            f1 = fresh.score(remaining_r, params=params)
            delta = float(np.linalg.norm(params.flat - theta0.flat))
            return ReportRow(label, method, seed, rep, f1, seconds, delta)
        if method == "closed-form":
            start = time.perf_counter()
            per_class = closed_form_one_layer(model, graph, request)
            new_params = theta0.replace(theta0.flat + per_class.ravel())
            seconds = time.perf_counter() - start
            f1 = model.score(remaining, params=new_params)
            delta = float(np.linalg.norm(per_class))
            return ReportRow(label, method, seed, rep, f1, seconds, delta)
        config = _tuned_gif_config(spec, model, graph, method)
        outcome = unlearn(model, graph, request, config)
        f1 = model.score(remaining, params=outcome.new_params)
        return ReportRow(
            label, method, seed, rep, f1, outcome.wall_clock,
            float(np.linalg.norm(outcome.delta_theta)),
            outcome.solver_residual, outcome.scale,
            detail=";".join(outcome.flags),
        )
    except GraphUnlearnError as exc:
        return ReportRow(
            label, method, seed, rep, status="failed", detail=f"{exc.code}: {exc}"
        )


def _cell_graph(spec: ExperimentSpec, base: Graph, seed: int) -> Graph:
    if spec.resplit_per_seed:
        return random_split(base, spec.dataset.split_fraction, [seed, _SPLIT_SALT])
    return base


def _fitted_model(spec: ExperimentSpec, graph: Graph, seed: int) -> BaseBackbone:
    model = clone(spec.backbone)
    model.set_params(seed=seed)
    return model.fit(graph)


def utility_benchmark(spec: ExperimentSpec) -> Report:
    """Train once per seed, apply a sampled request with every method, score.

    Reproduces the utility/efficiency comparison: per-method test micro-F1
    and wall-clock seconds, aggregated over seeds and repetitions.
    """
    base = load_dataset(spec.dataset)

    def run(cell):
        seed, rep = cell
        graph = _cell_graph(spec, base, seed)
        model = _fitted_model(spec, graph, seed)
        request = sample_request(graph, spec.task, spec.ratio, [seed, rep, _REQUEST_SALT])
        remaining = apply_request(graph, request)
        return [
            _method_row(spec, model, graph, request, remaining, m, seed, rep)
            for m in spec.methods
        ]

    cells = [(seed, rep) for seed in spec.seeds for rep in range(spec.repetitions)]
    rows = [row for batch in _map_cells(run, cells) for row in batch]
    return _finish(spec, rows)


def efficacy_experiment(spec: ExperimentSpec) -> Report:
    """Inject cross-class edges, train on the corrupted graph, unlearn them.

    Emits a ``clean`` ceiling row (training on the untouched graph) and a
    ``corrupted`` row per seed alongside the unlearning methods, which are
    scored on the graph with the injected edges removed again.
    """
    if spec.attack_ratio < 0:
        raise InputError("attack_ratio must be nonnegative")
    base = load_dataset(spec.dataset)

    def run(cell):
        seed, rep = cell
        graph = _cell_graph(spec, base, seed)
        clean_model = _fitted_model(spec, graph, seed)
        clean_f1 = clean_model.score(graph)
        if spec.attack_ratio > 0:
            injected = adversarial_edges(graph, spec.attack_ratio, [seed, rep, _ATTACK_SALT])
            corrupted = inject_edges(graph, injected)
        else:
            injected = frozenset()
            corrupted = graph
        model = _fitted_model(spec, corrupted, seed)
        corrupted_f1 = model.score(corrupted)
        rows = [
            ReportRow("clean", "clean", seed, rep, clean_f1, delta_norm=0.0),
            ReportRow("corrupted", "corrupted", seed, rep, corrupted_f1, delta_norm=0.0),
        ]
        request = UnlearnRequest.edges(injected)
        remaining = apply_request(corrupted, request)
        for method in spec.methods:
            rows.append(
                _method_row(spec, model, corrupted, request, remaining, method, seed, rep)
            )
        return rows

    cells = [(seed, rep) for seed in spec.seeds for rep in range(spec.repetitions)]
    rows = [row for batch in _map_cells(run, cells) for row in batch]
    return _finish(spec, rows)


def lambda_sweep(spec: ExperimentSpec) -> Report:
    """Edge-unlearning benchmark across the scale grid.

    Each grid value gets its own labeled rows; divergent solves become
    ``failed`` rows rather than aborting the sweep.  Retrain rows are
    included once per seed as the reference.
    """
    if not spec.scale_grid:
        raise InputError("scale_grid must be non-empty")
    base = load_dataset(spec.dataset)
    grid = sorted(float(s) for s in spec.scale_grid)

    def run(cell):
        seed, rep = cell
        graph = _cell_graph(spec, base, seed)
        model = _fitted_model(spec, graph, seed)
        request = sample_request(graph, spec.task, spec.ratio, [seed, rep, _REQUEST_SALT])
        remaining = apply_request(graph, request)
        rows = [_method_row(spec, model, graph, request, remaining, "retrain", seed, rep)]
        for scale in grid:
            sub = replace(spec, gif=replace(spec.gif, scale=scale, method="gif"))
            rows.append(
                _method_row(
                    sub, model, graph, request, remaining, "gif", seed, rep,
                    label=f"gif@scale={scale:g}",
                )
            )
        return rows

    cells = [(seed, rep) for seed in spec.seeds for rep in range(spec.repetitions)]
    rows = [row for batch in _map_cells(run, cells) for row in batch]
    return _finish(spec, rows)


def ratio_sweep(spec: ExperimentSpec, ratios) -> Report:
    """Utility benchmark repeated over a grid of unlearning ratios."""
    ratios = sorted(float(r) for r in ratios)
    all_rows = []
    for ratio in ratios:
        sub = replace(spec, ratio=ratio)
        report = utility_benchmark(sub)
        for row in report.rows:
            all_rows.append(replace(row, label=f"{row.label}@ratio={ratio:g}"))
    return _finish(spec, all_rows)
