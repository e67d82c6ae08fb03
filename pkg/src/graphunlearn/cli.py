"""Command-line entry points.

Subcommands: ``train``, ``unlearn``, ``retrain``, ``bench``, ``attack-eval``,
``sweep``, ``gen-sbm``, ``convert``.  Options may come from a TOML or JSON
config file (``--config``), with command-line flags taking precedence.
Reports are written as ``<out>.json`` plus ``<out>.csv``, both carrying the
resolved configuration and its hash.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .datasets import (
    DatasetDescriptor,
    convert_tabular,
    gen_sbm,
    load_dataset,
    load_request,
    save_graph_json,
)
from .engine import GifConfig, unlearn
from .errors import GraphUnlearnError, InputError
from .evaluation import (
    ExperimentSpec,
    Report,
    ReportRow,
    _aggregate,
    _retrain_full,
    efficacy_experiment,
    lambda_sweep,
    utility_benchmark,
)
from .graph import apply_request
from .models import BACKBONE_KINDS, make_backbone

COMMANDS = (
    "train", "unlearn", "retrain", "bench", "attack-eval", "sweep", "gen-sbm", "convert",
)


@dataclass
class RunConfig:
    """Fully resolved inputs of one CLI invocation."""

    command: str
    dataset: DatasetDescriptor | None = None
    backbone_kind: str = "sgc"
    backbone_params: dict = field(default_factory=dict)
    gif: GifConfig = GifConfig()
    method: str = "gif"
    task: str = "edge"
    ratio: float = 0.05
    attack_ratio: float = 0.3
    methods: tuple = ("retrain", "gif")
    scale_grid: tuple = (1e1, 1e2, 1e3, 1e4, 1e5)
    seeds: tuple = (0,)
    repetitions: int = 1
    request_path: str | None = None
    out: str | None = None
    include_timings: bool = True
    generator: dict = field(default_factory=dict)
    convert_paths: dict = field(default_factory=dict)

    def make_backbone(self):
        return make_backbone(self.backbone_kind, **self.backbone_params)

    def experiment_spec(self) -> ExperimentSpec:
        if self.dataset is None:
            raise InputError("no dataset given (use --dataset or a config file)")
        return ExperimentSpec(
            dataset=self.dataset,
            backbone=self.make_backbone(),
            task=self.task,
            ratio=self.ratio,
            attack_ratio=self.attack_ratio,
            methods=self.methods,
            scale_grid=self.scale_grid,
            seeds=self.seeds,
            repetitions=self.repetitions,
            gif=self.gif,
        )


def _write_report(report: Report, out: str | None, include_timings: bool) -> list:
    written = []
    if out:
        json_path, csv_path = f"{out}.json", f"{out}.csv"
        with open(json_path, "w") as handle:
            handle.write(report.to_json(include_timings=include_timings))
        with open(csv_path, "w") as handle:
            handle.write(report.to_csv(include_timings=include_timings))
        written = [json_path, csv_path]
    for label, stats in sorted(report.aggregates.items()):
        f1 = stats.get("f1_mean")
        secs = stats.get("seconds_mean")
        f1_text = "-" if f1 is None else f"{f1:.4f}"
        secs_text = "-" if secs is None else f"{secs:.3f}s"
        print(f"{label}: f1={f1_text} time={secs_text} n={stats['count']}")
    return written


def _single_row_report(config: RunConfig, rows: list) -> Report:
    spec = {
        "command": config.command,
        "dataset": None if config.dataset is None else asdict(config.dataset),
        "backbone": {"kind": config.backbone_kind, **config.backbone_params},
        "gif": asdict(config.gif),
        "method": config.method,
        "request_path": config.request_path,
    }
    return Report(spec=spec, rows=rows, aggregates=_aggregate(rows))


def _run_train(config: RunConfig) -> Report:
    graph = load_dataset(config.dataset)
    model = config.make_backbone()
    start = time.perf_counter()
    model.fit(graph)
    seconds = time.perf_counter() - start
    row = ReportRow(
        "train", "train", int(model.seed), 0,
        f1=model.score(graph), seconds=seconds, delta_norm=0.0,
        detail=f"objective={model.final_objective_:.6g};grad_norm={model.grad_norm_:.3g}",
    )
    return _single_row_report(config, [row])


def _load_request(config: RunConfig):
    if config.request_path is None:
        raise InputError("this command needs --request <file>")
    return load_request(config.request_path)


def _run_unlearn(config: RunConfig) -> Report:
    graph = load_dataset(config.dataset)
    model = config.make_backbone().fit(graph)
    request = _load_request(config)
    gif = replace(config.gif, method="if" if config.method == "if" else "gif")
    outcome = unlearn(model, graph, request, gif)
    remaining = apply_request(graph, request)
    row = ReportRow(
        config.method, config.method, int(model.seed), 0,
        f1=model.score(remaining, params=outcome.new_params),
        seconds=outcome.wall_clock,
        delta_norm=float(np.linalg.norm(outcome.delta_theta)),
        residual=outcome.solver_residual,
        scale=outcome.scale,
        detail=";".join(outcome.flags),
    )
    return _single_row_report(config, [row])


def _run_retrain(config: RunConfig) -> Report:
    graph = load_dataset(config.dataset)
    model = config.make_backbone()
    request = _load_request(config)
    baseline = config.make_backbone().fit(graph)
    params, seconds, remaining, fresh = _retrain_full(graph, request, model)
    row = ReportRow(
        "retrain", "retrain", int(model.seed), 0,
        f1=fresh.score(remaining, params=params),
        seconds=seconds,
        delta_norm=float(np.linalg.norm(params.flat - baseline.params_.flat)),
    )
    return _single_row_report(config, [row])


def _run_gen_sbm(config: RunConfig) -> list:
    if not config.out:
        raise InputError("gen-sbm needs --out <path>")
    spec = dict(config.generator)
    graph = gen_sbm(**spec)
    save_graph_json(graph, config.out)
    print(f"wrote {config.out}: {graph!r}")
    return [config.out]


def _run_convert(config: RunConfig) -> list:
    paths = config.convert_paths
    for key in ("edges", "features_csv"):
        if not paths.get(key):
            raise InputError(f"convert needs --{key.replace('_', '-')} <file>")
    if not config.out:
        raise InputError("convert needs --out <basename>")
    content_out = f"{config.out}.content"
    cites_out = f"{config.out}.cites"
    convert_tabular(paths["edges"], paths["features_csv"], content_out, cites_out)
    print(f"wrote {content_out} and {cites_out}")
    return [content_out, cites_out]


def run(config: RunConfig) -> int:
    """Execute a resolved configuration; returns a process exit status."""
    if config.command == "gen-sbm":
        _run_gen_sbm(config)
        return 0
    if config.command == "convert":
        _run_convert(config)
        return 0
    if config.command == "train":
        report = _run_train(config)
    elif config.command == "unlearn":
        report = _run_unlearn(config)
    elif config.command == "retrain":
        report = _run_retrain(config)
    elif config.command == "bench":
        report = utility_benchmark(config.experiment_spec())
    elif config.command == "attack-eval":
        report = efficacy_experiment(config.experiment_spec())
    elif config.command == "sweep":
        report = lambda_sweep(config.experiment_spec())
    else:
        raise InputError(f"unknown command {config.command!r}")
    _write_report(report, config.out, config.include_timings)
    return 0


def _load_config_file(path: str) -> dict:
    with open(path, "rb") as handle:
        if path.endswith(".toml"):
            return tomllib.load(handle)
        return json.loads(handle.read().decode())


def _dataset_from_value(value, file_config: dict) -> DatasetDescriptor | None:
    """Build a descriptor from --dataset or the config file's [dataset] table."""
    table = dict(file_config.get("dataset", {}))
    if value:
        if value.endswith(".json"):
            table = {"name": table.get("name", value), "graph_path": value,
                     **{k: v for k, v in table.items() if k.startswith("split_")}}
        else:
            base = value
            for suffix in (".content", ".cites"):
                if base.endswith(suffix):
                    base = base[: -len(suffix)]
            table.setdefault("name", base)
            table["content_path"] = f"{base}.content"
            table["cites_path"] = f"{base}.cites"
            table.pop("graph_path", None)
            table.pop("blocks", None)
    if not table:
        return None
    return DatasetDescriptor(**table)


def _parse_seeds(text: str) -> tuple:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise InputError(f"bad seed list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphunlearn",
        description="Train shallow graph models and unlearn deleted data from them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument("--dataset", help="citation file base, .content/.cites pair, or .json graph")
        p.add_argument("--backbone", choices=sorted(BACKBONE_KINDS))
        p.add_argument("--task", choices=("node", "edge", "feature"))
        p.add_argument("--ratio", type=float, help="unlearning ratio")
        p.add_argument("--attack-ratio", type=float, dest="attack_ratio")
        p.add_argument("--method", choices=("gif", "if", "retrain", "closed-form"))
        p.add_argument("--methods", help="comma-separated method list for benchmarks")
        p.add_argument("--solver", choices=("neumann", "direct"))
        p.add_argument("--lambda", type=float, dest="scale", help="iterative-solver scale")
        p.add_argument("--iters", type=int, dest="iterations")
        p.add_argument("--gamma", type=float, dest="l2", help="L2 strength (must match training)")
        p.add_argument("--seed", type=int)
        p.add_argument("--seeds", help="comma-separated seed list for benchmarks")
        p.add_argument("--repetitions", type=int)
        p.add_argument("--request", dest="request_path", help="request file (header + elements)")
        p.add_argument("--out", help="output path base (reports) or file (gen-sbm)")
        p.add_argument(
            "--strict-paper-lambda", action="store_true",
            help="multiply the Hessian by the scale inside the solver recursion "
                 "instead of dividing by it",
        )
        p.add_argument(
            "--no-timings", action="store_true",
            help="write zeros for wall-clock fields so identical runs produce "
                 "byte-identical reports",
        )
        if name == "gen-sbm":
            p.add_argument("--blocks", type=int)
            p.add_argument("--nodes-per-block", type=int, dest="nodes_per_block")
            p.add_argument("--p-intra", type=float, dest="p_intra")
            p.add_argument("--p-inter", type=float, dest="p_inter")
            p.add_argument("--feature-dim", type=int, dest="feature_dim")
            p.add_argument("--split-fraction", type=float, dest="split_fraction")
            p.add_argument("--split-seed", type=int, dest="split_seed")
        if name == "convert":
            p.add_argument("--edges", help="edge list file, one 'u v' pair per line")
            p.add_argument("--features-csv", dest="features_csv",
                           help="CSV of node_id,features...,label rows")
    return parser


def _first(*values):
    for value in values:
        if value is not None:
            return value
    return None


def build_config(args: argparse.Namespace) -> RunConfig:
    file_config = _load_config_file(args.config) if args.config else {}

    backbone_table = dict(file_config.get("backbone", {}))
    backbone_kind = _first(args.backbone, backbone_table.pop("kind", None), "sgc")
    if args.seed is not None:
        backbone_table["seed"] = args.seed
    if getattr(args, "l2", None) is not None:
        backbone_table["l2"] = args.l2

    gif_table = dict(file_config.get("gif", {}))
    for key, value in (
        ("solver", args.solver),
        ("scale", args.scale),
        ("iterations", args.iterations),
        ("l2", args.l2),
    ):
        if value is not None:
            gif_table[key] = value
    if args.strict_paper_lambda:
        gif_table["scale_as_multiplier"] = True
    gif = GifConfig(**gif_table)

    experiment = dict(file_config.get("experiment", {}))
    seeds = experiment.get("seeds")
    if args.seeds:
        seeds = _parse_seeds(args.seeds)
    elif args.seed is not None and seeds is None:
        seeds = (args.seed,)
    methods = experiment.get("methods")
    if args.methods:
        methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())

    generator = dict(file_config.get("generator", {}))
    for key in ("blocks", "nodes_per_block", "p_intra", "p_inter", "feature_dim",
                "split_fraction", "split_seed"):
        value = getattr(args, key, None)
        if value is not None:
            generator[key] = value
    if args.command == "gen-sbm" and args.seed is not None:
        generator["seed"] = args.seed

    return RunConfig(
        command=args.command,
        dataset=_dataset_from_value(args.dataset, file_config),
        backbone_kind=backbone_kind,
        backbone_params=backbone_table,
        gif=gif,
        method=_first(args.method, "gif"),
        task=_first(args.task, experiment.get("task"), "edge"),
        ratio=_first(args.ratio, experiment.get("ratio"), 0.05),
        attack_ratio=_first(args.attack_ratio, experiment.get("attack_ratio"), 0.3),
        methods=tuple(methods) if methods else ("retrain", "gif"),
        scale_grid=tuple(experiment.get("scale_grid", (1e1, 1e2, 1e3, 1e4, 1e5))),
        seeds=tuple(seeds) if seeds else (0,),
        repetitions=_first(args.repetitions, experiment.get("repetitions"), 1),
        request_path=_first(args.request_path, file_config.get("request")),
        out=_first(args.out, file_config.get("out")),
        include_timings=not args.no_timings,
        generator=generator,
        convert_paths={
            "edges": getattr(args, "edges", None),
            "features_csv": getattr(args, "features_csv", None),
        },
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = build_config(args)
        return run(config)
    except GraphUnlearnError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
