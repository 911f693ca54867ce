"""Command-line benchmark runner: suite generation, (parallel) scenario
execution, report emission, and SVG rendering.

    bench run --planner sampler --suite-seed 2024 --jobs 4 --out results/
    bench render --scenario s.json --trace t.json --out scene.svg
    bench compare results_a/report.json results_b/report.json --out cmp.md
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .metrics import (
    MetricConfig,
    ScenarioScore,
    SuiteReport,
    compare_reports,
    reference_progress,
    report_to_markdown,
    score_scenario,
    scores_to_csv,
    suite_report,
)
from .planners import PLANNER_NAMES, make_planner
from .render import render_svg
from .scenarios import (
    ScenarioSpec,
    ScenarioType,
    generate_benchmark_suite,
    load_scenario,
    save_scenario,
)
from .simulation import SimConfig, SimTrace, run_closed_loop


@dataclass
class RunConfig:
    planner: str
    master_seed: int = 2024
    types: Optional[list[str]] = None
    jobs: int = 1
    out_dir: str = "bench_out"
    metric_config_path: Optional[str] = None
    planner_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("parallelism must be >= 1")
        if self.planner not in PLANNER_NAMES:
            raise ValueError(f"unknown planner {self.planner!r}; "
                             f"known: {', '.join(PLANNER_NAMES)}")


def _load_metric_config(path: Optional[str]) -> MetricConfig:
    if path is None:
        return MetricConfig()
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return MetricConfig(**data)


def _select_scenarios(cfg: RunConfig) -> list[tuple[int, ScenarioSpec]]:
    suite = generate_benchmark_suite(cfg.master_seed)
    wanted = None
    if cfg.types:
        wanted = {ScenarioType(t.strip().lower()) for t in cfg.types}
    return [(i, spec) for i, spec in enumerate(suite)
            if wanted is None or spec.type in wanted]


def _run_one(args) -> tuple[int, ScenarioScore, str, list[dict]]:
    """Worker: simulate one scenario and score it. Top-level so process
    pools can pickle it."""
    index, spec, planner_name, planner_params, metric_cfg = args
    planner = make_planner(planner_name, planner_params)
    trace = run_closed_loop(spec, planner, SimConfig())
    ref = reference_progress(spec)
    score = score_scenario(trace, spec, metric_cfg, ref_progress=ref)
    llm_events = [e for e in trace.events if e.get("kind") == "llm_query"]
    return index, score, trace.to_json(), llm_events


def run_benchmark(cfg: RunConfig) -> SuiteReport:
    """Execute the selected scenarios (concurrently up to cfg.jobs), write
    traces, the per-scenario CSV, and the suite report; return the report."""
    metric_cfg = _load_metric_config(cfg.metric_config_path)
    selected = _select_scenarios(cfg)
    out = Path(cfg.out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "scenarios").mkdir(parents=True, exist_ok=True)

    tasks = [(i, spec, cfg.planner, cfg.planner_params, metric_cfg)
             for i, spec in selected]
    results: dict[int, tuple[ScenarioScore, str, list[dict]]] = {}
    if cfg.jobs == 1:
        for task in tasks:
            index, score, trace_json, llm = _run_one(task)
            results[index] = (score, trace_json, llm)
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for index, score, trace_json, llm in pool.map(_run_one, tasks):
                results[index] = (score, trace_json, llm)

    scores: list[ScenarioScore] = []
    hash_lines: list[str] = []
    for index, spec in selected:
        score, trace_json, llm = results[index]
        scores.append(score)
        name = f"{index:03d}_{spec.type.value}"
        (out / "traces" / f"{name}.json").write_text(trace_json, encoding="utf-8")
        save_scenario(spec, out / "scenarios" / f"{name}.json")
        digest = hashlib.sha256(trace_json.encode()).hexdigest()
        hash_lines.append(f"{name} {digest}")
        if llm:
            (out / "llm").mkdir(exist_ok=True)
            (out / "llm" / f"{name}.json").write_text(
                json.dumps(llm, sort_keys=True, indent=1), encoding="utf-8")

    report = suite_report(scores)
    (out / "scores.csv").write_text(scores_to_csv(scores), encoding="utf-8")
    (out / "trace_hashes.txt").write_text("\n".join(hash_lines) + "\n",
                                          encoding="utf-8")
    (out / "report.md").write_text(report_to_markdown(report, cfg.planner),
                                   encoding="utf-8")
    (out / "report.json").write_text(json.dumps({
        "planner": cfg.planner,
        "overall": report.overall,
        "per_type": report.per_type,
        "drivable_sub": report.drivable_sub,
        "goal_sub": report.goal_sub,
        "no_collision_sub": report.no_collision_sub,
        "n_scenarios": report.n_scenarios,
    }, sort_keys=True, indent=1), encoding="utf-8")
    return report


def _report_from_json(path: str) -> tuple[str, SuiteReport]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    report = SuiteReport(
        per_type=data["per_type"], overall=data["overall"],
        drivable_sub=data["drivable_sub"], goal_sub=data["goal_sub"],
        no_collision_sub=data["no_collision_sub"],
        n_scenarios=data["n_scenarios"])
    return data["planner"], report


def _parse_params(items: Sequence[str]) -> dict:
    params = {}
    for item in items or ():
        if "=" not in item:
            raise ValueError(f"--planner-param expects k=v, got {item!r}")
        key, value = item.split("=", 1)
        params[key.strip()] = value.strip()
    return params


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench",
        description="Closed-loop long-tail driving benchmark runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute benchmark scenarios")
    run_p.add_argument("--planner", required=True, choices=PLANNER_NAMES)
    run_p.add_argument("--suite-seed", type=int, default=2024)
    run_p.add_argument("--types", type=str, default=None,
                       help="comma-separated scenario families")
    run_p.add_argument("--jobs", type=int, default=1)
    run_p.add_argument("--out", type=str, default="bench_out")
    run_p.add_argument("--metric-config", type=str, default=None)
    run_p.add_argument("--planner-param", action="append", default=[],
                       metavar="K=V")

    render_p = sub.add_parser("render", help="render a scenario or trace to SVG")
    render_p.add_argument("--scenario", required=True)
    render_p.add_argument("--trace", default=None)
    render_p.add_argument("--tick", type=int, default=None)
    render_p.add_argument("--out", required=True)

    cmp_p = sub.add_parser("compare", help="merge reports into a leaderboard")
    cmp_p.add_argument("reports", nargs="*")
    cmp_p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        cfg = RunConfig(
            planner=args.planner,
            master_seed=args.suite_seed,
            types=args.types.split(",") if args.types else None,
            jobs=args.jobs,
            out_dir=args.out,
            metric_config_path=args.metric_config,
            planner_params=_parse_params(args.planner_param),
        )
        report = run_benchmark(cfg)
        print(report_to_markdown(report, cfg.planner))
        return 0
    if args.command == "render":
        spec = load_scenario(args.scenario)
        trace = SimTrace.load(args.trace) if args.trace else None
        svg = render_svg(spec, trace=trace, tick=args.tick)
        Path(args.out).write_text(svg, encoding="utf-8")
        print(f"wrote {args.out}")
        return 0
    if args.command == "compare":
        named = [_report_from_json(p) for p in args.reports]
        markdown = compare_reports(named)
        Path(args.out).write_text(markdown, encoding="utf-8")
        print(markdown)
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
