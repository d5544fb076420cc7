"""Command-line entry point wiring all modules.

Subcommands: gen-scenarios, run, cluster-vocab, train-head, bench, render.
Usage errors exit 2; runtime errors exit 1 with a command-tagged message.
Every command is deterministic given its flags and seed; RADSTACK_SEED
overrides seed flags for CI.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import (
    BenchReport,
    TOGGLE_PRESETS,
    emit_report,
    measure_planner_latency,
    run_suite,
)
from .config import build_planner_config, build_sim_config, load_config, resolve_seed
from .errors import RadstackError
from .planhead import (
    CLASSIFY_AND_REFINE,
    CLASSIFY_ONLY,
    TrainingSample,
    harvest_training_samples,
    init_model,
    load_model,
    save_model,
    train,
)
from .planner import PLANNER_KINDS, Planner, PlannerConfig
from .scene import SCENARIO_KINDS, generate_synthetic_scenario, load_scenario, save_scenario
from .render import render_episode_svg
from .simulator import SimConfig, load_episode_log, record_agents, run_episode, save_episode_log
from .vocabulary import kmeans_cluster, load_vocabulary, save_vocabulary, slice_ego_windows

from dataclasses import replace


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radstack",
        description="Closed-loop motion planning stack: scenario generation, "
        "simulation, vocabulary clustering, plan-head training, benchmarking.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-scenarios", help="generate deterministic synthetic scenarios")
    p.add_argument("--kind", required=True, choices=SCENARIO_KINDS)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("run", help="run one closed-loop episode")
    p.add_argument("--scenario", required=True)
    p.add_argument("--planner", required=True, choices=[k.replace("_", "-") for k in PLANNER_KINDS])
    p.add_argument("--config", default=None)
    p.add_argument("--log", default=None, help="episode log output path")
    p.add_argument("--vocab", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--breakdowns", action="store_true", help="record every proposal's scores")

    p = sub.add_parser("cluster-vocab", help="cluster harvested ego trajectories")
    p.add_argument("--episodes", required=True, help="directory of episode logs")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--horizon-steps", type=int, default=40)
    p.add_argument("--stride", type=int, default=5)

    p = sub.add_parser("train-head", help="train the learned plan head")
    p.add_argument("--samples", required=True, help="directory of episode logs to harvest")
    p.add_argument("--vocab", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=5)

    p = sub.add_parser("bench", help="batch evaluation and latency harness")
    p.add_argument("--scenarios", required=True, help="directory of scenario files")
    p.add_argument("--planners", required=True, help="comma-separated planner kinds")
    p.add_argument("--toggles", default="full", help=f"comma-separated presets: {','.join(sorted(TOGGLE_PRESETS))}")
    p.add_argument("--latency-calls", type=int, default=0)
    p.add_argument("--report", required=True)
    p.add_argument("--format", default="structured", choices=("structured", "text_table", "svg_summary"))
    p.add_argument("--config", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--logs-dir", default=None, help="also save per-episode logs here")

    p = sub.add_parser("render", help="render an episode log to SVG")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handler = {
        "gen-scenarios": _cmd_gen_scenarios,
        "run": _cmd_run,
        "cluster-vocab": _cmd_cluster_vocab,
        "train-head": _cmd_train_head,
        "bench": _cmd_bench,
        "render": _cmd_render,
    }[args.command]
    try:
        return handler(args)
    except (RadstackError, ValueError, KeyError) as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return 1


def _cmd_gen_scenarios(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed0 = resolve_seed(args.seed)
    for i in range(args.count):
        seed = seed0 + i
        scenario = generate_synthetic_scenario(args.kind, seed)
        path = out / f"{args.kind}_{seed:04d}.json"
        save_scenario(scenario, path)
        print(path)
    return 0


def _load_run_context(args):
    doc = load_config(args.config) if args.config else {}
    planner_cfg = build_planner_config(doc)
    sim_cfg = build_sim_config(doc)
    if getattr(args, "breakdowns", False):
        sim_cfg = replace(sim_cfg, record_breakdowns=True)
    vocab = None
    vocab_path = args.vocab or doc.get("vocab_path")
    if vocab_path:
        vocab = load_vocabulary(vocab_path)
    model = None
    model_path = getattr(args, "model", None) or doc.get("model_path")
    if model_path:
        model = load_model(model_path)
    return planner_cfg, sim_cfg, vocab, model


def _cmd_run(args) -> int:
    kind = args.planner.replace("-", "_")
    scenario = load_scenario(args.scenario)
    planner_cfg, sim_cfg, vocab, model = _load_run_context(args)
    if kind in ("planhead", "hybrid") and model is None:
        raise RadstackError(
            f"missing config key 'model_path' (or --model) required for --planner {args.planner}"
        )
    planner = Planner(scenario, kind=kind, config=planner_cfg, vocabulary=vocab, model=model)
    log = run_episode(scenario, planner, sim_cfg)
    if args.log:
        save_episode_log(log, args.log)
    events = ", ".join(f"{name}@{tick}" for tick, name in log.events) or "none"
    print(f"planner={kind} ticks={len(log.records)} events: {events}")
    return 0


def _episode_logs(directory):
    paths = sorted(Path(directory).glob("*.jsonl"))
    if not paths:
        raise RadstackError(f"no episode logs (*.jsonl) found in {directory}")
    return [load_episode_log(p) for p in paths]


def _cmd_cluster_vocab(args) -> int:
    logs = _episode_logs(args.episodes)
    samples = []
    for log in logs:
        samples.extend(slice_ego_windows(log.ego_states(), args.horizon_steps, args.stride))
    if len(samples) < args.k:
        raise RadstackError(
            f"harvested only {len(samples)} samples, need at least k={args.k}"
        )
    vocab = kmeans_cluster(samples, args.k, seed=resolve_seed(args.seed), dt=logs[0].dt)
    save_vocabulary(vocab, args.out)
    print(f"clustered {len(samples)} samples into K={vocab.K} prototypes -> {args.out}")
    return 0


def _cmd_train_head(args) -> int:
    vocab = load_vocabulary(args.vocab)
    logs = _episode_logs(args.samples)
    samples = []
    for log in logs:
        ego_states = log.ego_states()
        agents_seq = [record_agents(rec) for rec in log.records]
        samples.extend(
            harvest_training_samples(log.scenario, ego_states, agents_seq, vocab.T, args.stride)
        )
    if not samples:
        raise RadstackError("no training samples could be harvested from the logs")
    seed = resolve_seed(args.seed)
    model = init_model(vocab, seed=seed)
    model, curve = train(model, samples, epochs=args.epochs, lr=args.lr, seed=seed)
    save_model(model, args.out)
    print(
        f"trained on {len(samples)} samples for {args.epochs} epochs: "
        f"loss {curve[0]:.4f} -> {curve[-1]:.4f} -> {args.out}"
    )
    return 0


def _cmd_bench(args) -> int:
    scenario_paths = sorted(Path(args.scenarios).glob("*.json"))
    if not scenario_paths:
        raise RadstackError(f"no scenario files (*.json) found in {args.scenarios}")
    items = [(p.stem, load_scenario(p)) for p in scenario_paths]
    planners = [k.strip().replace("-", "_") for k in args.planners.split(",") if k.strip()]
    toggles = [t.strip() for t in args.toggles.split(",") if t.strip()]
    doc = load_config(args.config) if args.config else {}
    planner_cfg = build_planner_config(doc)
    sim_cfg = build_sim_config(doc)
    vocab = load_vocabulary(args.vocab) if args.vocab else None
    model = load_model(args.model) if args.model else None
    for kind in planners:
        if kind in ("planhead", "hybrid") and model is None:
            raise RadstackError(f"missing config key 'model_path' (or --model) for planner {kind}")

    report = run_suite(
        items, planners, toggles, sim_cfg, planner_cfg,
        vocabulary=vocab, model=model, keep_logs=bool(args.logs_dir),
    )
    if args.logs_dir:
        logs_dir = Path(args.logs_dir)
        logs_dir.mkdir(parents=True, exist_ok=True)
        for (name, kind, toggle), log in report.logs.items():
            save_episode_log(log, logs_dir / f"{name}__{kind}__{toggle}.jsonl")

    if args.latency_calls > 0:
        fixture = items[0][1]
        for kind in planners:
            report.latency[kind] = measure_planner_latency(
                lambda kind=kind: Planner(
                    fixture, kind=kind, config=planner_cfg, vocabulary=vocab, model=model
                ),
                fixture,
                n_calls=args.latency_calls,
            )
        if model is not None:
            for budget in (CLASSIFY_ONLY, CLASSIFY_AND_REFINE):
                cfg_b = replace(planner_cfg, planhead_budget=budget)
                report.latency[f"planhead.{budget}"] = measure_planner_latency(
                    lambda cfg_b=cfg_b: Planner(fixture, kind="planhead", config=cfg_b, model=model),
                    fixture,
                    n_calls=args.latency_calls,
                )
    emit_report(report, args.format, args.report)
    print(f"{len(report.rows)} rows -> {args.report}")
    return 0


def _cmd_render(args) -> int:
    log = load_episode_log(args.log)
    render_episode_svg(log, args.out)
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
