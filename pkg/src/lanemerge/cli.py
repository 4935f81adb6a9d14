"""``lmo`` command line: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("lanemerge")

PACKAGED_MODEL = Path(__file__).parent / "data" / "dqn_positive.json"


def _emit(args, doc: dict, text: str) -> None:
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    else:
        print(text)


# --------------------------------------------------------------------------- extract

def cmd_extract(args) -> int:
    from .dataset.ngsim import ColumnMapping
    from .dataset.pipeline import run_extraction, write_dataset
    from .geometry import SafetyParams

    mapping = ColumnMapping.load(args.config) if args.config else ColumnMapping()
    params = SafetyParams()
    result = run_extraction(args.input, mapping, params)
    manifest = write_dataset(result, args.out, args.seed, params)
    doc = {k: manifest[k] for k in ("instances", "samples", "skipped_rows", "rejections", "merge_frame_safe_fraction")}
    _emit(args, doc, f"{doc['instances']} merge instances, {doc['samples']} samples written to {args.out}")
    return 0


def cmd_synth_trajectories(args) -> int:
    from .dataset.synth import HighwayConfig, generate_trajectories

    rows = generate_trajectories(args.out, args.seed, HighwayConfig(duration_s=args.duration))
    _emit(args, {"rows": rows, "path": str(args.out)}, f"wrote {rows} trajectory rows to {args.out}")
    return 0


# --------------------------------------------------------------------------- classifiers

def _table(reports) -> str:
    lines = [f"{'task':<8} {'algo':<5} {'chosen':<28} {'train':>7} {'val':>7} {'test':>7}"]
    for r in reports:
        param = r.guard_parameter or next(iter(r.chosen))
        pt = r.point(param, r.chosen[param])
        chosen = ", ".join(f"{k}={v}" for k, v in r.chosen.items())
        test = f"{100 * r.test_accuracy:7.2f}" if r.test_accuracy is not None else "      -"
        lines.append(
            f"{r.task:<8} {r.algorithm:<5} {chosen:<28} {100 * pt.train_accuracy:7.2f} "
            f"{100 * pt.validation_accuracy:7.2f} {test}"
        )
    return "\n".join(lines)


def cmd_train_classifiers(args) -> int:
    import numpy as np

    from .dataset.pipeline import load_samples, to_arrays
    from .ml.persist import save_model
    from .ml.sweep import ALGORITHMS, sweep_hyperparameters

    tasks = ("merge", "accel", "heading") if args.task == "all" else (args.task,)
    algos = ALGORITHMS if args.algo == "all" else (args.algo,)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    subsets = {name: load_samples(args.dataset, name) for name in ("train", "validation", "test")}
    reports = []
    for task in tasks:
        arrays = {name: to_arrays(s, task) for name, s in subsets.items()}
        n_classes = int(max(a[1].max() for a in arrays.values() if len(a[1])) + 1)
        for algo in algos:
            kw = {} if args.sweep else {"depth_grid": (16,), "estimator_grid": (100,), "k_grid": (50,)}
            report, model = sweep_hyperparameters(
                task, algo, arrays["train"][:2], arrays["validation"][:2], n_classes=n_classes, seed=args.seed, **kw
            )
            Xte, yte, _ = arrays["test"]
            if len(yte):
                report.test_accuracy = float(np.mean(model.predict(Xte) == yte))
            reports.append(report)
            if out:
                save_model(model, out / f"{task}_{algo}.json")
                (out / f"{task}_{algo}_sweep.json").write_text(
                    json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
                )
    _emit(args, {"reports": [r.to_json() for r in reports]}, _table(reports))
    return 0


# --------------------------------------------------------------------------- dqn

def cmd_train_dqn(args) -> int:
    from .dqn.experiment import (
        DEFAULT_TRAINING,
        dataset_splits,
        synthetic_splits,
        train_and_evaluate,
        with_overrides,
        write_outputs,
    )

    if args.env == "dataset":
        if not args.dataset:
            raise SystemExit("--env dataset needs --dataset <dir>")
        splits = dataset_splits(args.dataset)
    else:
        splits = synthetic_splits(args.scenarios, args.seed)
    config = with_overrides(DEFAULT_TRAINING, max_steps=args.steps, max_episodes=args.episodes)
    result, _, report = train_and_evaluate(splits, args.variant, args.seed, config)
    write_outputs(args.out, result, report, config)
    text = (
        f"{report.variant}: {report.steps} steps, {report.episodes} episodes in {report.seconds:.0f} s; "
        f"held-out success {100 * report.test_success_rate:.1f}% over {report.test_episodes}; "
        f"top-quartile reward mass {100 * report.top_quartile_mass_training:.1f}%"
    )
    _emit(args, report.to_json(), text)
    return 0


# --------------------------------------------------------------------------- orchestrator

def _load_model(path):
    from .dqn.network import DuelingNetwork

    path = Path(path) if path else PACKAGED_MODEL
    return DuelingNetwork.load(path)


def _load_road(path):
    from .orchestrator.road import RoadConfig
    from .sim.scenario import Scenario, four_vehicle_scenario

    if path in (None, "four-vehicle"):
        return four_vehicle_scenario().road_config()
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return Scenario.from_json(doc).road_config() if "vehicles" in doc else RoadConfig.from_json(doc)


def cmd_serve(args) -> int:
    import threading

    from .orchestrator.server import OrchestratorServer, connect_gateway, parse_address
    from .orchestrator.service import Orchestrator

    orch = Orchestrator(
        _load_road(args.boundary), _load_model(args.model), staleness_ms=args.staleness_ms,
        workers=args.workers, log_dir=args.log,
    )
    server = OrchestratorServer(parse_address(args.listen), orch)
    server.start()
    if args.gateway:
        connect_gateway(orch, parse_address(args.gateway))
    _emit(args, {"listening": f"{server.server_address[0]}:{server.port}"},
          f"orchestrator listening on {server.server_address[0]}:{server.port}")
    sys.stdout.flush()
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        orch.close()
    return 0


# --------------------------------------------------------------------------- simulation

def _load_scenario(args):
    from dataclasses import replace

    from .sim.scenario import ImpairmentSpec, Scenario, four_vehicle_scenario

    sc = four_vehicle_scenario() if args.scenario == "four-vehicle" else Scenario.load(args.scenario)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    imp = sc.impairment
    if any(v is not None for v in (args.latency, args.jitter, args.loss)):
        imp = ImpairmentSpec(
            imp.latency_ms if args.latency is None else args.latency,
            imp.jitter_ms if args.jitter is None else args.jitter,
            imp.loss if args.loss is None else args.loss,
        )
        sc = replace(sc, impairment=imp)
    return sc


def cmd_simulate(args) -> int:
    from .orchestrator.server import parse_address
    from .orchestrator.service import Orchestrator
    from .sim.runner import run_scenario

    sc = _load_scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / f"{sc.id}-seed{sc.seed}.ndjson"
    if args.orchestrator == "inproc":
        orch = Orchestrator(sc.road_config(), _load_model(args.model), log_dir=out / "orchestrator")
        try:
            result = run_scenario(sc, orchestrator=orch, log_path=log_path)
        finally:
            orch.close()
    else:
        try:
            result = run_scenario(sc, address=parse_address(args.orchestrator), log_path=log_path)
        except ConnectionRefusedError as exc:
            log.error("cannot reach orchestrator at %s: %s", args.orchestrator, exc)
            return 4
    doc = {"scenario": sc.id, "seed": sc.seed, "outcome": result.outcome, "detail": result.detail,
           "end_time_ms": result.end_time_ms, "log": str(log_path), "counters": result.counters}
    _emit(args, doc, f"{sc.id} seed {sc.seed}: {result.outcome}"
          + (f" ({result.detail})" if result.detail else "") + f" at t={result.end_time_ms} ms; log {log_path}")
    return result.exit_code


def cmd_replay(args) -> int:
    from .orchestrator.messages import Clock, Sync, encode
    from .sim.runner import read_log, replay_messages

    stream = replay_messages(read_log(args.log))
    if args.to:
        import socket

        from .orchestrator.server import LineConnection, parse_address

        conn = LineConnection(socket.create_connection(parse_address(args.to)))
        try:
            conn.read_line()  # subscription request
            seq = 0
            for t, dest, msg in stream:
                if dest != "orchestrator":
                    continue
                seq += 1
                conn.send(encode(Clock(t).to_json()) + encode(msg) + encode(Sync(seq).to_json()))
                while (raw := conn.read_line()) is not None:
                    doc = json.loads(raw)
                    if doc.get("type") == "sync_ack":
                        break
                    print(json.dumps(doc, sort_keys=True))
        finally:
            conn.close()
    else:
        for t, dest, msg in stream:
            if args.json:
                print(json.dumps({"t": t, "to": dest, "message": msg}, sort_keys=True, separators=(",", ":")))
            else:
                print(f"{t:10.3f} -> {dest}: {json.dumps(msg, sort_keys=True, separators=(',', ':'))}")
    return 0


# --------------------------------------------------------------------------- report

def cmd_report(args) -> int:
    from .kpi.report import build_report

    summary = build_report(args.out, args.sim_log or (), args.reward_log or ())
    head = summary.get("recommended_accel_fraction_0_2")
    lines = [f"report written to {args.out}"]
    if head is not None:
        lines.append(f"recommended accelerations in [0, 2] m/s2: {100 * head:.1f}%")
    if "rtt_ms_mean" in summary:
        lines.append(f"RTT mean {summary['rtt_ms_mean']:.1f} ms over {summary['rtt_count']} recommendations")
    lines += [f"note: {n}" for n in summary["notes"]]
    _emit(args, summary, "\n".join(lines))
    return 0


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--version", action="version", version=f"lmo {__version__}")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="lmo", description="Lane-merge coordination toolkit", parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", parents=[common], help="parse trajectories and build the labelled dataset")
    s.add_argument("--input", required=True, type=Path)
    s.add_argument("--config", type=Path, help="column mapping JSON")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("synth-trajectories", parents=[common], help="write a synthetic NGSIM-style CSV")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=600.0, help="simulated seconds")
    s.set_defaults(func=cmd_synth_trajectories)

    s = sub.add_parser("train-classifiers", parents=[common], help="sweep and fit the tabular learners")
    s.add_argument("--dataset", required=True, type=Path)
    s.add_argument("--task", choices=("merge", "accel", "heading", "all"), default="all")
    s.add_argument("--algo", choices=("rf", "dt", "knn", "gbm", "all"), default="all")
    s.add_argument("--sweep", action="store_true", help="run the full hyperparameter grid")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_train_classifiers)

    s = sub.add_parser("train-dqn", parents=[common], help="train the dueling DQN merge policy")
    s.add_argument("--variant", choices=("positive", "negative"), default="positive")
    s.add_argument("--episodes", type=int, help="cap on training episodes")
    s.add_argument("--steps", type=int, help="cap on environment steps")
    s.add_argument("--scenarios", type=int, default=3000, help="synthetic scenarios to generate")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--env", choices=("synthetic", "dataset"), default="synthetic")
    s.add_argument("--dataset", type=Path)
    s.add_argument("--out", type=Path, default=Path("dqn-out"))
    s.set_defaults(func=cmd_train_dqn)

    s = sub.add_parser("serve", parents=[common], help="run the traffic orchestrator")
    s.add_argument("--listen", default="127.0.0.1:7878")
    s.add_argument("--gateway", help="dial out to a gateway at host:port")
    s.add_argument("--model", type=Path, help="trained DQN (defaults to the packaged model)")
    s.add_argument("--boundary", help="road config or scenario JSON; 'four-vehicle' for the built-in scenario")
    s.add_argument("--staleness-ms", type=float, default=1000.0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--log", type=Path, help="directory for the orchestrator event log")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("simulate", parents=[common], help="run a merge scenario")
    s.add_argument("--scenario", default="four-vehicle", help="scenario JSON or 'four-vehicle'")
    s.add_argument("--orchestrator", default="inproc", help="host:port or 'inproc'")
    s.add_argument("--model", type=Path, help="DQN for the in-process orchestrator")
    s.add_argument("--seed", type=int)
    s.add_argument("--latency", type=float, help="one-way latency override [ms]")
    s.add_argument("--jitter", type=float, help="jitter override [ms]")
    s.add_argument("--loss", type=float, help="loss probability override")
    s.add_argument("--out", type=Path, default=Path("sim-out"))
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("replay", parents=[common], help="re-emit the message stream of a simulation log")
    s.add_argument("--log", required=True, type=Path)
    s.add_argument("--to", help="send orchestrator-bound messages to host:port")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("report", parents=[common], help="KPI tables and figures")
    s.add_argument("--sim-log", type=Path, nargs="*")
    s.add_argument("--reward-log", type=Path, nargs="*")
    s.add_argument("--out", type=Path, default=Path("report"))
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0


if __name__ == "__main__":
    sys.exit(main())
