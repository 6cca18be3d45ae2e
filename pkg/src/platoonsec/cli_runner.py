"""End-to-end scenario orchestration and the command-line surface.

A scenario file drives the per-step pipeline: generate bias matrices for the
step, run the controller's iteration loop with the corrupted channel, advance
the plant, run detection, accumulate metrics.  Outputs are a trace CSV, an
anomaly CSV and an impact report; everything is deterministic given the
scenario seed.

Exit codes: 0 ok, 1 config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import yaml

from .attack_engine import (
    AttackCase,
    AttackCaseError,
    iter_attack_value_cal,
    parse_attack_case,
)
from .detection import (
    ANOMALY_CSV_COLUMNS,
    AnomalyEvent,
    ComparatorConfig,
    DetectionConfig,
    DetectionError,
    DetectorState,
    NumericalFitError,
    POS_ANOM,
    VEL_ANOM,
    detect_step,
)
from .dynamics import step_platoon
from .metrics import ImpactReport, build_impact_report, format_impact_report, time_headway
from .mpc_controller import (
    ConstraintViolation,
    NumericalError,
    PerceptionRecord,
    check_constraints,
    run_control_step,
)
from .platoon_model import ConfigError, PlatoonState, SimConfig, initial_platoon
from .v2v_channel import Direction, DropRule, V2VChannel

TRACE_COLUMNS = (
    "control_step",
    "vehicle_id",
    "x",
    "v",
    "u",
    "gap_front",
    "headway",
    "comparator_flag",
    "elm_pos_pred",
    "elm_vel_pred",
    "pos_anom",
    "vel_anom",
)


@dataclass(frozen=True)
class LeaderProfile:
    """Externally chosen leader motion: initial speed plus piecewise-constant
    accelerations, each phase starting at a control step."""

    speed: float = 30.0
    phases: tuple[tuple[int, float], ...] = ()

    def accel_at(self, k: int) -> float:
        accel = 0.0
        for start, value in self.phases:
            if start <= k:
                accel = value
        return accel


@dataclass(frozen=True)
class OutputFlags:
    trace: bool = True
    anomalies: bool = True
    impact: bool = True


@dataclass(frozen=True)
class Scenario:
    sim: SimConfig
    leader: LeaderProfile
    attack: AttackCase
    detection: DetectionConfig
    seed: int = 0
    detection_enabled: bool = True
    drops: tuple[DropRule, ...] = ()
    output: OutputFlags = OutputFlags()


@dataclass(frozen=True)
class TraceRow:
    control_step: int
    vehicle_id: int
    x: float
    v: float
    u: float
    gap_front: float
    headway: float
    comparator_flag: bool
    elm_pos_pred: Optional[float]
    elm_vel_pred: Optional[float]
    pos_anom: bool
    vel_anom: bool


@dataclass(frozen=True)
class StepOutcome:
    control_step: int
    iterations_used: int
    converged: bool


@dataclass
class RunResult:
    rows: list[TraceRow]
    events: list[AnomalyEvent]
    impact: ImpactReport
    step_outcomes: list[StepOutcome]
    violations: list[tuple[int, ConstraintViolation]]
    flags_by_step: list[tuple[bool, ...]]
    final_platoon: PlatoonState


def _leader_velocity_check(sim: SimConfig, leader: LeaderProfile) -> None:
    v = leader.speed
    if not sim.v_min <= v <= sim.v_max:
        raise ConfigError(f"leader speed {v} outside [{sim.v_min}, {sim.v_max}]")
    for k in range(sim.total_control_steps):
        v += leader.accel_at(k) * sim.tau
        if not sim.v_min <= v <= sim.v_max:
            raise ConfigError(
                f"leader profile drives velocity to {v:.3f} at step {k + 1}, "
                f"outside [{sim.v_min}, {sim.v_max}]"
            )


def simulate(scenario: Scenario) -> RunResult:
    """Run the whole scenario in memory.  Pipeline order per control step:
    bias generation, message exchange with injection inside the controller
    loop, plant step, detection, metrics accumulation."""
    sim = scenario.sim
    n = sim.n
    platoon = initial_platoon(sim, scenario.leader.speed)
    detector = DetectorState(n, scenario.detection) if scenario.detection_enabled else None

    rows: list[TraceRow] = []
    events: list[AnomalyEvent] = []
    step_outcomes: list[StepOutcome] = []
    violations: list[tuple[int, ConstraintViolation]] = []
    flags_by_step: list[tuple[bool, ...]] = []
    headway_series: list[list[float]] = [[] for _ in range(n)]
    accel_series: list[list[float]] = [[] for _ in range(n)]

    prev_u: Sequence[float] = (0.0,) * n
    for k in range(sim.total_control_steps):
        leader_u = scenario.leader.accel_at(k)
        bias = iter_attack_value_cal(n, k, sim.max_iterations, scenario.attack)
        channel = V2VChannel(bias=bias, drops=scenario.drops)
        outcome = run_control_step(platoon, channel, sim, leader_u, warm_start=prev_u)
        step_outcomes.append(StepOutcome(k, outcome.iterations_used, outcome.converged))
        for violation in check_constraints(outcome.u_next, platoon, sim, leader_u):
            violations.append((k, violation))

        if detector is not None:
            detection = detect_step(outcome.perception, detector, k)
            events.extend(detection.events)
            flags_by_step.append(detection.flags)
        else:
            detection = None
            flags_by_step.append((False,) * n)

        pos_hits = {e.vehicle for e in (detection.events if detection else ()) if e.kind == POS_ANOM}
        vel_hits = {e.vehicle for e in (detection.events if detection else ()) if e.kind == VEL_ANOM}
        for i in range(n):
            obs: PerceptionRecord = outcome.perception[i]
            follower = platoon.followers[i]
            headway = time_headway(platoon.gap(i + 1), follower.v, sim.L_veh)
            headway_series[i].append(headway)
            accel_series[i].append(outcome.u_next[i])
            rows.append(
                TraceRow(
                    control_step=k,
                    vehicle_id=i + 1,
                    x=obs.front_x,
                    v=obs.front_v,
                    u=outcome.u_next[i],
                    gap_front=obs.gap_front,
                    headway=headway,
                    comparator_flag=bool(detection.comparator_flags[i]) if detection else False,
                    elm_pos_pred=detection.pos_predictions[i] if detection else None,
                    elm_vel_pred=detection.vel_predictions[i] if detection else None,
                    pos_anom=(i + 1) in pos_hits,
                    vel_anom=(i + 1) in vel_hits,
                )
            )

        platoon = step_platoon(platoon, leader_u, outcome.u_next, sim.tau)
        prev_u = outcome.u_next

    # Short smoke runs still get a report: the classification warmup cannot
    # swallow the whole series.
    warmup = min(10, sim.total_control_steps - 1)
    impact = build_impact_report(headway_series, accel_series, warmup=warmup)
    return RunResult(
        rows=rows,
        events=events,
        impact=impact,
        step_outcomes=step_outcomes,
        violations=violations,
        flags_by_step=flags_by_step,
        final_platoon=platoon,
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace_csv(rows: Sequence[TraceRow], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, col)) for col in TRACE_COLUMNS])


def write_anomaly_csv(events: Sequence[AnomalyEvent], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANOMALY_CSV_COLUMNS)
        for event in events:
            writer.writerow(
                [
                    event.kind,
                    event.control_step,
                    event.vehicle,
                    repr(event.actual),
                    repr(event.predicted),
                ]
            )


def write_impact_csv(result: RunResult, path: Path) -> None:
    report = result.impact
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["control_step", "vehicle", "headway", "acceleration", "safe_lo", "safe_hi"]
        )
        for row in result.rows:
            writer.writerow(
                [
                    row.control_step,
                    row.vehicle_id,
                    repr(row.headway),
                    repr(row.u),
                    repr(report.safe_lo),
                    repr(report.safe_hi),
                ]
            )


def run_scenario(scenario: Scenario, out_dir: Path) -> dict[str, Path]:
    """Simulate and serialize all requested artifacts.  Returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = simulate(scenario)
    paths: dict[str, Path] = {}
    if scenario.output.trace:
        paths["trace"] = out_dir / "trace.csv"
        write_trace_csv(result.rows, paths["trace"])
    if scenario.output.anomalies:
        paths["anomalies"] = out_dir / "anomalies.csv"
        write_anomaly_csv(result.events, paths["anomalies"])
    if scenario.output.impact:
        paths["impact"] = out_dir / "impact.txt"
        paths["impact_csv"] = out_dir / "impact.csv"
        paths["impact"].write_text(format_impact_report(result.impact))
        write_impact_csv(result, paths["impact_csv"])
    return paths


# ---------------------------------------------------------------------------
# scenario config document


def _detection_from_doc(doc: Mapping[str, Any], seed: int) -> tuple[DetectionConfig, bool]:
    enabled = bool(doc.get("enabled", True))
    comparator = ComparatorConfig(
        threshold=float(doc.get("comparator_threshold", 2.0)),
        nominal_diff=float(doc.get("nominal_diff", 0.0)),
    )
    cfg = DetectionConfig(
        comparator=comparator,
        pos_threshold=float(doc.get("pos_threshold", 2.5)),
        vel_threshold=float(doc.get("vel_threshold", 2.0)),
        hidden_count=int(doc.get("hidden_count", 50)),
        ridge=float(doc.get("ridge", 1e-6)),
        lag=int(doc.get("lag", 2)),
        step_forward=int(doc.get("step_forward", 1)),
        norm_window=int(doc.get("norm_window", 200)),
        warmup_steps=int(doc.get("warmup_steps", 12)),
        seed=seed,
    )
    return cfg, enabled


def _drops_from_doc(entries: Sequence[Mapping[str, Any]]) -> tuple[DropRule, ...]:
    rules = []
    for entry in entries:
        rules.append(
            DropRule(
                direction=Direction(entry["direction"]),
                sender=int(entry["sender"]),
                control_steps=tuple(entry["control_steps"]) if "control_steps" in entry else None,
                iterations=tuple(entry["iterations"]) if "iterations" in entry else None,
            )
        )
    return tuple(rules)


def scenario_from_dict(doc: Mapping[str, Any]) -> Scenario:
    if not isinstance(doc, Mapping):
        raise ConfigError("scenario document must be a mapping")
    known = {"sim", "leader", "attack", "drops", "detection", "seed", "output"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    sim = SimConfig().with_overrides(**(doc.get("sim") or {}))
    leader_doc = doc.get("leader") or {}
    leader = LeaderProfile(
        speed=float(leader_doc.get("speed", 30.0)),
        phases=tuple(
            (int(start), float(accel)) for start, accel in leader_doc.get("profile", [])
        ),
    )
    _leader_velocity_check(sim, leader)
    attack = parse_attack_case(doc.get("attack"), sim.n)
    seed = int(doc.get("seed", 0))
    detection, enabled = _detection_from_doc(doc.get("detection") or {}, seed)
    output_doc = doc.get("output") or {}
    output = OutputFlags(
        trace=bool(output_doc.get("trace", True)),
        anomalies=bool(output_doc.get("anomalies", True)),
        impact=bool(output_doc.get("impact", True)),
    )
    return Scenario(
        sim=sim,
        leader=leader,
        attack=attack,
        detection=detection,
        seed=seed,
        detection_enabled=enabled,
        drops=_drops_from_doc(doc.get("drops") or ()),
        output=output,
    )


def load_scenario(path: Path) -> Scenario:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        doc = {}
    return scenario_from_dict(doc)


# ---------------------------------------------------------------------------
# standalone bias generation


def generate_bias_files(case_path: Path, k: int, out_dir: Path) -> dict[str, Path]:
    """Emit the four bias matrices for control step k as CSV files
    (rows = iteration index, columns = followers)."""
    with open(case_path) as fh:
        doc = yaml.safe_load(fh) or {}
    sim_doc = doc.get("sim") or {}
    n = int(doc.get("n", sim_doc.get("n", 6)))
    max_iterations = int(doc.get("max_iterations", sim_doc.get("max_iterations", 300)))
    attack_doc = doc.get("attack", doc if "iter_victim_list" in doc else None)
    case = parse_attack_case(attack_doc, n)
    bias = iter_attack_value_cal(n, k, max_iterations, case)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    header = [f"fv{i}" for i in range(1, n + 1)]
    for name in ("x_ite", "v_ite", "zx_ite", "zv_ite"):
        path = out_dir / f"{name}_bias.csv"
        matrix = getattr(bias, f"{name}_bias")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in matrix:
                writer.writerow([repr(float(value)) for value in row])
        paths[name] = path
    return paths


# ---------------------------------------------------------------------------
# offline detection replay


class TraceFormatError(ValueError):
    pass


def replay_detection(trace_path: Path, detection: DetectionConfig) -> list[AnomalyEvent]:
    """Re-run the ELM stage over a recorded trace.

    The monitored series and the comparator flags are read back from the
    trace, so results are identical to the live run under the same detection
    config and seed.
    """
    with open(trace_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = [c for c in TRACE_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise TraceFormatError(f"trace is missing columns: {missing}")
        by_step: dict[int, list[dict]] = {}
        for record in reader:
            by_step.setdefault(int(record["control_step"]), []).append(record)
    if not by_step:
        return []

    events: list[AnomalyEvent] = []
    detector: Optional[DetectorState] = None
    for k in sorted(by_step):
        records = sorted(by_step[k], key=lambda r: int(r["vehicle_id"]))
        if detector is None:
            detector = DetectorState(len(records), detection)
        observations = [
            PerceptionRecord(
                vehicle=int(r["vehicle_id"]),
                front_x=float(r["x"]),
                front_v=float(r["v"]),
                gap_front=float(r["gap_front"]),
                spacing_error=0.0,
                rear_spacing_error=None,
                own_x_pred=0.0,
                own_v_pred=0.0,
            )
            for r in records
        ]
        comparator_flags = [r["comparator_flag"] == "1" for r in records]
        detection_result = detect_step(
            observations, detector, k, comparator_flags_override=comparator_flags
        )
        events.extend(detection_result.events)
    return events


# ---------------------------------------------------------------------------
# CLI


def _cmd_run(args) -> int:
    scenario = load_scenario(Path(args.scenario))
    if args.seed is not None:
        scenario = replace(
            scenario,
            seed=args.seed,
            detection=replace(scenario.detection, seed=args.seed),
        )
    if args.steps is not None:
        scenario = replace(scenario, sim=scenario.sim.with_overrides(total_control_steps=args.steps))
        _leader_velocity_check(scenario.sim, scenario.leader)
    paths = run_scenario(scenario, Path(args.out))
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


def _cmd_generate_bias(args) -> int:
    paths = generate_bias_files(Path(args.case), args.k, Path(args.out))
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


def _cmd_replay_detect(args) -> int:
    with open(args.config) as fh:
        doc = yaml.safe_load(fh) or {}
    seed = int(doc.get("seed", 0))
    detection, _ = _detection_from_doc(doc.get("detection") or {}, seed)
    events = replay_detection(Path(args.trace), detection)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "anomalies.csv"
    write_anomaly_csv(events, out_path)
    print(f"anomalies: {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="platoonsec",
        description="MPC platoon simulator with V2V bias attacks and anomaly detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario end to end")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--steps", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_bias = sub.add_parser("generate-bias", help="emit bias matrices for one control step")
    p_bias.add_argument("--case", required=True)
    p_bias.add_argument("--k", type=int, required=True)
    p_bias.add_argument("--out", required=True)
    p_bias.set_defaults(func=_cmd_generate_bias)

    p_replay = sub.add_parser("replay-detect", help="re-run detection over a recorded trace")
    p_replay.add_argument("--trace", required=True)
    p_replay.add_argument("--config", required=True)
    p_replay.add_argument("--out", required=True)
    p_replay.set_defaults(func=_cmd_replay_detect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigError,
        AttackCaseError,
        DetectionError,
        TraceFormatError,
        FileNotFoundError,
        yaml.YAMLError,
    ) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, NumericalFitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
