"""Deterministic closed-loop episode runner: kinematic-bicycle ego dynamics,
an LQR trajectory tracker, reactive IDM or replay background agents, event
detection, and per-tick planner invocation.

Episode logs serialize as line-delimited JSON. Wall-clock planner timings are
kept in memory only so identical runs produce byte-identical log files.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IoError, OffMapError, ParseError
from .geometry import normalize_angle, points_in_polygons, rects_overlap
from .planner import Planner, PlannerConfig
from .proposals import IdmParams, idm_accel
from .scene import (
    AgentState,
    EgoState,
    Pose2,
    Scenario,
    Trajectory,
    agent_footprint,
    scenario_from_dict,
    scenario_to_dict,
)
from .topology import ProposalPath
from .geometry import project_point_to_polyline, polyline_arclengths

MAX_ACCEL_CMD = 3.0  # m/s^2
MAX_BRAKE_CMD = 6.0  # m/s^2
STEER_LIMIT = 0.6  # rad

AGENT_POLICIES = ("reactive_idm", "replay")
EVENT_NAMES = ("collision", "off_road", "goal_reached", "deadlock", "off_map_error")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    planner_period: int = 1  # planner ticks every N sim ticks
    horizon: float = 4.0
    agent_policy: str = "reactive_idm"
    disturbances: tuple = ()  # ((tick, lateral metres), ...)
    seed: int = 0
    goal_radius: float = 3.0
    deadlock_window: float = 10.0
    deadlock_displacement: float = 0.5
    record_breakdowns: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("SimConfig.dt must be positive")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("SimConfig.horizon must be a multiple of dt")
        if self.agent_policy not in AGENT_POLICIES:
            raise ValueError(f"unknown agent policy {self.agent_policy!r}")


@dataclass
class EpisodeLog:
    scenario: Scenario
    planner_kind: str
    dt: float
    records: list = field(default_factory=list)  # per-tick dicts
    events: list = field(default_factory=list)  # (tick, name)
    plan_times: list = field(default_factory=list)  # seconds, in memory only
    proposal_records: list = field(default_factory=list)

    @property
    def event_names(self):
        return [name for _, name in self.events]

    def ego_states(self):
        out = []
        for r in self.records:
            x, y, heading, speed, accel, steering = r["ego"]
            out.append(
                EgoState(
                    pose=Pose2(x, y, heading),
                    speed=speed,
                    accel=accel,
                    steering=steering,
                    wheelbase=self.scenario.ego.wheelbase,
                    half_length=self.scenario.ego.half_length,
                    half_width=self.scenario.ego.half_width,
                )
            )
        return out


def bicycle_step(
    ego: EgoState,
    accel_cmd: float,
    steer_cmd: float,
    dt: float,
    max_accel: float = MAX_ACCEL_CMD,
    max_brake: float = MAX_BRAKE_CMD,
    steer_limit: float = STEER_LIMIT,
) -> EgoState:
    """One kinematic-bicycle integration step; commands clamped, no reverse."""
    a = min(max_accel, max(-max_brake, accel_cmd))
    steer = min(steer_limit, max(-steer_limit, steer_cmd))
    x = ego.pose.x + ego.speed * math.cos(ego.pose.heading) * dt
    y = ego.pose.y + ego.speed * math.sin(ego.pose.heading) * dt
    heading = normalize_angle(
        ego.pose.heading + ego.speed / ego.wheelbase * math.tan(steer) * dt
    )
    v = max(0.0, ego.speed + a * dt)
    return replace(ego, pose=Pose2(x, y, heading), speed=v, accel=a, steering=steer)


@dataclass(frozen=True)
class LqrConfig:
    q_lateral: float = 1.0
    q_heading: float = 0.5
    r_steer: float = 2.0
    k_speed: float = 1.5
    iterations: int = 50
    lookahead_steps: int = 5  # speed reference index offset
    low_speed: float = 0.1
    low_speed_gain: tuple = (0.6, 1.2)


def lqr_gain(speed: float, dt: float, wheelbase: float, cfg: LqrConfig, iterations=None) -> np.ndarray:
    """Feedback gain for the [cross-track, heading] error state at a speed.

    Discrete Riccati recursion with a fixed iteration count; returns K (2,).
    The 2x2 recursion is unrolled in scalars (the control is 1-dimensional).
    """
    n = cfg.iterations if iterations is None else iterations
    ad = speed * dt  # A = [[1, ad], [0, 1]]
    beta = speed * dt / wheelbase  # B = [0, beta]
    q0, q1 = cfg.q_lateral, cfg.q_heading
    r = cfg.r_steer
    p00, p01, p11 = q0, 0.0, q1
    k0 = k1 = 0.0
    for _ in range(n):
        denom = r + beta * beta * p11
        k0 = beta * p01 / denom
        k1 = beta * (p01 * ad + p11) / denom
        # M = A - B K = [[1, ad], [-beta k0, 1 - beta k1]]
        m10 = -beta * k0
        m11 = 1.0 - beta * k1
        # A^T P
        t00, t01 = p00, p01
        t10 = ad * p00 + p01
        t11 = ad * p01 + p11
        p00 = q0 + t00 + t01 * m10
        p01 = t00 * ad + t01 * m11
        p11 = q1 + t10 * ad + t11 * m11
    return np.array([k0, k1])


def lqr_track(ego: EgoState, reference: Trajectory, cfg: LqrConfig = LqrConfig()) -> tuple:
    """(accel_cmd, steer_cmd) tracking the reference trajectory.

    Lateral: LQR on [cross-track error, heading error] linearized at the
    current speed, plus curvature feedforward. Longitudinal: proportional to
    the speed error at a short lookahead. Commands are clamped by bicycle_step.
    """
    pts = reference.positions
    s_cum = polyline_arclengths(pts)
    s, e_lat, ref_head, _ = project_point_to_polyline((ego.pose.x, ego.pose.y), pts, s_cum)
    e_head = normalize_angle(ego.pose.heading - ref_head)

    idx = int(np.clip(np.searchsorted(s_cum, s, side="right") - 1, 0, len(pts) - 2))
    look = min(idx + cfg.lookahead_steps, len(pts) - 1)
    v_ref = float(reference.speeds[look])
    accel_cmd = cfg.k_speed * (v_ref - ego.speed)

    # Curvature feedforward from the reference headings around the projection.
    heads = reference.headings
    j = min(idx + 1, len(heads) - 1)
    ds = max(s_cum[j] - s_cum[idx], 1e-6) if j > idx else 1e-6
    kappa = normalize_angle(heads[j] - heads[idx]) / ds if j > idx else 0.0
    kappa = float(np.clip(kappa, -0.5, 0.5))

    if ego.speed < cfg.low_speed:
        k1, k2 = cfg.low_speed_gain
        steer_fb = -k1 * e_lat - k2 * e_head
    else:
        k = lqr_gain(ego.speed, reference.dt, ego.wheelbase, cfg)
        steer_fb = float(-(k[0] * e_lat + k[1] * e_head))
    steer_cmd = steer_fb + math.atan(ego.wheelbase * kappa)
    return accel_cmd, steer_cmd


# --------------------------------------------------------------------------
# Background agents


def _agent_lane(scenario: Scenario, agent: AgentState):
    """Lane whose direction best matches the agent heading, within 3 m."""
    best = None
    for lane in scenario.lanes:
        s_cum = polyline_arclengths(lane.points)
        s, lat, head, _ = project_point_to_polyline(
            (agent.pose.x, agent.pose.y), lane.points, s_cum
        )
        if abs(lat) > 3.0:
            continue
        align = math.cos(agent.pose.heading - head)
        if align < 0.5:
            continue
        key = (abs(lat), lane.id)
        if best is None or key < best[0]:
            best = (key, lane, s_cum)
    return (best[1], best[2]) if best else (None, None)


def step_agents(agents, scenario: Scenario, policy: str, dt: float, ego: EgoState | None = None):
    """Advance background agents one step.

    reactive_idm: vehicles follow their lane with IDM against the nearest
    entity ahead in their corridor and pure-pursuit steering; pedestrians move
    at constant velocity; static agents do not move.
    replay: every non-static agent continues at its scripted constant velocity.
    """
    if policy not in AGENT_POLICIES:
        raise ValueError(f"unknown agent policy {policy!r}")
    out = []
    for agent in agents:
        if agent.kind == "static":
            out.append(agent)
            continue
        if policy == "replay" or agent.kind == "pedestrian":
            p = agent.pose
            out.append(
                replace(
                    agent,
                    pose=Pose2(
                        p.x + agent.speed * math.cos(p.heading) * dt,
                        p.y + agent.speed * math.sin(p.heading) * dt,
                        p.heading,
                    ),
                )
            )
            continue
        out.append(_step_vehicle(agent, agents, scenario, dt, ego))
    return out


_AGENT_IDM = IdmParams(v0=8.0, T_h=1.5, s0=2.0, a_max=1.5, b_comf=2.0)


def _step_vehicle(agent: AgentState, agents, scenario: Scenario, dt: float, ego):
    lane, s_cum = _agent_lane(scenario, agent)
    if lane is None:
        p = agent.pose
        return replace(
            agent,
            pose=Pose2(
                p.x + agent.speed * math.cos(p.heading) * dt,
                p.y + agent.speed * math.sin(p.heading) * dt,
                p.heading,
            ),
        )
    s_self, _, _, _ = project_point_to_polyline((agent.pose.x, agent.pose.y), lane.points, s_cum)

    # Nearest entity ahead in this lane corridor (other agents and the ego).
    gap = math.inf
    v_lead = 0.0
    entities = [(a.pose, a.speed, a.half_length, a.half_width) for a in agents if a.id != agent.id]
    if ego is not None:
        entities.append((ego.pose, ego.speed, ego.half_length, ego.half_width))
    for pose, speed, half_len, half_w in entities:
        s_o, lat_o, head_o, _ = project_point_to_polyline((pose.x, pose.y), lane.points, s_cum)
        if abs(lat_o) > agent.half_width + half_w + 0.3:
            continue
        d = s_o - s_self - half_len - agent.half_length
        if d <= 0:
            continue
        if d < gap:
            gap = d
            v_lead = speed * math.cos(pose.heading - head_o)

    p = replace(_AGENT_IDM, v0=min(_AGENT_IDM.v0, lane.speed_limit))
    a_cmd = idm_accel(agent.speed, v_lead, max(gap, 0.05) if math.isfinite(gap) else math.inf, p)
    v_new = max(0.0, agent.speed + a_cmd * dt)

    # Pure-pursuit steer toward a point ahead on the lane.
    look = max(3.0, 1.5 * agent.speed)
    s_target = min(s_self + look, s_cum[-1])
    x_t = np.interp(s_target, s_cum, lane.points[:, 0])
    y_t = np.interp(s_target, s_cum, lane.points[:, 1])
    alpha = normalize_angle(
        math.atan2(y_t - agent.pose.y, x_t - agent.pose.x) - agent.pose.heading
    )
    wheelbase = max(1.0, agent.half_length)
    steer = math.atan2(2.0 * wheelbase * math.sin(alpha), look)
    steer = min(STEER_LIMIT, max(-STEER_LIMIT, steer))
    heading = normalize_angle(agent.pose.heading + agent.speed / wheelbase * math.tan(steer) * dt)
    x = agent.pose.x + agent.speed * math.cos(agent.pose.heading) * dt
    y = agent.pose.y + agent.speed * math.sin(agent.pose.heading) * dt
    return replace(agent, pose=Pose2(x, y, heading), speed=v_new)


# --------------------------------------------------------------------------
# Episode loop


def _ego_record(ego: EgoState):
    return [ego.pose.x, ego.pose.y, ego.pose.heading, ego.speed, ego.accel, ego.steering]


def _agents_record(agents):
    return [
        [a.id, a.pose.x, a.pose.y, a.pose.heading, a.speed, a.half_length, a.half_width, a.kind]
        for a in agents
    ]


def record_agents(rec: dict):
    """Rebuild AgentState values from one tick record's agents field."""
    out = []
    for aid, x, y, heading, speed, hl, hw, kind in rec["agents"]:
        out.append(
            AgentState(
                id=aid, pose=Pose2(x, y, heading), speed=speed,
                half_length=hl, half_width=hw, kind=kind,
            )
        )
    return out


def _ego_collides(ego: EgoState, agents) -> bool:
    ec = agent_footprint(ego)
    for a in agents:
        if rects_overlap(ec, agent_footprint(a)):
            return True
    return False


def _ego_inside_drivable(ego: EgoState, scenario: Scenario) -> bool:
    return bool(points_in_polygons(agent_footprint(ego), scenario.drivable_area).all())


def run_episode(scenario: Scenario, planner, cfg: SimConfig = SimConfig()) -> EpisodeLog:
    """Closed-loop episode: plan, track one tick, step agents, record, repeat.

    planner is a Planner instance or a planner kind string. Terminates at the
    scenario duration, on collision, or on reaching the goal; deadlock and
    off-road are recorded as events but do not terminate.
    """
    if isinstance(planner, str):
        planner = Planner(scenario, kind=planner, config=PlannerConfig(
            proposal=replace(PlannerConfig().proposal, horizon=cfg.horizon, dt=cfg.dt)
        ))
    log = EpisodeLog(scenario=scenario, planner_kind=planner.kind, dt=cfg.dt)
    ego = scenario.ego
    agents = list(scenario.agents)
    disturbances = dict(cfg.disturbances)
    lqr_cfg = LqrConfig()
    n_ticks = int(round(scenario.duration / cfg.dt))
    seen_events = set()
    positions = []  # for deadlock detection
    current_plan = None

    def record_event(tick, name):
        if name not in seen_events:
            seen_events.add(name)
            log.events.append((tick, name))

    for tick in range(n_ticks):
        if tick % cfg.planner_period == 0 or current_plan is None:
            t0 = time.perf_counter()
            try:
                result = planner.plan(ego, agents, t=tick * cfg.dt)
            except OffMapError:
                record_event(tick, "off_map_error")
                break
            log.plan_times.append(time.perf_counter() - t0)
            current_plan = result
            if cfg.record_breakdowns and result.proposals is not None:
                for prop, b in zip(result.proposals, result.breakdowns):
                    log.proposal_records.append(
                        {
                            "tick": tick,
                            "index": prop.index,
                            "tag": prop.trajectory.tag,
                            "path_index": prop.path_index,
                            "offset": prop.offset,
                            "fraction": prop.speed_fraction,
                            **b.to_record(),
                        }
                    )

        winner_breakdown = None
        winner_source = current_plan.trajectory.tag
        if current_plan.breakdowns and current_plan.proposals is not None:
            for prop, b in zip(current_plan.proposals, current_plan.breakdowns):
                if prop.trajectory is current_plan.trajectory:
                    winner_breakdown = b.to_record()
                    if prop.path is not None:
                        winner_source = prop.path.source
                    break

        log.records.append(
            {
                "tick": tick,
                "t": round(tick * cfg.dt, 9),
                "ego": _ego_record(ego),
                "agents": _agents_record(agents),
                "tag": current_plan.trajectory.tag,
                "source": winner_source,
                "breakdown": winner_breakdown,
                "relaxed": current_plan.relax.active,
                "replan_root_gap": current_plan.replan_root_gap,
                "path_starts": [[float(p.start[0]), float(p.start[1])] for p in current_plan.paths],
            }
        )

        accel_cmd, steer_cmd = lqr_track(ego, current_plan.trajectory, lqr_cfg)
        ego = bicycle_step(ego, accel_cmd, steer_cmd, cfg.dt)
        if tick in disturbances:
            jolt = disturbances[tick]
            ego = replace(
                ego,
                pose=Pose2(
                    ego.pose.x - jolt * math.sin(ego.pose.heading),
                    ego.pose.y + jolt * math.cos(ego.pose.heading),
                    ego.pose.heading,
                ),
            )
        agents = step_agents(agents, scenario, cfg.agent_policy, cfg.dt, ego=ego)

        positions.append((ego.pose.x, ego.pose.y))
        if _ego_collides(ego, agents):
            record_event(tick + 1, "collision")
            break
        if not _ego_inside_drivable(ego, scenario):
            record_event(tick + 1, "off_road")
        if math.hypot(ego.pose.x - scenario.goal.x, ego.pose.y - scenario.goal.y) <= cfg.goal_radius:
            record_event(tick + 1, "goal_reached")
            break
        window = int(cfg.deadlock_window / cfg.dt)
        if len(positions) > window:
            x0, y0 = positions[-window - 1]
            if math.hypot(ego.pose.x - x0, ego.pose.y - y0) < cfg.deadlock_displacement:
                record_event(tick + 1, "deadlock")
    return log


# --------------------------------------------------------------------------
# Log serialization (line-delimited JSON; wall-clock timings excluded so
# identical runs give identical bytes)


def save_episode_log(log: EpisodeLog, path) -> None:
    lines = [
        json.dumps(
            {
                "type": "header",
                "planner": log.planner_kind,
                "dt": log.dt,
                "scenario": scenario_to_dict(log.scenario),
            }
        )
    ]
    for rec in log.records:
        lines.append(json.dumps({"type": "tick", **rec}))
    for rec in log.proposal_records:
        lines.append(json.dumps({"type": "proposal", **rec}))
    for tick, name in log.events:
        lines.append(json.dumps({"type": "event", "tick": tick, "name": name}))
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise IoError(f"cannot write episode log {path}: {e}") from e


def load_episode_log(path) -> EpisodeLog:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = [ln for ln in f.read().splitlines() if ln.strip()]
    except OSError as e:
        raise IoError(f"cannot read episode log {path}: {e}") from e
    if not lines:
        raise ParseError(f"episode log {path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed episode log {path}: {e}") from e
    if header.get("type") != "header":
        raise ParseError(f"episode log {path} missing header record")
    log = EpisodeLog(
        scenario=scenario_from_dict(header["scenario"]),
        planner_kind=header["planner"],
        dt=float(header["dt"]),
    )
    for ln in lines[1:]:
        try:
            rec = json.loads(ln)
        except json.JSONDecodeError as e:
            raise ParseError(f"malformed episode log line in {path}: {e}") from e
        kind = rec.pop("type", None)
        if kind == "tick":
            log.records.append(rec)
        elif kind == "proposal":
            log.proposal_records.append(rec)
        elif kind == "event":
            log.events.append((rec["tick"], rec["name"]))
        else:
            raise ParseError(f"unknown record type {kind!r} in {path}")
    return log
