"""Mission orchestration: attack injection, sequential greedy planning,
execution with sensing, and meeting-time consensus.

A mission walks the team through the areas of the grid left to right. For
each area, robots plan one at a time: each picks the unclaimed sensing
location of highest information gain as an intermediate target, routes
start -> intermediate -> rendezvous with Dijkstra, announces the full path
(claiming its nodes), and inflates traversed edge costs. Robots sense every
node along their executed paths (compromised robots record corrupted
values), refit their kernel hyperparameters from their own measurements at
each rendezvous, and run consensus on the fitted hyperparameters before
planning the next area.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .consensus import (
    MALICIOUS_CONSTANT,
    WELL_BEHAVED,
    ConsensusState,
    RoundLog,
    run_meeting_consensus,
)
from .gp_core import GpModel, Kernel, fit_hyperparams, mi_gain_map
from .resilience import CommField, MeetingSelection, build_prob_graph, select_meeting_subarea
from .world import (
    GridWorld,
    Path,
    build_grid,
    dijkstra,
    inflate_traversed,
    partition,
    shortest_path,
)


class InfeasibleBudgetError(RuntimeError):
    """A robot cannot reach its rendezvous within its remaining budget."""


@dataclass(frozen=True)
class AttackSpec:
    """F-total false data injection: chosen robots get additive uniform noise."""

    compromised_ids: frozenset
    epsilon_lo: float
    epsilon_hi: float

    def __post_init__(self):
        if self.epsilon_lo > self.epsilon_hi:
            raise ValueError("epsilon bounds must satisfy lo <= hi")


@dataclass
class RobotState:
    id: int
    position: int
    measurements: list[tuple[int, float]]
    fitted: Kernel
    compromised: bool
    remaining_budget: float


@dataclass
class PlannedLeg:
    path: Path
    q: int | None


@dataclass
class MissionPlan:
    legs: list[PlannedLeg]
    meeting_positions: tuple[int, ...]

    @property
    def total_cost(self) -> float:
        return sum(leg.path.cost for leg in self.legs)


@dataclass
class MissionResult:
    models: list[GpModel]
    round_logs: list[RoundLog]
    robots: list[RobotState]
    plans: list[MissionPlan]
    meetings: list[MeetingSelection]
    initial_evidence: list[tuple[int, float]]


@dataclass(frozen=True)
class MissionSeeds:
    evidence: int
    attack: int
    meetings: int
    consensus: int


@dataclass(frozen=True)
class MissionConfig:
    width: int
    height: int
    base_cost: float
    m_areas: int
    f_subareas: int
    n: int
    F: int
    r: int
    s: int
    gamma: float
    alpha: float
    fit_bounds: tuple
    consensus_eps: float
    max_rounds: int
    initial_evidence_count: int
    placements: int
    pr_samples: int
    start_ids: tuple[int, ...]
    goal_ids: tuple[int, ...]
    attack: AttackSpec


def corrupt(measurement: float, rng: np.random.Generator, spec: AttackSpec) -> float:
    """Apply the false-data-injection attack to one sensor measurement."""
    return float(measurement) + float(rng.uniform(spec.epsilon_lo, spec.epsilon_hi))


def _walk_back(pred: np.ndarray, source: int, node: int) -> list[int]:
    # Forward path source -> node from a forward-Dijkstra predecessor tree.
    out = [node]
    while out[-1] != source:
        out.append(int(pred[out[-1]]))
    out.reverse()
    return out


def _walk_forward(pred: np.ndarray, node: int, target: int) -> list[int]:
    # Forward path node -> target from a reverse-Dijkstra predecessor tree.
    out = [node]
    while out[-1] != target:
        out.append(int(pred[out[-1]]))
    return out


def plan_robot(
    robot: RobotState,
    world: GridWorld,
    gp: GpModel,
    area,
    meeting_pos: int,
    claimed: set,
    alpha: float,
    budget_cap: float | None = None,
) -> PlannedLeg:
    """Plan one robot's leg through ``area`` ending at ``meeting_pos``.

    The intermediate target q maximizes greedy MI gain over the area's
    unclaimed locations, treating the robot's evidence plus all claimed
    locations as already placed (ties toward the lowest id). Candidates
    whose two-segment route exceeds the leg budget (``budget_cap``, by
    default the robot's remaining budget) fall back to the next-best
    feasible one; with none feasible the robot heads straight to the
    rendezvous, which may spend up to the full remaining budget. Traversed
    edges are inflated afterward.
    """
    s = robot.position
    dist_s, pred_s = dijkstra(world, s)
    dist_t, pred_t = dijkstra(world, meeting_pos, reverse=True)
    sensed = set(gp.sensed)
    if budget_cap is None:
        budget_cap = robot.remaining_budget
    budget = min(budget_cap, robot.remaining_budget) + 1e-9

    candidates = [c for c in area if c not in claimed and c not in sensed]
    chosen = None
    if candidates:
        gains = mi_gain_map(gp, sensed | set(claimed), candidates)
        order = sorted(range(len(candidates)), key=lambda i: (-gains[i], candidates[i]))
        for i in order:
            q = candidates[i]
            if dist_s[q] + dist_t[q] <= budget:
                chosen = q
                break

    if chosen is None:
        if dist_t[s] > robot.remaining_budget + 1e-9:
            raise InfeasibleBudgetError(
                f"robot {robot.id} cannot reach {meeting_pos} "
                f"within budget {robot.remaining_budget:.3f}"
            )
        nodes = _walk_forward(pred_t, s, meeting_pos)
        leg = PlannedLeg(Path(nodes, float(dist_t[s])), None)
    else:
        nodes = _walk_back(pred_s, s, chosen) + _walk_forward(pred_t, chosen, meeting_pos)[1:]
        leg = PlannedLeg(Path(nodes, float(dist_s[chosen] + dist_t[chosen])), chosen)
    inflate_traversed(world, leg.path, alpha)
    return leg


def sequential_plan(
    team: list[RobotState],
    world: GridWorld,
    gps: list[GpModel],
    area,
    meeting,
    alpha: float,
    gamma: float,
    budget_caps=None,
) -> MissionPlan:
    """Plan all robots in index order, claiming each announced path.

    Meeting positions must be distinct, one per robot. Per-robot budget
    shares keep the summed path cost within the team budget.
    """
    meeting = [int(t) for t in meeting]
    if len(meeting) != len(team):
        raise ValueError("one meeting position per robot required")
    if len(set(meeting)) != len(meeting):
        raise ValueError("meeting positions must be distinct")
    if budget_caps is None:
        budget_caps = [None] * len(team)
    claimed: set = set()
    legs = []
    for robot, gp, target, cap in zip(team, gps, meeting, budget_caps):
        leg = plan_robot(robot, world, gp, area, target, claimed, alpha, budget_cap=cap)
        legs.append(leg)
        claimed.update(leg.path.nodes)
    plan = MissionPlan(legs, tuple(meeting))
    if plan.total_cost > gamma + 1e-6:
        raise InfeasibleBudgetError(
            f"round cost {plan.total_cost:.3f} exceeds team budget {gamma:.3f}"
        )
    return plan


def plan_offline_meetings(
    world: GridWorld, field: CommField, cfg: MissionConfig, rng: np.random.Generator
) -> list[MeetingSelection]:
    """Pick the rendezvous subarea for every area except the last."""
    return [
        select_meeting_subarea(
            world.subareas[ai], field, cfg.n, cfg.r, cfg.s,
            placements=cfg.placements, rng=rng, pr_samples=cfg.pr_samples,
        )
        for ai in range(len(world.areas) - 1)
    ]


def execute_mission(
    cfg: MissionConfig,
    env,
    field: CommField,
    seeds: MissionSeeds,
    mode: str,
    offline: list[MeetingSelection] | None = None,
) -> MissionResult:
    """Run the full mission and return learned models plus consensus logs.

    Offline phase: partition the grid and pick rendezvous subareas (skipped
    when a precomputed selection is supplied, e.g. to pair consensus modes).
    Online phase per area: sequential planning, traversal with sensing and
    attack injection, per-robot hyperparameter refit from own measurements,
    and a consensus meeting (also at the goal after the final area).
    """
    world = build_grid(cfg.width, cfg.height, cfg.base_cost)
    partition(world, cfg.m_areas, cfg.f_subareas)
    world.start_ids = list(cfg.start_ids)
    world.goal_ids = list(cfg.goal_ids)
    coords = world.coords_array()

    rng_ev = np.random.default_rng(seeds.evidence)
    rng_attack = np.random.default_rng(seeds.attack)
    if offline is None:
        offline = plan_offline_meetings(
            world, field, cfg, np.random.default_rng(seeds.meetings)
        )

    ev_locs = sorted(int(i) for i in rng_ev.choice(
        world.n_locations, size=cfg.initial_evidence_count, replace=False))
    ev_vals = [float(env.values[i]) for i in ev_locs]
    init_fit = fit_hyperparams(coords[ev_locs], ev_vals, bounds=cfg.fit_bounds)

    robots = [
        RobotState(
            id=k,
            position=int(cfg.start_ids[k]),
            measurements=[],
            fitted=init_fit.kernel,
            compromised=k in cfg.attack.compromised_ids,
            remaining_budget=cfg.gamma / cfg.n,
        )
        for k in range(cfg.n)
    ]
    measured = [set(ev_locs) for _ in robots]

    plans: list[MissionPlan] = []
    logs: list[RoundLog] = []
    last = len(world.areas) - 1
    all_targets = [
        offline[ai].positions if ai < last else tuple(cfg.goal_ids)
        for ai in range(len(world.areas))
    ]
    for ai, area in enumerate(world.areas):
        targets = all_targets[ai]
        gps = [_robot_gp(r, coords, ev_locs, ev_vals) for r in robots]
        # Cap this leg so the direct chain through the remaining rendezvous
        # stays affordable (20% margin absorbs upcoming edge inflation).
        caps = []
        for k, robot in enumerate(robots):
            chain = [targets[k]] + [t[k] for t in all_targets[ai + 1:]]
            reserve = sum(
                shortest_path(world, a, b).cost for a, b in zip(chain, chain[1:])
            )
            caps.append(robot.remaining_budget - 1.2 * reserve)
        plan = sequential_plan(robots, world, gps, area, targets, cfg.alpha,
                               cfg.gamma, budget_caps=caps)
        plans.append(plan)

        for robot, leg in zip(robots, plan.legs):
            for node in leg.path.nodes:
                if node in measured[robot.id]:
                    continue
                value = float(env.values[node])
                if robot.compromised:
                    value = corrupt(value, rng_attack, cfg.attack)
                robot.measurements.append((node, value))
                measured[robot.id].add(node)
            robot.position = leg.path.nodes[-1]
            robot.remaining_budget -= leg.path.cost

        # Rendezvous: refit from own data, then consensus on (s, l).
        for robot in robots:
            locs = ev_locs + [loc for loc, _ in robot.measurements]
            vals = ev_vals + [v for _, v in robot.measurements]
            fit = fit_hyperparams(coords[locs], vals, init=robot.fitted,
                                  bounds=cfg.fit_bounds)
            robot.fitted = fit.kernel
        values = np.array([[r.fitted.signal_variance, r.fitted.length_scale]
                           for r in robots])
        behaviors = tuple(
            MALICIOUS_CONSTANT if r.compromised else WELL_BEHAVED for r in robots
        )
        eps_abs = cfg.consensus_eps * max(1.0, float(np.abs(values).max()))
        pg = build_prob_graph(field, [r.position for r in robots])
        state, log = run_meeting_consensus(
            ConsensusState(values, behaviors, cfg.F), pg, mode, eps_abs,
            cfg.max_rounds, np.random.default_rng([seeds.consensus, ai]),
        )
        logs.append(log)
        for robot in robots:
            if not robot.compromised:
                robot.fitted = Kernel(float(state.values[robot.id, 0]),
                                      float(state.values[robot.id, 1]))

    models = [_robot_gp(r, coords, ev_locs, ev_vals) for r in robots]
    return MissionResult(models, logs, robots, plans, offline, list(zip(ev_locs, ev_vals)))


def _robot_gp(robot: RobotState, coords, ev_locs, ev_vals) -> GpModel:
    locs = list(ev_locs) + [loc for loc, _ in robot.measurements]
    vals = list(ev_vals) + [v for _, v in robot.measurements]
    return GpModel(robot.fitted, coords, tuple(locs), np.asarray(vals))
