import numpy as np
import pytest

from rmipp.gp_core import GpModel, Kernel, mutual_information, sample_environment
from rmipp.mission import (
    AttackSpec,
    InfeasibleBudgetError,
    MissionConfig,
    MissionSeeds,
    RobotState,
    corrupt,
    execute_mission,
    plan_offline_meetings,
    plan_robot,
    sequential_plan,
)
from rmipp.resilience import CommDescriptor, synth_comm_field
from rmipp.world import build_grid, partition


def test_corrupt_examples():
    rng = np.random.default_rng(0)
    spec = AttackSpec(frozenset({0}), 0.0, 0.0)
    assert corrupt(1.25, rng, spec) == 1.25

    spec = AttackSpec(frozenset({0}), 1.0, 3.0)
    for _ in range(200):
        delta = corrupt(0.0, rng, spec)
        assert 1.0 <= delta <= 3.0

    spec = AttackSpec(frozenset({0}), -2.0, 2.0)
    draws = np.array([corrupt(0.0, rng, spec) for _ in range(10_000)])
    assert abs(draws.mean()) < 0.07  # 3 sigma of the uniform mean

    with pytest.raises(ValueError):
        AttackSpec(frozenset(), 2.0, 1.0)


def _planning_world(width=6, height=5):
    world = partition(build_grid(width, height), 2, 2)
    gp = GpModel(Kernel(1.0, 1.2), world.coords_array())
    return world, gp


def _robot(pos, budget=100.0):
    return RobotState(id=0, position=pos, measurements=[], fitted=Kernel(1, 1),
                      compromised=False, remaining_budget=budget)


def test_plan_robot_fully_claimed_goes_direct():
    world, gp = _planning_world()
    area = world.areas[0]
    leg = plan_robot(_robot(0), world, gp, area, 12, set(area), 2.0)
    assert leg.q is None
    assert leg.path.nodes[0] == 0 and leg.path.nodes[-1] == 12
    assert leg.path.cost == pytest.approx(2.0)


def test_plan_robot_picks_area_mi_argmax():
    world, gp = _planning_world()
    area = world.areas[0]
    leg = plan_robot(_robot(0), world, gp, area, 1, set(), 2.0)
    scores = {c: mutual_information(gp, [c]) for c in area}
    best = max(scores, key=lambda c: (scores[c], -c))
    assert leg.q == best
    assert leg.q in leg.path.nodes


def test_plan_robot_claimed_excluded_and_paths_inflated():
    world, gp = _planning_world()
    area = world.areas[0]
    first = plan_robot(_robot(0), world, gp, area, 12, set(), 2.0)
    for a, b in first.path.edges():
        assert world.cost[(a, b)] == 2.0
        assert world.cost[(b, a)] == 2.0
    second = plan_robot(_robot(1), world, gp, area, 13, set(first.path.nodes), 2.0)
    assert second.q != first.q
    assert second.q not in first.path.nodes


def test_plan_robot_budget_fallback_and_infeasible():
    world, gp = _planning_world()
    area = world.areas[0]
    # Budget only covers the direct hop: detours off the s-t line are pruned.
    leg = plan_robot(_robot(0, budget=1.0), world, gp, area, 1, set(), 2.0)
    assert leg.path.cost <= 1.0 + 1e-9
    assert leg.path.nodes[-1] == 1
    with pytest.raises(InfeasibleBudgetError):
        plan_robot(_robot(0, budget=0.5), world, gp, area, 12, set(), 2.0)


def test_plan_robot_respects_budget_cap():
    world, gp = _planning_world()
    area = world.areas[0]
    free = plan_robot(_robot(0), world, gp, area, 1, set(), 2.0)
    assert free.path.cost > 1.0  # detours through its q
    world2, gp2 = _planning_world()
    capped = plan_robot(_robot(0), world2, gp2, area, 1, set(), 2.0, budget_cap=1.0)
    assert capped.path.cost <= 1.0 + 1e-9


def test_sequential_plan_claims_and_budget():
    world, gp = _planning_world()
    team = [RobotState(k, world.loc_id(0, k), [], Kernel(1, 1), False, 50.0)
            for k in range(3)]
    gps = [gp] * 3
    plan = sequential_plan(team, world, gps, world.areas[0],
                           [world.loc_id(2, 0), world.loc_id(2, 1), world.loc_id(2, 2)],
                           2.0, 150.0)
    qs = [leg.q for leg in plan.legs if leg.q is not None]
    assert len(qs) == len(set(qs))
    assert plan.total_cost <= 150.0
    for leg, target in zip(plan.legs, plan.meeting_positions):
        assert leg.path.nodes[-1] == target

    with pytest.raises(ValueError):
        sequential_plan(team, world, gps, world.areas[0], [0, 0, 1], 2.0, 150.0)
    with pytest.raises(ValueError):
        sequential_plan(team, world, gps, world.areas[0], [0, 1], 2.0, 150.0)


def test_sequential_plan_single_robot_matches_plan_robot():
    world, gp = _planning_world()
    robot = _robot(0, budget=40.0)
    plan = sequential_plan([robot], world, [gp], world.areas[0], [12], 2.0, 40.0)
    world2, gp2 = _planning_world()
    leg = plan_robot(_robot(0, budget=40.0), world2, gp2, world2.areas[0], 12,
                     set(), 2.0)
    assert plan.legs[0].path.nodes == leg.path.nodes
    assert plan.legs[0].q == leg.q


def test_sequential_plan_budget_holds_on_random_scenarios():
    rng = np.random.default_rng(31)
    for _ in range(20):
        width = int(rng.integers(5, 9))
        height = int(rng.integers(4, 7))
        world = partition(build_grid(width, height), 2, 2)
        n = int(rng.integers(1, 4))
        share = float(rng.uniform(12, 60))
        team = [RobotState(k, world.loc_id(0, k), [], Kernel(1, 1), False, share)
                for k in range(n)]
        gps = [GpModel(Kernel(1.0, 1.5), world.coords_array())] * n
        meeting = [world.loc_id(width - 2, k) for k in range(n)]
        plan = sequential_plan(team, world, gps, world.areas[0], meeting, 2.0,
                               share * n)
        assert plan.total_cost <= share * n + 1e-6


def _small_mission(n=3, n_a=0, mode="wmsr", F=1, epsilon=(-3.0, 3.0), gamma=120.0,
                   compromised=()):
    width, height = 9, 6
    world = partition(build_grid(width, height), 3, 2)
    world.start_ids = [world.loc_id(0, y) for y in (1, 2, 3)][:n]
    world.goal_ids = [world.loc_id(width - 1, y) for y in (1, 2, 3)][:n]
    desc = CommDescriptor("distance-decay", rho=5.0, p_max=0.85)
    field = synth_comm_field(world, desc)
    env = sample_environment(Kernel(1.2, 2.0), world, 77)
    cfg = MissionConfig(
        width=width, height=height, base_cost=1.0, m_areas=3, f_subareas=2,
        n=n, F=F, r=F + 1, s=F + 1, gamma=gamma, alpha=2.0,
        fit_bounds=((0.1, 10.0), (0.5, 20.0)),
        consensus_eps=1e-4, max_rounds=60, initial_evidence_count=4,
        placements=4, pr_samples=400,
        start_ids=tuple(world.start_ids), goal_ids=tuple(world.goal_ids),
        attack=AttackSpec(frozenset(compromised), *epsilon),
    )
    seeds = MissionSeeds(evidence=11, attack=22, meetings=33, consensus=44)
    return cfg, env, field, seeds


def test_execute_mission_no_attack_unifies_kernels():
    cfg, env, field, seeds = _small_mission(n=3, compromised=())
    cfg = MissionConfig(**{**cfg.__dict__, "F": 0, "r": 1, "s": 1})
    res = execute_mission(cfg, env, field, seeds, "wmsr")
    ss = [r.fitted.signal_variance for r in res.robots]
    ls = [r.fitted.length_scale for r in res.robots]
    assert max(ss) - min(ss) < 1e-2
    assert max(ls) - min(ls) < 1e-2
    assert len(res.round_logs) == 3
    assert len(res.plans) == 3


def test_execute_mission_measurement_fidelity():
    cfg, env, field, seeds = _small_mission(n=3, compromised=(1,))
    res = execute_mission(cfg, env, field, seeds, "wmsr")
    for robot in res.robots:
        for loc, value in robot.measurements:
            if robot.compromised:
                delta = value - env.values[loc]
                assert -3.0 <= delta <= 3.0
            else:
                assert value == env.values[loc]
        # Measured locations lie on the robot's executed paths.
        on_paths = set()
        for plan in res.plans:
            on_paths.update(plan.legs[robot.id].path.nodes)
        assert {loc for loc, _ in robot.measurements} <= on_paths


def test_execute_mission_meeting_containment_and_budget():
    cfg, env, field, seeds = _small_mission(n=3, compromised=(2,))
    world = partition(build_grid(cfg.width, cfg.height), cfg.m_areas, cfg.f_subareas)
    res = execute_mission(cfg, env, field, seeds, "wmsr")
    for ai, plan in enumerate(res.plans):
        if ai < len(res.meetings):
            chosen = set(world.subareas[ai][res.meetings[ai].subarea_index])
            for leg in plan.legs:
                assert leg.path.nodes[-1] in chosen
        else:
            for leg, goal in zip(plan.legs, cfg.goal_ids):
                assert leg.path.nodes[-1] == goal
        assert plan.total_cost <= cfg.gamma + 1e-6
    for robot in res.robots:
        assert robot.remaining_budget >= -1e-9


def test_execute_mission_wmsr_resists_linear_does_not():
    cfg, env, field, seeds = _small_mission(n=4, compromised=(3,), F=1)
    cfg = MissionConfig(**{**cfg.__dict__, "n": 4,
                           "start_ids": tuple(cfg.start_ids) + (45,),
                           "goal_ids": tuple(cfg.goal_ids) + (53,)})
    offline = None
    out = {}
    for mode in ("wmsr", "linear"):
        res = execute_mission(cfg, env, field, seeds, mode, offline=offline)
        offline = res.meetings
        out[mode] = res
    bad = out["wmsr"].robots[3].fitted
    for mode, res in out.items():
        goods = [r.fitted for r in res.robots if not r.compromised]
        spread_s = max(g.signal_variance for g in goods) - min(
            g.signal_variance for g in goods)
        gap_to_bad = min(abs(g.signal_variance - bad.signal_variance) for g in goods)
        if mode == "wmsr":
            assert spread_s < 0.05
            wmsr_gap = gap_to_bad
        else:
            linear_gap = gap_to_bad
    # Linear consensus ends closer to the corrupted fit than W-MSR does.
    assert linear_gap < wmsr_gap


def test_execute_mission_infeasible_budget_raises():
    cfg, env, field, seeds = _small_mission(gamma=10.0)
    with pytest.raises(InfeasibleBudgetError):
        execute_mission(cfg, env, field, seeds, "wmsr")


def test_offline_meetings_cover_all_but_last_area():
    cfg, env, field, seeds = _small_mission()
    world = partition(build_grid(cfg.width, cfg.height), cfg.m_areas, cfg.f_subareas)
    rng = np.random.default_rng(5)
    offline = plan_offline_meetings(world, field, cfg, rng)
    assert len(offline) == cfg.m_areas - 1
    for ai, sel in enumerate(offline):
        assert set(sel.positions) <= set(world.subareas[ai][sel.subarea_index])
