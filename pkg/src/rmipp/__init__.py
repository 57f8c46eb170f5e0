"""Resilient multi-robot informative path planning simulator."""

from .consensus import (
    ConsensusState,
    RoundLog,
    count_retransmissions,
    linear_step,
    run_meeting_consensus,
    wmsr_step,
)
from .gp_core import (
    EnvField,
    FitResult,
    GpModel,
    Kernel,
    entropy,
    fit_hyperparams,
    kernel_eval,
    mi_gain,
    mi_gain_map,
    mutual_information,
    posterior,
    sample_environment,
)
from .harness import (
    ExperimentReport,
    Scenario,
    TrialMetrics,
    emit_outputs,
    load_scenario,
    run_experiment,
    run_trial,
)
from .mission import (
    AttackSpec,
    MissionConfig,
    MissionResult,
    MissionSeeds,
    RobotState,
    corrupt,
    execute_mission,
    plan_robot,
    sequential_plan,
)
from .resilience import (
    CommDescriptor,
    CommField,
    DetGraph,
    ProbGraph,
    build_prob_graph,
    is_rs_robust,
    prob_resilience,
    sample_realization,
    select_meeting_subarea,
    synth_comm_field,
)
from .world import GridWorld, Path, build_grid, inflate_traversed, partition, shortest_path

__version__ = "0.1.0"
