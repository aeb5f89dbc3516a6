"""Iterative multi-agent planning with opportunistic plan synchronization."""

from .executor import (
    ConditionReport,
    DisturbanceModel,
    EpisodeResult,
    EpisodeTrace,
    ScriptedDisturbance,
    check_recovery_conditions,
    run_episode,
    sweep,
)
from .planner import NoFutureSync, plan_with_sync, plan_with_sync_disturbance
from .recovery import ReachQuery, Unrecoverable, backward_reach, min_recovery_steps, recover
from .scenario import build_scenario, default_config, power_uav, power_ugv, random_scenario_config
from .solver import ConstraintSolver, Infeasible, PinConstraint, SolveRequest, SyncVisitConstraint, solve
from .sync_model import LocalSyncStates, PlanBeliefs, SyncStates, next_sync_step, sync_update
from .tasking import StateClass, TaskSiteAssignment, TaskUpdate, apply_update, satisfies
from .transition_system import (
    AgentTransitionSystem,
    MultiAgentTransitionSystem,
    Trajectory,
    compose,
    project,
    validate_trajectory,
)

__version__ = "0.1.0"
