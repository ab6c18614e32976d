"""Plan synthesis and episode execution.

Planning happens in normalized matrix space: the current state (and the
goal state) are written into fixed columns as sampling constraints, the
reverse process fills in everything between, and the result is mapped back
to environment units. Because normalization round-trips lose a few bits,
the constrained columns are overwritten with the exact environment-space
endpoints after denormalization, which also makes segment boundaries of
hierarchical plans exactly continuous.

Three planner flavours are provided:

* flat: one matrix covering every timestep;
* dense-action sparse: subsampled states with all intervening actions
  packed under each column, so the full action sequence is recoverable;
* hierarchical: a sparse high level proposes subgoal states, then a
  low-level segment model fills each consecutive subgoal pair. All
  segments are sampled in one batched pass, which costs far fewer network
  sweeps than a flat plan of the same horizon.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .diffusion import (
    Constraint,
    NoiseSchedule,
    SampleConfig,
    sample_plan,
    sample_plan_batch,
)
from .maze import (
    GOAL_RADIUS,
    MazeSpec,
    WaypointFollower,
    cell_center,
    initial_state,
    step,
)
from .nets import DenoiserParams, GuidanceParams
from .rng import EPISODE, PLAN, derive_seed
from .trajectory import (
    Layout,
    NormStats,
    PlanMatrix,
    denormalize,
    extract_actions,
    extract_states,
    normalize_state,
)
from .training import WindowSpec


class PlanError(ValueError):
    """A model/layout combination that cannot produce the requested plan."""


@dataclass(frozen=True)
class LevelModel:
    """A trained denoiser plus the window shape it was trained on."""

    params: DenoiserParams
    window: WindowSpec
    sched: NoiseSchedule
    guidance: Optional[GuidanceParams] = None


@dataclass(frozen=True)
class PlanResult:
    """A synthesised plan in environment units.

    ``states`` has one row per planned support point. ``actions`` is the
    executable action sequence (empty when the layout carries none).
    ``subgoals`` is the high-level state sequence for hierarchical plans.
    """

    states: np.ndarray
    actions: np.ndarray
    subgoals: Optional[np.ndarray] = None


def _endpoint_constraints(d_s: int, start_state, goal_state, stats):
    cons = [Constraint(0, d_s, 0, normalize_state(start_state, stats))]
    if goal_state is not None:
        cons.append(Constraint(0, d_s, -1, normalize_state(goal_state, stats)))
    return cons


def _denorm_states(model, stats, data, start_state, goal_state):
    pm = PlanMatrix(model.window.layout, data, len(stats.state_min),
                    len(stats.action_min), model.window.stride)
    pm = denormalize(pm, stats)
    states = extract_states(pm)
    states[0] = start_state
    if goal_state is not None:
        states[-1] = goal_state
    return pm, states


def plan_flat(model: LevelModel, stats: NormStats, start_state, goal_state,
              seed: int, omega: float = 0.0) -> PlanResult:
    """One endpoint-constrained matrix over the full horizon."""
    if model.window.layout is not Layout.FLAT:
        raise PlanError(f"flat planning needs a FLAT model, got "
                        f"{model.window.layout.name}")
    d_s = len(stats.state_min)
    shape = (model.window.channels(d_s, len(stats.action_min)),
             model.window.columns)
    cons = _endpoint_constraints(d_s, start_state, goal_state, stats)
    out = sample_plan(model.params, model.guidance, shape, model.sched,
                      SampleConfig(seed=seed, omega=omega), cons)
    pm, states = _denorm_states(model, stats, out.data, start_state, goal_state)
    actions = extract_actions(pm)[:-1]
    return PlanResult(states=states, actions=actions)


def plan_high(model: LevelModel, stats: NormStats, start_state, goal_state,
              seed: int, omega: float = 0.0) -> PlanResult:
    """Subsampled plan pinned at both endpoint states.

    For layouts that carry actions at unit stride the executable sequence
    is returned as well; sparse actions are not executable and yield an
    empty action array.
    """
    layout = model.window.layout
    if layout not in (Layout.SD_WITH_ACTIONS, Layout.SD_STATES_ONLY,
                      Layout.SD_DENSE_ACTIONS):
        raise PlanError(f"subgoal planning needs a subsampled layout, got "
                        f"{layout.name}")
    d_s, d_a = len(stats.state_min), len(stats.action_min)
    shape = (model.window.channels(d_s, d_a), model.window.columns)
    cons = _endpoint_constraints(d_s, start_state, goal_state, stats)
    out = sample_plan(model.params, model.guidance, shape, model.sched,
                      SampleConfig(seed=seed, omega=omega), cons)
    pm, states = _denorm_states(model, stats, out.data, start_state, goal_state)
    if layout is Layout.SD_STATES_ONLY:
        actions = np.zeros((0, d_a))
    elif layout is Layout.SD_DENSE_ACTIONS:
        # every intervening action is packed in the matrix; trim the spill
        # past the final planned state
        span = (model.window.columns - 1) * model.window.stride
        actions = extract_actions(pm)[:span]
    elif model.window.stride == 1:
        actions = extract_actions(pm)[:-1]
    else:
        actions = np.zeros((0, d_a))
    return PlanResult(states=states, actions=actions, subgoals=states.copy())


def plan_segments(model: LevelModel, stats: NormStats, subgoals: np.ndarray,
                  seed: int, omega: float = 0.0) -> PlanResult:
    """Fill every consecutive subgoal pair with a batched segment sample.

    Segment i is pinned to subgoals i and i+1 at its first and last column
    and keyed by its own derived seed, so the batch is bit-identical to
    sampling the segments one at a time.
    """
    if model.window.layout is not Layout.SEGMENT:
        raise PlanError(f"segment planning needs a SEGMENT model, got "
                        f"{model.window.layout.name}")
    subgoals = np.asarray(subgoals, dtype=np.float64)
    n_seg = len(subgoals) - 1
    if n_seg < 1:
        raise PlanError("need at least two subgoals")
    d_s, d_a = len(stats.state_min), len(stats.action_min)
    cols = model.window.columns
    shape = (model.window.channels(d_s, d_a), cols)
    cfgs = [SampleConfig(seed=derive_seed(seed, PLAN, i), omega=omega)
            for i in range(n_seg)]
    cons = [
        [Constraint(0, d_s, 0, normalize_state(subgoals[i], stats)),
         Constraint(0, d_s, -1, normalize_state(subgoals[i + 1], stats))]
        for i in range(n_seg)
    ]
    batch = sample_plan_batch(model.params, model.guidance, shape,
                              model.sched, cfgs, cons)
    seg_states = []
    seg_actions = []
    for i in range(n_seg):
        pm, states = _denorm_states(model, stats, batch[i],
                                    subgoals[i], subgoals[i + 1])
        seg_states.append(states[:-1])
        seg_actions.append(extract_actions(pm)[:-1])
    seg_states.append(subgoals[-1:])
    states = np.concatenate(seg_states, axis=0)
    actions = np.concatenate(seg_actions, axis=0)
    return PlanResult(states=states, actions=actions, subgoals=subgoals)


def plan_hierarchical(high: LevelModel, low: LevelModel, stats: NormStats,
                      start_state, goal_state, seed: int,
                      omega_high: float = 0.0,
                      omega_low: float = 0.0) -> PlanResult:
    """Subgoal plan at the top, batched segment infill below."""
    if low.window.columns - 1 != high.window.stride:
        raise PlanError(
            f"low level spans {low.window.columns - 1} steps but the high "
            f"level strides {high.window.stride}")
    top = plan_high(high, stats, start_state, goal_state,
                    derive_seed(seed, PLAN, 1_000_000), omega_high)
    filled = plan_segments(low, stats, top.subgoals, seed, omega_low)
    return PlanResult(states=filled.states, actions=filled.actions,
                      subgoals=top.subgoals)


# ---------------------------------------------------------------- planners


@dataclass(frozen=True)
class FlatPlanner:
    model: LevelModel
    stats: NormStats
    omega: float = 0.0

    def plan(self, start_state, goal_state, seed: int) -> PlanResult:
        return plan_flat(self.model, self.stats, start_state, goal_state,
                         seed, self.omega)

    @property
    def closed_chunk(self) -> int:
        return 1


@dataclass(frozen=True)
class DensePlanner:
    """Plans with the dense-action sparse layout; fully executable."""

    model: LevelModel
    stats: NormStats
    omega: float = 0.0

    def plan(self, start_state, goal_state, seed: int) -> PlanResult:
        return plan_high(self.model, self.stats, start_state, goal_state,
                         seed, self.omega)

    @property
    def closed_chunk(self) -> int:
        return self.model.window.stride


@dataclass(frozen=True)
class HierarchicalPlanner:
    high: LevelModel
    low: LevelModel
    stats: NormStats
    omega_high: float = 0.0
    omega_low: float = 0.0

    def plan(self, start_state, goal_state, seed: int) -> PlanResult:
        return plan_hierarchical(self.high, self.low, self.stats,
                                 start_state, goal_state, seed,
                                 self.omega_high, self.omega_low)

    @property
    def closed_chunk(self) -> int:
        return self.high.window.stride


# ---------------------------------------------------------------- episodes


@dataclass
class EpisodeRecord:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    success: bool
    steps: int
    replans: int
    plan_time: float
    wall_time: float
    first_plan: PlanResult


@dataclass(frozen=True)
class EpisodeConfig:
    seed: int
    max_steps: int = 300
    mode: str = "open"  # "open" replans only when a plan runs out
    chunk: Optional[int] = None  # "closed": actions executed per replan

    def __post_init__(self):
        if self.mode not in ("open", "closed", "track"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


def run_episode(spec: MazeSpec, planner, start_cell, goal_cell,
                cfg: EpisodeConfig) -> EpisodeRecord:
    """Run one planning episode in the maze until the goal or the budget.

    In open mode the planned actions run verbatim and a fresh plan is only
    requested when the previous one is exhausted; in closed mode at most
    ``chunk`` actions run before replanning from the current state. Track
    mode steers along the planned states instead, with the same waypoint
    controller that produced the expert data, and replans once the last
    waypoint has been captured. Planner calls are timed separately from
    environment stepping.
    """
    state = initial_state(spec, start_cell)
    goal_pos = cell_center(goal_cell)
    goal_state = np.concatenate([goal_pos, np.zeros(2)])
    tracking = cfg.mode == "track"
    queue: list[np.ndarray] = []
    follower: Optional[WaypointFollower] = None
    replans = 0
    plan_time = 0.0
    first_plan: Optional[PlanResult] = None
    states = [state.vector()]
    actions = []
    rewards = [1.0 if np.linalg.norm(state.pos - goal_pos) <= GOAL_RADIUS else 0.0]
    success = rewards[0] > 0.0
    t0 = time.perf_counter()
    steps = 0
    while steps < cfg.max_steps and not success:
        if tracking:
            stale = follower is None or follower.finished(state)
        else:
            stale = not queue
        if stale:
            t_plan = time.perf_counter()
            plan = planner.plan(state.vector(), goal_state,
                                derive_seed(cfg.seed, EPISODE, replans))
            plan_time += time.perf_counter() - t_plan
            replans += 1
            if first_plan is None:
                first_plan = plan
            if tracking:
                follower = WaypointFollower(plan.states[:, :2])
            else:
                acts = plan.actions
                if len(acts) == 0:
                    raise PlanError("planner produced no executable actions")
                if cfg.mode == "closed":
                    acts = acts[: (cfg.chunk or planner.closed_chunk)]
                queue = [a for a in np.asarray(acts)]
        a = follower.act(state) if tracking else queue.pop(0)
        state, reward, done = step(spec, state, a, goal_pos=goal_pos)
        actions.append(np.clip(a, -1.0, 1.0))
        states.append(state.vector())
        rewards.append(reward)
        steps += 1
        success = success or done
    wall = time.perf_counter() - t0
    actions.append(np.zeros(2) if not actions else actions[-1])
    return EpisodeRecord(
        states=np.asarray(states), actions=np.asarray(actions),
        rewards=np.asarray(rewards), success=bool(success), steps=steps,
        replans=replans, plan_time=plan_time, wall_time=wall,
        first_plan=first_plan,
    )
