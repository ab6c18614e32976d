"""2D point-mass navigation in grid mazes.

Coordinate conventions used throughout:

* A maze is a grid of unit cells. Cell ``(r, c)`` (row, column) spans
  ``[c, c+1) x [r, r+1)`` in continuous ``(x, y)`` space, so ``x`` runs
  along columns and ``y`` along rows. The centre of a cell is at
  ``(c + 0.5, r + 0.5)``.
* The agent is a point with position and velocity, driven by bounded
  accelerations. Collision handling is axis-separated: the two position
  components are updated one at a time, and a component that would land
  inside a wall cell is reverted with its velocity component zeroed.
* Reward is state based: 1.0 whenever the position is within
  ``GOAL_RADIUS`` of the goal centre, else 0.0.

Map files are plain text, one character per cell: ``#`` wall, ``.`` free,
``S`` / ``G`` free cells marking a default start and goal.
"""

from __future__ import annotations

import importlib.resources
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .rng import DATA, substream
from .trajectory import Dataset, Trajectory

DT = 0.1
V_MAX = 2.0
GOAL_RADIUS = 0.5

# Expert controller constants. The derivative gain is the critical-damping
# value for the proportional gain; within the unclipped regime the response
# does not overshoot (saturation at long range can).
KP = 10.0
KD = 2.0 * math.sqrt(KP)
CAPTURE_RADIUS = 0.3
ACTION_NOISE = 0.1
START_JITTER = 0.3

Cell = tuple[int, int]


class MazeError(ValueError):
    """Malformed map text or geometric misuse."""


class PathError(MazeError):
    """No route exists between the requested cells."""


class RolloutError(RuntimeError):
    """The expert failed to reach its goal within the step budget."""


class CalibrationError(RuntimeError):
    """Reference-path length calibration did not converge."""


@dataclass(frozen=True)
class MazeSpec:
    """A parsed maze: wall grid plus optional default start/goal cells."""

    name: str
    grid: np.ndarray  # bool, True = wall
    start_cell: Optional[Cell]
    goal_cell: Optional[Cell]

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        if grid.ndim != 2 or grid.shape[0] < 3 or grid.shape[1] < 3:
            raise MazeError(f"grid must be 2D and at least 3x3, got {grid.shape}")

    @property
    def rows(self) -> int:
        return self.grid.shape[0]

    @property
    def cols(self) -> int:
        return self.grid.shape[1]

    def is_wall(self, cell: Cell) -> bool:
        r, c = cell
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            return True
        return bool(self.grid[r, c])

    def is_free(self, cell: Cell) -> bool:
        return not self.is_wall(cell)

    def free_cells(self) -> list[Cell]:
        rs, cs = np.nonzero(~self.grid)
        return [(int(r), int(c)) for r, c in zip(rs, cs)]


def parse_maze(text: str, name: str = "maze") -> MazeSpec:
    """Parse map text into a :class:`MazeSpec`.

    The map must be rectangular, use only ``# . S G``, have fully walled
    borders, and contain at most one ``S`` and one ``G``.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MazeError("empty map text")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise MazeError("map rows have unequal lengths")
    grid = np.zeros((len(lines), width), dtype=bool)
    start = goal = None
    for r, ln in enumerate(lines):
        for c, ch in enumerate(ln):
            if ch == "#":
                grid[r, c] = True
            elif ch in ".SG":
                if ch == "S":
                    if start is not None:
                        raise MazeError("multiple start markers")
                    start = (r, c)
                elif ch == "G":
                    if goal is not None:
                        raise MazeError("multiple goal markers")
                    goal = (r, c)
            else:
                raise MazeError(f"bad map character {ch!r} at row {r}, col {c}")
    border = (
        grid[0, :].all() and grid[-1, :].all()
        and grid[:, 0].all() and grid[:, -1].all()
    )
    if not border:
        raise MazeError("map border must be solid wall")
    return MazeSpec(name=name, grid=grid, start_cell=start, goal_cell=goal)


def load_maze_file(path) -> MazeSpec:
    import os

    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    return parse_maze(text, name=os.path.splitext(os.path.basename(str(path)))[0])


def builtin_maze(name: str) -> MazeSpec:
    """Load one of the maps shipped with the package (e.g. ``"umaze5"``)."""
    ref = importlib.resources.files(__package__) / "mazes" / f"{name}.txt"
    try:
        text = ref.read_text(encoding="ascii")
    except FileNotFoundError:
        raise MazeError(f"no builtin maze named {name!r}") from None
    return parse_maze(text, name=name)


def cell_center(cell: Cell) -> np.ndarray:
    r, c = cell
    return np.array([c + 0.5, r + 0.5], dtype=np.float64)


def cell_of(pos: np.ndarray) -> Cell:
    return (int(math.floor(pos[1])), int(math.floor(pos[0])))


@dataclass(frozen=True)
class EnvState:
    pos: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        for field in ("pos", "vel"):
            arr = np.asarray(getattr(self, field), dtype=np.float64).copy()
            if arr.shape != (2,):
                raise MazeError(f"{field} must have shape (2,), got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, field, arr)

    def vector(self) -> np.ndarray:
        """Concatenated ``[x, y, vx, vy]`` observation."""
        return np.concatenate([self.pos, self.vel])


def state_from_vector(vec: np.ndarray) -> EnvState:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (4,):
        raise MazeError(f"state vector must have shape (4,), got {vec.shape}")
    return EnvState(pos=vec[:2], vel=vec[2:])


def initial_state(spec: MazeSpec, cell: Optional[Cell] = None) -> EnvState:
    """State at rest at the centre of ``cell`` (default: the map's start)."""
    if cell is None:
        cell = spec.start_cell
        if cell is None:
            raise MazeError("maze has no start marker; pass a cell explicitly")
    if not spec.is_free(cell):
        raise MazeError(f"cell {cell} is a wall")
    return EnvState(pos=cell_center(cell), vel=np.zeros(2))


def step(
    spec: MazeSpec,
    state: EnvState,
    action: np.ndarray,
    goal_pos: Optional[np.ndarray] = None,
) -> tuple[EnvState, float, bool]:
    """Advance the point mass one tick.

    The action is clipped to ``[-1, 1]`` per component, integrated into the
    velocity, and the speed is capped at ``V_MAX`` by rescaling. The x move
    is attempted first, then the y move at the updated x; a move whose
    destination cell is a wall is cancelled and that velocity component set
    to zero. Max speed times DT is below one cell, so walls cannot be
    stepped over.

    Returns ``(next_state, reward, done)``. When ``goal_pos`` is omitted the
    map's goal marker is used; with neither, reward is 0 and done is False.
    """
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    if a.shape != (2,):
        raise MazeError(f"action must have shape (2,), got {a.shape}")
    vel = state.vel + a * DT
    speed = float(np.linalg.norm(vel))
    if speed > V_MAX:
        vel = vel * (V_MAX / speed)
    x, y = state.pos
    vx, vy = vel

    nx = x + vx * DT
    if spec.is_wall((int(math.floor(y)), int(math.floor(nx)))):
        nx, vx = x, 0.0
    ny = y + vy * DT
    if spec.is_wall((int(math.floor(ny)), int(math.floor(nx)))):
        ny, vy = y, 0.0

    nxt = EnvState(pos=np.array([nx, ny]), vel=np.array([vx, vy]))
    if goal_pos is None:
        if spec.goal_cell is None:
            return nxt, 0.0, False
        goal_pos = cell_center(spec.goal_cell)
    reached = float(np.linalg.norm(nxt.pos - np.asarray(goal_pos))) <= GOAL_RADIUS
    return nxt, (1.0 if reached else 0.0), reached


def bfs_path(spec: MazeSpec, start: Cell, goal: Cell) -> list[Cell]:
    """Shortest 4-connected cell path from start to goal, inclusive.

    Ties are broken by fixed neighbour order (up, down, left, right), so the
    result is deterministic. Raises :class:`PathError` if the goal is
    unreachable or either endpoint is a wall.
    """
    for cell in (start, goal):
        if not spec.is_free(cell):
            raise PathError(f"cell {cell} is a wall")
    if start == goal:
        return [start]
    parent: dict[Cell, Cell] = {start: start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (r + dr, c + dc)
            if nxt not in parent and spec.is_free(nxt):
                parent[nxt] = (r, c)
                if nxt == goal:
                    path = [nxt]
                    while path[-1] != start:
                        path.append(parent[path[-1]])
                    path.reverse()
                    return path
                queue.append(nxt)
    raise PathError(f"no path from {start} to {goal} in maze {spec.name!r}")


def route_cells(spec: MazeSpec, start: Cell, goal: Cell,
                via: Sequence[Cell] = ()) -> list[Cell]:
    """Cell path start -> each via cell in order -> goal, junctions deduped."""
    stops = [start, *via, goal]
    cells: list[Cell] = [start]
    for a, b in zip(stops[:-1], stops[1:]):
        cells.extend(bfs_path(spec, a, b)[1:])
    return cells


def pd_action(state: EnvState, target_pos: np.ndarray) -> np.ndarray:
    """Proportional-derivative acceleration toward a target, clipped to the
    action box."""
    raw = KP * (np.asarray(target_pos) - state.pos) - KD * state.vel
    return np.clip(raw, -1.0, 1.0)


class WaypointFollower:
    """Steers through a list of waypoints with a PD controller.

    A waypoint is considered reached when the position comes within
    ``capture_radius``; the follower then advances to the next one. The
    final waypoint is held indefinitely.
    """

    def __init__(self, waypoints: Sequence[np.ndarray],
                 capture_radius: float = CAPTURE_RADIUS):
        if not len(waypoints):
            raise MazeError("need at least one waypoint")
        self.waypoints = [np.asarray(w, dtype=np.float64) for w in waypoints]
        self.capture_radius = float(capture_radius)
        self.index = 0

    def target(self, state: EnvState) -> np.ndarray:
        while (self.index < len(self.waypoints) - 1 and
               float(np.linalg.norm(state.pos - self.waypoints[self.index]))
               <= self.capture_radius):
            self.index += 1
        return self.waypoints[self.index]

    def act(self, state: EnvState) -> np.ndarray:
        return pd_action(state, self.target(state))

    def finished(self, state: EnvState) -> bool:
        """True once the final waypoint has been captured."""
        return (self.index == len(self.waypoints) - 1 and
                float(np.linalg.norm(state.pos - self.waypoints[-1]))
                <= self.capture_radius)


def rollout_expert(
    spec: MazeSpec,
    start_cell: Cell,
    goal_cell: Cell,
    rng: Optional[np.random.Generator] = None,
    *,
    via: Sequence[Cell] = (),
    noise_scale: float = ACTION_NOISE,
    start_jitter: float = START_JITTER,
    capture_radius: float = CAPTURE_RADIUS,
    min_length: int = 0,
    max_steps: Optional[int] = None,
) -> Trajectory:
    """Run the scripted expert from start cell to goal cell.

    The expert follows the shortest cell route (optionally through ``via``
    cells) with a PD controller, uniform action noise of ``noise_scale``
    per component, and a start position jittered within the start cell.
    Pass ``rng=None`` for a noise-free, centred rollout.

    The episode ends once the goal has been reached (state within
    ``GOAL_RADIUS`` of the goal centre) and at least ``min_length``
    transitions have been recorded; until then the controller keeps holding
    the goal centre, so padded tails dwell at the goal. Raises
    :class:`RolloutError` if the goal is not reached within the budget
    (default ``40 * route length`` steps).
    """
    cells = route_cells(spec, start_cell, goal_cell, via)
    goal_pos = cell_center(goal_cell)
    budget = max_steps if max_steps is not None else 40 * len(cells)
    budget = max(budget, min_length)

    pos = cell_center(start_cell)
    if rng is not None and start_jitter > 0.0:
        pos = pos + rng.uniform(-start_jitter, start_jitter, size=2)
    state = EnvState(pos=pos, vel=np.zeros(2))
    follower = WaypointFollower([cell_center(c) for c in cells],
                                capture_radius=capture_radius)

    states = [state.vector()]
    actions: list[np.ndarray] = []
    rewards = [1.0 if np.linalg.norm(state.pos - goal_pos) <= GOAL_RADIUS else 0.0]
    reached = rewards[0] > 0.0
    for t in range(budget):
        action = follower.act(state)
        if rng is not None and noise_scale > 0.0:
            action = np.clip(
                action + rng.uniform(-noise_scale, noise_scale, size=2),
                -1.0, 1.0)
        state, reward, done = step(spec, state, action, goal_pos=goal_pos)
        actions.append(action)
        states.append(state.vector())
        rewards.append(reward)
        reached = reached or done
        if reached and len(actions) >= min_length:
            break
    if not reached:
        raise RolloutError(
            f"expert did not reach {goal_cell} from {start_cell} "
            f"within {budget} steps")
    # The action at the terminal state is recorded but never executed.
    actions.append(pd_action(state, follower.target(state)))
    return Trajectory(
        states=np.asarray(states),
        actions=np.asarray(actions),
        rewards=np.asarray(rewards),
    )


PairSampler = Callable[[np.random.Generator], tuple[Cell, Cell, tuple[Cell, ...]]]


def uniform_pair_sampler(spec: MazeSpec) -> PairSampler:
    """Sampler over ordered pairs of distinct free cells, no via cells."""
    cells = spec.free_cells()
    if len(cells) < 2:
        raise MazeError("maze needs at least two free cells")

    def sample(rng: np.random.Generator):
        i = int(rng.integers(len(cells)))
        j = int(rng.integers(len(cells) - 1))
        if j >= i:
            j += 1
        return cells[i], cells[j], ()

    return sample


def routed_pair_sampler(
    pairs: Sequence[tuple[Cell, Cell]],
    via_choices: Optional[Callable[[tuple[Cell, Cell]], Sequence[Sequence[Cell]]]] = None,
) -> PairSampler:
    """Sampler over a fixed pair list, optionally with via-route variety.

    ``via_choices(pair)`` returns the route options for that pair, one of
    which is drawn uniformly per episode; each option is a sequence of via
    cells (possibly empty).
    """
    pairs = [((int(a[0]), int(a[1])), (int(b[0]), int(b[1]))) for a, b in pairs]
    if not pairs:
        raise MazeError("pair list is empty")

    def sample(rng: np.random.Generator):
        start, goal = pairs[int(rng.integers(len(pairs)))]
        via: tuple[Cell, ...] = ()
        if via_choices is not None:
            options = list(via_choices((start, goal)))
            if options:
                via = tuple(options[int(rng.integers(len(options)))])
        return start, goal, via

    return sample


def generate_dataset(
    spec: MazeSpec,
    n_transitions: int,
    seed: int,
    *,
    pair_sampler: Optional[PairSampler] = None,
    noise_scale: float = ACTION_NOISE,
    min_length: int = 0,
    max_steps: Optional[int] = None,
) -> Dataset:
    """Collect expert trajectories until they hold ``n_transitions`` steps.

    Trajectory ``i`` is generated from its own seeded stream, so the result
    is reproducible and individual episodes can be re-derived in isolation.
    Collection stops after the episode that crosses the requested count, so
    the total may overshoot by at most one episode.
    """
    if n_transitions <= 0:
        raise MazeError("n_transitions must be positive")
    sampler = pair_sampler if pair_sampler is not None else uniform_pair_sampler(spec)
    trajectories: list[Trajectory] = []
    total = 0
    index = 0
    while total < n_transitions:
        rng = substream(seed, DATA, index)
        start, goal, via = sampler(rng)
        traj = rollout_expert(
            spec, start, goal, rng,
            via=via, noise_scale=noise_scale,
            min_length=min_length, max_steps=max_steps)
        trajectories.append(traj)
        total += traj.horizon
        index += 1
    return Dataset(d_s=4, d_a=2, trajectories=trajectories)


@dataclass(frozen=True)
class CornerTask:
    """Corner-to-corner navigation split for generalization studies.

    Training covers only the four directed diagonal pairs, each routed
    through one of the two rooms off the diagonal so the data still
    exercises every doorway. Test pairs are the eight directed
    edge-adjacent pairs, none of which appear in training. Routes detour
    through the off-diagonal rooms' interior anchor cells rather than the
    corner cells themselves, so no training route passes within the goal
    radius of a test endpoint.
    """

    corners: dict  # {"nw": cell, "ne": cell, "sw": cell, "se": cell}
    anchors: dict  # same keys; interior cell one step in from each corner
    train_pairs: tuple
    test_pairs: tuple

    def via_choices(self, pair: tuple[Cell, Cell]) -> tuple[tuple[Cell], ...]:
        """Route options for a training pair: through either off-diagonal
        room's anchor."""
        others = [key for key, c in self.corners.items() if c not in pair]
        return tuple((self.anchors[key],) for key in others)


def make_corner_task(spec: MazeSpec) -> CornerTask:
    """Build the diagonal-train / adjacent-test corner split for a maze."""
    free = spec.free_cells()
    targets = {
        "nw": (0, 0),
        "ne": (0, spec.cols - 1),
        "sw": (spec.rows - 1, 0),
        "se": (spec.rows - 1, spec.cols - 1),
    }
    corners = {}
    for key, (tr, tc) in targets.items():
        corners[key] = min(free, key=lambda cell: (cell[0] - tr) ** 2 + (cell[1] - tc) ** 2)
    if len(set(corners.values())) != 4:
        raise MazeError("maze corners are not distinct free cells")
    anchors = {}
    for key, (r, c) in corners.items():
        dr = 1 if r < spec.rows // 2 else -1
        dc = 1 if c < spec.cols // 2 else -1
        candidate = (r + dr, c + dc)
        anchors[key] = candidate if spec.is_free(candidate) else (r, c)
    nw, ne, sw, se = corners["nw"], corners["ne"], corners["sw"], corners["se"]
    train = ((nw, se), (se, nw), (ne, sw), (sw, ne))
    test = (
        (nw, ne), (ne, nw),
        (ne, se), (se, ne),
        (se, sw), (sw, se),
        (sw, nw), (nw, sw),
    )
    return CornerTask(corners=corners, anchors=anchors, train_pairs=train,
                      test_pairs=test)


def reference_paths(
    spec: MazeSpec,
    start_cell: Cell,
    goal_cell: Cell,
    count: int,
    target_horizon: int,
    seed: int,
    *,
    tolerance: int = 2,
    max_iters: int = 50,
) -> list[Trajectory]:
    """Noise-free expert paths whose length matches a planning horizon.

    Rollout length is steered by bisecting a single arrival threshold that
    serves as both the waypoint capture radius and the stop distance at the
    goal: a loose threshold cuts corners and stops early, a tight one hugs
    waypoints and runs long. Each path gets its own jittered start drawn
    from ``seed``. Raises :class:`CalibrationError` when no threshold in
    range produces a horizon within ``tolerance`` of the target.
    """
    cells = route_cells(spec, start_cell, goal_cell)
    waypoints = [cell_center(c) for c in cells]
    goal_pos = waypoints[-1]

    def run(start_pos: np.ndarray, threshold: float) -> Trajectory:
        state = EnvState(pos=start_pos, vel=np.zeros(2))
        follower = WaypointFollower(waypoints, capture_radius=threshold)
        states = [state.vector()]
        actions: list[np.ndarray] = []
        rewards = [1.0 if np.linalg.norm(state.pos - goal_pos) <= GOAL_RADIUS else 0.0]
        budget = max(40 * len(cells), 4 * target_horizon)
        for _ in range(budget):
            action = follower.act(state)
            state, reward, _ = step(spec, state, action, goal_pos=goal_pos)
            actions.append(action)
            states.append(state.vector())
            rewards.append(reward)
            if float(np.linalg.norm(state.pos - goal_pos)) <= threshold:
                break
        actions.append(pd_action(state, goal_pos))
        return Trajectory(states=np.asarray(states),
                          actions=np.asarray(actions),
                          rewards=np.asarray(rewards))

    paths = []
    for i in range(count):
        rng = substream(seed, DATA, i)
        start_pos = cell_center(start_cell) + rng.uniform(-START_JITTER,
                                                          START_JITTER, size=2)
        lo, hi = 0.02, 0.49  # tight -> long rollouts, loose -> short
        best = None
        for _ in range(max_iters):
            mid = 0.5 * (lo + hi)
            traj = run(start_pos, mid)
            err = traj.horizon - target_horizon
            if abs(err) <= tolerance:
                best = traj
                break
            if err > 0:
                lo = mid  # too long: loosen
            else:
                hi = mid  # too short: tighten
        if best is None:
            raise CalibrationError(
                f"could not match horizon {target_horizon} for "
                f"{start_cell}->{goal_cell} (last length {traj.horizon})")
        paths.append(best)
    return paths
