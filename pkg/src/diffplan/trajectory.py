"""Trajectories, plan-matrix layouts, normalisation, and on-disk formats.

A trajectory of horizon T holds T+1 aligned rows of state, action, and
reward.  Planners operate on dense (channels, columns) matrices cut from
trajectories in one of five layouts:

  flat              (d_s + d_a, T + 1)    every timestep
  sd_with_actions   (d_s + d_a, H + 1)    every K-th timestep
  sd_states_only    (d_s,       H + 1)    every K-th state
  sd_dense_actions  (d_s + K*d_a, H + 1)  sparse states, all actions
  segment           (d_s + d_a, K + 1)    one K-step window

`matrix_meta` maps each (row, column) to the (kind, timestep, coordinate)
source entry it holds, exactly once per covered entry, which is what makes
round-tripping and per-channel normalisation well defined.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np


class HorizonError(ValueError):
    """A layout asks for more timesteps than the trajectory has."""


class DatasetFormatError(ValueError):
    """A dataset or stats file is malformed."""


_CONST_EPS = 1e-12


@dataclass(frozen=True)
class Trajectory:
    """Aligned (T+1)-row state/action/reward record of one episode."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        states = np.ascontiguousarray(self.states, dtype=np.float64)
        actions = np.ascontiguousarray(self.actions, dtype=np.float64)
        rewards = np.ascontiguousarray(self.rewards, dtype=np.float64)
        if states.ndim != 2 or actions.ndim != 2 or rewards.ndim != 1:
            raise DatasetFormatError("states/actions must be 2D, rewards 1D")
        n = states.shape[0]
        if actions.shape[0] != n or rewards.shape[0] != n or n < 1:
            raise DatasetFormatError("states, actions, rewards must share row count >= 1")
        for arr in (states, actions, rewards):
            arr.flags.writeable = False
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rewards", rewards)

    @property
    def horizon(self) -> int:
        """T: number of transitions."""
        return self.states.shape[0] - 1

    @property
    def d_s(self) -> int:
        return self.states.shape[1]

    @property
    def d_a(self) -> int:
        return self.actions.shape[1]


def trajectory_return(traj: Trajectory) -> float:
    return float(traj.rewards.sum())


def segment_return(traj: Trajectory, index: int, stride: int) -> float:
    """Sum of rewards over timesteps [index*stride, (index+1)*stride)."""
    if stride < 1:
        raise HorizonError("stride must be positive")
    start = index * stride
    if start < 0 or start + stride > traj.horizon + 1:
        raise IndexError(f"segment {index} with stride {stride} leaves the trajectory")
    return float(traj.rewards[start: start + stride].sum())


def segment_count(horizon: int, stride: int) -> int:
    """How many whole stride-step segments fit in a horizon."""
    if stride < 1:
        raise HorizonError("stride must be positive")
    return horizon // stride


class Layout(Enum):
    FLAT = "flat"
    SD_WITH_ACTIONS = "sd_with_actions"
    SD_STATES_ONLY = "sd_states_only"
    SD_DENSE_ACTIONS = "sd_dense_actions"
    SEGMENT = "segment"


@dataclass(frozen=True)
class PlanMatrix:
    """A dense (channels, columns) view of trajectory data in one layout.

    stride is the timestep gap between adjacent columns (1 for flat and
    segment layouts).  data is read-only.
    """

    layout: Layout
    data: np.ndarray
    d_s: int
    d_a: int
    stride: int

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DatasetFormatError(f"plan matrix must be 2D, got {data.shape}")
        if data.shape[0] != layout_channels(self.layout, self.d_s, self.d_a, self.stride):
            raise DatasetFormatError(
                f"{self.layout.value} with d_s={self.d_s} d_a={self.d_a} "
                f"stride={self.stride} needs "
                f"{layout_channels(self.layout, self.d_s, self.d_a, self.stride)} "
                f"channels, got {data.shape[0]}"
            )
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def columns(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "PlanMatrix":
        return PlanMatrix(self.layout, data, self.d_s, self.d_a, self.stride)


def layout_channels(layout: Layout, d_s: int, d_a: int, stride: int) -> int:
    if layout == Layout.SD_STATES_ONLY:
        return d_s
    if layout == Layout.SD_DENSE_ACTIONS:
        return d_s + stride * d_a
    return d_s + d_a


def make_flat(traj: Trajectory) -> PlanMatrix:
    """(d_s + d_a, T+1): states stacked over actions, one column per step."""
    data = np.concatenate([traj.states.T, traj.actions.T], axis=0)
    return PlanMatrix(Layout.FLAT, data, traj.d_s, traj.d_a, stride=1)


def subsample(traj: Trajectory, stride: int, columns: int, with_actions: bool) -> PlanMatrix:
    """Every stride-th timestep, `columns` columns total.

    Covers timesteps {0, stride, ..., (columns-1)*stride}; requires
    (columns-1)*stride <= T.
    """
    if stride < 1 or columns < 2:
        raise HorizonError("need stride >= 1 and at least two columns")
    span = (columns - 1) * stride
    if span > traj.horizon:
        raise HorizonError(
            f"{columns} columns at stride {stride} span {span} steps, "
            f"trajectory has {traj.horizon}"
        )
    idx = np.arange(columns) * stride
    if with_actions:
        data = np.concatenate([traj.states[idx].T, traj.actions[idx].T], axis=0)
        return PlanMatrix(Layout.SD_WITH_ACTIONS, data, traj.d_s, traj.d_a, stride)
    return PlanMatrix(Layout.SD_STATES_ONLY, traj.states[idx].T, traj.d_s, traj.d_a, stride)


def make_dense_actions(traj: Trajectory, stride: int, columns: int) -> PlanMatrix:
    """Sparse states with every intervening action packed under each column.

    Column i holds state at i*stride plus actions i*stride .. i*stride+K-1,
    so actions run one stride past the last kept state; indices beyond T
    repeat the final action.
    """
    if stride < 1 or columns < 2:
        raise HorizonError("need stride >= 1 and at least two columns")
    span = (columns - 1) * stride
    if span > traj.horizon:
        raise HorizonError(
            f"{columns} columns at stride {stride} span {span} steps, "
            f"trajectory has {traj.horizon}"
        )
    idx = np.arange(columns) * stride
    rows = [traj.states[idx].T]
    for j in range(stride):
        a_idx = np.minimum(idx + j, traj.horizon)
        rows.append(traj.actions[a_idx].T)
    data = np.concatenate(rows, axis=0)
    return PlanMatrix(Layout.SD_DENSE_ACTIONS, data, traj.d_s, traj.d_a, stride)


def slice_segment(traj: Trajectory, index: int, stride: int) -> PlanMatrix:
    """Window of stride+1 consecutive columns starting at timestep index*stride."""
    if stride < 1:
        raise HorizonError("stride must be positive")
    start = index * stride
    if index < 0 or start + stride > traj.horizon:
        raise IndexError(
            f"segment {index} needs timesteps {start}..{start + stride}, "
            f"trajectory has horizon {traj.horizon}"
        )
    cols = slice(start, start + stride + 1)
    data = np.concatenate([traj.states[cols].T, traj.actions[cols].T], axis=0)
    return PlanMatrix(Layout.SEGMENT, data, traj.d_s, traj.d_a, stride=1)


def matrix_meta(pm: PlanMatrix) -> dict:
    """Map every (row, col) to its source entry (kind, timestep, coord).

    Timesteps are nominal: dense-action padding cells keep the timestep
    they stand for even though their value repeats the final action.
    For segment layouts timesteps are window-local.
    """
    meta = {}
    for col in range(pm.columns):
        t = col * (pm.stride if pm.layout not in (Layout.FLAT, Layout.SEGMENT) else 1)
        for r in range(pm.d_s):
            meta[(r, col)] = ("state", t, r)
        if pm.layout in (Layout.FLAT, Layout.SD_WITH_ACTIONS, Layout.SEGMENT):
            for r in range(pm.d_a):
                meta[(pm.d_s + r, col)] = ("action", t, r)
        elif pm.layout == Layout.SD_DENSE_ACTIONS:
            for j in range(pm.stride):
                for r in range(pm.d_a):
                    meta[(pm.d_s + j * pm.d_a + r, col)] = ("action", t + j, r)
    return meta


def row_sources(pm: PlanMatrix) -> list:
    """Per-row (kind, coord); every column of a row shares one source."""
    rows = [("state", r) for r in range(pm.d_s)]
    if pm.layout in (Layout.FLAT, Layout.SD_WITH_ACTIONS, Layout.SEGMENT):
        rows += [("action", r) for r in range(pm.d_a)]
    elif pm.layout == Layout.SD_DENSE_ACTIONS:
        for _ in range(pm.stride):
            rows += [("action", r) for r in range(pm.d_a)]
    return rows


def extract_states(pm: PlanMatrix) -> np.ndarray:
    """(columns, d_s) state rows of a plan matrix."""
    return pm.data[: pm.d_s].T.copy()


def extract_actions(pm: PlanMatrix) -> np.ndarray:
    """Action sequence covered by the matrix, ordered by nominal timestep.

    flat/segment/sd_with_actions give (columns, d_a); dense layouts give
    (columns * stride, d_a).  States-only layouts have none.
    """
    if pm.layout == Layout.SD_STATES_ONLY:
        raise HorizonError("states-only layout carries no actions")
    if pm.layout == Layout.SD_DENSE_ACTIONS:
        blocks = pm.data[pm.d_s:].T.reshape(pm.columns, pm.stride, pm.d_a)
        return blocks.reshape(pm.columns * pm.stride, pm.d_a).copy()
    return pm.data[pm.d_s:].T.copy()


def invert_flat(pm: PlanMatrix) -> Trajectory:
    """Rebuild a trajectory (zero rewards) from a flat matrix."""
    if pm.layout != Layout.FLAT:
        raise HorizonError("only flat matrices invert to full trajectories")
    return Trajectory(
        states=extract_states(pm),
        actions=extract_actions(pm),
        rewards=np.zeros(pm.columns),
    )


@dataclass(frozen=True)
class NormStats:
    """Per-coordinate min/max over a dataset, for [-1, 1] scaling."""

    state_min: np.ndarray
    state_max: np.ndarray
    action_min: np.ndarray
    action_max: np.ndarray

    def __post_init__(self):
        for name in ("state_min", "state_max", "action_min", "action_max"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.state_min.shape != self.state_max.shape:
            raise DatasetFormatError("state min/max shapes differ")
        if self.action_min.shape != self.action_max.shape:
            raise DatasetFormatError("action min/max shapes differ")

    @classmethod
    def from_trajectories(cls, trajectories) -> "NormStats":
        trajectories = list(trajectories)
        if not trajectories:
            raise DatasetFormatError("cannot compute stats of an empty dataset")
        smin = np.min([t.states.min(axis=0) for t in trajectories], axis=0)
        smax = np.max([t.states.max(axis=0) for t in trajectories], axis=0)
        amin = np.min([t.actions.min(axis=0) for t in trajectories], axis=0)
        amax = np.max([t.actions.max(axis=0) for t in trajectories], axis=0)
        return cls(smin, smax, amin, amax)

    def _row_bounds(self, pm: PlanMatrix) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = [], []
        for kind, coord in row_sources(pm):
            if kind == "state":
                lo.append(self.state_min[coord])
                hi.append(self.state_max[coord])
            else:
                lo.append(self.action_min[coord])
                hi.append(self.action_max[coord])
        return np.array(lo), np.array(hi)


def normalize(pm: PlanMatrix, stats: NormStats) -> PlanMatrix:
    """Scale each row to [-1, 1] by its coordinate's dataset range.

    Rows whose range is degenerate map to zero.
    """
    lo, hi = stats._row_bounds(pm)
    span = hi - lo
    ok = span > _CONST_EPS
    scaled = np.zeros_like(pm.data)
    scaled[ok] = 2.0 * (pm.data[ok] - lo[ok, None]) / span[ok, None] - 1.0
    return pm.with_data(scaled)


def denormalize(pm: PlanMatrix, stats: NormStats) -> PlanMatrix:
    """Inverse of normalize; degenerate rows recover their constant value."""
    lo, hi = stats._row_bounds(pm)
    span = hi - lo
    ok = span > _CONST_EPS
    raw = np.empty_like(pm.data)
    raw[~ok] = lo[~ok, None]
    raw[ok] = (pm.data[ok] + 1.0) / 2.0 * span[ok, None] + lo[ok, None]
    return pm.with_data(raw)


def normalize_state(state: np.ndarray, stats: NormStats) -> np.ndarray:
    """Scale one state vector with the same rule normalize applies to rows."""
    span = stats.state_max - stats.state_min
    ok = span > _CONST_EPS
    out = np.zeros_like(np.asarray(state, dtype=np.float64))
    out[ok] = 2.0 * (state[ok] - stats.state_min[ok]) / span[ok] - 1.0
    return out


def denormalize_state(state: np.ndarray, stats: NormStats) -> np.ndarray:
    span = stats.state_max - stats.state_min
    ok = span > _CONST_EPS
    out = np.empty_like(np.asarray(state, dtype=np.float64))
    out[~ok] = stats.state_min[~ok]
    out[ok] = (state[ok] + 1.0) / 2.0 * span[ok] + stats.state_min[ok]
    return out


@dataclass
class Dataset:
    """A bag of trajectories with shared state/action dimensionality."""

    d_s: int
    d_a: int
    trajectories: list

    def __post_init__(self):
        for t in self.trajectories:
            if t.d_s != self.d_s or t.d_a != self.d_a:
                raise DatasetFormatError("trajectory dims do not match dataset dims")

    def transition_count(self) -> int:
        return sum(t.horizon for t in self.trajectories)

    def norm_stats(self) -> NormStats:
        return NormStats.from_trajectories(self.trajectories)

    def split(self, val_fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        """Deterministic trajectory-level split into (train, val)."""
        from . import rng as rngmod

        if not 0.0 <= val_fraction < 1.0:
            raise DatasetFormatError("val_fraction must be in [0, 1)")
        n = len(self.trajectories)
        order = rngmod.substream(seed, rngmod.SPLIT).permutation(n)
        n_val = int(round(n * val_fraction))
        val_idx = set(order[:n_val].tolist())
        train = [t for i, t in enumerate(self.trajectories) if i not in val_idx]
        val = [t for i, t in enumerate(self.trajectories) if i in val_idx]
        return (Dataset(self.d_s, self.d_a, train), Dataset(self.d_s, self.d_a, val))


_DS_MAGIC = b"HDDS1"


def save_dataset(path, dataset: Dataset) -> None:
    """Write trajectories (magic, dims, lengths, then f32 LE payloads) and a
    sidecar `<path>.norm` of f64 min/max pairs per coordinate."""
    quantized = []
    with open(path, "wb") as f:
        f.write(_DS_MAGIC)
        f.write(struct.pack("<3I", dataset.d_s, dataset.d_a, len(dataset.trajectories)))
        for t in dataset.trajectories:
            f.write(struct.pack("<I", t.states.shape[0]))
        for t in dataset.trajectories:
            states = t.states.astype("<f4")
            actions = t.actions.astype("<f4")
            rewards = t.rewards.astype("<f4")
            f.write(states.tobytes())
            f.write(actions.tobytes())
            f.write(rewards.tobytes())
            quantized.append(Trajectory(
                states.astype(np.float64), actions.astype(np.float64),
                rewards.astype(np.float64),
            ))
    # Stats describe the file's (f32-quantised) contents, so a reloaded
    # dataset reproduces the sidecar byte for byte.
    save_norm_stats(str(path) + ".norm", NormStats.from_trajectories(quantized))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:5] != _DS_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic")
    try:
        d_s, d_a, n = struct.unpack_from("<3I", raw, 5)
        lengths = struct.unpack_from(f"<{n}I", raw, 17)
    except struct.error:
        raise DatasetFormatError(f"{path}: truncated header") from None
    offset = 17 + 4 * n
    trajectories = []
    for length in lengths:
        nbytes = length * (d_s + d_a + 1) * 4
        if offset + nbytes > len(raw):
            raise DatasetFormatError(f"{path}: truncated trajectory data")
        states = np.frombuffer(raw, dtype="<f4", count=length * d_s, offset=offset)
        offset += length * d_s * 4
        actions = np.frombuffer(raw, dtype="<f4", count=length * d_a, offset=offset)
        offset += length * d_a * 4
        rewards = np.frombuffer(raw, dtype="<f4", count=length, offset=offset)
        offset += length * 4
        trajectories.append(Trajectory(
            states=states.reshape(length, d_s).astype(np.float64),
            actions=actions.reshape(length, d_a).astype(np.float64),
            rewards=rewards.astype(np.float64),
        ))
    if offset != len(raw):
        raise DatasetFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return Dataset(d_s, d_a, trajectories)


def save_norm_stats(path, stats: NormStats) -> None:
    """f64 LE (min, max) pairs: state coordinates then action coordinates."""
    pairs = np.empty((stats.state_min.size + stats.action_min.size, 2))
    pairs[: stats.state_min.size, 0] = stats.state_min
    pairs[: stats.state_min.size, 1] = stats.state_max
    pairs[stats.state_min.size:, 0] = stats.action_min
    pairs[stats.state_min.size:, 1] = stats.action_max
    with open(path, "wb") as f:
        f.write(pairs.astype("<f8").tobytes())


def load_norm_stats(path, d_s: int, d_a: int) -> NormStats:
    with open(path, "rb") as f:
        raw = f.read()
    want = (d_s + d_a) * 16
    if len(raw) != want:
        raise DatasetFormatError(f"{path}: expected {want} bytes, found {len(raw)}")
    pairs = np.frombuffer(raw, dtype="<f8").reshape(d_s + d_a, 2)
    return NormStats(
        state_min=pairs[:d_s, 0], state_max=pairs[:d_s, 1],
        action_min=pairs[d_s:, 0], action_max=pairs[d_s:, 1],
    )
