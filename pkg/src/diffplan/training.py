"""Training loops: window sampling from offline data, Adam, and the
denoiser/guidance fitting drivers.

A training example is a plan matrix cut from a stored trajectory at a
random offset. The layout of the matrix (flat, subsampled, dense-action or
segment) is fixed by a :class:`WindowSpec`; sampling is uniform over all
(trajectory, offset) pairs that fit. Each optimisation step consumes its
own seeded stream, so runs are reproducible step by step and two pipelines
that request identical window shapes see bit-identical batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import NumericError, Tensor
from .diffusion import (
    NoiseSchedule,
    denoise_loss,
    denoise_loss_eval,
    guidance_loss,
    guidance_loss_eval,
)
from .nets import NetConfig, init_denoiser, init_guidance
from .rng import EVAL, TRAIN, substream
from .trajectory import (
    Dataset,
    Layout,
    NormStats,
    PlanMatrix,
    Trajectory,
    layout_channels,
    make_dense_actions,
    make_flat,
    normalize,
    subsample,
)


class WindowError(ValueError):
    """No stored trajectory can supply the requested window."""


@dataclass(frozen=True)
class WindowSpec:
    """Shape of one training example.

    ``stride`` is the subsampling stride for the sparse layouts and must be
    1 for FLAT and SEGMENT. ``columns`` is the matrix width.
    """

    layout: Layout
    stride: int
    columns: int

    def __post_init__(self):
        if self.columns < 2:
            raise WindowError("windows need at least two columns")
        if self.layout in (Layout.FLAT, Layout.SEGMENT):
            if self.stride != 1:
                raise WindowError(f"{self.layout.name} windows use stride 1")
        elif self.stride < 1:
            raise WindowError("stride must be positive")

    @property
    def span(self) -> int:
        """Timesteps of source trajectory covered by the window's states."""
        return (self.columns - 1) * self.stride

    def channels(self, d_s: int, d_a: int) -> int:
        return layout_channels(self.layout, d_s, d_a, self.stride)


def extract_window(traj: Trajectory, offset: int, spec: WindowSpec) -> PlanMatrix:
    """Cut the window starting at ``offset`` out of a trajectory.

    For the dense-action layout the window borrows real actions from up to
    ``stride - 1`` steps past its last state when the trajectory has them,
    and only repeats the final action at the true end of data.
    """
    span = spec.span
    if offset < 0 or offset + span > traj.horizon:
        raise WindowError(
            f"offset {offset} with span {span} exceeds horizon {traj.horizon}")
    length = span
    if spec.layout is Layout.SD_DENSE_ACTIONS:
        length = min(span + spec.stride - 1, traj.horizon - offset)
    rows = slice(offset, offset + length + 1)
    sub = Trajectory(states=traj.states[rows], actions=traj.actions[rows],
                     rewards=traj.rewards[rows])
    if spec.layout is Layout.FLAT:
        return make_flat(sub)
    if spec.layout is Layout.SEGMENT:
        flat = make_flat(sub)
        return PlanMatrix(Layout.SEGMENT, flat.data, traj.d_s, traj.d_a, stride=1)
    if spec.layout is Layout.SD_DENSE_ACTIONS:
        return make_dense_actions(sub, spec.stride, spec.columns)
    with_actions = spec.layout is Layout.SD_WITH_ACTIONS
    return subsample(sub, spec.stride, spec.columns, with_actions)


def window_return(traj: Trajectory, offset: int, spec: WindowSpec) -> float:
    """Sum of rewards over the window's span of transitions."""
    return float(traj.rewards[offset:offset + spec.span].sum())


class WindowSampler:
    """Uniform sampler over every (trajectory, offset) window that fits."""

    def __init__(self, trajectories, spec: WindowSpec, stats: NormStats):
        self.spec = spec
        self.stats = stats
        self.trajs = [t for t in trajectories if t.horizon >= spec.span]
        if not self.trajs:
            longest = max((t.horizon for t in trajectories), default=0)
            raise WindowError(
                f"window span {spec.span} exceeds every trajectory "
                f"(longest horizon {longest})")
        counts = np.array([t.horizon - spec.span + 1 for t in self.trajs])
        self._cum = np.cumsum(counts)
        self.total_windows = int(self._cum[-1])

    def draw(self, rng: np.random.Generator, batch_size: int):
        """Returns ``(matrices, returns)``: a normalized (B, C, columns)
        array and the per-window reward sums."""
        picks = rng.integers(self.total_windows, size=batch_size)
        mats = np.empty(
            (batch_size,
             self.spec.channels(self.trajs[0].d_s, self.trajs[0].d_a),
             self.spec.columns))
        rets = np.empty(batch_size)
        for row, flat in enumerate(picks):
            ti = int(np.searchsorted(self._cum, flat, side="right"))
            offset = int(flat - (self._cum[ti - 1] if ti else 0))
            pm = extract_window(self.trajs[ti], offset, self.spec)
            mats[row] = normalize(pm, self.stats).data
            rets[row] = window_return(self.trajs[ti], offset, self.spec)
        return mats, rets


# ------------------------------------------------------------------- Adam


class AdamState:
    """First/second moment accumulators, matched to a tensor list by
    position."""

    def __init__(self, tensors):
        self.step = 0
        self.m = [np.zeros(t.shape) for t in tensors]
        self.v = [np.zeros(t.shape) for t in tensors]


def adam_step(state: AdamState, tensors, grads, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> list[Tensor]:
    """One Adam update; mutates ``state``, returns the new tensors."""
    if len(tensors) != len(grads):
        raise ValueError("tensor/gradient count mismatch")
    state.step += 1
    t = state.step
    out = []
    # overflow in the moment updates yields nan parameters, which the
    # training loop's finite-loss abort then catches
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (w, g) in enumerate(zip(tensors, grads)):
            g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
            state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
            state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
            m_hat = state.m[i] / (1.0 - beta1 ** t)
            v_hat = state.v[i] / (1.0 - beta2 ** t)
            out.append(Tensor(w.data - lr * m_hat / (np.sqrt(v_hat) + eps)))
    return out


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 2e-3
    seed: int = 0
    val_fraction: float = 0.1
    log_interval: int = 100

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass(frozen=True)
class LogRow:
    step: int
    train_loss: float
    val_loss: float  # NaN when no validation split exists


def _samplers(dataset: Dataset, window: WindowSpec, cfg: TrainConfig):
    stats = dataset.norm_stats()
    train_ds, val_ds = dataset.split(cfg.val_fraction, cfg.seed)
    train_sampler = WindowSampler(train_ds.trajectories, window, stats)
    val_sampler = None
    if val_ds.trajectories:
        try:
            val_sampler = WindowSampler(val_ds.trajectories, window, stats)
        except WindowError:
            val_sampler = None
    return stats, train_sampler, val_sampler


def _fit(params, loss_fn, eval_fn, batch_of, train_sampler, val_sampler,
         sched, cfg):
    """Shared optimisation loop.

    Aborts on the first non-finite loss and returns the last parameters
    that were seen to produce a finite one.
    """
    state = AdamState(params.tensors())
    history: list[LogRow] = []
    last_good = params
    for step_idx in range(1, cfg.steps + 1):
        rng = substream(cfg.seed, TRAIN, step_idx)
        batch = batch_of(train_sampler.draw(rng, cfg.batch_size))
        try:
            loss, grads = loss_fn(params, batch, sched, rng)
        except NumericError:
            return last_good, history
        last_good = params
        tensors = params.tensors()
        new_tensors = adam_step(state, tensors, [grads[t] for t in tensors],
                                cfg.lr)
        params = params.with_tensors(new_tensors)
        if step_idx % cfg.log_interval == 0 or step_idx == cfg.steps:
            val = math.nan
            if val_sampler is not None:
                vrng = substream(cfg.seed, EVAL, step_idx)
                vbatch = batch_of(val_sampler.draw(vrng, cfg.batch_size))
                try:
                    val = eval_fn(params, vbatch, sched, vrng)
                except NumericError:
                    val = math.inf
            history.append(LogRow(step_idx, loss, val))
    return params, history


def train_denoiser(dataset: Dataset, window: WindowSpec, net: NetConfig,
                   sched: NoiseSchedule, cfg: TrainConfig):
    """Fit a noise-prediction net to windows of the dataset.

    Returns ``(params, history)`` where history holds train/validation
    losses every ``log_interval`` steps.
    """
    expected = window.channels(dataset.d_s, dataset.d_a)
    if net.channels_in != expected:
        raise WindowError(
            f"net expects {net.channels_in} channels, "
            f"{window.layout.name} windows have {expected}")
    _, train_sampler, val_sampler = _samplers(dataset, window, cfg)
    params = init_denoiser(net, cfg.seed)
    return _fit(params, denoise_loss, denoise_loss_eval,
                lambda drawn: drawn[0],
                train_sampler, val_sampler, sched, cfg)


def train_guidance(dataset: Dataset, window: WindowSpec, net: NetConfig,
                   sched: NoiseSchedule, cfg: TrainConfig,
                   head_bias: Optional[float] = None):
    """Fit a return predictor on noisy windows.

    ``head_bias`` initialises the output offset; by default it is set to
    the mean window return of the data so the zero-weight head starts at
    the mean prediction.
    """
    expected = window.channels(dataset.d_s, dataset.d_a)
    if net.channels_in != expected:
        raise WindowError(
            f"net expects {net.channels_in} channels, "
            f"{window.layout.name} windows have {expected}")
    _, train_sampler, val_sampler = _samplers(dataset, window, cfg)
    if head_bias is None:
        probe = train_sampler.draw(substream(cfg.seed, EVAL, 0), 256)
        head_bias = float(probe[1].mean())
    params = init_guidance(net, cfg.seed, head_bias=head_bias)
    return _fit(params, guidance_loss, guidance_loss_eval,
                lambda drawn: (drawn[0], drawn[1]),
                train_sampler, val_sampler, sched, cfg)
