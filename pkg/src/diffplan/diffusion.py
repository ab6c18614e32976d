"""Denoising diffusion over plan matrices: schedules, losses, and sampling.

Plans are dense (channels, columns) matrices.  The forward process corrupts
a clean matrix toward unit Gaussian noise over M steps; the learned reverse
process walks back from noise, optionally nudged toward high predicted
return by a guidance network, while inpainting constraints pin chosen
entries (current state, subgoals, goal) after every step.

Reproducibility: every noise draw comes from a substream keyed by
(seed, PLAN, step), so sampling a batch of plans and sampling them one at a
time produce bit-identical matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets, rng as rngmod
from .autodiff import GradientMap, NumericError, Tape, Tensor, backward, no_tape
from .autodiff import mse as ad_mse
from .autodiff import mul as ad_mul
from .autodiff import reduce_sum, square


class ScheduleError(ValueError):
    """A noise schedule is structurally invalid or a step index is out of range."""


class ConstraintError(ValueError):
    """An inpainting constraint does not fit the matrix it is applied to."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step constants of the forward corruption process.

    Arrays are 1-indexed through the accessors: step m runs 1..M, and
    alpha_bar(0) == 1 by construction.
    """

    kind: str
    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def num_steps(self) -> int:
        return len(self.betas)

    def _check_step(self, m: int):
        if not 1 <= m <= self.num_steps:
            raise ScheduleError(f"step {m} outside 1..{self.num_steps}")

    def beta(self, m: int) -> float:
        self._check_step(m)
        return float(self.betas[m - 1])

    def alpha(self, m: int) -> float:
        return 1.0 - self.beta(m)

    def alpha_bar(self, m: int) -> float:
        if not 0 <= m <= self.num_steps:
            raise ScheduleError(f"step {m} outside 0..{self.num_steps}")
        return float(self.alpha_bars[m])

    def sigma2(self, m: int) -> float:
        """Posterior variance; zero at m == 1 (the final, noiseless step)."""
        self._check_step(m)
        return self.beta(m) * (1.0 - self.alpha_bar(m - 1)) / (1.0 - self.alpha_bar(m))

    def mixes_to_noise(self) -> bool:
        """Whether the terminal marginal is essentially pure noise."""
        return float(self.alpha_bars[-1]) <= 1e-3


def build_schedule(num_steps: int, kind: str = "cosine",
                   beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Construct a validated schedule.

    cosine: squared-cosine alpha_bar curve with offset 0.008, betas clipped
    at 0.999.  linear: betas evenly spaced from beta_start to beta_end.
    """
    if num_steps < 1:
        raise ScheduleError("schedule needs at least one step")
    if kind == "cosine":
        s = 0.008
        steps = np.arange(num_steps + 1, dtype=np.float64)
        f = np.cos((steps / num_steps + s) / (1.0 + s) * np.pi / 2.0) ** 2
        raw_bars = f / f[0]
        betas = np.clip(1.0 - raw_bars[1:] / raw_bars[:-1], 0.0, 0.999)
    elif kind == "linear":
        betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ScheduleError("betas must lie strictly inside (0, 1)")
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    if np.any(np.diff(alpha_bars) >= 0.0):
        raise ScheduleError("alpha_bar must decrease strictly")
    if alpha_bars[-1] <= 0.0:
        raise ScheduleError("alpha_bar underflowed to zero")
    return NoiseSchedule(kind=kind, betas=betas, alpha_bars=alpha_bars)


def forward_corrupt(x0, m, eps, sched: NoiseSchedule):
    """x_m = sqrt(abar_m) x0 + sqrt(1 - abar_m) eps.

    m may be a scalar or, for a leading batch axis, a per-sample vector.
    Returns the same container type as x0.
    """
    data = x0.data if isinstance(x0, Tensor) else np.asarray(x0)
    noise = eps.data if isinstance(eps, Tensor) else np.asarray(eps)
    if noise.shape != data.shape:
        raise ConstraintError(f"noise shape {noise.shape} != data shape {data.shape}")
    ms = np.asarray(m)
    if ms.ndim == 0:
        abar = sched.alpha_bar(int(ms))
    else:
        if ms.shape != (data.shape[0],):
            raise ConstraintError(f"per-sample steps shape {ms.shape} != ({data.shape[0]},)")
        bars = np.array([sched.alpha_bar(int(v)) for v in ms])
        abar = bars.reshape(-1, *([1] * (data.ndim - 1)))
    out = np.sqrt(abar) * data + np.sqrt(1.0 - abar) * noise
    return Tensor(out) if isinstance(x0, Tensor) else out


@dataclass(frozen=True)
class Constraint:
    """Pin a contiguous block of channels at one column to fixed values."""

    row_start: int
    row_stop: int
    col: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if self.row_stop <= self.row_start:
            raise ConstraintError("empty channel range")
        if vals.shape != (self.row_stop - self.row_start,):
            raise ConstraintError(
                f"values shape {vals.shape} != ({self.row_stop - self.row_start},)"
            )


def apply_constraints(data: np.ndarray, constraints) -> np.ndarray:
    """Overwrite constrained entries in place; returns data for chaining."""
    for c in constraints:
        if c.row_stop > data.shape[-2] or c.col >= data.shape[-1] or c.col < -data.shape[-1]:
            raise ConstraintError(
                f"constraint rows [{c.row_start}:{c.row_stop}) col {c.col} "
                f"outside matrix {data.shape[-2]}x{data.shape[-1]}"
            )
        data[..., c.row_start: c.row_stop, c.col] = c.values
    return data


@dataclass(frozen=True)
class SampleConfig:
    """Sampling run parameters; omega == 0 disables guidance entirely."""

    seed: int
    omega: float = 0.0


def _losses_impl(kind, params, batch, sched, rng, want_grads):
    if kind == "denoise":
        x0 = np.asarray(batch, dtype=np.float64)
    else:
        x0, returns = batch
        x0 = np.asarray(x0, dtype=np.float64)
        returns = np.asarray(returns, dtype=np.float64)
    if x0.ndim != 3:
        raise ConstraintError(f"batch must be (B, C, L), got {x0.shape}")
    b = x0.shape[0]
    ms = rng.integers(1, sched.num_steps + 1, size=b)
    eps = rng.standard_normal(x0.shape)
    xm = forward_corrupt(x0, ms, eps, sched)

    def compute():
        if kind == "denoise":
            pred = nets.denoise_predict(params, Tensor(xm), ms)
            _raise_on_nonfinite(pred.data, "denoiser output")
            diff = pred - Tensor(eps)
            return ad_mul(reduce_sum(square(diff)), 1.0 / b)
        pred = nets.return_predict(params, Tensor(xm), ms)
        _raise_on_nonfinite(pred.data, "guidance output")
        return ad_mse(pred, Tensor(returns))

    if not want_grads:
        with no_tape():
            return compute().item(), None
    with Tape() as tape:
        loss = compute()
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is non-finite")
    grads = backward(tape, loss, wrt=params.tensors())
    return loss.item(), grads


def _raise_on_nonfinite(arr: np.ndarray, what: str):
    if np.isfinite(arr).all():
        return
    flat_bad = np.where(~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1))[0]
    raise NumericError(f"{what} non-finite for batch sample {int(flat_bad[0])}")


def denoise_loss(params, batch, sched: NoiseSchedule, rng) -> tuple[float, GradientMap]:
    """Noise-prediction objective: mean over the batch of the squared error
    summed over matrix entries.  At a zero-initialised net this averages to
    the entry count.  Returns (loss, parameter gradients)."""
    return _losses_impl("denoise", params, batch, sched, rng, want_grads=True)


def denoise_loss_eval(params, batch, sched: NoiseSchedule, rng) -> float:
    """denoise_loss without gradient work (for validation probes)."""
    return _losses_impl("denoise", params, batch, sched, rng, want_grads=False)[0]


def guidance_loss(params, batch, sched: NoiseSchedule, rng) -> tuple[float, GradientMap]:
    """Return-regression objective on corrupted inputs: mean squared error
    between predicted and actual trajectory returns."""
    return _losses_impl("guidance", params, batch, sched, rng, want_grads=True)


def guidance_loss_eval(params, batch, sched: NoiseSchedule, rng) -> float:
    return _losses_impl("guidance", params, batch, sched, rng, want_grads=False)[0]


def _posterior_mean(x: np.ndarray, eps_hat: np.ndarray, m: int, sched: NoiseSchedule) -> np.ndarray:
    beta = sched.beta(m)
    abar = sched.alpha_bar(m)
    return (x - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(1.0 - beta)


def reverse_step(params, guidance, x_next, m: int, sched: NoiseSchedule,
                 cfg: SampleConfig, constraints=(), rng=None) -> Tensor:
    """One reverse transition x_m -> x_{m-1}.

    The guidance gradient (if enabled) is evaluated at the posterior mean
    and scaled by omega * sigma_m^2; constraints are re-applied after the
    update; the m == 1 step returns the mean without added noise.
    """
    sched._check_step(m)
    x = x_next.data if isinstance(x_next, Tensor) else np.asarray(x_next, dtype=np.float64)
    with no_tape():
        eps_hat = nets.denoise_predict(params, Tensor(x), m).data
    mu = _posterior_mean(x, eps_hat, m, sched)
    sigma2 = sched.sigma2(m)
    if guidance is not None and cfg.omega != 0.0:
        grad = guidance.input_gradient(Tensor(mu), m)
        if isinstance(grad, Tensor):
            grad = grad.data
        mu = mu + cfg.omega * sigma2 * np.asarray(grad, dtype=np.float64)
    if m > 1:
        if rng is None:
            rng = rngmod.substream(cfg.seed, rngmod.PLAN, m)
        out = mu + np.sqrt(sigma2) * rng.standard_normal(x.shape)
    else:
        out = mu
    out = apply_constraints(np.ascontiguousarray(out), constraints)
    if not np.isfinite(out).all():
        raise NumericError(f"reverse step {m} produced a non-finite value")
    return Tensor(out)


def sample_plan(params, guidance, shape: tuple, sched: NoiseSchedule,
                cfg: SampleConfig, constraints=()) -> Tensor:
    """Draw one plan matrix: start from unit noise (constraints applied),
    then walk all M reverse steps.  Deterministic given cfg.seed."""
    init = rngmod.substream(cfg.seed, rngmod.PLAN, 0).standard_normal(shape)
    x = Tensor(apply_constraints(init, constraints))
    for m in range(sched.num_steps, 0, -1):
        x = reverse_step(params, guidance, x, m, sched, cfg, constraints)
    return x


def sample_plan_batch(params, guidance, shape: tuple, sched: NoiseSchedule,
                      cfgs, constraints_per_plan) -> np.ndarray:
    """Sample many plans in one batched pass.

    Plan i uses substreams keyed by cfgs[i].seed, so the result equals
    stacking sample_plan over the same configs bit-for-bit; all configs
    must share one omega.
    """
    cfgs = list(cfgs)
    constraints_per_plan = list(constraints_per_plan)
    if len(cfgs) != len(constraints_per_plan):
        raise ConstraintError("one constraint list per sampling config required")
    omegas = {c.omega for c in cfgs}
    if len(omegas) > 1:
        raise ConstraintError("batched sampling requires a single omega")
    omega = omegas.pop() if omegas else 0.0
    b = len(cfgs)
    x = np.empty((b, *shape), dtype=np.float64)
    for i, cfg in enumerate(cfgs):
        x[i] = rngmod.substream(cfg.seed, rngmod.PLAN, 0).standard_normal(shape)
        apply_constraints(x[i], constraints_per_plan[i])
    for m in range(sched.num_steps, 0, -1):
        with no_tape():
            eps_hat = nets.denoise_predict(params, Tensor(x), m).data
        mu = _posterior_mean(x, eps_hat, m, sched)
        sigma2 = sched.sigma2(m)
        if guidance is not None and omega != 0.0:
            grad = guidance.input_gradient(Tensor(mu), m)
            mu = mu + omega * sigma2 * grad
        if m > 1:
            noise = np.empty_like(x)
            for i, cfg in enumerate(cfgs):
                noise[i] = rngmod.substream(cfg.seed, rngmod.PLAN, m).standard_normal(shape)
            x = mu + np.sqrt(sigma2) * noise
        else:
            x = mu
        for i in range(b):
            apply_constraints(x[i], constraints_per_plan[i])
        if not np.isfinite(x).all():
            raise NumericError(f"reverse step {m} produced a non-finite value")
    return x
