"""Metrics and reporting for planner studies.

Geometry metrics compare position traces after arc-length resampling, so
a plan and a reference described by different numbers of support points
can be compared pointwise. Quality metrics follow two conventions: shape
agreement as cosine similarity of mean-centred resampled traces, and
placement error as the mean squared distance between matched points.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .diffusion import NoiseSchedule, denoise_loss_eval
from .maze import MazeSpec, cell_center
from .rng import EVAL, substream
from .trajectory import Dataset
from .training import TrainConfig, WindowSampler, WindowSpec


class MetricError(ValueError):
    """Inputs that no metric value can describe."""


# ------------------------------------------------------------- resampling


def resample_polyline(points: np.ndarray, count: int) -> np.ndarray:
    """``count`` points evenly spaced by arc length along a polyline."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 1:
        raise MetricError(f"polyline must be (N, D) with N >= 1, got {pts.shape}")
    if count < 2:
        raise MetricError("need at least two resampled points")
    if len(pts) == 1:
        return np.tile(pts[0], (count, 1))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    if total <= 0.0:
        return np.tile(pts[0], (count, 1))
    targets = np.linspace(0.0, total, count)
    out = np.empty((count, pts.shape[1]))
    for d in range(pts.shape[1]):
        out[:, d] = np.interp(targets, arc, pts[:, d])
    return out


def shape_cosine(a: np.ndarray, b: np.ndarray, samples: int = 64) -> float:
    """Cosine similarity of mean-centred, arc-length resampled traces."""
    ra = resample_polyline(a, samples)
    rb = resample_polyline(b, samples)
    va = (ra - ra.mean(axis=0)).ravel()
    vb = (rb - rb.mean(axis=0)).ravel()
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(va @ vb / (na * nb))


def matched_mse(a: np.ndarray, b: np.ndarray, samples: int = 64) -> float:
    """Per-coordinate mean squared error between arc-length matched points."""
    ra = resample_polyline(a, samples)
    rb = resample_polyline(b, samples)
    return float(np.mean((ra - rb) ** 2))


@dataclass(frozen=True)
class DeviationReport:
    cosine: float  # mean over reference paths
    mse: float  # mean over reference paths


def plan_deviation(plan_states: np.ndarray, references,
                   samples: int = 64) -> DeviationReport:
    """Compare a plan's positions against a set of reference paths.

    ``references`` holds trajectories or raw state arrays; only the first
    two state coordinates (position) are compared, and both metrics
    average over the whole reference set.
    """
    refs = [getattr(r, "states", r) for r in references]
    if not refs:
        raise MetricError("need at least one reference path")
    plan_xy = np.asarray(plan_states)[:, :2]
    cosines = []
    mses = []
    for ref in refs:
        ref_xy = np.asarray(ref)[:, :2]
        cosines.append(shape_cosine(plan_xy, ref_xy, samples))
        mses.append(matched_mse(plan_xy, ref_xy, samples))
    return DeviationReport(cosine=float(np.mean(cosines)),
                           mse=float(np.mean(mses)))


# ------------------------------------------------------------ mode coverage


def corridor_index(plan_states: np.ndarray,
                   x_span: tuple = (2.0, 11.0),
                   corridor_ys: Sequence[float] = (1.5, 3.5, 5.5),
                   tol: float = 1.0,
                   samples: int = 256) -> Optional[int]:
    """Which horizontal corridor a plan traverses end-to-end, if any.

    Defaults describe the three-corridor map: the central wall block
    spans the given x range and the corridors pierce it at the given y
    centres. A corridor counts as traversed when the polyline crosses
    the block in one sweep, entering on one side and leaving on the
    other, while staying within ``tol`` of that corridor's centre line
    the whole way through. Plans that never fully cross, or that drift
    between corridors mid-block, return None.
    """
    pts = resample_polyline(np.asarray(plan_states)[:, :2], samples)
    x0, x1 = x_span
    inside = (pts[:, 0] > x0) & (pts[:, 0] < x1)
    n = len(pts)
    i = 0
    while i < n:
        if not inside[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and inside[j + 1]:
            j += 1
        if 0 < i and j + 1 < n:
            a, b = pts[i - 1, 0], pts[j + 1, 0]
            if (a <= x0) != (b <= x0):
                ys = pts[i:j + 1, 1]
                for ci, cy in enumerate(corridor_ys):
                    if np.all(np.abs(ys - cy) <= tol):
                        return ci
        i = j + 1
    return None


def mode_coverage(indices, n_modes: int = 3) -> float:
    """Fraction of route modes used by a set of plans."""
    used = {i for i in indices if i is not None}
    return len(used) / n_modes


def success_rate(records) -> float:
    """Fraction of episodes that reached their goal."""
    records = list(records)
    if not records:
        raise MetricError("no episodes")
    return sum(1.0 for r in records if r.success) / len(records)


# -------------------------------------------------------- generalization gap


@dataclass(frozen=True)
class GapReport:
    train_per_entry: float
    val_per_entry: float

    @property
    def gap(self) -> float:
        return self.val_per_entry - self.train_per_entry


def generalization_gap(params, dataset: Dataset, window: WindowSpec,
                       sched: NoiseSchedule, cfg: TrainConfig,
                       batches: int = 8) -> GapReport:
    """Per-entry denoising loss on held-out vs training windows.

    Uses the same split the training run saw (same seed) and normalises by
    the number of matrix entries, so models with different window shapes
    are comparable.
    """
    stats = dataset.norm_stats()
    train_ds, val_ds = dataset.split(cfg.val_fraction, cfg.seed)
    if not val_ds.trajectories:
        raise MetricError("gap needs a validation split")
    samplers = (WindowSampler(train_ds.trajectories, window, stats),
                WindowSampler(val_ds.trajectories, window, stats))
    entries = window.channels(dataset.d_s, dataset.d_a) * window.columns
    sums = [0.0, 0.0]
    for b in range(batches):
        for side, sampler in enumerate(samplers):
            rng = substream(cfg.seed, EVAL, 500_000 + 2 * b + side)
            batch, _ = sampler.draw(rng, cfg.batch_size)
            sums[side] += denoise_loss_eval(params, batch, sched, rng)
    return GapReport(train_per_entry=sums[0] / batches / entries,
                     val_per_entry=sums[1] / batches / entries)


# ------------------------------------------------------------------- timing


@dataclass(frozen=True)
class BenchResult:
    median_seconds: float
    times: tuple

    @property
    def calls(self) -> int:
        return len(self.times)


def time_callable(fn: Callable[[], object], repeats: int = 20,
                  warmup: int = 2) -> BenchResult:
    """Median wall time of ``fn`` over ``repeats`` calls, after discarding
    ``warmup`` initial calls."""
    if repeats < 1:
        raise MetricError("need at least one timed call")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return BenchResult(median_seconds=statistics.median(times),
                       times=tuple(times))


# ---------------------------------------------------------------- rendering

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")
_CELL = 40


def _maze_group(spec: MazeSpec, paths, subgoals, title, offset=(0, 0)):
    ox, oy = offset
    w, h = spec.cols * _CELL, spec.rows * _CELL
    parts = [f'<g transform="translate({ox},{oy})">']
    parts.append(f'<rect x="0" y="0" width="{w}" height="{h}" fill="#fdfdf8"/>')
    for r in range(spec.rows):
        for c in range(spec.cols):
            if spec.grid[r, c]:
                parts.append(
                    f'<rect x="{c * _CELL}" y="{r * _CELL}" width="{_CELL}" '
                    f'height="{_CELL}" fill="#3a3a3a"/>')
    for marker, color in ((spec.start_cell, "#2ca02c"), (spec.goal_cell, "#d62728")):
        if marker is not None:
            cx, cy = cell_center(marker) * _CELL
            parts.append(f'<circle cx="{cx}" cy="{cy}" r="{_CELL * 0.22}" '
                         f'fill="none" stroke="{color}" stroke-width="3"/>')
    for i, (states, label) in enumerate(paths):
        xy = np.asarray(states)[:, :2] * _CELL
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in xy)
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="2" opacity="0.85"/>')
        if label:
            parts.append(f'<text x="6" y="{h - 8 - 16 * i}" font-size="13" '
                         f'font-family="sans-serif" fill="{color}">{label}</text>')
    if subgoals is not None:
        for x, y in np.asarray(subgoals)[:, :2] * _CELL:
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="5" '
                         f'fill="#ffdd57" stroke="#333" stroke-width="1.5"/>')
    if title:
        parts.append(f'<text x="{w / 2:.0f}" y="20" font-size="15" '
                     f'font-family="sans-serif" text-anchor="middle" '
                     f'fill="#111" font-weight="bold">{title}</text>')
    parts.append("</g>")
    return "\n".join(parts), w, h


def render_maze_svg(spec: MazeSpec, paths=(), subgoals=None,
                    title: str = "") -> str:
    """A standalone SVG of the maze with optional paths and subgoal dots.

    ``paths`` is a sequence of (states, label) pairs; states need only
    position in their first two columns.
    """
    body, w, h = _maze_group(spec, list(paths), subgoals, title)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" '
            f'height="{h}" viewBox="0 0 {w} {h}">\n{body}\n</svg>\n')


def render_panel_svg(panels, columns: int = 2) -> str:
    """Compose several maze views into one figure.

    ``panels`` is a sequence of (spec, paths, subgoals, title) tuples laid
    out row-major on a grid.
    """
    panels = list(panels)
    if not panels:
        raise MetricError("no panels to render")
    pad = 12
    sizes = []
    for spec, paths, subgoals, title in panels:
        sizes.append((spec.cols * _CELL, spec.rows * _CELL))
    col_w = max(w for w, _ in sizes) + pad
    row_h = max(h for _, h in sizes) + pad
    rows = (len(panels) + columns - 1) // columns
    bodies = []
    for i, (spec, paths, subgoals, title) in enumerate(panels):
        ox = (i % columns) * col_w + pad // 2
        oy = (i // columns) * row_h + pad // 2
        body, _, _ = _maze_group(spec, list(paths), subgoals, title, (ox, oy))
        bodies.append(body)
    total_w = columns * col_w + pad
    total_h = rows * row_h + pad
    joined = "\n".join(bodies)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" '
            f'height="{total_h}" viewBox="0 0 {total_w} {total_h}">\n'
            f'<rect x="0" y="0" width="{total_w}" height="{total_h}" '
            f'fill="#ffffff"/>\n{joined}\n</svg>\n')
