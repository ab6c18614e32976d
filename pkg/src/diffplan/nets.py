"""Temporal convolutional denoiser and return-guidance networks.

Both nets share a trunk: a 1x1 input projection followed by residual blocks
of (k-wide conv, +step embedding, per-column channel norm, SiLU, 1x1 conv).
Only the k-wide conv widens the receptive field, so a net of depth D sees
exactly 1 + D*(k-1) columns, and perturbing one input column can never move
outputs farther than D*(k-1)/2 columns away.

The denoiser ends in a zero-initialised 1x1 projection back to the input
channel count (so it predicts zero noise at init); the guidance net pools
over columns and ends in a zero-initialised scalar head.

Batched forward passes are bit-identical per element to single-input ones:
every matmul inside conv1d and affine runs per leading element, and all
remaining ops are elementwise or reduce along non-batch axes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from .autodiff import ContractError, Tape, Tensor, backward

_NORM_EPS = 1e-5


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not match its declared config."""


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters shared by denoiser and guidance nets."""

    channels_in: int
    hidden_channels: int = 64
    depth: int = 4
    kernel_size: int = 5
    embed_dim: int = 32

    def __post_init__(self):
        if self.channels_in < 1:
            raise ContractError("channels_in must be positive")
        if self.hidden_channels < 1:
            raise ContractError("hidden_channels must be positive")
        if self.depth < 1:
            raise ContractError("depth must be at least 1")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ContractError("kernel_size must be odd and >= 3")
        if self.embed_dim < 4 or self.embed_dim % 2 == 1:
            raise ContractError("embed_dim must be even and >= 4")


def receptive_field(config: NetConfig) -> int:
    """Columns of input visible to one output column."""
    return 1 + config.depth * (config.kernel_size - 1)


@dataclass(frozen=True)
class BlockParams:
    conv_w: Tensor
    conv_b: Tensor
    emb_w: Tensor
    emb_b: Tensor
    norm_gain: Tensor
    norm_bias: Tensor
    pw_w: Tensor
    pw_b: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.conv_w, self.conv_b, self.emb_w, self.emb_b,
                self.norm_gain, self.norm_bias, self.pw_w, self.pw_b]


@dataclass(frozen=True)
class DenoiserParams:
    config: NetConfig
    in_w: Tensor
    in_b: Tensor
    blocks: tuple[BlockParams, ...]
    out_w: Tensor
    out_b: Tensor

    def tensors(self) -> list[Tensor]:
        out = [self.in_w, self.in_b]
        for blk in self.blocks:
            out.extend(blk.tensors())
        out.extend([self.out_w, self.out_b])
        return out

    def with_tensors(self, tensors: list[Tensor]) -> "DenoiserParams":
        it = iter(tensors)
        in_w, in_b = next(it), next(it)
        blocks = tuple(BlockParams(*(next(it) for _ in range(8))) for _ in self.blocks)
        out_w, out_b = next(it), next(it)
        return DenoiserParams(self.config, in_w, in_b, blocks, out_w, out_b)


@dataclass(frozen=True)
class GuidanceParams:
    config: NetConfig
    in_w: Tensor
    in_b: Tensor
    blocks: tuple[BlockParams, ...]
    head_w: Tensor
    head_b: Tensor

    def tensors(self) -> list[Tensor]:
        out = [self.in_w, self.in_b]
        for blk in self.blocks:
            out.extend(blk.tensors())
        out.extend([self.head_w, self.head_b])
        return out

    def with_tensors(self, tensors: list[Tensor]) -> "GuidanceParams":
        it = iter(tensors)
        in_w, in_b = next(it), next(it)
        blocks = tuple(BlockParams(*(next(it) for _ in range(8))) for _ in self.blocks)
        head_w, head_b = next(it), next(it)
        return GuidanceParams(self.config, in_w, in_b, blocks, head_w, head_b)

    def predict(self, x: Tensor, m) -> Tensor:
        return return_predict(self, x, m)

    def input_gradient(self, x: Tensor, m) -> np.ndarray:
        return return_input_gradient(self, x, m)


def param_count(params) -> int:
    return sum(t.size for t in params.tensors())


def step_embedding(m, dim: int) -> Tensor:
    """Sinusoidal embedding of diffusion step indices.

    Scalar m gives shape (dim,); an array of shape (B,) gives (B, dim).
    Deterministic, no parameters; frequencies span 1 down to 1e-4.
    """
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / (half - 1))
    ms = np.asarray(m, dtype=np.float64)
    angles = ms[..., None] * freqs
    return Tensor(np.concatenate([np.sin(angles), np.cos(angles)], axis=-1))


def _init_blocks(cfg: NetConfig, rng: np.random.Generator) -> tuple[BlockParams, ...]:
    h, k, e = cfg.hidden_channels, cfg.kernel_size, cfg.embed_dim
    blocks = []
    for _ in range(cfg.depth):
        blocks.append(BlockParams(
            conv_w=Tensor(rng.standard_normal((h, h, k)) / np.sqrt(h * k), requires_grad=True),
            conv_b=Tensor(np.zeros(h), requires_grad=True),
            emb_w=Tensor(rng.standard_normal((h, e)) / np.sqrt(e), requires_grad=True),
            emb_b=Tensor(np.zeros(h), requires_grad=True),
            norm_gain=Tensor(np.ones((h, 1)), requires_grad=True),
            norm_bias=Tensor(np.zeros((h, 1)), requires_grad=True),
            pw_w=Tensor(rng.standard_normal((h, h, 1)) / np.sqrt(h), requires_grad=True),
            pw_b=Tensor(np.zeros(h), requires_grad=True),
        ))
    return tuple(blocks)


def init_denoiser(config: NetConfig, seed: int, zero_out: bool = True) -> DenoiserParams:
    """Fresh denoiser parameters; the final projection is zero unless told
    otherwise (probes that need a non-trivial output pass zero_out=False)."""
    rng = rngmod.substream(seed, rngmod.INIT)
    c, h = config.channels_in, config.hidden_channels
    in_w = Tensor(rng.standard_normal((h, c, 1)) / np.sqrt(c), requires_grad=True)
    in_b = Tensor(np.zeros(h), requires_grad=True)
    blocks = _init_blocks(config, rng)
    if zero_out:
        out_w = Tensor(np.zeros((c, h, 1)), requires_grad=True)
    else:
        out_w = Tensor(rng.standard_normal((c, h, 1)) / np.sqrt(h), requires_grad=True)
    out_b = Tensor(np.zeros(c), requires_grad=True)
    return DenoiserParams(config, in_w, in_b, blocks, out_w, out_b)


def init_guidance(config: NetConfig, seed: int, head_bias: float = 0.0) -> GuidanceParams:
    """Fresh guidance parameters; zero head weight so the predicted return is
    `head_bias` everywhere at init (and its input gradient is exactly zero)."""
    rng = rngmod.substream(seed, rngmod.INIT)
    c, h = config.channels_in, config.hidden_channels
    in_w = Tensor(rng.standard_normal((h, c, 1)) / np.sqrt(c), requires_grad=True)
    in_b = Tensor(np.zeros(h), requires_grad=True)
    blocks = _init_blocks(config, rng)
    head_w = Tensor(np.zeros((1, h)), requires_grad=True)
    head_b = Tensor(np.full(1, head_bias), requires_grad=True)
    return GuidanceParams(config, in_w, in_b, blocks, head_w, head_b)


def _channel_norm(u: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalise across channels within each column (keeps locality exact)."""
    mu = ad.reduce_mean(u, axis=-2, keepdims=True)
    cent = ad.add(u, ad.mul(mu, -1.0))
    var = ad.reduce_mean(ad.square(cent), axis=-2, keepdims=True)
    inv = ad.reciprocal(ad.sqrt(ad.add(var, _NORM_EPS)))
    return ad.add(ad.mul(ad.mul(cent, inv), gain), bias)


def _embedding_for(x: Tensor, m, dim: int) -> Tensor:
    if x.ndim == 3:
        ms = np.asarray(m)
        if ms.ndim == 0:
            ms = np.full(x.shape[0], int(ms))
        elif ms.shape != (x.shape[0],):
            raise ContractError(f"step indices shape {ms.shape} != batch ({x.shape[0]},)")
        return step_embedding(ms, dim)
    if np.asarray(m).ndim != 0:
        raise ContractError("single-matrix input takes a scalar step index")
    return step_embedding(int(m), dim)


def _trunk(params, x: Tensor, m) -> Tensor:
    cfg = params.config
    if x.shape[-2] != cfg.channels_in:
        raise ad.DimensionError(
            f"input channel axis has {x.shape[-2]} rows, net expects {cfg.channels_in}"
        )
    emb = _embedding_for(x, m, cfg.embed_dim)
    h = ad.conv1d(x, params.in_w, params.in_b)
    for blk in params.blocks:
        u = ad.conv1d(h, blk.conv_w, blk.conv_b)
        s = ad.affine(emb, blk.emb_w, blk.emb_b)
        s = ad.reshape(s, s.shape + (1,))
        u = ad.add(u, s)
        u = _channel_norm(u, blk.norm_gain, blk.norm_bias)
        u = ad.silu(u)
        u = ad.conv1d(u, blk.pw_w, blk.pw_b)
        h = ad.add(h, u)
    return h


def denoise_predict(params: DenoiserParams, x: Tensor, m) -> Tensor:
    """Predict the noise component of a corrupted plan matrix.

    x is (C, L) with scalar step m, or (B, C, L) with scalar or (B,) steps.
    Output matches x's shape.
    """
    h = _trunk(params, x, m)
    return ad.conv1d(h, params.out_w, params.out_b)


def return_predict(params: GuidanceParams, x: Tensor, m) -> Tensor:
    """Predict total trajectory return from a corrupted plan matrix.

    Scalar output for (C, L) input; shape (B,) for (B, C, L).
    """
    h = _trunk(params, x, m)
    pooled = ad.reduce_mean(h, axis=-1)
    out = ad.affine(pooled, params.head_w, params.head_b)
    if x.ndim == 3:
        return ad.reshape(out, (x.shape[0],))
    return ad.reshape(out, ())


def return_input_gradient(params: GuidanceParams, x: Tensor, m) -> np.ndarray:
    """Gradient of the predicted return with respect to the input matrix.

    For batched input the per-sample gradients are independent, so the
    batched result row i equals the single-input gradient of row i bitwise.
    """
    xt = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    with Tape() as tape:
        j = return_predict(params, xt, m)
        if j.ndim > 0:
            j = ad.reduce_sum(j)
    return backward(tape, j, wrt=[xt])[xt].data


_MAGIC = b"HDCK1"
_KIND_DENOISER = 0
_KIND_GUIDANCE = 1


def save_checkpoint(path, params) -> None:
    """Write params as magic + six u32 config ints + little-endian f64 data."""
    if isinstance(params, DenoiserParams):
        kind = _KIND_DENOISER
    elif isinstance(params, GuidanceParams):
        kind = _KIND_GUIDANCE
    else:
        raise ContractError(f"cannot checkpoint a {type(params).__name__}")
    cfg = params.config
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack(
            "<6I", kind, cfg.channels_in, cfg.hidden_channels,
            cfg.depth, cfg.kernel_size, cfg.embed_dim,
        ))
        for t in params.tensors():
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint; returns params."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    header = raw[len(_MAGIC): len(_MAGIC) + 24]
    if len(header) < 24:
        raise CheckpointError(f"{path}: truncated header")
    kind, c, h, depth, k, e = struct.unpack("<6I", header)
    if kind not in (_KIND_DENOISER, _KIND_GUIDANCE):
        raise CheckpointError(f"{path}: unknown model kind {kind}")
    cfg = NetConfig(channels_in=c, hidden_channels=h, depth=depth, kernel_size=k, embed_dim=e)
    template = (init_denoiser(cfg, seed=0) if kind == _KIND_DENOISER
                else init_guidance(cfg, seed=0))
    offset = len(_MAGIC) + 24
    loaded = []
    for t in template.tensors():
        nbytes = t.size * 8
        chunk = raw[offset: offset + nbytes]
        if len(chunk) < nbytes:
            raise CheckpointError(f"{path}: truncated parameter data")
        arr = np.frombuffer(chunk, dtype="<f8").reshape(t.shape)
        loaded.append(Tensor(arr, requires_grad=True))
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return template.with_tensors(loaded)
