"""Gated dilated residual network mapping log-mel frames to per-frame CTC logits.

Layout::

    input_proj (1x1, M->R)
    for each stack, for each block (dilations 1, 3, 9, 27):
        z    = tanh(filter_conv(h)) * sigmoid(gate_conv(h))
        h    = h + residual_proj(z)
        skip = skip + skip_proj(z)
    logits = head_conv2(batch_norm(head_conv1(relu(skip))))
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormParams, Conv1dParams, ShapeError
from .dsp import MelSpectrogram, normalize_features


@dataclass(frozen=True)
class NetworkConfig:
    num_stacks: int = 7
    blocks_per_stack: int = 4
    dilations: tuple[int, ...] = (1, 3, 9, 27)
    kernel_size: int = 2
    residual_channels: int = 32
    skip_channels: int = 64
    mel_bins: int = 40
    alphabet_size: int = 38

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if len(self.dilations) != self.blocks_per_stack:
            raise ValueError(f"{len(self.dilations)} dilations for {self.blocks_per_stack} blocks per stack")
        for name in ("num_stacks", "blocks_per_stack", "kernel_size", "residual_channels",
                     "skip_channels", "mel_bins"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if any(d < 1 for d in self.dilations):
            raise ValueError("dilations must be >= 1")
        if self.alphabet_size < 2:
            raise ValueError("alphabet_size must be >= 2 (blank plus one symbol)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


@dataclass
class ResidualBlockParams:
    filter_conv: Conv1dParams
    gate_conv: Conv1dParams
    residual_proj: Conv1dParams
    skip_proj: Conv1dParams

    def __post_init__(self):
        if (self.filter_conv.kernel_size, self.filter_conv.dilation) != (
                self.gate_conv.kernel_size, self.gate_conv.dilation):
            raise ShapeError("filter and gate convolutions must share kernel size and dilation")

    def convs(self) -> dict[str, Conv1dParams]:
        return {"filter_conv": self.filter_conv, "gate_conv": self.gate_conv,
                "residual_proj": self.residual_proj, "skip_proj": self.skip_proj}


@dataclass
class NetworkParams:
    config: NetworkConfig
    input_proj: Conv1dParams
    stacks: list[list[ResidualBlockParams]]
    head_conv1: Conv1dParams
    head_bn: BatchNormParams
    head_conv2: Conv1dParams

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Trainable tensors by dotted name; the arrays are the live storage."""
        out = {}
        for name, conv in self._convs():
            out[f"{name}.weight"] = conv.weight
            out[f"{name}.bias"] = conv.bias
        out["head_bn.gamma"] = self.head_bn.gamma
        out["head_bn.beta"] = self.head_bn.beta
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {"head_bn.running_mean": self.head_bn.running_mean,
                "head_bn.running_var": self.head_bn.running_var}

    def _convs(self):
        yield "input_proj", self.input_proj
        for s, stack in enumerate(self.stacks):
            for b, block in enumerate(stack):
                for cname, conv in block.convs().items():
                    yield f"stacks.{s}.{b}.{cname}", conv
        yield "head_conv1", self.head_conv1
        yield "head_conv2", self.head_conv2


def init_params(config: NetworkConfig, seed: int = 0) -> NetworkParams:
    rng = np.random.default_rng(seed)
    R, S, K = config.residual_channels, config.skip_channels, config.kernel_size
    stacks = []
    for _ in range(config.num_stacks):
        blocks = []
        for d in config.dilations:
            blocks.append(ResidualBlockParams(
                filter_conv=Conv1dParams.init(R, R, K, d, rng),
                gate_conv=Conv1dParams.init(R, R, K, d, rng),
                residual_proj=Conv1dParams.init(R, R, 1, 1, rng),
                skip_proj=Conv1dParams.init(R, S, 1, 1, rng),
            ))
        stacks.append(blocks)
    return NetworkParams(
        config=config,
        input_proj=Conv1dParams.init(config.mel_bins, R, 1, 1, rng),
        stacks=stacks,
        head_conv1=Conv1dParams.init(S, S, 1, 1, rng),
        head_bn=BatchNormParams.init(S),
        head_conv2=Conv1dParams.init(S, config.alphabet_size, 1, 1, rng),
    )


# --------------------------------------------------------------------------
# residual block / stack


def residual_block_forward(x: np.ndarray, p: ResidualBlockParams):
    xf, c_f = ad.dilated_conv1d(x, p.filter_conv)
    xg, c_g = ad.dilated_conv1d(x, p.gate_conv)
    z, c_z = ad.gated_activation(xf, xg)
    r, c_r = ad.conv1x1(z, p.residual_proj)
    skip, c_s = ad.conv1x1(z, p.skip_proj)
    out, _ = ad.add(x, r)
    return out, skip, (c_f, c_g, c_z, c_r, c_s)


def residual_block_backward(d_out: np.ndarray, d_skip: np.ndarray, cache):
    """Returns (dx, {conv name: {"weight", "bias"}})."""
    c_f, c_g, c_z, c_r, c_s = cache
    dz_s, g_skip = ad.conv1x1_backward(d_skip, c_s)
    dz_r, g_res = ad.conv1x1_backward(d_out, c_r)
    dxf, dxg = ad.gated_activation_backward(dz_s + dz_r, c_z)
    dx_f, g_filter = ad.dilated_conv1d_backward(dxf, c_f)
    dx_g, g_gate = ad.dilated_conv1d_backward(dxg, c_g)
    dx = d_out + dx_f + dx_g
    return dx, {"filter_conv": g_filter, "gate_conv": g_gate, "residual_proj": g_res, "skip_proj": g_skip}


def stack_forward(x: np.ndarray, blocks: list[ResidualBlockParams], dilations=(1, 3, 9, 27)):
    if len(blocks) != len(dilations):
        raise ValueError(f"stack expects {len(dilations)} blocks, got {len(blocks)}")
    for block, d in zip(blocks, dilations):
        if block.filter_conv.dilation != d:
            raise ValueError(f"block dilation {block.filter_conv.dilation}, expected {d}")
    caches = []
    skip_sum = None
    for block in blocks:
        x, skip, cache = residual_block_forward(x, block)
        skip_sum = skip if skip_sum is None else skip_sum + skip
        caches.append(cache)
    return x, skip_sum, caches


def stack_backward(d_out: np.ndarray, d_skip_sum: np.ndarray, caches):
    grads = []
    for cache in reversed(caches):
        d_out, g = residual_block_backward(d_out, d_skip_sum, cache)
        grads.append(g)
    return d_out, grads[::-1]


# --------------------------------------------------------------------------
# full network


def network_forward(features, params: NetworkParams, mode: str = "train"):
    """Map an (M, T) input (or a MelSpectrogram) to logits (A, T); also returns the backward cache.

    Train mode updates the head's batch-norm running statistics.
    """
    if isinstance(features, MelSpectrogram):
        features = normalize_features(features)
    cfg = params.config
    if features.ndim != 2 or features.shape[0] != cfg.mel_bins:
        raise ShapeError(f"expected {cfg.mel_bins} mel bins, got input of shape {features.shape}")
    if features.shape[1] < 1:
        raise ValueError("network input has no frames")
    if mode == "train" and features.shape[1] < 2:
        raise ValueError("train mode needs at least 2 frames for batch norm")
    h, c_in = ad.conv1x1(features, params.input_proj)
    total_skip = None
    stack_caches = []
    for blocks in params.stacks:
        h, skip, caches = stack_forward(h, blocks, cfg.dilations)
        total_skip = skip if total_skip is None else total_skip + skip
        stack_caches.append(caches)
    a, c_relu = ad.relu(total_skip)
    b, c_h1 = ad.conv1x1(a, params.head_conv1)
    n, c_bn = ad.batch_norm(b, params.head_bn, mode)
    logits, c_h2 = ad.conv1x1(n, params.head_conv2)
    return logits, (c_in, stack_caches, c_relu, c_h1, c_bn, c_h2)


def network_backward(d_logits: np.ndarray, cache, with_input_grad: bool = False):
    """Gradients keyed like ``NetworkParams.named_tensors``."""
    c_in, stack_caches, c_relu, c_h1, c_bn, c_h2 = cache
    grads: dict[str, np.ndarray] = {}

    def put(prefix, g):
        for k, v in g.items():
            grads[f"{prefix}.{k}"] = v

    dn, g = ad.conv1x1_backward(d_logits, c_h2)
    put("head_conv2", g)
    db, g = ad.batch_norm_backward(dn, c_bn)
    put("head_bn", g)
    da, g = ad.conv1x1_backward(db, c_h1)
    put("head_conv1", g)
    d_skip = ad.relu_backward(da, c_relu)
    # every stack's skip output feeds the same sum; the last residual output is unused
    input_proj, T = c_in[1], c_in[2]
    dh = np.zeros((input_proj.weight.shape[0], T))
    for s in reversed(range(len(stack_caches))):
        dh, block_grads = stack_backward(dh, d_skip, stack_caches[s])
        for b, bg in enumerate(block_grads):
            for cname, g in bg.items():
                put(f"stacks.{s}.{b}.{cname}", g)
    dx, g = ad.conv1x1_backward(dh, c_in)
    put("input_proj", g)
    if with_input_grad:
        return grads, dx
    return grads


def receptive_field(config: NetworkConfig) -> int:
    return 1 + config.num_stacks * (config.kernel_size - 1) * sum(config.dilations)


def param_count(config: NetworkConfig) -> int:
    """Number of trainable scalars (batch-norm running statistics excluded)."""
    R, S, K, M, A = (config.residual_channels, config.skip_channels, config.kernel_size,
                     config.mel_bins, config.alphabet_size)
    block = 2 * (R * R * K + R) + (R * R + R) + (R * S + S)
    return ((M * R + R)
            + config.num_stacks * config.blocks_per_stack * block
            + (S * S + S) + 2 * S + (S * A + A))
