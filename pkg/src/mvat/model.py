"""Time-domain encoder-decoder denoiser with per-layer multi-view attention.

Levels 1..L each halve nothing and quarter everything: a strided Down
Conv, a residual conformer block, and (where placed) a multi-view
attention block that emphasizes channel, global, and local structure.
The decoder mirrors this with skip connections and transposed convs, and
a mask gate produces the enhanced waveform. The three per-block views
are recorded on the forward trace so a distillation loss can consume
them.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

CHANNEL_CAP = 512
ATTENTION_STRIDE = 4
RESCON_KERNEL = 31
LOCAL_KERNEL = 7


@dataclass
class ModelConfig:
    depth: int
    base_channels: int
    channel_growth: int = 2
    kernel: int = 8
    stride: int = 4
    ma_placement: tuple | None = None
    role: str = "teacher"

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.channel_growth < 1:
            raise ConfigError(f"channel_growth must be >= 1, got {self.channel_growth}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.kernel < self.stride or (self.kernel - self.stride) % 2 != 0:
            raise ConfigError(
                f"kernel must be >= stride with an even difference so levels invert "
                f"exactly, got kernel={self.kernel}, stride={self.stride}"
            )
        if self.role not in ("teacher", "student"):
            raise ConfigError(f"role must be teacher or student, got {self.role!r}")
        if self.ma_placement is None:
            # teachers attend everywhere, students only at the deepest level
            self.ma_placement = tuple(range(1, self.depth + 1)) if self.role == "teacher" \
                else (self.depth,)
        self.ma_placement = tuple(sorted(set(int(l) for l in self.ma_placement)))
        for level in self.ma_placement:
            if not 1 <= level <= self.depth:
                raise ConfigError(f"ma_placement level {level} outside 1..{self.depth}")
            if self.channels(level) % 3 != 0:
                raise ConfigError(
                    f"level {level} has {self.channels(level)} channels, "
                    f"not divisible into 3 views"
                )

    def channels(self, level: int) -> int:
        return min(CHANNEL_CAP, self.base_channels * self.channel_growth ** (level - 1))

    @property
    def conv_padding(self) -> int:
        return (self.kernel - self.stride) // 2


@dataclass
class MultiViewActivations:
    level: int
    side: str  # "encoder" | "decoder"
    channel_view: Tensor
    global_view: Tensor
    local_view: Tensor

    def view(self, name: str) -> Tensor:
        return {"channel": self.channel_view, "global": self.global_view,
                "local": self.local_view}[name]


@dataclass
class ForwardTrace:
    enhanced: Tensor
    activations: list[MultiViewActivations] = field(default_factory=list)

    def find(self, side: str, level: int) -> MultiViewActivations:
        for act in self.activations:
            if act.side == side and act.level == level:
                return act
        raise ShapeError(f"no recorded activations for {side} level {level}")


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d:
    def __init__(self, rng, in_ch, out_ch, kernel, stride=1, padding=0, bias=True,
                 zero_bias_fixed=False, dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(_uniform_init(rng, (out_ch, in_ch, kernel), in_ch * kernel, dtype),
                             requires_grad=True)
        self.bias = None
        if bias and not zero_bias_fixed:
            self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


class ConvTranspose1d:
    def __init__(self, rng, in_ch, out_ch, kernel, stride, padding, dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(_uniform_init(rng, (in_ch, out_ch, kernel), in_ch * kernel, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.conv1d_transposed(x, self.weight, self.bias, self.stride, self.padding)

    def params(self, prefix):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


class DepthwiseConv1d:
    def __init__(self, rng, channels, kernel, padding, bias=True, dtype=np.float32):
        self.padding = padding
        self.weight = Tensor(_uniform_init(rng, (channels, kernel), kernel, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        return T.depthwise_conv1d(x, self.weight, self.bias, self.padding)

    def params(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


class ChannelNorm:
    """Normalize over the channel axis per time step, with a learnable
    per-channel affine."""

    EPS = 1e-5

    def __init__(self, channels, dtype=np.float32):
        self.gain = Tensor(np.ones((1, channels, 1), dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros((1, channels, 1), dtype=dtype), requires_grad=True)
        self.channels = channels

    def __call__(self, x):
        b, c, t = x.shape
        mu = x.mean(axis=1, keepdims=True)
        centered = x - T.expand_axis(mu, 1, c)
        var = (centered * centered).mean(axis=1, keepdims=True)
        inv = (var + self.EPS).pow(-0.5)
        normed = centered * T.expand_axis(inv, 1, c)
        # expand the (1, C, 1) affine tensors to the activation shape
        g = T.expand_axis(T.expand_axis(self.gain, 0, b), 2, t)
        s = T.expand_axis(T.expand_axis(self.shift, 0, b), 2, t)
        return normed * g + s

    def params(self, prefix):
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.shift", self.shift


def swish(x):
    return x * T.sigmoid(x)


class ResConBlock:
    """Pointwise expand x2 -> depthwise conv -> channel norm -> swish ->
    pointwise back, with a residual connection. Shape preserving."""

    def __init__(self, rng, channels, dtype=np.float32):
        hidden = 2 * channels
        self.pw_in = Conv1d(rng, channels, hidden, 1, dtype=dtype)
        self.dw = DepthwiseConv1d(rng, hidden, RESCON_KERNEL, RESCON_KERNEL // 2, dtype=dtype)
        self.norm = ChannelNorm(hidden, dtype=dtype)
        self.pw_out = Conv1d(rng, hidden, channels, 1, dtype=dtype)

    def __call__(self, x):
        h = self.pw_in(x)
        h = self.dw(h)
        h = self.norm(h)
        h = swish(h)
        return x + self.pw_out(h)

    def params(self, prefix):
        yield from self.pw_in.params(f"{prefix}.pw_in")
        yield from self.dw.params(f"{prefix}.dw")
        yield from self.norm.params(f"{prefix}.norm")
        yield from self.pw_out.params(f"{prefix}.pw_out")


class ChannelGate:
    """Squeeze-style gating: per-channel sigmoid gates from the time-pooled
    mean, through a small bottleneck."""

    def __init__(self, rng, channels, dtype=np.float32):
        hidden = max(1, channels // 2)
        self.squeeze = Conv1d(rng, channels, hidden, 1, dtype=dtype)
        self.excite = Conv1d(rng, hidden, channels, 1, dtype=dtype)

    def __call__(self, x):
        t = x.shape[2]
        pooled = x.mean(axis=2, keepdims=True)
        gates = T.sigmoid(self.excite(T.relu(self.squeeze(pooled))))
        return x * T.expand_axis(gates, 2, t)

    def params(self, prefix):
        yield from self.squeeze.params(f"{prefix}.squeeze")
        yield from self.excite.params(f"{prefix}.excite")


class GlobalAttention:
    """Single-head scaled dot-product self-attention over time, computed on
    a 4x-strided sequence and linearly interpolated back. Projections are
    bias-free so zero input yields a zero view."""

    def __init__(self, rng, channels, dtype=np.float32):
        self.q = Conv1d(rng, channels, channels, 1, bias=False, dtype=dtype)
        self.k = Conv1d(rng, channels, channels, 1, bias=False, dtype=dtype)
        self.v = Conv1d(rng, channels, channels, 1, bias=False, dtype=dtype)
        self.channels = channels

    def __call__(self, x):
        t = x.shape[2]
        xd = T.downsample_time(x, ATTENTION_STRIDE)
        q, k, v = self.q(xd), self.k(xd), self.v(xd)
        scale = 1.0 / np.sqrt(self.channels)
        scores = T.matmul(q.transpose(1, 2), k) * scale
        attn = T.softmax(scores)
        out = T.matmul(v, attn.transpose(1, 2))
        return T.interpolate_linear(out, t)

    def params(self, prefix):
        yield from self.q.params(f"{prefix}.q")
        yield from self.k.params(f"{prefix}.k")
        yield from self.v.params(f"{prefix}.v")


class LocalGate:
    """Depthwise conv (kernel 7) content path gated by a sigmoid of a second
    depthwise conv. The content path is bias-free so zero input yields a
    zero view."""

    def __init__(self, rng, channels, dtype=np.float32):
        self.content = DepthwiseConv1d(rng, channels, LOCAL_KERNEL, LOCAL_KERNEL // 2,
                                       bias=False, dtype=dtype)
        self.gate = DepthwiseConv1d(rng, channels, LOCAL_KERNEL, LOCAL_KERNEL // 2, dtype=dtype)

    def __call__(self, x):
        return self.content(x) * T.sigmoid(self.gate(x))

    def params(self, prefix):
        yield from self.content.params(f"{prefix}.content")
        yield from self.gate.params(f"{prefix}.gate")


class MaBlock:
    """Multi-view attention: the channel split into three equal groups, one
    per view, with the branch outputs fused back residually."""

    def __init__(self, rng, channels, dtype=np.float32):
        if channels % 3 != 0:
            raise ConfigError(f"MA block needs channels divisible by 3, got {channels}")
        third = channels // 3
        self.channel_branch = ChannelGate(rng, third, dtype=dtype)
        self.global_branch = GlobalAttention(rng, third, dtype=dtype)
        self.local_branch = LocalGate(rng, third, dtype=dtype)
        self.fuse = Conv1d(rng, channels, channels, 1, dtype=dtype)
        self.third = third

    def __call__(self, x, level: int, side: str):
        c3 = self.third
        x1 = T.slice_axis(x, 1, 0, c3)
        x2 = T.slice_axis(x, 1, c3, 2 * c3)
        x3 = T.slice_axis(x, 1, 2 * c3, 3 * c3)
        view_c = self.channel_branch(x1)
        view_g = self.global_branch(x2)
        view_l = self.local_branch(x3)
        fused = self.fuse(T.concat([view_c, view_g, view_l], axis=1))
        views = MultiViewActivations(level, side, view_c, view_g, view_l)
        return x + fused, views

    def params(self, prefix):
        yield from self.channel_branch.params(f"{prefix}.channel")
        yield from self.global_branch.params(f"{prefix}.global")
        yield from self.local_branch.params(f"{prefix}.local")
        yield from self.fuse.params(f"{prefix}.fuse")


class MaskGate:
    """m = sigmoid(conv_a(d)) * tanh(conv_b(d)); output conv reduces m * d to
    one channel. The output conv carries no bias, so zero input maps to
    zero output."""

    def __init__(self, rng, channels, dtype=np.float32):
        self.conv_a = Conv1d(rng, channels, channels, 1, dtype=dtype)
        self.conv_b = Conv1d(rng, channels, channels, 1, dtype=dtype)
        self.conv_out = Conv1d(rng, channels, 1, 1, bias=False, dtype=dtype)

    def __call__(self, d):
        m = T.sigmoid(self.conv_a(d)) * T.tanh(self.conv_b(d))
        return self.conv_out(m * d)

    def params(self, prefix):
        yield from self.conv_a.params(f"{prefix}.conv_a")
        yield from self.conv_b.params(f"{prefix}.conv_b")
        yield from self.conv_out.params(f"{prefix}.conv_out")


class Model:
    """Seeded, deterministic instantiation of a ModelConfig."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 271828)))
        L = config.depth
        pad = config.conv_padding

        self.down = []
        self.enc_rescon = []
        self.enc_ma = {}
        for level in range(1, L + 1):
            cin = 1 if level == 1 else config.channels(level - 1)
            cout = config.channels(level)
            self.down.append(Conv1d(rng, cin, cout, config.kernel, config.stride, pad, dtype=dtype))
            self.enc_rescon.append(ResConBlock(rng, cout, dtype=dtype))
            if level in config.ma_placement:
                self.enc_ma[level] = MaBlock(rng, cout, dtype=dtype)

        cL = config.channels(L)
        self.bottleneck = Conv1d(rng, cL, cL, 1, dtype=dtype)

        self.dec_ma = {}
        self.dec_rescon = {}
        self.up = {}
        for level in range(L, 0, -1):
            c = config.channels(level)
            if level in config.ma_placement:
                self.dec_ma[level] = MaBlock(rng, c, dtype=dtype)
            self.dec_rescon[level] = ResConBlock(rng, c, dtype=dtype)
            cout = config.channels(level - 1) if level > 1 else config.channels(1)
            self.up[level] = ConvTranspose1d(rng, c, cout, config.kernel, config.stride, pad,
                                             dtype=dtype)
        self.mask_gate = MaskGate(rng, config.channels(1), dtype=dtype)

    # -- parameters -------------------------------------------------------
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        L = self.config.depth
        for level in range(1, L + 1):
            out.extend(self.down[level - 1].params(f"enc{level}.down"))
            out.extend(self.enc_rescon[level - 1].params(f"enc{level}.rescon"))
            if level in self.enc_ma:
                out.extend(self.enc_ma[level].params(f"enc{level}.ma"))
        out.extend(self.bottleneck.params("bottleneck"))
        for level in range(L, 0, -1):
            if level in self.dec_ma:
                out.extend(self.dec_ma[level].params(f"dec{level}.ma"))
            out.extend(self.dec_rescon[level].params(f"dec{level}.rescon"))
            out.extend(self.up[level].params(f"dec{level}.up"))
        out.extend(self.mask_gate.params("mask_gate"))
        return out

    def parameter_count(self) -> int:
        return sum(p.data.size for _, p in self.named_parameters())

    def set_requires_grad(self, flag: bool) -> None:
        for _, p in self.named_parameters():
            p.requires_grad = flag
            if not flag:
                p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(arrays):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise ShapeError(f"parameter name mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape} does not match {p.data.shape}")
            p.data = arr.copy()

    # -- forward ------------------------------------------------------------
    def forward(self, x: Tensor) -> ForwardTrace:
        if x.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f"model input must be [batch, 1, time], got shape {x.shape}")
        if not np.all(np.isfinite(x.data)):
            raise ShapeError("model input contains non-finite values")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype), requires_grad=x.requires_grad)
        cfg = self.config
        L = cfg.depth
        t_in = x.shape[2]
        block = cfg.stride**L
        padded = ((t_in + block - 1) // block) * block
        if padded != t_in:
            x = T.pad_end(x, padded - t_in)

        trace_views = []
        h = x
        skips = {}
        for level in range(1, L + 1):
            h = T.relu(self.down[level - 1](h))
            h = self.enc_rescon[level - 1](h)
            if level in self.enc_ma:
                h, views = self.enc_ma[level](h, level, "encoder")
                trace_views.append(views)
            skips[level] = h

        d = self.bottleneck(h)
        for level in range(L, 0, -1):
            d = d + skips[level]
            if level in self.dec_ma:
                d, views = self.dec_ma[level](d, level, "decoder")
                trace_views.append(views)
            d = self.dec_rescon[level](d)
            d = self.up[level](d)
            if level > 1:
                d = T.relu(d)

        y = self.mask_gate(d)
        if padded != t_in:
            y = T.slice_axis(y, 2, 0, t_in)
        return ForwardTrace(enhanced=y, activations=trace_views)


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    return Model(config, seed=seed, dtype=dtype)
