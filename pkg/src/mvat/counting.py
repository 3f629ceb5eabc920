"""Analytic parameter and FLOP accounting.

Counts are closed-form per block so they can be cross-checked against the
instantiated model. FLOPs follow the 2-per-multiply-accumulate rule for
conv/linear/attention work at the padded input length; elementwise and
normalization work is excluded, as are bias additions.
"""
from __future__ import annotations

from .model import (
    ATTENTION_STRIDE,
    LOCAL_KERNEL,
    RESCON_KERNEL,
    ModelConfig,
)


def _conv_params(cin: int, cout: int, k: int, bias: bool = True) -> int:
    return cout * cin * k + (cout if bias else 0)


def _depthwise_params(c: int, k: int, bias: bool = True) -> int:
    return c * k + (c if bias else 0)


def _rescon_params(c: int) -> int:
    hidden = 2 * c
    return (
        _conv_params(c, hidden, 1)
        + _depthwise_params(hidden, RESCON_KERNEL)
        + 2 * hidden  # channel-norm affine
        + _conv_params(hidden, c, 1)
    )


def _ma_params(c: int) -> int:
    c3 = c // 3
    hidden = max(1, c3 // 2)
    channel = _conv_params(c3, hidden, 1) + _conv_params(hidden, c3, 1)
    global_ = 3 * _conv_params(c3, c3, 1, bias=False)
    local = _depthwise_params(c3, LOCAL_KERNEL, bias=False) + _depthwise_params(c3, LOCAL_KERNEL)
    fuse = _conv_params(c, c, 1)
    return channel + global_ + local + fuse


def _mask_gate_params(c: int) -> int:
    return 2 * _conv_params(c, c, 1) + _conv_params(c, 1, 1, bias=False)


def count_params(config: ModelConfig) -> int:
    """Total trainable parameters of the model a config describes."""
    total = 0
    L = config.depth
    for level in range(1, L + 1):
        cin = 1 if level == 1 else config.channels(level - 1)
        c = config.channels(level)
        total += _conv_params(cin, c, config.kernel)  # down conv
        total += _rescon_params(c)  # encoder rescon
        if level in config.ma_placement:
            total += _ma_params(c)  # encoder MA
    cL = config.channels(L)
    total += _conv_params(cL, cL, 1)  # bottleneck
    for level in range(L, 0, -1):
        c = config.channels(level)
        if level in config.ma_placement:
            total += _ma_params(c)  # decoder MA
        total += _rescon_params(c)  # decoder rescon
        cout = config.channels(level - 1) if level > 1 else config.channels(1)
        total += _conv_params(c, cout, config.kernel)  # up conv
    total += _mask_gate_params(config.channels(1))
    return total


def padded_length(config: ModelConfig, input_len: int) -> int:
    block = config.stride**config.depth
    return ((input_len + block - 1) // block) * block


def _conv_flops(cin: int, cout: int, k: int, t_out: int) -> int:
    return 2 * cout * cin * k * t_out


def _depthwise_flops(c: int, k: int, t: int) -> int:
    return 2 * c * k * t


def _rescon_flops(c: int, t: int) -> int:
    hidden = 2 * c
    return (
        _conv_flops(c, hidden, 1, t)
        + _depthwise_flops(hidden, RESCON_KERNEL, t)
        + _conv_flops(hidden, c, 1, t)
    )


def _ma_flops(c: int, t: int) -> int:
    c3 = c // 3
    hidden = max(1, c3 // 2)
    td = -(-t // ATTENTION_STRIDE)  # ceil division: strided attention length
    channel = _conv_flops(c3, hidden, 1, 1) + _conv_flops(hidden, c3, 1, 1)
    global_ = 3 * _conv_flops(c3, c3, 1, td) + 2 * (2 * td * td * c3)  # qkv + scores + apply
    local = 2 * _depthwise_flops(c3, LOCAL_KERNEL, t)
    fuse = _conv_flops(c, c, 1, t)
    return channel + global_ + local + fuse


def _mask_gate_flops(c: int, t: int) -> int:
    return 2 * _conv_flops(c, c, 1, t) + _conv_flops(c, 1, 1, t)


def count_flops(config: ModelConfig, input_len: int) -> int:
    """One-forward-pass FLOPs at the given input length (after internal
    padding), counting 2 per multiply-accumulate in conv/linear/attention."""
    if input_len < 1:
        raise ValueError(f"input_len must be >= 1, got {input_len}")
    total = 0
    L = config.depth
    lengths = {0: padded_length(config, input_len)}
    for level in range(1, L + 1):
        lengths[level] = lengths[level - 1] // config.stride
    for level in range(1, L + 1):
        cin = 1 if level == 1 else config.channels(level - 1)
        c = config.channels(level)
        t = lengths[level]
        total += _conv_flops(cin, c, config.kernel, t)  # down conv
        total += _rescon_flops(c, t)
        if level in config.ma_placement:
            total += _ma_flops(c, t)
    cL = config.channels(L)
    total += _conv_flops(cL, cL, 1, lengths[L])  # bottleneck
    for level in range(L, 0, -1):
        c = config.channels(level)
        t = lengths[level]
        if level in config.ma_placement:
            total += _ma_flops(c, t)
        total += _rescon_flops(c, t)
        cout = config.channels(level - 1) if level > 1 else config.channels(1)
        # transposed conv: each input position contributes cout * k MACs per channel
        total += 2 * c * cout * config.kernel * t
    total += _mask_gate_flops(config.channels(1), lengths[0])
    return total
