"""Limited feedback: logarithmic SINR quantization and message packing.

The base station broadcasts, per code, one detection flag and a B-bit
index quantizing the SINR estimate above a floor gamma_min on a uniform
dB lattice of step delta_gamma up to a ceiling gamma_max.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class QuantizerSpec:
    """B-bit quantizer for SINR feedback; gamma_min/gamma_max are linear."""

    B: int
    gamma_min: float
    gamma_max: float

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if not 0.0 < self.gamma_min < self.gamma_max:
            raise ValueError("need 0 < gamma_min < gamma_max")

    @property
    def n_levels(self) -> int:
        return 2 ** self.B


def resolution(spec: QuantizerSpec) -> float:
    """Quantization step in dB: (dB span of the range) / (2^B - 1), exact."""
    span_db = 10.0 * math.log10(spec.gamma_max) - 10.0 * math.log10(spec.gamma_min)
    return span_db / (spec.n_levels - 1)


def _round_half_away(x: float) -> float:
    return math.floor(x + 0.5) if x >= 0.0 else math.ceil(x - 0.5)


def encode(gamma_hat: float, spec: QuantizerSpec) -> int:
    """Quantization index of a SINR estimate.

    The estimate is clamped into [gamma_min, gamma_max]; the index rounds
    dB(clamped - gamma_min) to the nearest multiple of the step (half away
    from zero) and clamps into [0, 2^B - 1]. Estimates at or below the
    floor map to 0; +inf estimates saturate at the ceiling.
    """
    if math.isnan(gamma_hat):
        raise ValueError("gamma_hat must not be NaN")
    clamped = min(max(gamma_hat, spec.gamma_min), spec.gamma_max)
    diff = clamped - spec.gamma_min
    if diff <= 0.0:
        return 0
    step = resolution(spec)
    idx = _round_half_away(10.0 * math.log10(diff) / step)
    return int(min(max(idx, 0), spec.n_levels - 1))


def decode(index: int, spec: QuantizerSpec, add_floor_offset: bool = False) -> float:
    """Linear SINR value represented by a quantization index.

    The literal reconstruction is 10^(step * index / 10); with
    add_floor_offset the floor gamma_min is added back, undoing the
    offset that the encoder subtracted.
    """
    if not 0 <= index < spec.n_levels:
        raise ValueError(f"index must lie in [0, {spec.n_levels - 1}]")
    mu = 10.0 ** (resolution(spec) * index / 10.0)
    return spec.gamma_min + mu if add_floor_offset else mu


@dataclass(frozen=True)
class FeedbackMessage:
    """Per-code downlink message: detection flag plus quantized SINR."""

    detected: bool
    index: int


def message_bits(spec: QuantizerSpec) -> int:
    """Downlink bits per code per frame: one flag plus the B-bit index."""
    return 1 + spec.B


def pack_message(msg: FeedbackMessage, spec: QuantizerSpec) -> bytes:
    """Bit layout: flag in the MSB, index in the low B bits (one field)."""
    if not 0 <= msg.index < spec.n_levels:
        raise ValueError("index out of range for the quantizer")
    word = (int(msg.detected) << spec.B) | msg.index
    nbytes = (message_bits(spec) + 7) // 8
    return word.to_bytes(nbytes, "big")


def unpack_message(data: bytes, spec: QuantizerSpec) -> FeedbackMessage:
    word = int.from_bytes(data, "big")
    index = word & (spec.n_levels - 1)
    detected = bool((word >> spec.B) & 1)
    if word >> (spec.B + 1):
        raise ValueError("stray bits above the message fields")
    return FeedbackMessage(detected=detected, index=index)
