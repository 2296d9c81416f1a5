"""Uniform quantization of weight matrices.

Weights are (d_out, d_in) float64 arrays. Quantization parameters are shared
group-wise along the input dimension of each output row; the last group may
be short. Symmetric mode uses the signed range [-(2^(N-1)-1), 2^(N-1)-1]
with zero offset; asymmetric mode the unsigned range [0, 2^N-1] with an
integer zero point. Rounding ties go half-to-even.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix

PER_CHANNEL = "per_channel"
PER_TENSOR = "per_tensor"


@dataclass(frozen=True)
class QuantScheme:
    """Bit width, symmetric/asymmetric mode, and grouping granularity."""

    bits: int = 4
    mode: str = "asymmetric"
    group_size: int | str = 128
    rounding: str = "half_to_even"

    def __post_init__(self):
        if self.bits < 2:
            raise ValueError(f"bits must be >= 2, got {self.bits}")
        if self.mode not in ("symmetric", "asymmetric"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if isinstance(self.group_size, str):
            if self.group_size not in (PER_CHANNEL, PER_TENSOR):
                raise ValueError(f"unknown granularity {self.group_size!r}")
        elif self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.rounding != "half_to_even":
            raise ValueError("only half_to_even rounding is supported")

    @property
    def qmax(self) -> int:
        if self.mode == "symmetric":
            return 2 ** (self.bits - 1) - 1
        return 2**self.bits - 1

    @property
    def qmin(self) -> int:
        return -self.qmax if self.mode == "symmetric" else 0

    @property
    def per_tensor(self) -> bool:
        return self.group_size == PER_TENSOR

    def group_slices(self, d_in: int) -> list[slice]:
        if isinstance(self.group_size, str):
            return [slice(0, d_in)]
        g = self.group_size
        return [slice(s, min(s + g, d_in)) for s in range(0, d_in, g)]

    def group_index(self, d_in: int) -> np.ndarray:
        """Column index -> group index."""
        if isinstance(self.group_size, str):
            return np.zeros(d_in, dtype=np.int64)
        return np.arange(d_in) // int(self.group_size)


@dataclass(frozen=True)
class QuantizedLayer:
    """Integer codes plus per-(row, group) scales/zero points and the
    reconstructed weight matrix.

    `channel_scale` is set by the scaled-candidate solver: codes/scales then
    live in the scaled weight space and `dequantized` has the per-channel
    scaling divided back out.
    """

    codes: np.ndarray
    scales: np.ndarray
    zero_points: np.ndarray
    dequantized: np.ndarray
    scheme: QuantScheme
    channel_scale: np.ndarray | None = None


def group_params(w, scheme: QuantScheme):
    """Per-row (scale, zero_point) for one group slice of shape (rows, g).

    Constant groups are degenerate: they get parameters that reproduce the
    constant exactly under dequantization.
    """
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if w.shape[1] == 0:
        raise ValueError("empty quantization group")
    qmax = scheme.qmax
    if scheme.mode == "symmetric":
        amax = np.max(np.abs(w), axis=1)
        scale = np.where(amax > 0.0, amax / qmax, 1.0)
        zp = np.zeros(w.shape[0], dtype=np.int32)
        return scale, zp
    lo = np.min(w, axis=1)
    hi = np.max(w, axis=1)
    span = hi - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = span / qmax
        zp_f = np.round(-lo / scale)
    const = span == 0.0
    if np.any(const):
        scale = np.where(const, np.where(lo == 0.0, 1.0, np.abs(lo)), scale)
        zp_f = np.where(const, np.where(lo < 0.0, 1.0, 0.0), zp_f)
    zp = np.clip(zp_f, 0, qmax).astype(np.int32)
    return scale, zp


def quantize_with_params(w, scale, zp, scheme: QuantScheme) -> np.ndarray:
    """Codes for w of shape (rows,) or (rows, k) given per-row parameters."""
    w = np.asarray(w, dtype=np.float64)
    s = np.asarray(scale, dtype=np.float64)
    z = np.asarray(zp, dtype=np.float64)
    if w.ndim == 2 and s.ndim == 1:
        s = s[:, None]
        z = z[:, None]
    q = np.round(w / s + z)
    return np.clip(q, scheme.qmin, scheme.qmax).astype(np.int32)


def dequantize_with_params(codes, scale, zp) -> np.ndarray:
    codes = np.asarray(codes)
    s = np.asarray(scale, dtype=np.float64)
    z = np.asarray(zp, dtype=np.float64)
    if codes.ndim == 2 and s.ndim == 1:
        s = s[:, None]
        z = z[:, None]
    return s * (codes - z)


def quantize_group(w, scheme: QuantScheme):
    """Quantize one group vector; returns (codes, scale, zero_point)."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("quantize_group expects a nonempty 1-D vector")
    if not np.isfinite(w).all():
        raise ValueError("group contains non-finite values")
    scale, zp = group_params(w[None, :], scheme)
    codes = quantize_with_params(w[None, :], scale, zp, scheme)
    return codes[0], float(scale[0]), int(zp[0])


def dequantize_group(codes, scale, zero_point) -> np.ndarray:
    """scale · (codes - zero_point)."""
    return dequantize_with_params(np.asarray(codes), float(scale), float(zero_point))


def quantize_matrix(w, scheme: QuantScheme) -> QuantizedLayer:
    """Group-wise quantization of every (row, group) slice of w."""
    w = as_matrix(w, "W")
    d_out, d_in = w.shape
    slices = scheme.group_slices(d_in)
    codes = np.empty((d_out, d_in), dtype=np.int32)
    deq = np.empty_like(w)
    scales = np.empty((d_out, len(slices)), dtype=np.float64)
    zps = np.empty((d_out, len(slices)), dtype=np.int32)
    for gi, sl in enumerate(slices):
        if scheme.per_tensor:
            s1, z1 = group_params(w.reshape(1, -1), scheme)
            scale = np.full(d_out, s1[0])
            zp = np.full(d_out, z1[0], dtype=np.int32)
        else:
            scale, zp = group_params(w[:, sl], scheme)
        c = quantize_with_params(w[:, sl], scale, zp, scheme)
        codes[:, sl] = c
        deq[:, sl] = dequantize_with_params(c, scale, zp)
        scales[:, gi] = scale
        zps[:, gi] = zp
    return QuantizedLayer(codes=codes, scales=scales, zero_points=zps, dequantized=deq, scheme=scheme)


def rtn(w, scheme: QuantScheme) -> QuantizedLayer:
    """Round-to-nearest baseline: plain group-wise quantization, no calibration."""
    return quantize_matrix(w, scheme)
