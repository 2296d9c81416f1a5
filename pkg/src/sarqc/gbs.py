"""Gram-based sequential quantization with regularized curvature.

The curvature G = XXᵀ + λ·diag(s²) replaces the plain Gram matrix; columns
are quantized left to right and the committed error of each column is
compensated into the later ones through rows of M = chol(G⁻¹)ᵀ. Updates
inside a block are applied immediately, trailing columns get one batched
update per block. λ = 0 recovers the undamped Gram-only pass.

Group quantization parameters are frozen from the working matrix at the
moment a group's first column is reached and are held fixed for the rest of
the pass, so the per-coordinate quantizer stays affine during compensation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .calibration import CalibrationBatch
from .linalg import TriangularFactor, as_matrix, chol_upper_of_inverse, gram
from .objective import recon_loss
from .quantizer import (
    QuantizedLayer,
    QuantScheme,
    dequantize_with_params,
    group_params,
    quantize_with_params,
)
from .saliency import SaliencyProfile, channel_stats, identity_profile, saliency_vector_gbs, scale_normalize_gbs

LAMBDA_GRID_GBS_DEFAULT = (0.25, 0.5, 0.75)
GAMMA_GRID_DEFAULT = (0.1, 0.15, 0.35, 0.5)


@dataclass(frozen=True)
class GbsConfig:
    scheme: QuantScheme
    lambda_grid: tuple[float, ...] = LAMBDA_GRID_GBS_DEFAULT
    gamma_grid: tuple[float, ...] = GAMMA_GRID_DEFAULT
    block_size: int = 128
    saliency_kind: str = "gbs"  # "identity" | "gbs"
    subset_fraction: float = 0.25
    subset_min: int = 32
    val_fraction: float = 0.25

    def __post_init__(self):
        lgrid = tuple(float(v) for v in self.lambda_grid)
        ggrid = tuple(float(v) for v in self.gamma_grid)
        if not lgrid or any(v < 0.0 for v in lgrid):
            raise ValueError("lambda_grid must be nonempty with non-negative entries")
        if any(b <= a for a, b in zip(lgrid, lgrid[1:])):
            raise ValueError("lambda_grid must be strictly increasing")
        if not ggrid or any(not 0.0 <= v <= 1.0 for v in ggrid):
            raise ValueError("gamma_grid entries must lie in [0, 1]")
        if any(b <= a for a, b in zip(ggrid, ggrid[1:])):
            raise ValueError("gamma_grid must be strictly increasing")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.saliency_kind not in ("identity", "gbs"):
            raise ValueError(f"unknown saliency kind {self.saliency_kind!r}")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ValueError("subset_fraction must lie in (0, 1]")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        object.__setattr__(self, "lambda_grid", lgrid)
        object.__setattr__(self, "gamma_grid", ggrid)


@dataclass(frozen=True)
class CurvatureFactor:
    g: np.ndarray
    m: TriangularFactor
    lam: float
    h_bar: float
    jitter_used: float


def h_bar_of_gram(g0: np.ndarray) -> float:
    return float(np.mean(np.diag(g0)))


def _curvature_from_gram(g0: np.ndarray, profile: SaliencyProfile, lam: float, context: str) -> CurvatureFactor:
    h_bar = h_bar_of_gram(g0)
    if lam < 0.0:
        raise ValueError("lambda must be non-negative")
    if lam == 0.0:
        g = g0
    else:
        if profile.kind == "identity":
            if not h_bar > 0.0:
                raise ValueError("cannot scale-normalize: mean Gram diagonal is not positive")
            profile = scale_normalize_gbs(np.ones(g0.shape[0]), h_bar)
        g = g0 + np.diag(lam * profile.values**2)
    m = chol_upper_of_inverse(g, context=context)
    return CurvatureFactor(g=g, m=m, lam=float(lam), h_bar=h_bar, jitter_used=m.jitter)


def build_curvature(x, profile: SaliencyProfile, lam: float, *, context: str = "curvature") -> CurvatureFactor:
    """G = XXᵀ + λ·diag(s²) and its inverse-Cholesky factor.

    The profile must already be scale-normalized; an identity profile is
    normalized internally with the mean Gram diagonal, so identity + λ is
    plain isotropic damping of magnitude λ·h̄.
    """
    x = as_matrix(x, "X")
    if profile.values.shape[0] != x.shape[0]:
        raise ValueError("profile length does not match input channels")
    return _curvature_from_gram(gram(x), profile, lam, context)


def run_gbs(w, curv: CurvatureFactor, scheme: QuantScheme, block_size: int = 128) -> QuantizedLayer:
    """Blockwise sequential quantization with closed-form compensation."""
    w = as_matrix(w, "W")
    d_out, d_in = w.shape
    m = curv.m.data
    if m.shape[0] != d_in:
        raise ValueError(f"curvature dim {m.shape[0]} does not match d_in {d_in}")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")

    slices = scheme.group_slices(d_in)
    grp_idx = scheme.group_index(d_in)
    codes = np.empty((d_out, d_in), dtype=np.int32)
    qhat = np.empty_like(w)
    scales = np.empty((d_out, len(slices)), dtype=np.float64)
    zps = np.empty((d_out, len(slices)), dtype=np.int32)
    ready = np.zeros(len(slices), dtype=bool)

    u = w.copy()
    for i in range(0, d_in, block_size):
        i_end = min(i + block_size, d_in)
        e_blk = np.empty((d_out, i_end - i))
        for j in range(i, i_end):
            gi = int(grp_idx[j])
            if not ready[gi]:
                if scheme.per_tensor:
                    s1, z1 = group_params(u.reshape(1, -1), scheme)
                    scales[:, gi] = s1[0]
                    zps[:, gi] = z1[0]
                else:
                    sl = slices[gi]
                    g_slice = u[:, sl]
                    if sl.stop > i_end and j > i:
                        # group columns past the block boundary are missing the
                        # pending updates from columns [i, j); fold them in so
                        # group parameters are block-size independent
                        g_slice = g_slice.copy()
                        g_slice[:, i_end - sl.start :] -= e_blk[:, : j - i] @ m[i:j, i_end : sl.stop]
                    scales[:, gi], zps[:, gi] = group_params(g_slice, scheme)
                ready[gi] = True
            s = scales[:, gi]
            z = zps[:, gi]
            c = quantize_with_params(u[:, j], s, z, scheme)
            qcol = dequantize_with_params(c, s, z)
            codes[:, j] = c
            qhat[:, j] = qcol
            e = (u[:, j] - qcol) / m[j, j]
            e_blk[:, j - i] = e
            u[:, j:i_end] -= np.outer(e, m[j, j:i_end])
        if i_end < d_in:
            u[:, i_end:] -= e_blk @ m[i:i_end, i_end:]
    return QuantizedLayer(codes=codes, scales=scales, zero_points=zps, dequantized=qhat, scheme=scheme)


def profile_for(w, x, kind: str, gamma: float | None) -> SaliencyProfile:
    """Scale-normalized saliency profile for the given weights/activations."""
    if kind == "identity":
        return identity_profile(np.asarray(w).shape[1])
    if gamma is None:
        raise ValueError("gamma is required for the gbs saliency profile")
    stats = channel_stats(w, x)
    raw = saliency_vector_gbs(stats, gamma)
    return scale_normalize_gbs(raw, h_bar_of_gram(gram(x)), gamma=gamma)


class HparamSelection(NamedTuple):
    lam: float
    gamma: float | None
    layer: QuantizedLayer
    jitter_used: float
    val_table: tuple[tuple[float, float | None, float], ...]


def select_hparams_gbs(w, batch: CalibrationBatch, config: GbsConfig) -> HparamSelection:
    """Search (λ, γ) on a contiguous low-index channel subset, then apply the
    winner to the full layer.

    Each pair is scored by reconstruction error on the validation split
    restricted to the subset channels; ties go to the smallest λ, then the
    smallest γ. The winning pair is re-run on the full layer with the full
    training split.
    """
    w = as_matrix(w, "W")
    d_in = w.shape[1]
    if batch.d_in != d_in:
        raise ValueError("calibration batch does not match layer input width")
    k = min(d_in, max(config.subset_min, math.ceil(config.subset_fraction * d_in)))
    w_sub = w[:, :k]
    x_train_sub = batch.train[:k, :]
    x_val_sub = batch.val[:k, :]
    gammas: tuple[float | None, ...]
    gammas = config.gamma_grid if config.saliency_kind == "gbs" else (None,)

    g0_sub = gram(x_train_sub)
    best: tuple[float, float | None] | None = None
    best_v = np.inf
    table: list[tuple[float, float | None, float]] = []
    for lam in config.lambda_grid:
        for gamma in gammas:
            prof = profile_for(w_sub, x_train_sub, config.saliency_kind, gamma)
            curv = _curvature_from_gram(g0_sub, prof, lam, context="hparam subset")
            ql = run_gbs(w_sub, curv, config.scheme, config.block_size)
            v = recon_loss(w_sub, ql.dequantized, x_val_sub)
            table.append((lam, gamma, v))
            if v < best_v:
                best, best_v = (lam, gamma), v
    assert best is not None

    lam, gamma = best
    prof = profile_for(w, batch.train, config.saliency_kind, gamma)
    curv = build_curvature(batch.train, prof, lam, context="full layer")
    layer = run_gbs(w, curv, config.scheme, config.block_size)
    return HparamSelection(lam=lam, gamma=gamma, layer=layer, jitter_used=curv.jitter_used, val_table=tuple(table))
