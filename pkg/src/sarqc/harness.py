"""Synthetic layers, calibration batches, and desk-scale experiments.

`sweep_lambda` traces the drift/reconstruction trade-off of a solver over a
regularization grid with held-out risk per point; `calib_size_study` compares
the λ = 0 baseline against hyperparameter-selected runs as the calibration
set shrinks under a covariance shift.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, replace

import numpy as np

from .calibration import CalibrationBatch, split_batch
from .gbs import GbsConfig, build_curvature, profile_for, run_gbs, select_hparams_gbs
from .gs import GsConfig, run_gs
from .linalg import as_matrix
from .objective import LossBreakdown, recon_loss, sar_loss, weight_drift
from .quantizer import QuantizedLayer, QuantScheme
from .saliency import SaliencyProfile, channel_stats, identity_profile, saliency_vector_gs
from .seeds import substream

UNCLIPPED = 1e18  # column-norm cap large enough to never bind


@dataclass(frozen=True)
class SynthLayerSpec:
    d_out: int
    d_in: int
    outlier_channels: int = 0
    outlier_scale: float = 1.0
    weight_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d_out < 1 or self.d_in < 1:
            raise ValueError("layer dimensions must be positive")
        if not 0 <= self.outlier_channels <= self.d_in:
            raise ValueError("outlier_channels must not exceed d_in")
        if self.outlier_scale < 1.0 or self.weight_std <= 0.0:
            raise ValueError("scales must be positive (outlier_scale >= 1)")


def outlier_channel_indices(spec: SynthLayerSpec) -> np.ndarray:
    """Channels designated as outliers, fixed by the spec seed."""
    if spec.outlier_channels == 0:
        return np.empty(0, dtype=np.int64)
    rng = substream(spec.seed, "layer-outliers")
    return np.sort(rng.choice(spec.d_in, size=spec.outlier_channels, replace=False))


def gen_layer(spec: SynthLayerSpec) -> np.ndarray:
    """Gaussian weight matrix with designated channels scaled up."""
    rng = substream(spec.seed, "layer-weights")
    w = rng.normal(0.0, spec.weight_std, size=(spec.d_out, spec.d_in))
    idx = outlier_channel_indices(spec)
    if idx.size:
        w[:, idx] *= spec.outlier_scale
    return w


def activation_factor(d_in: int, rank: int, strength: float, seed: int) -> np.ndarray:
    """Fixed low-rank mixing for correlated activations, covariance I + FFᵀ.

    Derived from the layer seed so calibration and held-out batches share
    the same base distribution.
    """
    if rank < 1 or strength <= 0.0:
        raise ValueError("rank must be >= 1 and strength positive")
    rng = substream(seed, "cov-factor")
    return strength * rng.standard_normal((d_in, rank)) / math.sqrt(rank)


def gen_calibration(
    d_in: int,
    n: int,
    m_x: float,
    seed: int,
    *,
    val_fraction: float = 0.25,
    cov_diag: np.ndarray | None = None,
    cov_factor: np.ndarray | None = None,
    stream: str = "calibration",
) -> CalibrationBatch:
    """I.i.d. Gaussian columns, rescaled so every column 2-norm is <= m_x.

    `cov_factor` adds shared low-rank directions (columns drawn from
    N(0, I + FFᵀ)); `cov_diag` then scales the per-channel standard
    deviations, which is how the scarcity study models calibration shift.
    """
    if n < 2:
        raise ValueError("calibration batch needs at least 2 columns")
    if m_x <= 0.0:
        raise ValueError("m_x must be positive")
    rng = substream(seed, stream)
    x = rng.standard_normal((d_in, n))
    if cov_factor is not None:
        f = np.asarray(cov_factor, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] != d_in:
            raise ValueError("cov_factor must have d_in rows")
        x += f @ rng.standard_normal((f.shape[1], n))
    if cov_diag is not None:
        cd = np.asarray(cov_diag, dtype=np.float64)
        if cd.shape != (d_in,) or np.any(cd <= 0.0):
            raise ValueError("cov_diag must be a positive vector of length d_in")
        x *= np.sqrt(cd)[:, None]
    norms = np.linalg.norm(x, axis=0)
    x *= np.minimum(1.0, m_x / np.maximum(norms, 1e-300))[None, :]
    return split_batch(x, val_fraction)


def evaluate(w, layer: QuantizedLayer, x_heldout, profile: SaliencyProfile | None = None):
    """Losses of a quantized layer on a held-out batch.

    Returns (LossBreakdown, heldout_risk) where heldout_risk is the mean
    squared output deviation per held-out column.
    """
    w = as_matrix(w, "W")
    x = as_matrix(x_heldout, "X_heldout")
    if profile is None:
        profile = identity_profile(w.shape[1])
    recon = recon_loss(w, layer.dequantized, x)
    losses = LossBreakdown(
        recon=recon,
        sar=sar_loss(w, layer.dequantized, profile),
        drift=weight_drift(w, layer.dequantized),
    )
    return losses, recon / x.shape[1]


@dataclass(frozen=True)
class SweepRecord:
    lam: float
    gamma: float | None
    recon: float
    sar: float
    drift: float
    heldout_risk: float
    method: str
    seed: int


def _solve_at_lambda(
    w,
    batch: CalibrationBatch,
    scheme: QuantScheme,
    method: str,
    lam: float,
    gamma: float,
    block_size: int,
):
    """One solver run at fixed regularization; returns (layer, profile used)."""
    if method == "gs":
        cfg = GsConfig(scheme=scheme, lam=lam)
        res = run_gs(w, batch.train, cfg)
        return res.layer, saliency_vector_gs(channel_stats(w, batch.train))
    if method == "gbs":
        prof = profile_for(w, batch.train, "gbs", gamma)
        curv = build_curvature(batch.train, prof, lam)
        return run_gbs(w, curv, scheme, block_size), prof
    raise ValueError(f"unknown sweep method {method!r}")


def sweep_lambda(
    spec: SynthLayerSpec,
    scheme: QuantScheme,
    method: str,
    lambda_grid,
    seeds,
    *,
    n_calib: int = 192,
    n_heldout: int = 512,
    m_x: float = UNCLIPPED,
    gamma: float = 0.5,
    block_size: int = 128,
    val_fraction: float = 0.25,
    corr_rank: int = 8,
    corr_strength: float = 2.0,
) -> list[SweepRecord]:
    """Quantize at every (seed, λ) and record the trade-off plus held-out
    risk; output is sorted by (seed, λ).

    recon/sar are the calibration-objective values the solver trades off
    (held-out reconstruction is heldout_risk times the batch size, so
    recording it twice would be redundant); drift is data-free. Activations
    share seeded low-rank correlated directions between the calibration and
    held-out batches.
    """
    if len(tuple(lambda_grid)) == 0:
        raise ValueError("lambda grid must be nonempty")
    records = []
    for seed in seeds:
        layer_spec = replace(spec, seed=int(seed))
        w = gen_layer(layer_spec)
        factor = None
        if corr_strength > 0.0:
            factor = activation_factor(spec.d_in, corr_rank, corr_strength, int(seed))
        batch = gen_calibration(
            spec.d_in, n_calib, m_x, int(seed), val_fraction=val_fraction, cov_factor=factor
        )
        heldout = gen_calibration(
            spec.d_in, n_heldout, m_x, int(seed), cov_factor=factor, stream="heldout"
        )
        for lam in lambda_grid:
            layer, prof = _solve_at_lambda(w, batch, scheme, method, float(lam), gamma, block_size)
            _, risk = evaluate(w, layer, heldout.x, prof)
            records.append(
                SweepRecord(
                    lam=float(lam),
                    gamma=gamma if method == "gbs" else None,
                    recon=recon_loss(w, layer.dequantized, batch.train),
                    sar=sar_loss(w, layer.dequantized, prof),
                    drift=weight_drift(w, layer.dequantized),
                    heldout_risk=risk,
                    method=method,
                    seed=int(seed),
                )
            )
    records.sort(key=lambda r: (r.seed, r.lam))
    return records


def calib_size_study(
    spec: SynthLayerSpec,
    scheme: QuantScheme,
    sizes,
    *,
    seeds=range(20),
    n_heldout: int = 1024,
    m_x: float = UNCLIPPED,
    block_size: int = 128,
    cov_shift: float = 0.3,
    corr_rank: int = 8,
    corr_strength: float = 2.0,
) -> list[dict]:
    """Median held-out risk of the λ = 0 baseline vs hyperparameter-selected
    runs for each calibration size.

    Calibration columns are drawn from a per-channel perturbed covariance
    (diagonal scaled by 1 + u, u uniform in [-cov_shift, cov_shift]) while
    the held-out batch uses the base covariance.
    """
    sizes = list(sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be ascending")
    seeds = list(seeds)
    rows = []
    for size in sizes:
        base_risks = []
        sel_risks = []
        for seed in seeds:
            layer_spec = replace(spec, seed=int(seed))
            w = gen_layer(layer_spec)
            factor = None
            if corr_strength > 0.0:
                factor = activation_factor(spec.d_in, corr_rank, corr_strength, int(seed))
            u = substream(int(seed), "covshift", size).uniform(-cov_shift, cov_shift, spec.d_in)
            batch = gen_calibration(
                spec.d_in,
                int(size),
                m_x,
                int(seed),
                cov_diag=1.0 + u,
                cov_factor=factor,
                stream=f"calib-{size}",
            )
            heldout = gen_calibration(
                spec.d_in, n_heldout, m_x, int(seed), cov_factor=factor, stream="heldout"
            )

            # both methods solve on the same training columns
            base_curv = build_curvature(batch.train, identity_profile(spec.d_in), 0.0)
            base_layer = run_gbs(w, base_curv, scheme, block_size)
            _, base_risk = evaluate(w, base_layer, heldout.x)
            base_risks.append(base_risk)

            cfg = GbsConfig(scheme=scheme, block_size=block_size)
            sel = select_hparams_gbs(w, batch, cfg)
            _, sel_risk = evaluate(w, sel.layer, heldout.x)
            sel_risks.append(sel_risk)
        rows.append(
            {
                "size": int(size),
                "baseline_median": statistics.median(base_risks),
                "selected_median": statistics.median(sel_risks),
            }
        )
    return rows
