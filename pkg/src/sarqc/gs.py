"""Grid search over channel scaling factors with a regularized selection rule.

Each candidate scales the input channels, quantizes the scaled weights, and
divides the scaling back out of the dequantized matrix. Candidates are scored
by min-max-normalized reconstruction error plus λ times the normalized
saliency-weighted drift; λ itself can be picked on a held-out validation
split. With λ = 0 the selection reduces to the plain activation-aware
reconstruction argmin.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .calibration import CalibrationBatch
from .linalg import NumericalFailure, as_matrix
from .objective import LossBreakdown, joint_score, minmax_normalize, recon_loss, sar_loss, weight_drift
from .quantizer import QuantizedLayer, QuantScheme, quantize_matrix
from .saliency import ChannelStats, channel_stats, identity_profile, saliency_vector_gs, scaling_vector_gs

ALPHA_GRID_DEFAULT = tuple(k / 20 for k in range(21))
LAMBDA_GRID_GS_DEFAULT = tuple(k / 10 for k in range(1, 11))


class SolverFailure(RuntimeError):
    """Every candidate on the grid failed numerically."""


@dataclass(frozen=True)
class GsConfig:
    scheme: QuantScheme
    alpha_grid: tuple[float, ...] = ALPHA_GRID_DEFAULT
    lam: float = 0.0
    lambda_grid: tuple[float, ...] = LAMBDA_GRID_GS_DEFAULT
    saliency_kind: str = "gs"  # "identity" | "gs"
    val_fraction: float = 0.25

    def __post_init__(self):
        grid = tuple(float(a) for a in self.alpha_grid)
        if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("alpha_grid needs >= 2 strictly increasing entries")
        if any(not 0.0 <= a <= 1.0 for a in grid):
            raise ValueError("alpha_grid entries must lie in [0, 1]")
        lgrid = tuple(float(v) for v in self.lambda_grid)
        if not lgrid or any(v < 0.0 for v in lgrid):
            raise ValueError("lambda_grid must be nonempty with non-negative entries")
        if any(b <= a for a, b in zip(lgrid, lgrid[1:])):
            raise ValueError("lambda_grid must be strictly increasing")
        if self.lam < 0.0:
            raise ValueError("lambda must be non-negative")
        if self.saliency_kind not in ("identity", "gs"):
            raise ValueError(f"unknown saliency kind {self.saliency_kind!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        object.__setattr__(self, "alpha_grid", grid)
        object.__setattr__(self, "lambda_grid", lgrid)


@dataclass
class GsResult:
    chosen_alpha: float
    chosen_lambda: float
    layer: QuantizedLayer
    losses: list[LossBreakdown]
    selected_index: int
    val_losses: list[tuple[float, float]] | None = None


def candidate(w, stats: ChannelStats, alpha: float, scheme: QuantScheme) -> QuantizedLayer:
    """Quantize W with channel scaling s(α) folded in and divided back out."""
    w = as_matrix(w, "W")
    s = scaling_vector_gs(stats, alpha)
    scaled = quantize_matrix(w * s[None, :], scheme)
    deq = scaled.dequantized / s[None, :]
    return QuantizedLayer(
        codes=scaled.codes,
        scales=scaled.scales,
        zero_points=scaled.zero_points,
        dequantized=deq,
        scheme=scheme,
        channel_scale=s,
    )


def select_joint(recon_raw, sar_raw, lam: float):
    """Normalize both loss vectors over the grid and pick the argmin of the
    joint score; ties resolve to the lowest grid index."""
    recon_n = minmax_normalize(recon_raw)
    sar_n = minmax_normalize(sar_raw)
    joint = joint_score(recon_n, sar_n, lam)
    return int(np.argmin(joint)), recon_n, sar_n, joint


def run_gs(w, x, config: GsConfig) -> GsResult:
    """Full grid pass at a fixed λ over the training columns x."""
    w = as_matrix(w, "W")
    x = as_matrix(x, "X")
    stats = channel_stats(w, x)
    if config.saliency_kind == "identity":
        profile = identity_profile(w.shape[1])
    else:
        profile = saliency_vector_gs(stats)

    layers: list[QuantizedLayer | None] = []
    raw: list[tuple[float, float, float] | None] = []
    for alpha in config.alpha_grid:
        try:
            ql = candidate(w, stats, alpha, config.scheme)
        except NumericalFailure:
            layers.append(None)
            raw.append(None)
            continue
        layers.append(ql)
        raw.append(
            (
                recon_loss(w, ql.dequantized, x),
                sar_loss(w, ql.dequantized, profile),
                weight_drift(w, ql.dequantized),
            )
        )

    valid = [i for i, r in enumerate(raw) if r is not None]
    if not valid:
        raise SolverFailure("every scaling candidate failed numerically")
    recon_raw = np.array([raw[i][0] for i in valid])
    sar_raw = np.array([raw[i][1] for i in valid])
    if len(valid) == 1:
        sel_local, recon_n, sar_n, joint = 0, np.zeros(1), np.zeros(1), np.zeros(1)
    else:
        sel_local, recon_n, sar_n, joint = select_joint(recon_raw, sar_raw, config.lam)
    selected = valid[sel_local]

    losses = []
    for k, i in enumerate(valid):
        r, s_, d = raw[i]
        losses.append(LossBreakdown(recon=r, sar=s_, drift=d, joint_normalized=float(joint[k])))
    return GsResult(
        chosen_alpha=config.alpha_grid[selected],
        chosen_lambda=config.lam,
        layer=layers[selected],
        losses=losses,
        selected_index=selected,
    )


def select_lambda_gs(w, batch: CalibrationBatch, config: GsConfig) -> GsResult:
    """Pick λ from the grid by reconstruction error on the validation split;
    ties go to the smallest λ."""
    w = as_matrix(w, "W")
    best: GsResult | None = None
    best_v = np.inf
    table: list[tuple[float, float]] = []
    for lam in config.lambda_grid:
        res = run_gs(w, batch.train, replace(config, lam=lam))
        v = recon_loss(w, res.layer.dequantized, batch.val)
        table.append((lam, v))
        if v < best_v:
            best, best_v = res, v
    assert best is not None
    best.val_losses = table
    return best
