"""Independent brute-force verifiers for the solver machinery.

Everything here takes the dumb-but-obviously-correct route: reduced linear
systems instead of factor tricks, exhaustive enumeration over product grids,
a plain unblocked sequential reference pass, and Monte Carlo coverage of the
finite-class concentration bound. The production solvers are checked against
these paths, never the other way around.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import as_matrix, chol_upper_of_inverse, gram, solve_spd, spd_inverse
from .quantizer import (
    QuantizedLayer,
    QuantScheme,
    dequantize_with_params,
    group_params,
    quantize_with_params,
)
from .seeds import substream


class PreconditionError(ValueError):
    """The claimed constrained minimizer is not actually one."""


# ---------------------------------------------------------------------------
# Single-coordinate compensation


def oracle_row_update(w_row, g, j: int, qhat_j: float):
    """Exact constrained minimizer of ½ΔᵀGΔ subject to Δ_j = -(w_j - qhat_j).

    Independent path: eliminate coordinate j and solve the reduced SPD
    system for the remaining coordinates. Returns (delta, objective).
    """
    w = np.asarray(w_row, dtype=np.float64)
    g = as_matrix(g, "G")
    d = w.shape[0]
    if g.shape != (d, d):
        raise ValueError("G must be square with the row length")
    if not 0 <= j < d:
        raise ValueError(f"coordinate {j} out of range")
    e = float(w[j] - qhat_j)
    delta = np.zeros(d)
    delta[j] = -e
    rest = [k for k in range(d) if k != j]
    if rest:
        sub = g[np.ix_(rest, rest)]
        delta[rest] = e * solve_spd(sub, g[rest, j], context="reduced system")
    obj = 0.5 * float(delta @ g @ delta)
    return delta, obj


def closed_form_row_update(w_row, g, j: int, qhat_j: float, *, flip_sign: bool = False):
    """Inverse-curvature closed form: Δ = -(e / (G⁻¹)_jj) · (G⁻¹)_:,j.

    `flip_sign` is a test-only fault hook that negates the update.
    """
    w = np.asarray(w_row, dtype=np.float64)
    g = as_matrix(g, "G")
    d = w.shape[0]
    if not 0 <= j < d:
        raise ValueError(f"coordinate {j} out of range")
    e = float(w[j] - qhat_j)
    ginv = spd_inverse(g, context="closed form")
    sign = -1.0 if flip_sign else 1.0
    delta = -sign * (e / ginv[j, j]) * ginv[:, j]
    obj = e * e / (2.0 * ginv[j, j])
    return delta, obj


# ---------------------------------------------------------------------------
# Exhaustive discrete search


def _product_grid(grids: Sequence[Sequence[float]]) -> np.ndarray:
    total = 1
    for grid in grids:
        if len(grid) == 0:
            raise ValueError("empty candidate grid")
        total *= len(grid)
    if total > 10**6:
        raise ValueError(f"product grid too large: {total} > 1e6")
    return np.array(list(itertools.product(*grids)), dtype=np.float64)


def exhaustive_quant_min(w_row, g, grids: Sequence[Sequence[float]]):
    """Global minimizer of ½ΔᵀGΔ over the per-coordinate product grid."""
    w = np.asarray(w_row, dtype=np.float64)
    if w.shape[0] > 4:
        raise ValueError("exhaustive search is limited to rows of length <= 4")
    g = as_matrix(g, "G")
    if g.shape != (w.shape[0], w.shape[0]) or len(grids) != w.shape[0]:
        raise ValueError("G / grids do not match the row length")
    combos = _product_grid(grids)
    deltas = combos - w[None, :]
    objs = 0.5 * np.einsum("nd,de,ne->n", deltas, g, deltas)
    k = int(np.argmin(objs))
    return deltas[k], float(objs[k])


def exhaustive_tradeoff_sweep(w_row, gram_mat, sal_sq, grids, lambdas):
    """Exact scalarized minimizers over a product grid for each λ.

    Returns one (recon, sar) pair per λ where recon = δᵀ(XXᵀ)δ and
    sar = Σ s_j² δ_j². Ties resolve to the first grid point in enumeration
    order.
    """
    w = np.asarray(w_row, dtype=np.float64)
    gm = as_matrix(gram_mat, "gram")
    s2 = np.asarray(sal_sq, dtype=np.float64)
    combos = _product_grid(grids)
    deltas = combos - w[None, :]
    recon = np.einsum("nd,de,ne->n", deltas, gm, deltas)
    sar = (deltas * deltas) @ s2
    out = []
    for lam in lambdas:
        k = int(np.argmin(recon + lam * sar))
        out.append((float(recon[k]), float(sar[k])))
    return out


# ---------------------------------------------------------------------------
# Supportedness of constrained minimizers on a finite frontier


@dataclass(frozen=True)
class FiniteCandidate:
    id: str
    risk: float
    dist: float

    def __post_init__(self):
        if not (math.isfinite(self.risk) and math.isfinite(self.dist)):
            raise ValueError("risk and dist must be finite")
        if self.risk < 0.0 or self.dist < 0.0:
            raise ValueError("risk and dist must be non-negative")


@dataclass(frozen=True)
class LambdaInterval:
    lambda_min: float
    lambda_max: float  # may be +inf
    supported: bool


def _find(candidates: Sequence[FiniteCandidate], chosen_id: str) -> FiniteCandidate:
    for c in candidates:
        if c.id == chosen_id:
            return c
    raise ValueError(f"chosen id {chosen_id!r} not among candidates")


def lambda_interval(candidates: Sequence[FiniteCandidate], chosen_id: str, r_sq: float) -> LambdaInterval:
    """Admissible penalty-strength interval for a fixed constrained minimizer.

    Farther candidates impose lower bounds, closer candidates upper bounds;
    empty sets follow the -inf / +inf conventions.
    """
    chosen = _find(candidates, chosen_id)
    if chosen.dist > r_sq:
        raise PreconditionError(f"chosen candidate violates dist <= {r_sq}")
    for c in candidates:
        if c.dist <= r_sq and c.risk < chosen.risk:
            raise PreconditionError(f"candidate {c.id!r} is feasible with lower risk")
    lower = [
        (chosen.risk - c.risk) / (c.dist - chosen.dist)
        for c in candidates
        if c.dist > chosen.dist
    ]
    upper = [
        (c.risk - chosen.risk) / (chosen.dist - c.dist)
        for c in candidates
        if c.dist < chosen.dist
    ]
    lam_min = max(0.0, max(lower)) if lower else 0.0
    lam_max = min(upper) if upper else math.inf
    return LambdaInterval(lambda_min=lam_min, lambda_max=lam_max, supported=lam_min <= lam_max)


PENALIZED_TIE_TOL = 1e-12


def penalized_argmin(candidates: Sequence[FiniteCandidate], lam: float, tol: float = PENALIZED_TIE_TOL) -> set[str]:
    """Ids attaining the minimum of risk + λ·dist, with ties within tol."""
    scores = {c.id: c.risk + lam * c.dist for c in candidates}
    best = min(scores.values())
    return {cid for cid, s in scores.items() if s <= best + tol}


@dataclass
class SupportednessReport:
    interval: LambdaInterval
    probes: list[float]
    passed: bool
    counterexample: dict | None = None


def verify_supportedness(
    candidates: Sequence[FiniteCandidate],
    chosen_id: str,
    r_sq: float,
    lambda_probe_grid: Sequence[float],
) -> SupportednessReport:
    """Check membership of the chosen candidate in the penalized argmin set
    against the interval prediction, probe by probe."""
    interval = lambda_interval(candidates, chosen_id, r_sq)
    probes = [float(v) for v in lambda_probe_grid]
    for lam in probes:
        if lam < 0.0 or not math.isfinite(lam):
            raise ValueError("probe values must be finite and non-negative")
        member = chosen_id in penalized_argmin(candidates, lam)
        expected = interval.lambda_min <= lam <= interval.lambda_max
        if member != expected:
            return SupportednessReport(
                interval=interval,
                probes=probes,
                passed=False,
                counterexample={
                    "lambda": lam,
                    "member": member,
                    "expected": expected,
                    "interval": [interval.lambda_min, interval.lambda_max],
                    "candidates": [(c.id, c.risk, c.dist) for c in candidates],
                    "chosen": chosen_id,
                    "r_sq": r_sq,
                },
            )
    return SupportednessReport(interval=interval, probes=probes, passed=True)


# ---------------------------------------------------------------------------
# Finite-class concentration coverage


def hoeffding_bound(r: float, m_x: float, class_size: int, n: int, delta: float) -> float:
    """Uniform deviation bound R²·M_X²·sqrt(log(2K/δ) / (2n))."""
    if r < 0.0 or m_x <= 0.0 or class_size < 1 or n < 1 or not 0.0 < delta < 1.0:
        raise ValueError("invalid bound parameters")
    return r * r * m_x * m_x * math.sqrt(math.log(2.0 * class_size / delta) / (2.0 * n))


def _clip_columns(x: np.ndarray, m_x: float) -> np.ndarray:
    norms = np.linalg.norm(x, axis=0)
    factor = np.minimum(1.0, m_x / np.maximum(norms, 1e-300))
    return x * factor[None, :]


@dataclass
class CoverageReport:
    trials: int
    violations: int
    violation_rate: float
    bound: float
    threshold: float
    passed: bool


def hoeffding_check(
    d_in: int,
    r: float,
    m_x: float,
    n: int,
    delta: float,
    class_size: int,
    trials: int,
    *,
    d_out: int = 4,
    heldout_factor: int = 50,
    seed: int = 0,
) -> CoverageReport:
    """Monte Carlo coverage of the uniform deviation bound over a random
    finite class of weight perturbations with bounded Frobenius norm.

    The true risk has no closed form for norm-clipped Gaussian inputs, so it
    is itself estimated on a held-out sample of >= heldout_factor·n columns;
    the pass threshold carries binomial slack for that estimator noise.
    """
    if d_in < 1 or d_out < 1 or r < 0.0 or m_x <= 0.0 or n < 2 or class_size < 1:
        raise ValueError("invalid check parameters")
    if trials < 1000:
        raise ValueError("coverage estimate needs at least 1000 trials")
    if heldout_factor < 50:
        raise ValueError("held-out sample must be at least 50x the calibration size")
    bound = hoeffding_bound(r, m_x, class_size, n, delta)
    m_held = heldout_factor * n
    violations = 0
    for t in range(trials):
        rng = substream(seed, "hoeffding", t)
        deltas = rng.standard_normal((class_size, d_out * d_in))
        norms = np.linalg.norm(deltas, axis=1)
        deltas *= np.minimum(1.0, r / np.maximum(norms, 1e-300))[:, None]
        stacked = deltas.reshape(class_size * d_out, d_in)

        x_cal = _clip_columns(rng.standard_normal((d_in, n)), m_x)
        x_held = _clip_columns(rng.standard_normal((d_in, m_held)), m_x)

        y_cal = stacked @ x_cal
        y_held = stacked @ x_held
        risk_cal = (y_cal * y_cal).reshape(class_size, d_out, n).sum(axis=1).mean(axis=1)
        risk_held = (y_held * y_held).reshape(class_size, d_out, m_held).sum(axis=1).mean(axis=1)
        if np.max(np.abs(risk_cal - risk_held)) > bound:
            violations += 1
    rate = violations / trials
    threshold = delta + 3.0 * math.sqrt(delta * (1.0 - delta) / trials)
    return CoverageReport(
        trials=trials,
        violations=violations,
        violation_rate=rate,
        bound=bound,
        threshold=threshold,
        passed=rate <= threshold,
    )


# ---------------------------------------------------------------------------
# Plain sequential reference pass (unblocked)


def greedy_sequential_reference(w, g, scheme: QuantScheme) -> QuantizedLayer:
    """Column-by-column quantize-and-compensate pass with no blocking.

    Transliterates the sequential pseudo-code directly: quantize the current
    working column, divide the error by the factor diagonal, subtract the
    outer product with the factor row from everything to the right. Used as
    the reference the blocked solver must reproduce bit-for-bit at λ = 0.
    """
    w = as_matrix(w, "W")
    g = as_matrix(g, "G")
    d_out, d_in = w.shape
    m = chol_upper_of_inverse(g, context="reference").data

    slices = scheme.group_slices(d_in)
    grp_idx = scheme.group_index(d_in)
    codes = np.empty((d_out, d_in), dtype=np.int32)
    qhat = np.empty_like(w)
    scales = np.empty((d_out, len(slices)), dtype=np.float64)
    zps = np.empty((d_out, len(slices)), dtype=np.int32)
    ready = np.zeros(len(slices), dtype=bool)

    u = w.copy()
    for j in range(d_in):
        gi = int(grp_idx[j])
        if not ready[gi]:
            if scheme.per_tensor:
                s1, z1 = group_params(u.reshape(1, -1), scheme)
                scales[:, gi] = s1[0]
                zps[:, gi] = z1[0]
            else:
                scales[:, gi], zps[:, gi] = group_params(u[:, slices[gi]], scheme)
            ready[gi] = True
        s = scales[:, gi]
        z = zps[:, gi]
        c = quantize_with_params(u[:, j], s, z, scheme)
        qcol = dequantize_with_params(c, s, z)
        codes[:, j] = c
        qhat[:, j] = qcol
        e = (u[:, j] - qcol) / m[j, j]
        u[:, j:] -= np.outer(e, m[j, j:])
    return QuantizedLayer(codes=codes, scales=scales, zero_points=zps, dequantized=qhat, scheme=scheme)


# ---------------------------------------------------------------------------
# Named verification suites (used by the CLI and the acceptance tests)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    trials: int
    details: dict = field(default_factory=dict)
    counterexample: dict | None = None


def run_compensation_suite(trials: int, seed: int, d_max: int = 8, *, flip_sign: bool = False) -> SuiteResult:
    """Closed-form update vs reduced-system oracle on random SPD instances."""
    worst_delta = 0.0
    worst_obj = 0.0
    for t in range(trials):
        rng = substream(seed, "compensation", t)
        d = int(rng.integers(2, d_max + 1))
        a = rng.standard_normal((d, d))
        g = a @ a.T + (0.5 + rng.uniform()) * np.eye(d)
        w = rng.standard_normal(d)
        j = int(rng.integers(d))
        qhat = w[j] + rng.uniform(-0.5, 0.5)
        delta_o, obj_o = oracle_row_update(w, g, j, qhat)
        delta_c, obj_c = closed_form_row_update(w, g, j, qhat, flip_sign=flip_sign)
        err_d = float(np.max(np.abs(delta_o - delta_c)))
        err_o = abs(obj_o - obj_c) / (1.0 + abs(obj_o))
        worst_delta = max(worst_delta, err_d)
        worst_obj = max(worst_obj, err_o)
        if err_d > 1e-9 or err_o > 1e-9:
            return SuiteResult(
                name="compensation",
                passed=False,
                trials=trials,
                details={"max_delta_err": worst_delta, "max_obj_rel_err": worst_obj},
                counterexample={
                    "trial": t,
                    "G": g.tolist(),
                    "w": w.tolist(),
                    "j": j,
                    "qhat": float(qhat),
                    "delta_err": err_d,
                    "obj_rel_err": err_o,
                },
            )
    return SuiteResult(
        name="compensation",
        passed=True,
        trials=trials,
        details={"max_delta_err": worst_delta, "max_obj_rel_err": worst_obj},
    )


WORKED_FRONTIER = (
    FiniteCandidate("A", 1.0, 4.0),
    FiniteCandidate("B", 0.5, 9.0),
    FiniteCandidate("C", 2.0, 1.0),
)


def _probes_for(interval: LambdaInterval) -> list[float]:
    lo, hi = interval.lambda_min, interval.lambda_max
    probes = [0.0, lo]
    if lo > 0.0:
        probes.append(0.5 * lo)
    if math.isfinite(hi):
        probes.append(hi)
        if interval.supported:
            probes.append(0.5 * (lo + hi))
        probes.extend([1.5 * hi + 0.1, 2.0 * hi + 1.0])
    else:
        probes.extend([lo + 1.0, lo + 100.0, 1e6])
    return sorted(set(probes))


def run_supportedness_suite(trials: int, seed: int, max_candidates: int = 16) -> SuiteResult:
    """Interval membership <=> penalized argmin on random finite frontiers.

    Trial 0 is the fixed worked three-candidate instance; even trials use
    integer-valued losses so ties are exact, odd trials continuous ones.
    """
    report = verify_supportedness(WORKED_FRONTIER, "A", 4.0, [0.05, 0.1, 0.2, 1.0 / 3.0, 0.5])
    if not report.passed:
        return SuiteResult("supportedness", False, trials, counterexample=report.counterexample)
    iv = report.interval
    if not (abs(iv.lambda_min - 0.1) < 1e-12 and abs(iv.lambda_max - 1.0 / 3.0) < 1e-12 and iv.supported):
        return SuiteResult(
            "supportedness",
            False,
            trials,
            counterexample={"worked_interval": [iv.lambda_min, iv.lambda_max]},
        )

    supported_seen = 0
    for t in range(trials):
        rng = substream(seed, "supportedness", t)
        q = int(rng.integers(1, max_candidates + 1))
        if t % 2 == 0:
            risks = rng.integers(0, 21, q).astype(float)
            dists = rng.integers(0, 21, q).astype(float)
        else:
            risks = rng.uniform(0.0, 10.0, q)
            dists = rng.uniform(0.0, 10.0, q)
        cands = [FiniteCandidate(f"c{i}", float(risks[i]), float(dists[i])) for i in range(q)]
        r_sq = float(dists[int(rng.integers(q))])
        feasible = [c for c in cands if c.dist <= r_sq]
        chosen = min(feasible, key=lambda c: (c.risk, c.id))
        interval = lambda_interval(cands, chosen.id, r_sq)
        supported_seen += int(interval.supported)
        report = verify_supportedness(cands, chosen.id, r_sq, _probes_for(interval))
        if not report.passed:
            return SuiteResult(
                "supportedness",
                False,
                trials,
                details={"trial": t},
                counterexample=report.counterexample,
            )
    return SuiteResult(
        "supportedness",
        True,
        trials,
        details={"supported_instances": supported_seen},
    )


def run_hoeffding_suite(
    trials: int,
    seed: int,
    *,
    d_in: int = 8,
    r: float = 1.0,
    m_x: float = 1.0,
    n: int = 200,
    delta: float = 0.05,
    class_size: int = 16,
) -> SuiteResult:
    report = hoeffding_check(d_in, r, m_x, n, delta, class_size, trials, seed=seed)
    return SuiteResult(
        name="hoeffding",
        passed=report.passed,
        trials=trials,
        details={
            "bound": report.bound,
            "violation_rate": report.violation_rate,
            "threshold": report.threshold,
        },
        counterexample=None if report.passed else {"violations": report.violations},
    )


def run_gptq_equiv_suite(trials: int, seed: int, *, d_in_max: int = 64, n: int = 256) -> SuiteResult:
    """Blocked solver at λ = 0 vs the unblocked reference, bit for bit."""
    from .gbs import build_curvature, run_gbs
    from .saliency import identity_profile

    for t in range(trials):
        rng = substream(seed, "gptq-equiv", t)
        d_in = int(rng.integers(8, d_in_max + 1))
        d_out = int(rng.integers(4, 33))
        w = rng.standard_normal((d_out, d_in))
        x = rng.standard_normal((d_in, n))
        mode = "symmetric" if rng.integers(2) else "asymmetric"
        group: int | str = [16, 32, "per_channel"][int(rng.integers(3))]
        scheme = QuantScheme(bits=int(rng.integers(3, 5)), mode=mode, group_size=group)

        curv = build_curvature(x, identity_profile(d_in), 0.0)
        solver = run_gbs(w, curv, scheme, block_size=128)
        ref = greedy_sequential_reference(w, gram(x), scheme)
        if not (
            np.array_equal(solver.codes, ref.codes)
            and np.array_equal(solver.scales, ref.scales)
            and np.array_equal(solver.zero_points, ref.zero_points)
        ):
            return SuiteResult(
                name="gptq-equiv",
                passed=False,
                trials=trials,
                counterexample={
                    "trial": t,
                    "d_in": d_in,
                    "d_out": d_out,
                    "scheme": {"bits": scheme.bits, "mode": mode, "group_size": group},
                    "code_mismatches": int(np.sum(solver.codes != ref.codes)),
                },
            )
    return SuiteResult(name="gptq-equiv", passed=True, trials=trials)
