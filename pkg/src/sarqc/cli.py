"""Batch calibration pipeline: generate synthetic layers, quantize manifests,
sweep regularization grids, and run the verification suites.

Exit codes: 0 success, 1 verification-suite failure, 2 invalid arguments,
3 I/O or parse failure, 4 numerical failure.
"""

from __future__ import annotations

import os

# Pin BLAS to one thread before numpy loads so layer-parallel runs are
# byte-reproducible regardless of --jobs.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import concurrent.futures
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .calibration import split_batch
from .gbs import (
    GAMMA_GRID_DEFAULT,
    LAMBDA_GRID_GBS_DEFAULT,
    GbsConfig,
    build_curvature,
    profile_for,
    run_gbs,
    select_hparams_gbs,
)
from .gs import ALPHA_GRID_DEFAULT, LAMBDA_GRID_GS_DEFAULT, GsConfig, run_gs, select_lambda_gs
from .harness import SynthLayerSpec, gen_calibration, gen_layer, sweep_lambda
from .linalg import NumericalFailure
from .objective import recon_loss, sar_loss, weight_drift
from .oracles import (
    run_compensation_suite,
    run_gptq_equiv_suite,
    run_hoeffding_suite,
    run_supportedness_suite,
)
from .quantizer import PER_CHANNEL, PER_TENSOR, QuantScheme, rtn
from .saliency import channel_stats, identity_profile, saliency_vector_gs
from .seeds import substream
from .tensorio import ManifestError, TensorFormatError, load_manifest, read_tensor, write_manifest, write_tensor

METHODS = ("rtn", "awq", "gptq", "sarqc-gs", "sarqc-gbs")
SUITES = ("compensation", "supportedness", "hoeffding", "gptq-equiv")
SUITE_DEFAULT_TRIALS = {"compensation": 500, "supportedness": 1000, "hoeffding": 2000, "gptq-equiv": 100}


class UsageError(ValueError):
    pass


def _parse_group_size(text: str):
    if text in (PER_CHANNEL, PER_TENSOR):
        return text
    try:
        return int(text)
    except ValueError as exc:
        raise UsageError(f"bad --group-size {text!r}") from exc


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}") from exc
    if not values:
        raise UsageError("grid must be nonempty")
    return values


def _scheme_from(args, defaults: dict) -> QuantScheme:
    dscheme = defaults.get("scheme", {})
    bits = args.bits if args.bits is not None else dscheme.get("bits", 4)
    mode = args.mode if args.mode is not None else dscheme.get("mode", "asym")
    group = args.group_size if args.group_size is not None else dscheme.get("group_size", 128)
    mode_full = {"sym": "symmetric", "asym": "asymmetric"}.get(mode, mode)
    return QuantScheme(bits=bits, mode=mode_full, group_size=group)


def _default_grids() -> dict:
    return {
        "alpha": list(ALPHA_GRID_DEFAULT),
        "lambda_gs": list(LAMBDA_GRID_GS_DEFAULT),
        "lambda_gbs": list(LAMBDA_GRID_GBS_DEFAULT),
        "gamma": list(GAMMA_GRID_DEFAULT),
    }


def _versions() -> dict:
    return {
        "sarqc": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


# ---------------------------------------------------------------------------
# quantize


def _quantize_one(entry: dict, method: str, scheme: QuantScheme, args) -> tuple[str, dict, dict]:
    layer_id = entry["layer_id"]
    w = read_tensor(entry["weights"])
    x = read_tensor(entry["calib"])
    batch = split_batch(x, args.val_fraction)
    t0 = time.perf_counter()

    chosen_lambda = None
    chosen_gamma = None
    chosen_alpha = None
    jitter_used = 0.0
    profile = identity_profile(w.shape[1])

    if method == "rtn":
        layer = rtn(w, scheme)
    elif method in ("awq", "sarqc-gs"):
        kind = "identity" if method == "awq" or args.saliency == "identity" else "gs"
        lam = 0.0 if method == "awq" else args.lam  # awq is the pinned lambda-0 baseline
        cfg = GsConfig(
            scheme=scheme,
            lam=lam if lam is not None else 0.0,
            lambda_grid=args.lambda_grid if args.lambda_grid else LAMBDA_GRID_GS_DEFAULT,
            saliency_kind=kind,
            val_fraction=args.val_fraction,
        )
        if lam is not None:
            res = run_gs(w, batch.train, cfg)
        else:
            res = select_lambda_gs(w, batch, cfg)
        layer = res.layer
        chosen_lambda = res.chosen_lambda
        chosen_alpha = res.chosen_alpha
        if kind == "gs":
            profile = saliency_vector_gs(channel_stats(w, batch.train))
    elif method in ("gptq", "sarqc-gbs"):
        kind = "identity" if method == "gptq" or args.saliency == "identity" else "gbs"
        if method == "gptq":
            lam, gamma = 0.0, None
        else:
            lam, gamma = args.lam, args.gamma
        if method == "gptq" or lam is not None:
            gamma = gamma if gamma is not None else 0.5
            prof = profile_for(w, batch.train, kind, gamma if kind == "gbs" else None)
            curv = build_curvature(batch.train, prof, lam if lam is not None else 0.0, context=layer_id)
            layer = run_gbs(w, curv, scheme, args.block)
            chosen_lambda = curv.lam
            chosen_gamma = gamma if kind == "gbs" else None
            jitter_used = curv.jitter_used
            profile = prof
        else:
            cfg = GbsConfig(
                scheme=scheme,
                lambda_grid=args.lambda_grid if args.lambda_grid else LAMBDA_GRID_GBS_DEFAULT,
                gamma_grid=args.gamma_grid if args.gamma_grid else GAMMA_GRID_DEFAULT,
                block_size=args.block,
                saliency_kind=kind,
                val_fraction=args.val_fraction,
            )
            sel = select_hparams_gbs(w, batch, cfg)
            layer = sel.layer
            chosen_lambda = sel.lam
            chosen_gamma = sel.gamma
            jitter_used = sel.jitter_used
            profile = profile_for(w, batch.train, kind, sel.gamma)
    else:
        raise UsageError(f"unknown method {method!r}")

    wall_ms = (time.perf_counter() - t0) * 1000.0
    recon = recon_loss(w, layer.dequantized, batch.train)
    report = {
        "layer_id": layer_id,
        "method": method,
        "chosen_lambda": chosen_lambda,
        "chosen_gamma": chosen_gamma,
        "chosen_alpha": chosen_alpha,
        "losses": {
            "recon": recon,
            "sar": sar_loss(w, layer.dequantized, profile),
            "drift": weight_drift(w, layer.dequantized),
        },
        "heldout_risk": recon_loss(w, layer.dequantized, batch.val) / batch.n_val,
        "jitter_used": jitter_used,
        "wall_time_ms": wall_ms,
    }
    tensors = {
        "codes": layer.codes,
        "scales": layer.scales,
        "zeros": layer.zero_points,
        "dequant": layer.dequantized,
    }
    return layer_id, tensors, report


def cmd_quantize(args) -> int:
    manifest = load_manifest(args.manifest)
    defaults = manifest.get("defaults", {})
    method = args.method if args.method is not None else defaults.get("method", "sarqc-gbs")
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}")
    scheme = _scheme_from(args, defaults)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    layers = manifest["layers"]
    results = {}
    try:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
            futures = {
                pool.submit(_quantize_one, entry, method, scheme, args): entry["layer_id"]
                for entry in layers
            }
            for fut in concurrent.futures.as_completed(futures):
                layer_id, tensors, report = fut.result()
                results[layer_id] = (tensors, report)
    except NumericalFailure as exc:
        failing = next((lid for lid in futures.values() if lid not in results), "?")
        print(f"numerical failure in layer {failing}: {exc}", file=sys.stderr)
        return 4

    report_layers = []
    for layer_id in sorted(results):
        tensors, report = results[layer_id]
        for name, arr in tensors.items():
            write_tensor(out / f"{layer_id}.{name}.sqt", arr)
        report_layers.append(report)

    group_size = scheme.group_size
    run_report = {
        "schema": 1,
        "seed": args.seed,
        "versions": _versions(),
        "config": {
            "command": "quantize",
            "manifest": str(args.manifest),
            "method": method,
            "bits": scheme.bits,
            "group_size": group_size,
            "mode": {"symmetric": "sym", "asymmetric": "asym"}[scheme.mode],
            "lambda": args.lam,
            "lambda_grid": list(args.lambda_grid) if args.lambda_grid else None,
            "gamma": args.gamma,
            "gamma_grid": list(args.gamma_grid) if args.gamma_grid else None,
            "alpha_grid": list(ALPHA_GRID_DEFAULT),
            "block": args.block,
            "saliency": args.saliency,
            "val_fraction": args.val_fraction,
            "seed": args.seed,
            "jobs": args.jobs,
            "out": str(args.out),
            "default_grids": _default_grids(),
        },
        "layers": report_layers,
    }
    (out / "report.json").write_text(json.dumps(run_report, indent=2, default=float) + "\n")
    return 0


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    spec = json.loads(Path(args.spec).read_text())
    n_layers = int(spec.get("layers", 1))
    d_out = int(spec.get("d_out", 64))
    d_in = int(spec.get("d_in", 128))
    n = int(spec.get("n", 128))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    entries = []
    for i in range(n_layers):
        lid = f"layer_{i:03d}"
        lseed = int(substream(args.seed, "gen-layer", i).integers(0, 2**31))
        cseed = int(substream(args.seed, "gen-calib", i).integers(0, 2**31))
        layer_spec = SynthLayerSpec(
            d_out=d_out,
            d_in=d_in,
            outlier_channels=int(spec.get("outlier_channels", 0)),
            outlier_scale=float(spec.get("outlier_scale", 1.0)),
            weight_std=float(spec.get("weight_std", 1.0)),
            seed=lseed,
        )
        w = gen_layer(layer_spec)
        batch = gen_calibration(
            d_in,
            n,
            float(spec.get("m_x", 1e18)),
            cseed,
            val_fraction=float(spec.get("val_fraction", 0.25)),
        )
        write_tensor(out / f"{lid}.w.sqt", w)
        write_tensor(out / f"{lid}.x.sqt", batch.x)
        entries.append(
            {
                "layer_id": lid,
                "weights": f"{lid}.w.sqt",
                "calib": f"{lid}.x.sqt",
                "d_out": d_out,
                "d_in": d_in,
                "n": n,
            }
        )
    defaults = {
        "scheme": {"bits": 4, "mode": "asym", "group_size": spec.get("group_size", 128)},
        "method": spec.get("method", "sarqc-gbs"),
        "grids": _default_grids(),
    }
    write_manifest(out / "manifest.json", entries, defaults)
    return 0


# ---------------------------------------------------------------------------
# sweep


def cmd_sweep(args) -> int:
    if (args.spec is None) == (args.manifest is None):
        raise UsageError("exactly one of --spec / --manifest is required")
    lambda_grid = args.lambda_grid if args.lambda_grid else tuple(k / 10 for k in range(11))
    method = {"sarqc-gs": "gs", "sarqc-gbs": "gbs", "gs": "gs", "gbs": "gbs"}.get(args.method)
    if method is None:
        raise UsageError(f"sweep supports sarqc-gs / sarqc-gbs, got {args.method!r}")
    scheme = _scheme_from(args, {})

    records = []
    if args.spec is not None:
        spec = json.loads(Path(args.spec).read_text())
        layer_spec = SynthLayerSpec(
            d_out=int(spec.get("d_out", 64)),
            d_in=int(spec.get("d_in", 128)),
            outlier_channels=int(spec.get("outlier_channels", 8)),
            outlier_scale=float(spec.get("outlier_scale", 8.0)),
            weight_std=float(spec.get("weight_std", 1.0)),
        )
        seeds = [args.seed + i for i in range(args.seeds)]
        records = sweep_lambda(
            layer_spec,
            scheme,
            method,
            lambda_grid,
            seeds,
            n_calib=int(spec.get("n_calib", 192)),
            n_heldout=int(spec.get("n_heldout", 512)),
            m_x=float(spec.get("m_x", 1e18)),
            gamma=args.gamma if args.gamma is not None else 0.5,
            corr_rank=int(spec.get("corr_rank", 8)),
            corr_strength=float(spec.get("corr_strength", 2.0)),
        )
    else:
        manifest = load_manifest(args.manifest)
        from .harness import SweepRecord, _solve_at_lambda, evaluate

        for entry in manifest["layers"]:
            w = read_tensor(entry["weights"])
            x = read_tensor(entry["calib"])
            batch = split_batch(x, args.val_fraction)
            for lam in lambda_grid:
                layer, prof = _solve_at_lambda(
                    w, batch, scheme, method, float(lam), args.gamma if args.gamma is not None else 0.5, args.block
                )
                # calibration-objective values plus risk on the held-out split
                _, risk = evaluate(w, layer, batch.val, prof)
                records.append(
                    SweepRecord(
                        lam=float(lam),
                        gamma=(args.gamma if args.gamma is not None else 0.5) if method == "gbs" else None,
                        recon=recon_loss(w, layer.dequantized, batch.train),
                        sar=sar_loss(w, layer.dequantized, prof),
                        drift=weight_drift(w, layer.dequantized),
                        heldout_risk=risk,
                        method=method,
                        seed=args.seed,
                    )
                )
        records.sort(key=lambda r: (r.seed, r.lam))

    lines = ["lambda,gamma,recon,sar,drift,heldout_risk,method,seed"]
    for r in records:
        gamma = "" if r.gamma is None else repr(r.gamma)
        lines.append(
            f"{r.lam!r},{gamma},{r.recon!r},{r.sar!r},{r.drift!r},{r.heldout_risk!r},{r.method},{r.seed}"
        )
    Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    if args.trials is not None and args.trials < 1:
        raise UsageError("--trials must be >= 1")
    names = list(SUITES) if args.suite == "all" else [args.suite]
    suites = {}
    for name in names:
        trials = args.trials if args.trials is not None else SUITE_DEFAULT_TRIALS[name]
        if name == "compensation":
            res = run_compensation_suite(trials, args.seed, flip_sign=args.inject_fault)
        elif name == "supportedness":
            res = run_supportedness_suite(trials, args.seed)
        elif name == "hoeffding":
            res = run_hoeffding_suite(max(trials, 1000), args.seed)
        else:
            res = run_gptq_equiv_suite(trials, args.seed)
        suites[name] = {
            "passed": res.passed,
            "trials": res.trials,
            "details": res.details,
            "counterexample": res.counterexample,
        }
    all_passed = all(s["passed"] for s in suites.values())
    doc = {"schema": 1, "seed": args.seed, "versions": _versions(), "suites": suites}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, default=float) + "\n")
    else:
        print(json.dumps(doc, indent=2, default=float))
    return 0 if all_passed else 1


# ---------------------------------------------------------------------------
# parser / entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sarqc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scheme_flags(p):
        p.add_argument("--bits", type=int, default=None)
        p.add_argument("--group-size", type=_parse_group_size, default=None)
        p.add_argument("--mode", choices=("sym", "asym"), default=None)

    q = sub.add_parser("quantize", help="quantize every layer in a manifest")
    q.add_argument("--manifest", required=True)
    q.add_argument("--method", choices=METHODS, default=None)
    add_scheme_flags(q)
    q.add_argument("--lambda", dest="lam", type=float, default=None)
    q.add_argument("--lambda-grid", type=_parse_grid, default=None)
    q.add_argument("--gamma", type=float, default=None)
    q.add_argument("--gamma-grid", type=_parse_grid, default=None)
    q.add_argument("--block", type=int, default=128)
    q.add_argument("--saliency", choices=("saliency", "identity"), default="saliency")
    q.add_argument("--val-fraction", type=float, default=0.25)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--jobs", type=int, default=int(os.environ.get("SARQC_JOBS", "1")))
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_quantize)

    g = sub.add_parser("gen", help="generate synthetic weights, calibration data, and a manifest")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sweep", help="sweep the regularization grid and emit CSV records")
    s.add_argument("--spec", default=None)
    s.add_argument("--manifest", default=None)
    s.add_argument("--method", default="sarqc-gbs")
    add_scheme_flags(s)
    s.add_argument("--lambda-grid", type=_parse_grid, default=None)
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("--block", type=int, default=128)
    s.add_argument("--val-fraction", type=float, default=0.25)
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="run the brute-force verification suites")
    v.add_argument("--suite", choices=SUITES + ("all",), default="all")
    v.add_argument("--trials", type=int, default=None)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None)
    v.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (ManifestError, TensorFormatError, FileNotFoundError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
