"""Command-line driver: ``qelab run`` and ``qelab concordance``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import SUITES, ConfigError, RunConfig, load_config

CSV_VERSION = "qelab-report v1"
CSV_COLUMNS = ("suite", "criterion", "check", "params", "quantity", "value", "expected",
               "threshold", "passed", "config_hash", "seed", "meta")

# (tag, what it states, operation exercising it)
CONCORDANCE = [
    ("1.15'", "genus-2 relator [a1,b1][a2,b2] = 1", "classical_dynamics.FuchsianData.build"),
    ("0.17'", "Euler-angle representation rho", "classical_dynamics.euler_angle_representation"),
    ("1.22", "perturbed Hamiltonian in half-plane coordinates", "classical_dynamics.ClassicalHamiltonian"),
    ("c4.", "Toeplitz adjoint relation", "fiber_toeplitz.toeplitz_matrix (criterion 1)"),
    ("b12", "Weyl adjoint relation", "base_weyl.weyl_adjoint_residual"),
    ("hc6", "Kostant identity for the Lie derivative", "fiber_toeplitz.kostant_residual"),
    ("hc1", "Kostant moment map normalization", "fiber_geometry.moment_map"),
    ("cb5'", "Toeplitz trace formula", "fiber_toeplitz.toeplitz_trace_residual"),
    ("cb23", "Toeplitz product expansion", "fiber_toeplitz.toeplitz_product_residual k=0"),
    ("cb24", "Toeplitz commutator and Poisson bracket", "fiber_toeplitz.toeplitz_product_residual k=1"),
    ("c11", "Toeplitz norm bounded by the sup norm", "mixed_quantization.MixedSymbol.kn_norm"),
    ("b7", "Weyl composition expansion", "base_weyl.weyl_composition_residual"),
    ("b.14", "Weyl trace formula", "base_weyl.weyl_trace_residual"),
    ("b14", "Hermitian quantized Hamiltonian", "mixed_quantization.build_hamiltonian"),
    ("m3.8", "symplectic form of the bundle", "mixed_quantization.MixedSymbol.poisson; "
     "classical_dynamics.symplectic_residual"),
    ("m3.9", "mixed trace formula", "mixed_quantization.mixed_trace_residual"),
    ("m3.10", "mixed commutator expansion", "mixed_quantization.mixed_commutator_residual"),
    ("m3.14;", "ellipticity of the Hamiltonian", "mixed_quantization.HamiltonianSpec"),
    ("1.8.'", "eigensections of the Hamiltonian", "mixed_quantization.spectral_decompose"),
    ("b15", "functional calculus", "mixed_quantization.functional_calculus_residual"),
    ("b.18", "local Weyl law", "mixed_quantization.local_weyl_law_residual"),
    ("b.19.", "Weyl law", "mixed_quantization.weyl_law_count"),
    ("b23", "Schroedinger propagator", "mixed_quantization.propagator"),
    ("b23.", "Egorov theorem", "mixed_quantization.egorov_residual"),
    ("b25'", "time average of a symbol", "mixed_quantization.time_average_symbol"),
    ("m3.26", "microcanonical average", "mixed_quantization.microcanonical_average"),
    ("m3.36.", "quantum variance", "mixed_quantization.quantum_variance"),
    ("b26", "variance estimate", "mixed_quantization.variance_bound_report"),
    ("m4.6.", "su-path holonomy composition", "classical_dynamics.su_path_holonomy"),
    ("m4.7'.", "dense holonomy group", "classical_dynamics.holonomy_density_scan"),
    ("m4.7", "moment-map perturbation family", "classical_dynamics.hamiltonian_flow"),
    ("m4.17", "Hamiltonian vector field definition", "classical_dynamics.symplectic_residual"),
    ("T6.3", "ergodicity of the perturbed flow", "classical_dynamics.ergodicity_scan"),
]

OUT_OF_SCOPE = [
    ("mt1.1", "quantum ergodicity on hyperbolic surfaces (needs high eigenmodes)"),
    ("mt1.4", "quantum ergodicity for flat bundles (needs high eigenmodes)"),
    ("Wilk", "perturbed holonomy shadowing"),
    ("P4.6", "perturbed invariant foliations"),
    ("p4.7", "invariance of perturbed holonomies"),
    ("Dol", "stable ergodicity of group actions"),
    ("Juli", "julienne accessibility argument"),
    ("Anosov", "Anosov property of the base flow"),
]


def concordance_text() -> str:
    w = max(len(t) for t, _, _ in CONCORDANCE)
    lines = ["In scope", "--------"]
    lines += [f"({t}){' ' * (w - len(t))}  {what:<48}  {op}" for t, what, op in CONCORDANCE]
    lines += ["", "Out of scope", "------------"]
    lines += [f"({t}){' ' * (w - len(t))}  {why}" for t, why in OUT_OF_SCOPE]
    return "\n".join(lines) + "\n"


def _csv_bytes(rows, cfg: RunConfig) -> str:
    buf = io.StringIO()
    buf.write(f"# {CSV_VERSION}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    h = cfg.hash()
    for r in rows:
        wr.writerow([r.suite, r.criterion, r.check, r.params, r.quantity, repr(float(r.value)),
                     r.expected, r.threshold, int(r.passed), h, cfg.seed,
                     json.dumps(r.meta, sort_keys=True, default=float)])
    return buf.getvalue()


def _summary(rows, timings: dict, cfg: RunConfig) -> dict:
    out = {"config_hash": cfg.hash(), "seed": cfg.seed, "suites": {}}
    for r in rows:
        s = out["suites"].setdefault(r.suite, {"pass": 0, "fail": 0, "slopes": {}})
        s["pass" if r.passed else "fail"] += 1
        if r.expected == "slope" and np.isfinite(r.value):
            se = r.meta.get("slope_se")
            entry = {"slope": float(r.value)}
            if se is not None:
                entry["ci95"] = [float(r.value - 1.96 * se), float(r.value + 1.96 * se)]
            s["slopes"][f"{r.criterion}: {r.check} ({r.params})"] = entry
    out["timings_s"] = {str(k): round(v, 3) for k, v in sorted(timings.items())}
    return out


def run_suite(cfg: RunConfig, out_dir: Path) -> int:
    """Run the configured suite; returns 0 iff every row passes."""
    from .acceptance import criteria_for, run_criterion

    ks = criteria_for(cfg.suite)
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        results = list(pool.map(lambda k: (k, *run_criterion(k, cfg)), ks))
    rows, timings = [], {}
    for k, rs, dt in sorted(results, key=lambda t: t[0]):
        rows += rs
        timings[k] = dt
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(_csv_bytes(rows, cfg))
    (out_dir / "summary.json").write_text(json.dumps(_summary(rows, timings, cfg), indent=2,
                                                     sort_keys=True) + "\n")
    for r in rows:
        print(r.line())
    return 0 if all(r.passed for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qelab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run verification suites")
    run.add_argument("--config", type=Path, help="key = value config file")
    run.add_argument("--suite", help=f"one of {', '.join(SUITES)} (overrides the config)")
    run.add_argument("--out", type=Path, default=Path("qelab-out"), help="output directory")
    run.add_argument("--seed", type=int, help="random seed (overrides the config)")
    run.add_argument("--threads", type=int, help="concurrent criteria (overrides the config)")
    sub.add_parser("concordance", help="print the formula-to-operation table")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "concordance":
        sys.stdout.write(concordance_text())
        return 0
    if args.suite is not None and args.suite not in SUITES:
        ap.print_usage(sys.stderr)
        print(f"qelab: error: unknown suite {args.suite!r}", file=sys.stderr)
        return 2
    if args.seed is not None and args.seed < 0:
        ap.error("seed must be a nonnegative integer")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.with_overrides(suite=args.suite, seed=args.seed, threads=args.threads)
    except (ConfigError, OSError) as exc:
        print(f"qelab: config error: {exc}", file=sys.stderr)
        return 2
    if cfg.threads > 1:
        os.environ.setdefault("NUMBA_NUM_THREADS", str(cfg.threads))
    return run_suite(cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
