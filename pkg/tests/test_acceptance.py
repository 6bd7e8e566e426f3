"""Acceptance criteria 1-13 at the shipped configuration.

Each test runs one criterion, prints its measured rows and a one-line
verdict straight to the terminal, and fails if any row fails.  Several
criteria take minutes; select with ``-k criterion_07`` etc.
"""
from pathlib import Path

from qelab.acceptance import run_criterion
from qelab.config import load_config

CFG = load_config(Path(__file__).resolve().parents[1] / "configs" / "acceptance.cfg")


def _check(k, capsys):
    rows, elapsed = run_criterion(k, CFG)
    failed = [r for r in rows if not r.passed]
    with capsys.disabled():
        print()
        for r in rows:
            print("   ", r.line())
        verdict = "PASS" if not failed else f"FAIL ({len(failed)} of {len(rows)} rows)"
        print(f"criterion {k:2d}: {verdict} [{elapsed:.1f} s]")
    assert rows
    assert not failed, "\n".join(r.line() for r in failed)


def test_criterion_01_exact_identities(capsys):
    _check(1, capsys)


def test_criterion_02_kostant_identity(capsys):
    _check(2, capsys)


def test_criterion_03_toeplitz_trace_slope(capsys):
    _check(3, capsys)


def test_criterion_04_toeplitz_commutator_slope(capsys):
    _check(4, capsys)


def test_criterion_05_weyl_composition_and_trace(capsys):
    _check(5, capsys)


def test_criterion_06_mixed_commutator_and_trace(capsys):
    _check(6, capsys)


def test_criterion_07_functional_calculus_and_local_weyl_law(capsys):
    _check(7, capsys)


def test_criterion_08_weyl_law_count(capsys):
    _check(8, capsys)


def test_criterion_09_egorov(capsys):
    _check(9, capsys)


def test_criterion_10_dynamics_conservation(capsys):
    _check(10, capsys)


def test_criterion_11_holonomy_density(capsys):
    _check(11, capsys)


def test_criterion_12_ergodicity_scan(capsys):
    _check(12, capsys)


def test_criterion_13_quantum_variance_controls(capsys):
    _check(13, capsys)
