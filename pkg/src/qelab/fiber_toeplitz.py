"""Berezin-Toeplitz operators on degree-p sections of O(p) over CP^n.

All matrices are written in the orthonormalized monomial basis of
:func:`qelab.fiber_geometry.enumerate_basis`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .fiber_geometry import (
    ExactnessError,
    FiberSymbol,
    LieElement,
    QuadratureRule,
    _exponent_table,
    _index_lookup,
    _monomials,
    det_moment_map_symbol,
    enumerate_basis,
    fiber_quadrature,
    integrate_fiber_exact,
    log_monomial_norms,
    moment_map_symbol,
)
from .numerics import spectral_norm


@dataclass(frozen=True)
class ToeplitzMatrix:
    """Matrix of ``T_{f,p} = P_p f P_p`` in the orthonormal monomial basis."""

    p: int
    entries: np.ndarray = field(repr=False)
    symbol: FiberSymbol | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries, 2))


@dataclass(frozen=True)
class LieDerivativeMatrix:
    """Matrix of ``p^-1 L_a`` acting on degree-p sections."""

    p: int
    entries: np.ndarray = field(repr=False)
    generator: LieElement | None = field(default=None, repr=False)


def _section_samples(rule: QuadratureRule, p: int) -> np.ndarray:
    """Orthonormal section values times sqrt(weight), shape (nodes, dim)."""
    basis = enumerate_basis(rule.n, p)
    w = rule.points
    vals = _monomials(w, basis.exponents)
    vals /= np.sqrt(basis.norms)
    # nodes are unit vectors, so |w|^p = 1
    return vals * np.sqrt(rule.weights)[:, None]


def toeplitz_matrix(f: FiberSymbol, p: int, rule: QuadratureRule | None = None) -> ToeplitzMatrix:
    """Toeplitz matrix by quadrature: entry ``<f s_beta, s_alpha>``.

    Parameters
    ----------
    f : FiberSymbol
    p : int
        Tensor power.
    rule : QuadratureRule, optional
        Must be exact to bidegree ``deg(f) + 2p``.  Defaults to the exact
        product rule with a margin of 4.
    """
    need = f.degree + 2 * p
    if rule is None:
        rule = fiber_quadrature(f.n, need + 4)
    if rule.n != f.n:
        raise ExactnessError("rule and symbol live on different fibers")
    if rule.exact and rule.degree < need:
        raise ExactnessError(f"rule exact to degree {rule.degree}, need {need}")
    S = _section_samples(rule, p)
    fv = f(rule.points)
    T = S.conj().T @ (fv[:, None] * S)
    return ToeplitzMatrix(p=p, entries=T, symbol=f)


@lru_cache(maxsize=16)
def monomial_toeplitz_tensor(n: int, p: int, degree: int) -> np.ndarray:
    """Toeplitz matrices of every degree-``degree`` monomial pair, closed form.

    ``out[a, b]`` is the matrix of ``w^alpha_a wbar^alpha_b / |w|^(2 degree)``.
    Its ``(g, d)`` entry is nonzero only when ``alpha_a + d = alpha_b + g``
    and then equals ``(alpha_a + d)! n! / (p + degree + n)!`` divided by the
    norms of the two sections.

    Returns
    -------
    ndarray, shape (m, m, dim, dim) with ``m = C(degree+n, n)``.
    """
    ex_d = _exponent_table(n, degree)
    basis = enumerate_basis(n, p)
    ex_p = basis.exponents
    lognorm = log_monomial_norms(ex_p)
    m, dim = len(ex_d), basis.dim
    out = np.zeros((m, m, dim, dim))
    lookup = _index_lookup(n, p)
    for a, al in enumerate(ex_d):
        for b, be in enumerate(ex_d):
            shift = al - be  # gamma = delta + alpha - beta
            for d_idx, de in enumerate(ex_p):
                g = de + shift
                if g.min() < 0:
                    continue
                g_idx = lookup[tuple(g)]
                top = al + de
                val = log_monomial_norms(top[None, :])[0]
                out[a, b, g_idx, d_idx] = np.exp(
                    val - 0.5 * (lognorm[g_idx] + lognorm[d_idx]))
    out.setflags(write=False)
    return out


def toeplitz_matrix_closed_form(f: FiberSymbol, p: int) -> ToeplitzMatrix:
    """Toeplitz matrix from the exact monomial integrals (no quadrature)."""
    tens = monomial_toeplitz_tensor(f.n, p, f.degree)
    T = np.einsum("ab,abij->ij", f.coeffs, tens)
    return ToeplitzMatrix(p=p, entries=T, symbol=f)


def _commutator(A, B):
    return A @ B - B @ A


def toeplitz_product_residual(f: FiberSymbol, g: FiberSymbol, p_list, k: int = 0) -> np.ndarray:
    """Operator-norm residuals of the first two orders of the Toeplitz product.

    ``k = 0``: ``||T_f T_g - T_{fg}||``.  ``k = 1``: the commutator form
    ``||[T_f, T_g] - (1/(i p)) T_{{f,g}}||``.
    """
    if k not in (0, 1):
        raise ValueError("k must be 0 or 1")
    out = []
    fg = f * g if k == 0 else f.poisson_bracket(g)
    for p in p_list:
        Tf = toeplitz_matrix(f, p).entries
        Tg = toeplitz_matrix(g, p).entries
        Tfg = toeplitz_matrix(fg, p).entries
        if k == 0:
            R = Tf @ Tg - Tfg
        else:
            R = _commutator(Tf, Tg) - Tfg / (1j * p)
        out.append(spectral_norm(R))
    return np.array(out)


def toeplitz_trace_residual(f: FiberSymbol, p_list) -> np.ndarray:
    """``|Tr T_{f,p} / dim - integral of f|`` per p (unit-volume measure)."""
    integral = integrate_fiber_exact(f)
    out = []
    for p in p_list:
        T = toeplitz_matrix(f, p).entries
        out.append(abs(np.trace(T) / T.shape[0] - integral))
    return np.array(out)


def lie_derivative_matrix(a: LieElement, p: int) -> LieDerivativeMatrix:
    """Matrix of ``p^-1 L_a`` with ``(L_a s)(z) = -sum_j (a z)_j d_j s(z)``.

    This is the derivative at t = 0 of ``s -> s(exp(-t a) z)``, the natural
    action of ``exp(t a)`` on polynomial sections.
    """
    n = a.n
    basis = enumerate_basis(n, p)
    lookup = _index_lookup(n, p)
    lognorm = log_monomial_norms(basis.exponents)
    M = np.zeros((basis.dim, basis.dim), dtype=complex)
    A = a.matrix
    for d_idx, de in enumerate(basis.exponents):
        for j in range(n + 1):
            if de[j] == 0:
                continue
            for k in range(n + 1):
                if A[j, k] == 0:
                    continue
                e = de.copy()
                e[j] -= 1
                e[k] += 1
                g_idx = lookup[tuple(e)]
                M[g_idx, d_idx] += -A[j, k] * de[j] * np.exp(
                    0.5 * (lognorm[g_idx] - lognorm[d_idx]))
    return LieDerivativeMatrix(p=p, entries=M / p, generator=a)


def group_action_matrix(g: np.ndarray, p: int) -> np.ndarray:
    """Matrix of ``s -> s(g^-1 z)`` on degree-p sections (orthonormal basis).

    Computed by expanding ``(g^-1 z)^delta`` through exact polynomial
    interpolation on the quadrature nodes, independently of the Lie
    derivative code.
    """
    n = g.shape[0] - 1
    rule = fiber_quadrature(n, 2 * p + 2)
    S = _section_samples(rule, p)
    basis = enumerate_basis(n, p)
    ginv = np.linalg.inv(g)
    moved = rule.points @ ginv.T
    vals = _monomials(moved, basis.exponents) / np.sqrt(basis.norms)
    vals *= np.sqrt(rule.weights)[:, None]
    return S.conj().T @ vals


def kostant_residual(a: LieElement, p: int, include_det: bool = True) -> float:
    """``|| p^-1 L_a + 2 pi i T_{mu_L + p^-1 mu_det} ||``.

    With ``include_det=False`` the subleading determinant term is dropped,
    which leaves an O(1/p) defect.
    """
    L = lie_derivative_matrix(a, p).entries
    sym = moment_map_symbol(a)
    if include_det:
        sym = sym + det_moment_map_symbol(a) * (1.0 / p)
    T = toeplitz_matrix(sym, p).entries
    return spectral_norm(L + 2j * np.pi * T)


def lie_exponential(a: LieElement, p: int, t: float) -> np.ndarray:
    """``exp(t p * (p^-1 L_a))``, the action of ``exp(t a)`` on sections."""
    return expm(t * p * lie_derivative_matrix(a, p).entries)
