"""Geometry of the projective fiber CP^n with its Fubini-Study structure.

Holomorphic sections of O(p) are modelled by homogeneous polynomials of degree
``p`` in ``n + 1`` variables.  The volume form is normalized so that CP^n has
total volume one.  Functions on the fiber are represented exactly as
bihomogeneous polynomials divided by ``|w|^(2d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial
from typing import Sequence

import numpy as np
from scipy.special import gammaln, roots_jacobi, roots_legendre


class FiberDomainError(ValueError):
    """Raised for invalid fiber dimension, tensor power or Lie algebra data."""


class ExactnessError(ValueError):
    """Raised when a quadrature rule is not exact for the requested degree."""


# ----------------------------------------------------------------------------
# multi-indices and section bases
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiIndex:
    """Exponent vector of a monomial ``w_0^e_0 ... w_n^e_n``."""

    exponents: tuple

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise FiberDomainError("exponents must be nonnegative")
        object.__setattr__(self, "exponents", exps)

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    @property
    def n(self) -> int:
        return len(self.exponents) - 1


@lru_cache(maxsize=None)
def _exponent_table(n: int, d: int) -> np.ndarray:
    """All exponent vectors of length n+1 and degree d, lexicographically
    descending in the leading exponent."""
    if n == 0:
        return np.array([[d]], dtype=np.int64)
    rows = []
    for first in range(d, -1, -1):
        rest = _exponent_table(n - 1, d - first)
        rows.append(np.column_stack([np.full(len(rest), first), rest]))
    out = np.vstack(rows).astype(np.int64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _index_lookup(n: int, d: int) -> dict:
    return {tuple(r): i for i, r in enumerate(_exponent_table(n, d))}


def _check_np(n: int, p: int, allow_zero_p: bool = False) -> None:
    if int(n) != n or n < 1:
        raise FiberDomainError(f"fiber dimension must be >= 1, got {n}")
    lo = 0 if allow_zero_p else 1
    if int(p) != p or p < lo:
        raise FiberDomainError(f"tensor power must be >= {lo}, got {p}")


def bergman_dim(n: int, p: int) -> int:
    """Dimension C(p+n, n) of the space of degree-p sections on CP^n."""
    _check_np(n, p)
    return comb(p + n, n)


def log_monomial_norms(exponents: np.ndarray) -> np.ndarray:
    """Log of the squared norms ``alpha! n! / (p+n)!`` of monomial sections."""
    exponents = np.atleast_2d(exponents)
    n = exponents.shape[1] - 1
    p = exponents.sum(axis=1)
    return (gammaln(exponents + 1).sum(axis=1) + gammaln(n + 1)
            - gammaln(p + n + 1))


@dataclass(frozen=True)
class FiberBasis:
    """Monomial orthogonal basis of degree-p sections on CP^n.

    Attributes
    ----------
    n, p : int
        Fiber dimension and tensor power.
    exponents : ndarray, shape (dim, n+1)
        Exponent vectors in the canonical order.
    norms : ndarray, shape (dim,)
        Squared L2 norms of the monomials for the unit-volume measure.
    """

    n: int
    p: int
    exponents: np.ndarray = field(repr=False)
    norms: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.exponents)

    @property
    def indices(self) -> list:
        return [MultiIndex(tuple(e)) for e in self.exponents]

    def position(self, alpha) -> int:
        """Position of a multi-index in the basis ordering."""
        key = tuple(alpha.exponents if isinstance(alpha, MultiIndex) else alpha)
        return _index_lookup(self.n, self.p)[key]


@lru_cache(maxsize=64)
def enumerate_basis(n: int, p: int) -> FiberBasis:
    """Enumerate the monomial basis of degree-p sections with exact norms.

    Examples
    --------
    >>> enumerate_basis(1, 3).dim
    4
    """
    _check_np(n, p)
    exps = _exponent_table(n, p)
    norms = np.exp(log_monomial_norms(exps))
    norms.setflags(write=False)
    return FiberBasis(n=n, p=p, exponents=exps, norms=norms)


# ----------------------------------------------------------------------------
# points and Lie algebra elements
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FiberPoint:
    """A point of CP^n stored as a unit vector of homogeneous coordinates.

    ``chart`` is the index of the affine chart used for local coordinates; it
    defaults to the coordinate of largest modulus, which keeps chart
    coordinates bounded by one.
    """

    coords: np.ndarray
    chart: int = -1

    def __post_init__(self):
        w = np.asarray(self.coords, dtype=complex).ravel()
        nrm = np.linalg.norm(w)
        if w.size < 2 or nrm == 0:
            raise FiberDomainError("need at least two coordinates, not all zero")
        w = w / nrm
        w.setflags(write=False)
        object.__setattr__(self, "coords", w)
        if self.chart < 0:
            object.__setattr__(self, "chart", int(np.argmax(np.abs(w))))

    @property
    def n(self) -> int:
        return self.coords.size - 1

    def affine(self) -> np.ndarray:
        """Affine coordinates ``w_j / w_chart`` for ``j != chart``."""
        w = self.coords
        return np.delete(w, self.chart) / w[self.chart]

    @classmethod
    def from_affine(cls, z, chart: int = 0) -> "FiberPoint":
        z = np.asarray(z, dtype=complex).ravel()
        return cls(np.insert(z, chart, 1.0), chart=chart)

    def same_point(self, other: "FiberPoint", tol: float = 1e-12) -> bool:
        """Equality up to a global phase."""
        return abs(abs(np.vdot(self.coords, other.coords)) - 1.0) <= tol


def _as_coords(w) -> np.ndarray:
    if isinstance(w, FiberPoint):
        return w.coords
    if isinstance(w, (list, tuple)) and w and isinstance(w[0], FiberPoint):
        return np.array([pt.coords for pt in w])
    return np.asarray(w, dtype=complex)


@dataclass(frozen=True)
class LieElement:
    """Traceless anti-Hermitian matrix, an element of su(n+1)."""

    matrix: np.ndarray

    def __post_init__(self):
        a = np.array(self.matrix, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
            raise FiberDomainError("Lie element must be a square matrix of size >= 2")
        if np.abs(a + a.conj().T).max() > 1e-12:
            raise FiberDomainError("Lie element must be anti-Hermitian")
        if abs(np.trace(a)) > 1e-12:
            raise FiberDomainError("Lie element must be traceless")
        a.setflags(write=False)
        object.__setattr__(self, "matrix", a)

    @property
    def n(self) -> int:
        return self.matrix.shape[0] - 1

    def bracket(self, other: "LieElement") -> "LieElement":
        a, b = self.matrix, other.matrix
        return LieElement(a @ b - b @ a)

    def __add__(self, other):
        return LieElement(self.matrix + other.matrix)

    def __mul__(self, s: float):
        return LieElement(float(s) * self.matrix)

    __rmul__ = __mul__


def su2_generators() -> list:
    """The standard basis ``i*sigma_k/2`` of su(2)."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    return [LieElement(0.5j * s) for s in (sx, sy, sz)]


# ----------------------------------------------------------------------------
# fiber symbols
# ----------------------------------------------------------------------------

def _monomials(w: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """Values ``w^alpha`` for every row of ``exps``; w has shape (..., n+1)."""
    out = np.ones(w.shape[:-1] + (len(exps),), dtype=complex)
    for j in range(exps.shape[1]):
        col = exps[:, j]
        if col.max() == 0:
            continue
        powers = w[..., j, None] ** np.arange(col.max() + 1)
        out *= powers[..., col]
    return out


@lru_cache(maxsize=None)
def _sum_index(n: int, d: int, e: int) -> np.ndarray:
    """Position in degree d+e of alpha+beta for alpha of degree d, beta of e."""
    a, b = _exponent_table(n, d), _exponent_table(n, e)
    lookup = _index_lookup(n, d + e)
    out = np.empty((len(a), len(b)), dtype=np.int64)
    for i, ra in enumerate(a):
        for j, rb in enumerate(b):
            out[i, j] = lookup[tuple(ra + rb)]
    return out


@lru_cache(maxsize=None)
def _unit_table(n: int, m: int) -> np.ndarray:
    """Coefficient table of ``|w|^(2m)``: diagonal multinomial coefficients."""
    exps = _exponent_table(n, m)
    coef = np.array([factorial(m) / np.prod([factorial(int(e)) for e in r])
                     for r in exps])
    return np.diag(coef).astype(complex)


class FiberSymbol:
    """A function on CP^n of the form ``P(w, wbar) / |w|^(2d)``.

    ``P = sum C[a, b] w^alpha_a wbar^alpha_b`` with all multi-indices of degree
    ``d``.  For fixed ``d`` the table ``C`` is unique, so the symbol is real
    exactly when ``C`` is Hermitian.

    Parameters
    ----------
    n : int
        Fiber dimension.
    degree : int
        The bidegree ``d``.
    coeffs : array_like, shape (dim_d, dim_d)
        Coefficient table indexed by the canonical ordering of degree-d
        multi-indices.
    """

    def __init__(self, n: int, degree: int, coeffs):
        _check_np(n, degree, allow_zero_p=True)
        c = np.array(coeffs, dtype=complex)
        m = comb(degree + n, n)
        if c.shape != (m, m):
            raise FiberDomainError(f"coefficient table must be {m}x{m}, got {c.shape}")
        c.setflags(write=False)
        self.n = int(n)
        self.degree = int(degree)
        self.coeffs = c

    # -- construction helpers ------------------------------------------------
    @classmethod
    def constant(cls, n: int, value: complex = 1.0) -> "FiberSymbol":
        return cls(n, 0, [[value]])

    @classmethod
    def monomial(cls, alpha: Sequence[int], beta: Sequence[int],
                 coef: complex = 1.0) -> "FiberSymbol":
        """The symbol ``coef * w^alpha wbar^beta / |w|^(2d)``."""
        alpha, beta = tuple(alpha), tuple(beta)
        if len(alpha) != len(beta) or sum(alpha) != sum(beta):
            raise FiberDomainError("alpha and beta must have equal length and degree")
        n, d = len(alpha) - 1, sum(alpha)
        lookup = _index_lookup(n, d)
        c = np.zeros((comb(d + n, n),) * 2, dtype=complex)
        c[lookup[alpha], lookup[beta]] = coef
        return cls(n, d, c)

    @property
    def exponents(self) -> np.ndarray:
        return _exponent_table(self.n, self.degree)

    # -- evaluation ----------------------------------------------------------
    def __call__(self, w) -> np.ndarray:
        w = _as_coords(w)
        exps = self.exponents
        mono = _monomials(w, exps)
        val = np.einsum("...a,ab,...b->...", mono, self.coeffs, mono.conj())
        r2 = np.sum(np.abs(w) ** 2, axis=-1)
        return val / r2 ** self.degree

    def evaluate_real(self, w) -> np.ndarray:
        return np.real(self(w))

    # -- algebra -------------------------------------------------------------
    def is_real(self, tol: float = 1e-12) -> bool:
        return bool(np.abs(self.coeffs - self.coeffs.conj().T).max() <= tol)

    def conj(self) -> "FiberSymbol":
        return FiberSymbol(self.n, self.degree, self.coeffs.conj().T)

    def promote(self, degree: int) -> "FiberSymbol":
        """Same function written with bidegree ``degree >= self.degree``."""
        if degree < self.degree:
            raise FiberDomainError("cannot lower the degree of a fiber symbol")
        if degree == self.degree:
            return self
        unit = FiberSymbol(self.n, degree - self.degree,
                           _unit_table(self.n, degree - self.degree))
        return self * unit

    def _coerce(self, other) -> "FiberSymbol":
        if isinstance(other, FiberSymbol):
            if other.n != self.n:
                raise FiberDomainError("fiber dimensions differ")
            return other
        return FiberSymbol.constant(self.n, complex(other))

    def __add__(self, other):
        other = self._coerce(other)
        d = max(self.degree, other.degree)
        return FiberSymbol(self.n, d, self.promote(d).coeffs + other.promote(d).coeffs)

    __radd__ = __add__

    def __neg__(self):
        return FiberSymbol(self.n, self.degree, -self.coeffs)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, FiberSymbol):
            return FiberSymbol(self.n, self.degree, complex(other) * self.coeffs)
        other = self._coerce(other)
        n, d, e = self.n, self.degree, other.degree
        idx = _sum_index(n, d, e)
        out = np.zeros((comb(d + e + n, n),) * 2, dtype=complex)
        outer = np.einsum("ab,cd->acbd", self.coeffs, other.coeffs)
        rows = idx[:, :, None, None]
        cols = idx[None, None, :, :]
        rows, cols = np.broadcast_arrays(rows, cols)
        np.add.at(out, (rows.ravel(), cols.ravel()), outer.ravel())
        return FiberSymbol(n, d + e, out)

    __rmul__ = __mul__

    def allclose(self, other, tol: float = 1e-12) -> bool:
        other = self._coerce(other)
        d = max(self.degree, other.degree)
        return bool(np.abs(self.promote(d).coeffs - other.promote(d).coeffs).max() <= tol)

    def poisson_bracket(self, other: "FiberSymbol") -> "FiberSymbol":
        """Fubini-Study Poisson bracket as an exact symbol of degree d+e-1.

        With ``f = P/|w|^(2d)`` and ``g = Q/|w|^(2e)`` Euler's identity reduces
        the bracket to ``-i sum_j (d_j P dbar_j Q - dbar_j P d_j Q)`` over
        ``|w|^(2(d+e-1))``.
        """
        other = self._coerce(other)
        n, d, e = self.n, self.degree, other.degree
        if d == 0 or e == 0:
            return FiberSymbol.constant(n, 0.0)
        P = _table_to_terms(self)
        Q = _table_to_terms(other)
        out = {}
        for (a1, b1), c1 in P.items():
            for (a2, b2), c2 in Q.items():
                for j in range(n + 1):
                    # d_j P * dbar_j Q
                    if a1[j] and b2[j]:
                        ka = _shift(a1, j, -1) + np.array(a2)
                        kb = np.array(b1) + _shift(b2, j, -1)
                        key = (tuple(ka), tuple(kb))
                        out[key] = out.get(key, 0) + c1 * c2 * a1[j] * b2[j]
                    # - dbar_j P * d_j Q
                    if b1[j] and a2[j]:
                        ka = np.array(a1) + _shift(a2, j, -1)
                        kb = _shift(b1, j, -1) + np.array(b2)
                        key = (tuple(ka), tuple(kb))
                        out[key] = out.get(key, 0) - c1 * c2 * b1[j] * a2[j]
        deg = d + e - 1
        lookup = _index_lookup(n, deg)
        table = np.zeros((comb(deg + n, n),) * 2, dtype=complex)
        for (ka, kb), c in out.items():
            table[lookup[ka], lookup[kb]] += -1j * c
        return FiberSymbol(n, deg, table)

    # -- derivatives ---------------------------------------------------------
    def derivative(self, hol: Sequence[int] = (), antihol: Sequence[int] = ()):
        """Homogeneous Wirtinger derivative ``d_{w_i...} dbar_{w_j...}``.

        Returns a callable on homogeneous coordinates.  Restricted to an affine
        chart ``w_c = 1`` these are exactly the chart derivatives in
        ``z_j = w_j / w_c``.
        """
        rat = _HomRational.from_symbol(self)
        for j in hol:
            rat = rat.d_hol(j)
        for j in antihol:
            rat = rat.d_antihol(j)
        return rat

    def chart_derivative(self, w: FiberPoint, hol: Sequence[int] = (),
                         antihol: Sequence[int] = ()) -> complex:
        """Wirtinger derivative in the affine chart of ``w`` up to order 4.

        Indices refer to the affine coordinates (0..n-1) of the chart.
        """
        if len(hol) + len(antihol) > 4:
            raise FiberDomainError("derivative order above 4 is not supported")
        c = w.chart
        full = lambda idx: [j if j < c else j + 1 for j in idx]
        point = w.coords / w.coords[c]
        return complex(self.derivative(full(hol), full(antihol))(point))

    def chart_gradient(self, w: FiberPoint) -> np.ndarray:
        """Real gradient in chart coordinates ``(Re z_1.., Im z_1..)``."""
        n = self.n
        dz = np.array([self.chart_derivative(w, hol=(j,)) for j in range(n)])
        dzb = np.array([self.chart_derivative(w, antihol=(j,)) for j in range(n)])
        return np.concatenate([np.real(dz + dzb), np.real(1j * (dz - dzb))])

    def __repr__(self):
        return f"FiberSymbol(n={self.n}, degree={self.degree})"


def _shift(a, j, s):
    out = np.array(a)
    out[j] += s
    return out


def _table_to_terms(f: FiberSymbol) -> dict:
    exps = f.exponents
    rows, cols = np.nonzero(f.coeffs)
    return {(tuple(exps[r]), tuple(exps[c])): f.coeffs[r, c] for r, c in zip(rows, cols)}


class _HomRational:
    """``N(w, wbar) / |w|^(2s)`` with N an arbitrary polynomial (dict form)."""

    def __init__(self, n: int, terms: dict, s: int):
        self.n, self.terms, self.s = n, terms, s

    @classmethod
    def from_symbol(cls, f: FiberSymbol):
        return cls(f.n, _table_to_terms(f), f.degree)

    def _deriv(self, j: int, holo: bool):
        n, s = self.n, self.s
        out = {}

        def add(key, c):
            out[key] = out.get(key, 0) + c

        for (a, b), c in self.terms.items():
            src = a if holo else b
            if src[j]:
                da = _shift(a, j, -1) if holo else np.array(a)
                db = np.array(b) if holo else _shift(b, j, -1)
                for k in range(n + 1):
                    add((tuple(_shift(da, k, 1)), tuple(_shift(db, k, 1))), c * src[j])
            if s:
                # - s N * wbar_j (holomorphic) or - s N * w_j (antiholomorphic)
                key = (tuple(a), tuple(_shift(b, j, 1))) if holo else \
                      (tuple(_shift(a, j, 1)), tuple(b))
                add(key, -s * c)
        return _HomRational(n, out, s + 1)

    def d_hol(self, j):
        return self._deriv(j, True)

    def d_antihol(self, j):
        return self._deriv(j, False)

    def __call__(self, w):
        w = _as_coords(w)
        r2 = np.sum(np.abs(w) ** 2, axis=-1)
        total = np.zeros(w.shape[:-1], dtype=complex)
        for (a, b), c in self.terms.items():
            total = total + c * np.prod(w ** np.array(a), axis=-1) \
                * np.prod(w.conj() ** np.array(b), axis=-1)
        return total / r2 ** self.s


# ----------------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Weighted nodes on CP^n.

    ``degree`` is the largest symbol bidegree integrated exactly; ``stderr``
    is ``None`` for exact rules and the declared Monte Carlo tolerance
    (relative standard error for unit-variance integrands) otherwise.
    """

    n: int
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    degree: int
    stderr: float | None = None

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def exact(self) -> bool:
        return self.stderr is None

    def nodes(self) -> list:
        return [FiberPoint(w) for w in self.points]


def _simplex_rule(n: int, m: int):
    """Collapsed Gauss-Jacobi rule on the standard n-simplex, total mass one.

    Exact for polynomials of degree <= 2m-1 in the simplex coordinates.
    """
    pts = np.zeros((1, 0))
    wts = np.ones(1)
    remaining = np.ones(1)
    for level in range(n):
        k = n - level - 1  # power of (1 - s) in the Jacobian
        x, wx = roots_jacobi(m, k, 0)
        s = (x + 1) / 2
        ws = wx / 2 ** (k + 1)
        new_u = remaining[:, None] * s[None, :]
        pts = np.concatenate([np.repeat(pts, m, axis=0), new_u.reshape(-1, 1)], axis=1)
        wts = (wts[:, None] * ws[None, :]).ravel()
        remaining = (remaining[:, None] * (1 - s)[None, :]).ravel()
    last = np.clip(remaining, 0, None)
    pts = np.concatenate([pts, last[:, None]], axis=1)
    return pts, wts * factorial(n)


@lru_cache(maxsize=32)
def fiber_quadrature(n: int, degree: int) -> QuadratureRule:
    """Exact product rule for symbols of bidegree <= ``degree``.

    The Fubini-Study measure pushes forward to the uniform measure on the
    simplex of ``|w_j|^2`` times independent uniform phases.  A symbol of
    bidegree d integrates to a polynomial of degree d on the simplex and has
    phase frequencies at most d, so a Gauss rule with ``m > d/2`` nodes per
    simplex direction and ``d + 1`` phases per circle is exact.  For n = 1 the
    simplex variable is ``u = |w_0|^2`` and the rule is Gauss-Legendre.
    """
    _check_np(n, 1)
    if degree < 0:
        raise FiberDomainError("degree must be nonnegative")
    m = degree // 2 + 1
    u, wu = _simplex_rule(n, m)
    nph = degree + 1
    phi = 2 * np.pi * np.arange(nph) / nph
    grids = np.meshgrid(*([phi] * n), indexing="ij")
    phases = np.stack([g.ravel() for g in grids], axis=1)  # (nph^n, n)
    amp = np.sqrt(u)
    pts = np.empty((len(u), len(phases), n + 1), dtype=complex)
    pts[:, :, 0] = amp[:, None, 0]
    pts[:, :, 1:] = amp[:, None, 1:] * np.exp(1j * phases)[None, :, :]
    wts = wu[:, None] * np.full(len(phases), 1.0 / len(phases))[None, :]
    pts = pts.reshape(-1, n + 1)
    wts = wts.ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(n=n, points=pts, weights=wts, degree=degree)


def monte_carlo_rule(n: int, count: int, seed: int = 0) -> QuadratureRule:
    """Fubini-Study-uniform random nodes with equal weights.

    Nodes are normalized complex Gaussian vectors; the declared tolerance is
    ``1/sqrt(count)`` relative to the integrand's standard deviation.
    """
    _check_np(n, 1)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, n + 1)) + 1j * rng.standard_normal((count, n + 1))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return QuadratureRule(n=n, points=z, weights=np.full(count, 1.0 / count),
                          degree=-1, stderr=1.0 / np.sqrt(count))


def sample_fiber_points(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Fubini-Study-uniform unit vectors, shape (count, n+1)."""
    z = rng.standard_normal((count, n + 1)) + 1j * rng.standard_normal((count, n + 1))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def integrate_fiber(f: FiberSymbol, rule: QuadratureRule) -> complex:
    """Integral of ``f`` over CP^n for the unit-volume Fubini-Study measure."""
    if f.n != rule.n:
        raise FiberDomainError("rule and symbol live on different fibers")
    if rule.exact and rule.degree < f.degree:
        raise ExactnessError(f"rule exact to degree {rule.degree}, symbol has degree {f.degree}")
    return complex(np.dot(rule.weights, f(rule.points)))


def integrate_fiber_exact(f: FiberSymbol) -> complex:
    """Closed-form integral: only diagonal terms survive, each equal to
    ``alpha! n! / (d+n)!``."""
    exps = f.exponents
    return complex(np.dot(np.diag(f.coeffs), np.exp(log_monomial_norms(exps))))


# ----------------------------------------------------------------------------
# Poisson bracket and moment maps
# ----------------------------------------------------------------------------

def fubini_study_form(w: FiberPoint) -> np.ndarray:
    """Matrix of ``omega = 2 pi c_1`` in real chart coordinates (Re z, Im z).

    ``omega = i h_{jk} dz_j ^ dzbar_k`` with ``h`` the Fubini-Study metric in
    the affine chart, so ``omega(U, V) = -2 Im(U^T h conj(V))``.
    """
    z = w.affine()
    r2 = 1.0 + np.vdot(z, z).real
    h = (r2 * np.eye(len(z)) - np.outer(z.conj(), z)) / r2 ** 2
    n = len(z)
    basis = np.eye(2 * n)
    cplx = basis[:, :n] + 1j * basis[:, n:]
    return -2.0 * np.imag(cplx @ h @ cplx.conj().T)


def fs_poisson_bracket(f: FiberSymbol, g: FiberSymbol, w) -> float:
    """Poisson bracket ``{f, g}`` of ``2 pi c_1`` at ``w``, in an affine chart.

    The convention is ``{f, g} = omega(X_f, X_g)`` with ``i_{X_f} omega = -df``,
    so that ``d/dt (g o flow_f) = {f, g}``.  The chart is the one of largest
    coordinate modulus, so no point is excluded.
    """
    if not isinstance(w, FiberPoint):
        w = FiberPoint(w)
    om = fubini_study_form(w)
    gf = f.chart_gradient(w)
    gg = g.chart_gradient(w)
    return float(-gf @ np.linalg.solve(om, gg))


def moment_map(a: LieElement, w) -> np.ndarray:
    """``<mu_L, a>(w) = -i (w^* a w) / (2 pi |w|^2)``.

    The sign and the 2 pi normalization make the Toeplitz operator of the
    moment map reproduce the scaled Lie derivative exactly.
    """
    w = _as_coords(w)
    num = np.einsum("...j,jk,...k->...", w.conj(), a.matrix, w)
    return np.real(-1j * num / (2 * np.pi * np.sum(np.abs(w) ** 2, axis=-1)))


def det_moment_map(a: LieElement, w) -> np.ndarray:
    """Moment map of the anticanonical line: ``(n+1) <mu_L, a>`` on traceless a."""
    return (a.n + 1) * moment_map(a, w)


def moment_map_symbol(a: LieElement) -> FiberSymbol:
    """``<mu_L, a>`` as an exact degree-1 fiber symbol."""
    # w^* a w = sum_jk a_jk wbar_j w_k, so C[e_k, e_j] = -i a_jk / (2 pi)
    return FiberSymbol(a.n, 1, -1j * a.matrix.T / (2 * np.pi))


def det_moment_map_symbol(a: LieElement) -> FiberSymbol:
    return (a.n + 1) * moment_map_symbol(a)
