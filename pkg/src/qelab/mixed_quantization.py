"""Mixed quantization: base Weyl calculus with Berezin-Toeplitz fibers.

Symbols live on ``T*T^r x CP^n`` and operators on
``(Fourier modes |k|_inf <= K) (x) (degree-p sections)`` with ``h = 1/p``.
The mode block ``(k+m, k)`` of ``Op(T_A)`` is the Toeplitz matrix of the
fiber function ``A_m(xi, .)`` with the Weyl midpoint ``xi = h (k + theta + m/2)``.

The flat twist is diagonal: basis section ``alpha`` carries the lattice
offset ``theta_alpha = theta0 + sum_l alpha_l phi_l``; entry ``(alpha, beta)``
uses the average offset ``(theta_alpha + theta_beta)/2`` at the midpoint.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss
from scipy.optimize import nnls
from scipy.sparse.csgraph import connected_components

from .base_weyl import BaseSymbol, CutoffError, ModeLattice
from .fiber_geometry import (
    FiberSymbol,
    LieElement,
    _exponent_table,
    _monomials,
    enumerate_basis,
    fiber_quadrature,
    moment_map,
    moment_map_symbol,
)
from .fiber_toeplitz import monomial_toeplitz_tensor
from .numerics import loglog_slope, spectral_norm
from .profiles import XiProfile


class CertificationError(RuntimeError):
    """Raised when a truncation, quadrature or window certificate fails."""


# ----------------------------------------------------------------------------
# symbols
# ----------------------------------------------------------------------------

class MixedSymbol:
    """Finite sum of terms ``exp(i m.x) * profile(xi) * fiber(w)``.

    Parameters
    ----------
    r, n : int
        Base and fiber dimensions.
    terms : sequence of (m, XiProfile, FiberSymbol)
    """

    def __init__(self, r: int, n: int, terms: Sequence = ()):
        self.r, self.n = int(r), int(n)
        clean = []
        for m, prof, fib in terms:
            m = tuple(int(v) for v in np.atleast_1d(m))
            if len(m) != self.r:
                raise ValueError("Fourier index has wrong length")
            if not isinstance(prof, XiProfile):
                prof = XiProfile.constant(self.r, complex(prof))
            if not isinstance(fib, FiberSymbol):
                fib = FiberSymbol.constant(self.n, complex(fib))
            if prof.is_zero() or not np.any(fib.coeffs):
                continue
            clean.append((m, prof, fib))
        self.terms = clean

    # -- constructors ----------------------------------------------------------
    @classmethod
    def from_base(cls, A: BaseSymbol, n: int) -> "MixedSymbol":
        one = FiberSymbol.constant(n, 1.0)
        return cls(A.r, n, [(m, p, one) for m, p in A.coeffs.items()])

    @classmethod
    def from_fiber(cls, f: FiberSymbol, r: int) -> "MixedSymbol":
        return cls(r, f.n, [((0,) * r, XiProfile.constant(r), f)])

    @classmethod
    def tensor(cls, A: BaseSymbol, f: FiberSymbol) -> "MixedSymbol":
        return cls(A.r, f.n, [(m, p, f) for m, p in A.coeffs.items()])

    # -- queries ---------------------------------------------------------------
    @property
    def degree(self) -> int:
        return max((f.degree for _, _, f in self.terms), default=0)

    @property
    def modes(self) -> list:
        return sorted({m for m, _, _ in self.terms})

    def bandwidth(self) -> int:
        return max((max(abs(v) for v in m) for m in self.modes), default=0)

    def is_fiber_constant(self) -> bool:
        """True when every fiber factor is a multiple of the constant 1."""
        for _, _, f in self.terms:
            g = f.promote(f.degree)
            const = FiberSymbol.constant(self.n, 1.0).promote(f.degree)
            c = g.coeffs.ravel()
            u = const.coeffs.ravel()
            lam = np.vdot(u, c) / np.vdot(u, u)
            if np.abs(c - lam * u).max() > 1e-14 * max(1.0, np.abs(c).max()):
                return False
        return True

    def is_real(self, probes: int = 32, seed: int = 0, tol: float = 1e-12) -> bool:
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 2 * np.pi, size=(probes, self.r))
        xi = rng.normal(scale=1.5, size=(probes, self.r))
        w = rng.normal(size=(probes, self.n + 1)) + 1j * rng.normal(size=(probes, self.n + 1))
        v = self(x, xi, w)
        return bool(np.abs(v.imag).max() <= tol * (1 + np.abs(v).max()))

    def base_part(self) -> BaseSymbol:
        """For fiber-constant symbols, the scalar base symbol."""
        if not self.is_fiber_constant():
            raise ValueError("symbol is not fiberwise constant")
        coeffs = {}
        for m, p, f in self.terms:
            val = complex(f(np.eye(self.n + 1)[0]))
            coeffs[m] = coeffs[m] + p * val if m in coeffs else p * val
        return BaseSymbol(self.r, coeffs)

    # -- evaluation ------------------------------------------------------------
    def __call__(self, x, xi, w) -> np.ndarray:
        """Pointwise value; leading shapes of x, xi, w broadcast."""
        x = _vec(x, self.r)
        xi = _vec(xi, self.r)
        w = np.asarray(w, dtype=complex)
        out = 0
        for m, prof, fib in self.terms:
            out = out + np.exp(1j * (x @ np.asarray(m, dtype=float))) * prof(xi) * fib(w)
        return np.asarray(out, dtype=complex)

    def mode_tables(self, xi: np.ndarray, degree: int | None = None):
        """Fiber coefficient tables of every Fourier mode at momenta ``xi``.

        Returns
        -------
        modes : list of tuples
        tables : ndarray, shape (N, len(modes), nb, nb)
        """
        D = self.degree if degree is None else degree
        modes = self.modes
        pos = {m: i for i, m in enumerate(modes)}
        xi = _vec(xi, self.r)
        nb = _exponent_table(self.n, D).shape[0]
        out = np.zeros((xi.shape[0], len(modes), nb, nb), dtype=complex)
        for m, prof, fib in self.terms:
            out[:, pos[m]] += prof(xi)[:, None, None] * fib.promote(D).coeffs[None]
        return modes, out

    # -- algebra ---------------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, MixedSymbol):
            return other
        if isinstance(other, BaseSymbol):
            return MixedSymbol.from_base(other, self.n)
        if isinstance(other, FiberSymbol):
            return MixedSymbol.from_fiber(other, self.r)
        return MixedSymbol(self.r, self.n, [((0,) * self.r, XiProfile.constant(self.r),
                                             FiberSymbol.constant(self.n, complex(other)))])

    def __add__(self, other):
        other = self._coerce(other)
        return MixedSymbol(self.r, self.n, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return MixedSymbol(self.r, self.n, [(m, p * other, f) for m, p, f in self.terms])
        other = self._coerce(other)
        terms = []
        for m1, p1, f1 in self.terms:
            for m2, p2, f2 in other.terms:
                terms.append((tuple(a + b for a, b in zip(m1, m2)), p1 * p2, f1 * f2))
        return MixedSymbol(self.r, self.n, terms)

    __rmul__ = __mul__

    def conj(self) -> "MixedSymbol":
        return MixedSymbol(self.r, self.n, [(tuple(-v for v in m), p.conj(), f.conj())
                                            for m, p, f in self.terms])

    def dx(self, j: int) -> "MixedSymbol":
        return MixedSymbol(self.r, self.n, [(m, p * (1j * m[j]), f) for m, p, f in self.terms
                                            if m[j] != 0])

    def dxi(self, j: int) -> "MixedSymbol":
        return MixedSymbol(self.r, self.n, [(m, p.derivative(j), f) for m, p, f in self.terms])

    def poisson(self, other: "MixedSymbol") -> "MixedSymbol":
        """Bracket of ``d xi ^ d x + 2 pi c_1``: base part plus fiber part."""
        other = self._coerce(other)
        out = MixedSymbol(self.r, self.n)
        for j in range(self.r):
            out = out + self.dxi(j) * other.dx(j) - self.dx(j) * other.dxi(j)
        fib = []
        for m1, p1, f1 in self.terms:
            for m2, p2, f2 in other.terms:
                fib.append((tuple(a + b for a, b in zip(m1, m2)), p1 * p2,
                            f1.poisson_bracket(f2)))
        return out + MixedSymbol(self.r, self.n, fib)

    def star1_fiber_constant(self, other: "MixedSymbol") -> "MixedSymbol":
        """First-order composition term when one factor is fiberwise constant.

        Then the fiber factors commute and the term reduces to the base
        Moyal term ``(1/(2i)) {A, B}_base`` with operator-valued coefficients.
        """
        other = self._coerce(other)
        if not (self.is_fiber_constant() or other.is_fiber_constant()):
            raise ValueError("first-order term is only defined with a fiberwise-constant factor")
        out = MixedSymbol(self.r, self.n)
        for j in range(self.r):
            out = out + self.dxi(j) * other.dx(j) - self.dx(j) * other.dxi(j)
        return out * (1 / 2j)

    def kn_norm(self, xi_max: float = 8.0, samples: int = 801, seed: int = 0) -> float:
        """Kohn-Nirenberg-style bound ``sum_m sup_{xi, w} |A_m(xi, w)|``.

        Each Fourier mode contributes a block-shift operator whose norm is at
        most the sup of its Toeplitz blocks, itself at most the sup of the
        fiber function.  The sup is taken over a dense grid of momenta and a
        dense fiber sample.
        """
        rng = np.random.default_rng(seed)
        g = np.linspace(-xi_max, xi_max, samples)
        if self.r == 1:
            xi = g[:, None]
        else:
            grids = np.meshgrid(*([g[:: max(1, samples // 101)]] * self.r), indexing="ij")
            xi = np.stack([q.ravel() for q in grids], axis=1)
        rule = fiber_quadrature(self.n, max(2 * self.degree + 8, 24))
        w = np.concatenate([rule.points,
                            _random_fiber(rng, 400, self.n)])
        total = 0.0
        modes = self.modes
        pos = {m: i for i, m in enumerate(modes)}
        vals = np.zeros((len(modes), xi.shape[0], w.shape[0]), dtype=complex)
        for m, p, f in self.terms:
            vals[pos[m]] += p(xi)[:, None] * f(w)[None, :]
        for i in range(len(modes)):
            total += np.abs(vals[i]).max()
        return float(total)

    def __repr__(self):
        return f"MixedSymbol(r={self.r}, n={self.n}, terms={len(self.terms)}, degree={self.degree})"


def _vec(a, r: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a[None]
    if r == 1 and a.shape[-1] != 1:
        a = a[..., None]
    if a.ndim == 1:
        a = a[None, :]
    return a


def _random_fiber(rng, count, n):
    z = rng.standard_normal((count, n + 1)) + 1j * rng.standard_normal((count, n + 1))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@lru_cache(maxsize=16)
def _projection_data(n: int, degree: int):
    """Quadrature nodes and least-squares projector onto degree-D tables."""
    rule = fiber_quadrature(n, 2 * degree + 8)
    exps = _exponent_table(n, degree)
    mono = _monomials(rule.points, exps)
    nb = len(exps)
    B = (mono[:, :, None] * mono.conj()[:, None, :]).reshape(len(rule.weights), nb * nb)
    sw = np.sqrt(rule.weights)
    pinv = np.linalg.pinv(sw[:, None] * B, rcond=1e-13)
    return rule, B, pinv * sw[None, :]


class SampledMixedSymbol:
    """Mixed symbol known through a vectorized function ``F(x, xi, w)``.

    Fourier coefficients in x are obtained by FFT on ``nx`` points per
    direction and fiber tables by least-squares projection onto bidegree
    ``degree`` on an exact quadrature grid.  Every call records the largest
    discarded Fourier coefficient and the largest fiber projection defect in
    :attr:`certificate`.

    Parameters
    ----------
    func : callable
        ``func(x, xi, w)`` with arrays of shapes (N, r), (N, r), (N, n+1).
    r, n : int
    degree : int
        Fiber bidegree of the projection.
    max_mode : int
        Fourier modes ``|m|_inf <= max_mode`` are kept.
    nx : int
        FFT grid size per direction, ``> 2 max_mode``.
    tol : float
        Certification threshold for both truncations.
    """

    def __init__(self, func: Callable, r: int, n: int, degree: int, max_mode: int,
                 nx: int | None = None, tol: float = 1e-8):
        self.func = func
        self.r, self.n = int(r), int(n)
        self._degree = int(degree)
        self.max_mode = int(max_mode)
        self.nx = int(nx) if nx is not None else 4 * (self.max_mode + 1)
        if self.nx <= 2 * self.max_mode:
            raise ValueError("nx must exceed twice max_mode")
        self.tol = tol
        self.certificate = {"fourier_tail": 0.0, "fiber_defect": 0.0}
        rng = np.arange(-self.max_mode, self.max_mode + 1)
        grids = np.meshgrid(*([rng] * self.r), indexing="ij")
        self._modes = [tuple(int(v) for v in row) for row in
                       np.stack([g.ravel() for g in grids], axis=1)]

    @property
    def degree(self) -> int:
        return self._degree

    @property
    def modes(self) -> list:
        return list(self._modes)

    def bandwidth(self) -> int:
        return self.max_mode

    def is_fiber_constant(self) -> bool:
        return False

    def __call__(self, x, xi, w):
        return self.func(_vec(x, self.r), _vec(xi, self.r), np.asarray(w, dtype=complex))

    def mode_tables(self, xi: np.ndarray, degree: int | None = None, chunk: int = 64):
        D = self._degree if degree is None else degree
        if D != self._degree:
            raise ValueError("sampled symbols are projected at a fixed degree")
        xi = _vec(xi, self.r)
        rule, B, P = _projection_data(self.n, D)
        nb = _exponent_table(self.n, D).shape[0]
        Q = len(rule.weights)
        xg = 2 * np.pi * np.arange(self.nx) / self.nx
        grids = np.meshgrid(*([xg] * self.r), indexing="ij")
        xs = np.stack([g.ravel() for g in grids], axis=1)
        nxr = xs.shape[0]
        out = np.zeros((xi.shape[0], len(self._modes), nb, nb), dtype=complex)
        for s in range(0, xi.shape[0], chunk):
            xic = xi[s:s + chunk]
            nc = xic.shape[0]
            X = np.broadcast_to(xs[None, :, None, :], (nc, nxr, Q, self.r)).reshape(-1, self.r)
            XI = np.broadcast_to(xic[:, None, None, :], (nc, nxr, Q, self.r)).reshape(-1, self.r)
            W = np.broadcast_to(rule.points[None, None], (nc, nxr, Q, self.n + 1)).reshape(-1, self.n + 1)
            vals = np.asarray(self.func(X, XI, W), dtype=complex).reshape((nc,) + (self.nx,) * self.r + (Q,))
            axes = tuple(range(1, self.r + 1))
            coef = np.fft.fftn(vals, axes=axes) / self.nx ** self.r
            # keep |m| <= max_mode; measure the rest
            idx = np.array(self._modes) % self.nx
            kept = coef[(slice(None),) + tuple(idx.T)]  # (nc, n_modes, Q)
            mask = np.ones((self.nx,) * self.r, dtype=bool)
            mask[tuple(idx.T)] = False
            tail = np.abs(coef[:, mask]).max() if mask.any() else 0.0
            tables = kept @ P.T  # (nc, n_modes, nb*nb)
            recon = tables @ B.T
            defect = np.abs(recon - kept).max()
            self.certificate["fourier_tail"] = max(self.certificate["fourier_tail"], float(tail))
            self.certificate["fiber_defect"] = max(self.certificate["fiber_defect"], float(defect))
            out[s:s + nc] = tables.reshape(nc, len(self._modes), nb, nb)
        return self.modes, out

    def certify(self) -> None:
        """Raise if any recorded truncation exceeded the tolerance."""
        worst = max(self.certificate.values())
        if worst > self.tol:
            raise CertificationError(f"resampling defect {self.certificate} exceeds {self.tol}")


# ----------------------------------------------------------------------------
# twist and operators
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FiberTwist:
    """Diagonal flat twist: lattice offset ``theta0 + sum_l alpha_l phi_l``."""

    theta0: tuple = (0.0,)
    phi: tuple | None = None

    def offsets(self, n: int, p: int, r: int) -> np.ndarray:
        th0 = np.broadcast_to(np.asarray(self.theta0, dtype=float), (r,))
        exps = enumerate_basis(n, p).exponents
        if self.phi is None:
            return np.broadcast_to(th0, (len(exps), r)).copy()
        phi = np.asarray(self.phi, dtype=float).reshape(n + 1, r)
        return th0[None, :] + exps @ phi

    @property
    def uniform(self) -> bool:
        return self.phi is None or not np.any(self.phi)


def _twist(theta, r: int) -> FiberTwist:
    if isinstance(theta, FiberTwist):
        return theta
    if theta is None:
        return FiberTwist((0.0,) * r)
    return FiberTwist(tuple(np.broadcast_to(np.asarray(theta, dtype=float), (r,))))


@lru_cache(maxsize=16)
def _sparse_tensor(n: int, p: int, degree: int):
    """Nonzero pattern of every monomial-pair Toeplitz matrix."""
    tens = monomial_toeplitz_tensor(n, p, degree)
    nb = tens.shape[0]
    out = []
    for a in range(nb):
        for b in range(nb):
            I, J = np.nonzero(tens[a, b])
            out.append((a, b, I, J, tens[a, b][I, J]))
    return out


@dataclass
class MixedOperator:
    """Sparse matrix of ``Op_{1/p}(T_{A,p})`` on modes (x) sections.

    The flat index of (mode k, section alpha) is ``flat(k) * dim + alpha``.
    """

    p: int
    K: int
    r: int
    n: int
    twist: FiberTwist
    entries: sp.csr_matrix = field(repr=False)
    symbol: object = field(default=None, repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.p

    @property
    def dim(self) -> int:
        return enumerate_basis(self.n, self.p).dim

    @property
    def lattice(self) -> ModeLattice:
        return ModeLattice(self.r, self.K)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def window(self, radius: float | None = None) -> np.ndarray:
        """Flat indices of modes ``|k|_inf <= radius`` (default K/2) times all sections."""
        modes = self.lattice.window(radius)
        return (modes[:, None] * self.dim + np.arange(self.dim)[None, :]).ravel()

    def windowed(self, radius: float | None = None):
        idx = self.window(radius)
        return self.entries[idx][:, idx]

    def hermitian_defect(self) -> float:
        return spectral_norm(self.entries - self.entries.conj().T)


def mixed_op(A, p: int, K: int, theta=None) -> MixedOperator:
    """Quantize a mixed symbol: Weyl midpoint in the base, Toeplitz in the fiber.

    Parameters
    ----------
    A : MixedSymbol or SampledMixedSymbol
    p : int
        Tensor power; the semiclassical parameter is ``h = 1/p``.
    K : int
        Fourier cutoff ``|k|_inf <= K``.
    theta : FiberTwist or array_like, optional
        Lattice offsets; a plain vector is a uniform twist.
    """
    r, n = A.r, A.n
    if A.bandwidth() > 2 * K:
        raise CutoffError(f"symbol bandwidth {A.bandwidth()} exceeds 2K = {2 * K}")
    tw = _twist(theta, r)
    h = 1.0 / p
    D = A.degree
    basis = enumerate_basis(n, p)
    dim = basis.dim
    offs = tw.offsets(n, p, r)  # (dim, r)
    lat = ModeLattice(r, K)
    k = lat.modes()
    pairs = _sparse_tensor(n, p, D)
    # distinct average offsets of entry (i, j)
    avg = 0.5 * (offs[:, None, :] + offs[None, :, :])
    uniq, inv = np.unique(avg.reshape(-1, r).round(14), axis=0, return_inverse=True)
    inv = inv.reshape(dim, dim)
    rows, cols, vals = [], [], []
    modes = A.modes
    shared = _shared_tables(A, k, K, modes, uniq, h, D)
    for mi, m in enumerate(modes):
        m_arr = np.asarray(m)
        tgt = k + m_arr
        ok = np.all(np.abs(tgt) <= K, axis=1)
        if not ok.any():
            continue
        src = k[ok]
        Nk, U = src.shape[0], uniq.shape[0]
        if shared is not None:
            lookup, grid_tables = shared
            tables = grid_tables[lookup(2 * src + m_arr), :, mi]
        else:
            xi = h * (src[:, None, :] + m_arr / 2.0 + uniq[None, :, :])  # (Nk, U, r)
            tables = _tables_for_mode(A, xi.reshape(-1, r), m, D)[1]
            tables = tables.reshape(Nk, U, *tables.shape[1:])
        blocks = np.zeros((Nk, dim, dim), dtype=complex)
        for a, b, I, J, v in pairs:
            col = tables[:, inv[I, J], a, b]
            if not np.any(col):
                continue
            blocks[:, I, J] += col * v[None, :]
        nz = blocks != 0
        kk, ii, jj = np.nonzero(nz)
        rows.append(lat.flat(tgt[ok])[kk] * dim + ii)
        cols.append(lat.flat(src)[kk] * dim + jj)
        vals.append(blocks[nz])
    N = lat.size * dim
    if rows:
        M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(N, N)).tocsr()
    else:
        M = sp.csr_matrix((N, N), dtype=complex)
    return MixedOperator(p=p, K=K, r=r, n=n, twist=tw, entries=M, symbol=A)


def _shared_tables(A, k, K, modes, uniq, h, D, budget: float = 4e7):
    """All mode tables on the half-integer momentum grid, when affordable.

    Every midpoint is ``h (j/2 + offset)`` with ``j = 2 k + m`` integer, so a
    single evaluation per grid point serves all Fourier modes.
    """
    if isinstance(A, MixedSymbol):
        return None
    r = k.shape[1]
    js = np.unique(np.concatenate([2 * k + np.asarray(m) for m in modes]), axis=0)
    nb = _exponent_table(A.n, D).shape[0]
    if len(js) * len(uniq) * len(modes) * nb * nb > budget:
        return None
    xi = h * (js[:, None, :] / 2.0 + uniq[None, :, :])
    _, tab = A.mode_tables(xi.reshape(-1, r), D)
    tab = tab.reshape(len(js), len(uniq), *tab.shape[1:])
    lo = js.min(axis=0)
    shape = tuple(js.max(axis=0) - lo + 1)
    where = np.full(shape, -1)
    where[tuple((js - lo).T)] = np.arange(len(js))
    return (lambda j: where[tuple((j - lo).T)]), tab


def _tables_for_mode(A, xi, m, D):
    """Tables of a single Fourier mode at momenta xi, shape (N, nb, nb)."""
    if isinstance(A, MixedSymbol):
        sub = MixedSymbol(A.r, A.n, [t for t in A.terms if t[0] == m])
        modes, tab = sub.mode_tables(xi, D)
        return modes, tab[:, 0]
    modes, tab = A.mode_tables(xi, D)
    return modes, tab[:, modes.index(m)]


def _windowed_norm(M, op: MixedOperator, radius: float | None = None) -> float:
    idx = op.window(radius)
    return spectral_norm(M[idx][:, idx])


def _cutoff(p: int, xi_window: float, band: int) -> int:
    return max(int(np.ceil(2 * xi_window * p)) + 2 * band, 4 * max(band, 1))


def mixed_product_residual(A: MixedSymbol, B: MixedSymbol, p_list, j: int = 0,
                           xi_window: float = 1.0, theta=None) -> np.ndarray:
    """Windowed ``||Op(A)Op(B) - sum_{i<=j} p^-i Op(T_{A *_i B})||`` per p.

    ``j = 1`` requires one fiberwise-constant factor.
    """
    if j not in (0, 1):
        raise ValueError("j must be 0 or 1")
    terms = [A * B]
    if j == 1:
        terms.append(A.star1_fiber_constant(B))
    band = A.bandwidth() + B.bandwidth()
    out = []
    for p in p_list:
        K = _cutoff(p, xi_window, band)
        OA, OB = mixed_op(A, p, K, theta), mixed_op(B, p, K, theta)
        R = OA.entries @ OB.entries
        for i, t in enumerate(terms):
            R = R - p ** (-i) * mixed_op(t, p, K, theta).entries
        out.append(_windowed_norm(R, OA))
    return np.array(out)


def mixed_commutator_residual(A: MixedSymbol, B: MixedSymbol, p_list,
                              xi_window: float = 1.0, theta=None) -> np.ndarray:
    """Windowed ``||[Op(A), Op(B)] - (1/(i p)) Op(T_{{A,B}})||`` per p."""
    br = A.poisson(B)
    band = A.bandwidth() + B.bandwidth()
    out = []
    for p in p_list:
        K = _cutoff(p, xi_window, band)
        OA, OB = mixed_op(A, p, K, theta), mixed_op(B, p, K, theta)
        R = OA.entries @ OB.entries - OB.entries @ OA.entries
        R = R - mixed_op(br, p, K, theta).entries / (1j * p)
        out.append(_windowed_norm(R, OA))
    return np.array(out)


def mixed_trace(A, p: int, theta=None, tail_tol: float = 1e-12) -> complex:
    """``Tr Op(T_{A,p})`` over the full lattice with a tail check."""
    r = A.r
    K = int(np.ceil(4 * p))
    for _ in range(8):
        op = mixed_op(A, p, K, theta)
        diag = op.entries.diagonal().reshape(-1, op.dim)
        kmax = np.abs(op.lattice.modes()).max(axis=1)
        shell = np.abs(diag[kmax == K]).sum(axis=1).max()
        if shell / p ** r < tail_tol:
            return complex(diag.sum())
        K *= 2
    raise CutoffError("trace tail did not fall below tolerance")


def mixed_trace_residual(A: MixedSymbol, p_list, theta=None) -> np.ndarray:
    """``|(2 pi/p)^r / dim * Tr Op(T_A) - integral of A|`` per p.

    The integral over ``T*T^r x CP^n`` (unit fiber volume) only sees the zero
    Fourier mode: ``(2 pi)^r sum integral(profile) * integral(fiber)``.
    """
    from .fiber_geometry import integrate_fiber_exact
    r = A.r
    exact = 0.0
    for m, prof, fib in A.terms:
        if all(v == 0 for v in m):
            exact += (2 * np.pi) ** r * prof.integral() * integrate_fiber_exact(fib)
    out = []
    for p in p_list:
        dim = enumerate_basis(A.n, p).dim
        tr = mixed_trace(A, p, theta)
        out.append(abs((2 * np.pi / p) ** r / dim * tr - exact))
    return np.array(out)


# ----------------------------------------------------------------------------
# Hamiltonians and spectra
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class HamiltonianSpec:
    """``H = kinetic |xi|^2 + sum_i c_i(x, xi) <mu_L, a_i>(w)``.

    Perturbation coefficients must be real base symbols of order at most 1;
    then ``H >= (kinetic/2) |xi|^2`` outside a compact set.
    """

    r: int
    n: int
    kinetic: float = 1.0
    perturbations: tuple = ()

    def __post_init__(self):
        if self.kinetic <= 0:
            raise ValueError("kinetic coefficient must be positive (ellipticity)")
        for c, a in self.perturbations:
            if not isinstance(c, BaseSymbol) or not isinstance(a, LieElement):
                raise TypeError("perturbations are (BaseSymbol, LieElement) pairs")
            if c.r != self.r or a.n != self.n:
                raise ValueError("perturbation dimensions do not match")
            if c.order > 1:
                raise ValueError("perturbation coefficients must have order <= 1")
            if not c.is_real():
                raise ValueError("perturbation coefficients must be real")

    @property
    def ellipticity_margin(self) -> float:
        """Constant C with ``H >= C |xi|^2`` outside a compact set."""
        return self.kinetic / 2.0

    def symbol(self) -> MixedSymbol:
        H = MixedSymbol.from_base(BaseSymbol.kinetic(self.r, self.kinetic), self.n)
        for c, a in self.perturbations:
            H = H + MixedSymbol.tensor(c, moment_map_symbol(a))
        return H

    def potential_bound(self) -> float:
        """Sup bound of ``|sum c_i mu_i|`` on ``|xi| <= 1`` grown linearly."""
        total = 0.0
        for c, a in self.perturbations:
            mu = np.abs(np.linalg.eigvalsh(-1j * a.matrix)).max() / (2 * np.pi)
            xi = np.linspace(-4, 4, 201)
            if self.r == 1:
                pts = xi[:, None]
            else:
                pts = np.stack(np.meshgrid(xi, xi), -1).reshape(-1, 2)
            total += mu * sum(np.abs(p(pts)).max() for p in c.coeffs.values())
        return total

    def __call__(self, x, xi, w) -> np.ndarray:
        x = _vec(x, self.r)
        xi = _vec(xi, self.r)
        out = self.kinetic * np.sum(xi ** 2, axis=-1)
        for c, a in self.perturbations:
            out = out + np.real(c(x, xi)) * moment_map(a, w)
        return out

    def xi_independent(self) -> bool:
        return all(all(p.is_constant() for p in c.coeffs.values()) for c, _ in self.perturbations)


def build_hamiltonian(Hs: HamiltonianSpec, p: int, K: int, theta=None) -> MixedOperator:
    """Hermitian ``(Op(T_H) + Op(T_H)^*)/2``."""
    op = mixed_op(Hs.symbol(), p, K, theta)
    M = 0.5 * (op.entries + op.entries.conj().T)
    M.eliminate_zeros()
    return MixedOperator(p=p, K=K, r=op.r, n=op.n, twist=op.twist, entries=M.tocsr(),
                         symbol=Hs)


@dataclass
class SpectralData:
    """Eigen-decomposition of a Hermitian mixed operator, block by block.

    The operator is split into its connected components (exactly decoupled
    blocks).  Components of equal size are stacked into groups
    ``(indices (B, s), eigenvalues (B, s), eigenvectors (B, s, s))`` and
    diagonalized in one batched call.  ``scale = p^2`` converts the
    normalized eigenvalues to the unnormalized window convention
    ``lambda_unnormalized = scale * lambda``.
    """

    p: int
    size: int
    groups: list = field(repr=False)
    window: tuple = (-np.inf, np.inf)
    trusted_upto: float = np.inf
    residual: float = 0.0
    scale: float = 1.0

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.concatenate([ev.ravel() for _, ev, _ in self.groups]))

    def windowed_eigenvalues(self) -> np.ndarray:
        ev = self.eigenvalues
        a, b = self.window
        return ev[(ev >= a) & (ev <= b)]

    def apply(self, fn: Callable) -> sp.csr_matrix:
        """Sparse matrix of ``fn(H)`` assembled from the blocks."""
        rows, cols, vals = [], [], []
        for idx, ev, V in self.groups:
            B = np.einsum("bis,bs,bjs->bij", V, fn(ev), V.conj())
            s = idx.shape[1]
            rows.append(np.repeat(idx, s, axis=1).ravel())
            cols.append(np.tile(idx, (1, s)).ravel())
            vals.append(B.ravel())
        M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.size, self.size)).tocsr()
        M.eliminate_zeros()
        return M

    def _block_restrict(self, B: sp.spmatrix):
        """Intra-block entries of B, stacked like the eigenvector groups."""
        B = B.tocoo()
        keep = self._label[B.row] == self._label[B.col]
        rr, cc, vv = B.row[keep], B.col[keep], B.data[keep]
        out = []
        for gi, (idx, ev, V) in enumerate(self.groups):
            sel = self._group[rr] == gi
            arr = np.zeros(V.shape, dtype=complex)
            np.add.at(arr, (self._slot[rr[sel]], self._local[rr[sel]], self._local[cc[sel]]),
                      vv[sel])
            out.append(arr)
        return out

    def expectations(self, B: sp.spmatrix, lo: float = -np.inf, hi: float = np.inf):
        """Eigenvalues in [lo, hi] and the diagonal matrix elements ``<u, B u>``."""
        lams, vals = [], []
        for (idx, ev, V), sub in zip(self.groups, self._block_restrict(B)):
            diag = np.einsum("bis,bij,bjs->bs", V.conj(), sub, V)
            sel = (ev >= lo) & (ev <= hi)
            lams.append(ev[sel])
            vals.append(diag[sel])
        lam = np.concatenate(lams)
        order = np.argsort(lam, kind="stable")
        return lam[order], np.concatenate(vals)[order]

    def trace_with(self, fn: Callable, B: sp.spmatrix) -> complex:
        """``Tr[fn(H) B]`` using only intra-block entries of B."""
        lam, diag = self.expectations(B)
        return complex(np.dot(fn(lam), diag))


def _decompose(M: sp.csr_matrix, size_limit: int = 2500):
    """Batched eigendecomposition over connected components."""
    N = M.shape[0]
    pattern = M.copy().tocsr()
    pattern.data = np.ones_like(pattern.data, dtype=float)
    ncomp, labels = connected_components(pattern, directed=False)
    sizes = np.bincount(labels, minlength=ncomp)
    if sizes.max() > size_limit:
        raise CertificationError(f"coupled block of size {sizes.max()} exceeds the dense limit")
    order = np.argsort(labels, kind="stable")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    local = np.empty(N, dtype=int)
    local[order] = np.arange(N) - np.repeat(starts, sizes)
    group = np.empty(N, dtype=int)
    slot = np.empty(N, dtype=int)
    coo = M.tocoo()
    groups, worst = [], 0.0
    for gi, s in enumerate(np.unique(sizes)):
        comps = np.nonzero(sizes == s)[0]
        cslot = np.full(ncomp, -1)
        cslot[comps] = np.arange(len(comps))
        members = cslot[labels] >= 0
        group[members] = gi
        slot[members] = cslot[labels[members]]
        idx = np.empty((len(comps), s), dtype=int)
        idx[slot[members], local[members]] = np.nonzero(members)[0]
        sel = members[coo.row]
        blocks = np.zeros((len(comps), s, s), dtype=complex)
        np.add.at(blocks, (slot[coo.row[sel]], local[coo.row[sel]], local[coo.col[sel]]),
                  coo.data[sel])
        ev, V = np.linalg.eigh(blocks)
        res = np.abs(blocks @ V - V * ev[:, None, :]).max() if blocks.size else 0.0
        worst = max(worst, float(res))
        groups.append((idx, ev, V))
    return groups, worst, labels, group, slot, local


def spectral_decompose(Hop: MixedOperator, window=(-np.inf, np.inf), certify: bool = True,
                       tol: float = 1e-6) -> SpectralData:
    """Eigenpairs of a Hermitian mixed operator with a cutoff certificate.

    When ``certify`` is set and ``Hop`` was built from a
    :class:`HamiltonianSpec`, the operator is rebuilt at cutoff 2K and the
    eigenvalues inside ``window`` must agree to ``tol``; otherwise the window
    is untrusted and :class:`CertificationError` is raised.
    """
    M = Hop.entries
    groups, worst, labels, group, slot, local = _decompose(M)
    a, b = window
    data = SpectralData(p=Hop.p, size=M.shape[0], groups=groups, window=(a, b),
                        residual=worst, scale=float(Hop.p) ** 2)
    data._label, data._group, data._slot, data._local = labels, group, slot, local
    norm = max(np.abs(data.eigenvalues).max(), 1.0)
    if worst > 1e-9 * norm:
        raise CertificationError(f"eigen-residual {worst} too large")
    if certify and isinstance(Hop.symbol, HamiltonianSpec) and np.isfinite(b):
        big = build_hamiltonian(Hop.symbol, Hop.p, 2 * Hop.K, Hop.twist)
        ev2 = np.sort(np.concatenate([ev.ravel() for _, ev, _ in _decompose(big.entries)[0]]))
        ev1 = data.eigenvalues
        w1 = ev1[(ev1 >= a) & (ev1 <= b)]
        w2 = ev2[(ev2 >= a - tol) & (ev2 <= b + tol)]
        w2 = ev2[(ev2 >= a) & (ev2 <= b)] if len(w2) != len(w1) else w2
        if len(w1) != len(w2) or (len(w1) and np.abs(w1 - w2).max() > tol):
            raise CertificationError("window not stable under doubling the cutoff")
        data.trusted_upto = b
    return data


def propagator(Hop: MixedOperator, t: float, spectral: SpectralData | None = None) -> sp.csr_matrix:
    """``U_t = exp(-i t p H)`` from the block eigendecomposition."""
    spectral = spectral if spectral is not None else spectral_decompose(Hop, certify=False)
    p = Hop.p
    return spectral.apply(lambda ev: np.exp(-1j * t * p * ev))


# ----------------------------------------------------------------------------
# phase-space quadrature oracle (r = 1)
# ----------------------------------------------------------------------------

def _phase_nodes(r: int, n: int, nx: int, fiber_degree: int):
    x = 2 * np.pi * np.arange(nx) / nx
    rule = fiber_quadrature(n, fiber_degree)
    X = np.repeat(x, len(rule.weights))[:, None]
    W = np.tile(rule.points, (nx, 1))
    wts = np.repeat(np.full(nx, 2 * np.pi / nx), len(rule.weights)) * np.tile(rule.weights, nx)
    return X, W, wts


def _sublevel_intervals(Hs: HamiltonianSpec, X, W, level: float, grid: int):
    """Endpoints of ``{xi : H(x, xi, w) <= level}`` for each node (r = 1).

    Returns a list of (lo, hi) arrays, one pair per interval slot; empty
    slots have lo == hi.
    """
    C = Hs.ellipticity_margin
    bound = Hs.potential_bound()
    xmax = np.sqrt(max(level + 2 * bound + 1.0, 1.0) / C) + 1.0
    g = np.linspace(-xmax, xmax, grid)
    N = X.shape[0]
    vals = Hs(np.repeat(X, grid, axis=0), np.tile(g, N)[:, None],
              np.repeat(W, grid, axis=0)).reshape(N, grid) - level
    inside = vals <= 0
    if inside[:, 0].any() or inside[:, -1].any():
        raise CertificationError("sublevel set reaches the momentum box")
    change = np.diff(inside.astype(int), axis=1)
    nslots = int(max((change == 1).sum(axis=1).max(), 0))
    out = []
    for s in range(nslots):
        lo = np.zeros(N)
        hi = np.zeros(N)
        for node in range(N):
            ups = np.nonzero(change[node] == 1)[0]
            downs = np.nonzero(change[node] == -1)[0]
            if s < len(ups):
                lo[node] = _bisect(Hs, X[node], W[node], level, g[ups[s]], g[ups[s] + 1])
                hi[node] = _bisect(Hs, X[node], W[node], level, g[downs[s]], g[downs[s] + 1])
        out.append((lo, hi))
    return out


def _bisect(Hs, x, w, level, a, b, iters: int = 60):
    fa = Hs(x[None], np.array([[a]]), w[None])[0] - level
    for _ in range(iters):
        mid = 0.5 * (a + b)
        fm = Hs(x[None], np.array([[mid]]), w[None])[0] - level
        if (fm <= 0) == (fa <= 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def _interval_intervals_fast(Hs: HamiltonianSpec, X, W, level: float):
    """Closed form for ``H = k xi^2 + V(x, w)`` (xi-independent perturbation)."""
    V = Hs(X, np.zeros((X.shape[0], 1)), W)
    rad = np.sqrt(np.clip(level - V, 0, None) / Hs.kinetic)
    return [(-rad, rad)]


def _band_integral(Hs: HamiltonianSpec, F, a: float, b: float, nx: int, fdeg: int,
                   gl: int, grid: int):
    """Integral of F over ``{a <= H <= b}`` with product quadrature (r = 1)."""
    X, W, wts = _phase_nodes(1, Hs.n, nx, fdeg)
    t, tw = leggauss(gl)
    total = 0.0 + 0.0j

    def intervals(level):
        if Hs.xi_independent():
            return _interval_intervals_fast(Hs, X, W, level)
        return _sublevel_intervals(Hs, X, W, level, grid)

    def integrate(ivals):
        acc = 0.0 + 0.0j
        for lo, hi in ivals:
            half = 0.5 * (hi - lo)
            mid = 0.5 * (hi + lo)
            XI = mid[:, None] + half[:, None] * t[None, :]
            vals = F(np.repeat(X, gl, axis=0), XI.reshape(-1, 1), np.repeat(W, gl, axis=0))
            vals = np.asarray(vals).reshape(-1, gl)
            acc += np.sum(wts * half * (vals @ tw))
        return acc

    total = integrate(intervals(b))
    if np.isfinite(a) and a > -np.inf:
        total -= integrate(intervals(a))
    return total


def phase_space_band_integral(Hs: HamiltonianSpec, F, a: float, b: float,
                              tol: float = 1e-8, nx: int = 32, fdeg: int = 24,
                              gl: int = 32, grid: int = 400) -> complex:
    """Certified ``integral over {a <= H <= b} of F dx dxi dv_N`` (r = 1).

    The ``xi``-integration runs exactly over the sublevel intervals, so the
    integrand is smooth in the remaining periodic variables; the result is
    accepted when doubling every resolution changes it by less than ``tol``.
    """
    if Hs.r != 1:
        raise NotImplementedError("the phase-space oracle is implemented for r = 1")
    v1 = _band_integral(Hs, F, a, b, nx, fdeg, gl, grid)
    v2 = _band_integral(Hs, F, a, b, 2 * nx, 2 * fdeg, 2 * gl, 2 * grid)
    if abs(v1 - v2) > tol * max(1.0, abs(v2)):
        raise CertificationError(f"phase-space quadrature not converged: {abs(v1 - v2):.3e}")
    return v2


def phase_space_integral(F, r: int, n: int, xi_max: float, tol: float = 1e-8,
                         nx: int = 32, fdeg: int = 24, panels: int = 64, gl: int = 16) -> complex:
    """Certified ``integral of F dx dxi dv_N`` over ``|xi| <= xi_max`` (r = 1)."""
    if r != 1:
        raise NotImplementedError("the phase-space oracle is implemented for r = 1")

    def once(nx, fdeg, panels):
        X, W, wts = _phase_nodes(1, n, nx, fdeg)
        t, tw = leggauss(gl)
        edges = np.linspace(-xi_max, xi_max, panels + 1)
        half = 0.5 * np.diff(edges)
        xi = (0.5 * (edges[1:] + edges[:-1])[:, None] + half[:, None] * t[None, :]).ravel()
        xw = (half[:, None] * tw[None, :]).ravel()
        total = 0.0 + 0.0j
        for s in range(0, len(xi), 256):
            xs, ws = xi[s:s + 256], xw[s:s + 256]
            vals = F(np.repeat(X, len(xs), axis=0), np.tile(xs, X.shape[0])[:, None],
                     np.repeat(W, len(xs), axis=0)).reshape(X.shape[0], len(xs))
            total += wts @ (vals @ ws)
        return total

    v1 = once(nx, fdeg, panels)
    v2 = once(2 * nx, 2 * fdeg, 2 * panels)
    if abs(v1 - v2) > tol * max(1.0, abs(v2)):
        raise CertificationError(f"phase-space quadrature not converged: {abs(v1 - v2):.3e}")
    return v2


# ----------------------------------------------------------------------------
# functional calculus, Weyl laws, Egorov, variance
# ----------------------------------------------------------------------------

def hamiltonian_function_symbol(fn: Callable, Hs: HamiltonianSpec, degree: int,
                                max_mode: int, tol: float = 1e-8) -> SampledMixedSymbol:
    """The symbol ``fn(H(x, xi, w))`` resampled as a mixed symbol."""
    return SampledMixedSymbol(lambda x, xi, w: fn(Hs(x, xi, w)), Hs.r, Hs.n, degree,
                              max_mode, tol=tol)


def functional_calculus_residual(fn: Callable, Hs: HamiltonianSpec, p_list, K_factor: float = 1.0,
                                 degree: int = 10, max_mode: int = 8, theta=None,
                                 xi_window: float | None = None) -> dict:
    """Windowed ``||fn(H^{F_p}) - Op(T_{fn(H)})||`` per p.

    ``fn(H)`` uses every eigenpair of the truncated operator; the cutoff is
    ``K = K_factor * p``, raised to ``2 max_mode`` when needed, and the
    window ``|k| <= K_factor p / 2`` is the same momentum range for every p.
    """
    sym = hamiltonian_function_symbol(fn, Hs, degree, max_mode)
    res = []
    for p in p_list:
        K = max(int(round(K_factor * p)), 2 * max_mode)
        Hop = build_hamiltonian(Hs, p, K, theta)
        spec = spectral_decompose(Hop, certify=False)
        F = spec.apply(fn)
        Q = mixed_op(sym, p, K, theta).entries
        res.append(_windowed_norm(F - Q, Hop, radius=K_factor * p / 2))
    sym.certify()
    res = np.array(res)
    slope, se = loglog_slope(p_list, res) if np.all(res > 0) else (float("nan"), float("nan"))
    return {"p": list(p_list), "residual": res, "slope": slope, "slope_se": se,
            "certificate": dict(sym.certificate)}


def local_weyl_law_residual(fn: Callable, A: MixedSymbol, Hs: HamiltonianSpec, p_list,
                            K_factor: float = 1.0, theta=None, xi_max: float | None = None,
                            tol: float = 1e-8) -> dict:
    """``|(2 pi/p)^r / dim * Tr[fn(H) Op(T_A)] - integral of fn(H) A|`` per p."""
    r = Hs.r
    if xi_max is None:
        xi_max = K_factor
    exact = phase_space_integral(lambda x, xi, w: fn(Hs(x, xi, w)) * A(x, xi, w),
                                 r, Hs.n, xi_max, tol=tol)
    res = []
    for p in p_list:
        K = max(int(round(K_factor * p)), 2 * A.bandwidth() + 2)
        Hop = build_hamiltonian(Hs, p, K, theta)
        spec = spectral_decompose(Hop, certify=False)
        B = mixed_op(A, p, K, theta).entries
        dim = enumerate_basis(Hs.n, p).dim
        val = (2 * np.pi / p) ** r / dim * spec.trace_with(fn, B)
        res.append(abs(val - exact))
    res = np.array(res)
    slope, se = loglog_slope(p_list, res) if np.all(res > 0) else (float("nan"), float("nan"))
    return {"p": list(p_list), "residual": res, "slope": slope, "slope_se": se,
            "integral": exact}


def weyl_law_count(Hs: HamiltonianSpec, a: float, p_list, K_factor: float = None,
                   theta=None) -> dict:
    """Counting ratio ``(2 pi/p)^r/dim * #{lambda <= a} / Vol(H <= a)``.

    Returns ``nan`` (the empty-window marker) when the classical volume
    vanishes.
    """
    r = Hs.r
    vol = phase_space_band_integral(Hs, lambda x, xi, w: np.ones(x.shape[0]), -np.inf, a).real \
        if r == 1 else _kinetic_volume(Hs, a)
    if K_factor is None:
        K_factor = 2.0 * np.sqrt(max(a + Hs.potential_bound(), 0) / Hs.kinetic) + 0.5
    out = []
    for p in p_list:
        K = int(np.ceil(K_factor * p))
        Hop = build_hamiltonian(Hs, p, K, theta)
        spec = spectral_decompose(Hop, window=(-np.inf, a))
        count = np.count_nonzero(spec.eigenvalues <= a)
        dim = enumerate_basis(Hs.n, p).dim
        out.append((2 * np.pi / p) ** r / dim * count / vol if vol > 0 else np.nan)
    return {"p": list(p_list), "ratio": np.array(out), "volume": vol}


def _kinetic_volume(Hs: HamiltonianSpec, a: float) -> float:
    if Hs.perturbations:
        raise NotImplementedError("r = 2 volumes are implemented for the kinetic term only")
    rad = np.sqrt(max(a, 0) / Hs.kinetic)
    return (2 * np.pi) ** 2 * np.pi * rad ** 2


def egorov_residual(A: MixedSymbol, Hs: HamiltonianSpec, p_list, t_grid, K_factor: float = 1.0,
                    degree: int | None = None, max_mode: int | None = None, theta=None,
                    dt: float = 0.01, tol: float = 1e-7) -> dict:
    """Windowed ``||U_{-t} Op(T_A) U_t - Op(T_{A o psi_t})||`` per (p, t).

    The flowed symbol is resampled from the classical torus flow; both the
    resampling and the time-step refinement must meet ``tol``.
    """
    from .classical_dynamics import TorusHamiltonianFlow
    flow = TorusHamiltonianFlow(Hs)
    degree = A.degree + 4 if degree is None else degree
    max_mode = A.bandwidth() + 6 if max_mode is None else max_mode
    table = np.zeros((len(p_list), len(t_grid)))
    certs = []
    for ti, t in enumerate(t_grid):
        if t == 0:
            flowed = A
        else:
            flowed = SampledMixedSymbol(flow.flowed_function(A, t, dt), Hs.r, Hs.n, degree,
                                        max_mode, tol=tol)
        for pi, p in enumerate(p_list):
            K = max(int(round(K_factor * p)), 2 * max_mode)
            Hop = build_hamiltonian(Hs, p, K, theta)
            op = mixed_op(A, p, K, theta).entries
            if t == 0:
                table[pi, ti] = 0.0
                continue
            spec = spectral_decompose(Hop, certify=False)
            U = propagator(Hop, t, spec)
            radius = K_factor * p / 2
            Uw = U[:, Hop.window(radius)]
            conj = (Uw.conj().T @ op @ Uw)
            target = mixed_op(flowed, p, K, theta).windowed(radius)
            table[pi, ti] = spectral_norm(conj - target)
        if t != 0:
            flowed.certify()
            certs.append(dict(flowed.certificate))
    return {"p": list(p_list), "t": list(t_grid), "residual": table, "certificates": certs,
            "flow_error": flow.last_error}


def time_average_symbol(A: MixedSymbol, Hs: HamiltonianSpec, t0: float, degree: int | None = None,
                        max_mode: int | None = None, dt: float = 0.01,
                        tol: float = 1e-7) -> SampledMixedSymbol:
    """``<A>_{t0} = (1/t0) int_0^t0 A o psi_t dt`` as a resampled symbol."""
    from .classical_dynamics import TorusHamiltonianFlow
    flow = TorusHamiltonianFlow(Hs)
    degree = A.degree + 4 if degree is None else degree
    max_mode = A.bandwidth() + 6 if max_mode is None else max_mode
    return SampledMixedSymbol(flow.time_average_function(A, t0, dt), Hs.r, Hs.n, degree,
                              max_mode, tol=tol)


def microcanonical_average(F, Hs: HamiltonianSpec, a: float, b: float, tol: float = 1e-8) -> complex:
    vol = phase_space_band_integral(Hs, lambda x, xi, w: np.ones(x.shape[0]), a, b, tol=tol).real
    if vol <= 0:
        raise CertificationError("empty energy band")
    return phase_space_band_integral(Hs, F, a, b, tol=tol) / vol


def quantum_variance(A, Hs: HamiltonianSpec, p: int, window, K_factor: float | None = None,
                     theta=None, average: complex | None = None) -> dict:
    """``(2 pi/p)^r / dim * sum_{lambda_j in [a,b]} |<Op(T_A) u_j, u_j> - avg|^2``.

    The band ``[a, b]`` refers to the normalized operator; the unnormalized
    window is ``[a p^2, b p^2]`` (``scale`` in the result).
    """
    a, b = window
    r = Hs.r
    if average is None:
        average = microcanonical_average(lambda x, xi, w: A(x, xi, w), Hs, a, b)
    if K_factor is None:
        K_factor = 2.0 * np.sqrt((b + Hs.potential_bound()) / Hs.kinetic) + 0.5
    K = max(int(np.ceil(K_factor * p)), 2 * A.bandwidth() + 2)
    Hop = build_hamiltonian(Hs, p, K, theta)
    spec = spectral_decompose(Hop, window=(a, b))
    B = mixed_op(A, p, K, theta).entries.tocsr()
    dim = enumerate_basis(Hs.n, p).dim
    lam, vals = spec.expectations(B, a, b)
    total, count = float(np.sum(np.abs(vals - average) ** 2)), len(lam)
    if count == 0:
        return {"variance": np.nan, "count": 0, "average": average, "scale": spec.scale}
    return {"variance": (2 * np.pi / p) ** r / dim * total, "count": count,
            "average": average, "scale": spec.scale}


def variance_bound_report(A: MixedSymbol, Hs: HamiltonianSpec, p_list, window, t0_list,
                          theta=None, dt: float = 0.02) -> dict:
    """Quantum variances per p and classical time-average deviations per t0.

    The constants in ``Var <= C dev(t0)^2 + C' / p`` are fitted by
    nonnegative least squares over all (p, t0) pairs; the report flags
    whether the two largest p obey the fitted bound for every t0.
    """
    from .classical_dynamics import TorusHamiltonianFlow
    a, b = window
    avg = microcanonical_average(lambda x, xi, w: A(x, xi, w), Hs, a, b)
    var = np.array([quantum_variance(A, Hs, p, window, theta=theta, average=avg)["variance"]
                    for p in p_list])
    flow = TorusHamiltonianFlow(Hs)
    vol = phase_space_band_integral(Hs, lambda x, xi, w: np.ones(x.shape[0]), a, b).real
    # |<A>_t0 - avg|^2 has fiber bidegree 2 deg(A) when the flow preserves
    # the fiber; the doubling check certifies the choice otherwise
    fdeg = 2 * A.degree + 4
    dev = []
    for t0 in t0_list:
        tav = flow.time_average_function(A, t0, dt)
        sq = phase_space_band_integral(Hs, lambda x, xi, w: np.abs(tav(x, xi, w) - avg) ** 2,
                                       a, b, tol=1e-6, nx=16, fdeg=fdeg, gl=16)
        dev.append(float(np.sqrt(max(sq.real, 0.0) / vol)))
    dev = np.array(dev)
    P, T = np.meshgrid(np.asarray(p_list, dtype=float), dev, indexing="ij")
    design = np.column_stack([T.ravel() ** 2, 1.0 / P.ravel()])
    target = np.repeat(var, len(dev))
    (C, Cp), _ = nnls(design, target)
    top = np.argsort(p_list)[-2:]
    bound = C * dev[None, :] ** 2 + Cp / np.asarray(p_list, dtype=float)[top][:, None]
    ok = bool(np.all(var[top][:, None] <= bound * (1 + 1e-9) + 1e-14))
    return {"p": list(p_list), "variance": var, "t0": list(t0_list), "deviation": dev,
            "C": float(C), "C_prime": float(Cp), "bound_holds": ok, "average": avg}
