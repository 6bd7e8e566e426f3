"""Semiclassical Weyl quantization on the flat r-torus.

A symbol ``A(x, xi) = sum_m exp(i m.x) A_m(xi)`` acts on the twisted Fourier
modes ``exp(i (k + theta).x)`` by the midpoint rule

    Op_h(A) e_k = sum_m A_m(h (k + theta + m/2)) e_{k+m},

which is the torus form of the Weyl quantization and is exact (no charts).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product as iproduct

import numpy as np
import scipy.sparse as sp

from .numerics import spectral_norm
from .profiles import XiProfile


class CutoffError(ValueError):
    """Raised when a symbol does not fit the Fourier cutoff or a tail bound fails."""


# ----------------------------------------------------------------------------
# symbols
# ----------------------------------------------------------------------------

class BaseSymbol:
    """Finite Fourier series in x with :class:`XiProfile` coefficients.

    Parameters
    ----------
    r : int
        Base dimension.
    coeffs : dict
        Map from integer tuples ``m`` to profiles ``A_m``.
    order : float, optional
        Declared symbol order (growth in xi).  Defaults to the largest
        polynomial degree of the coefficients.
    """

    def __init__(self, r: int, coeffs: dict, order: float | None = None):
        self.r = int(r)
        clean = {}
        for m, prof in coeffs.items():
            m = tuple(int(v) for v in np.atleast_1d(m))
            if len(m) != self.r:
                raise ValueError("Fourier index has wrong length")
            if not isinstance(prof, XiProfile):
                prof = XiProfile.constant(self.r, complex(prof))
            acc = clean.get(m)
            clean[m] = prof if acc is None else acc + prof
        self.coeffs = {m: p for m, p in clean.items() if not p.is_zero()}
        if order is None:
            degs = [p.polynomial_degree() for p in self.coeffs.values()]
            order = max(degs) if degs else -np.inf
        self.order = order

    # -- constructors ----------------------------------------------------------
    @classmethod
    def constant(cls, r: int, value: complex = 1.0) -> "BaseSymbol":
        return cls(r, {(0,) * r: XiProfile.constant(r, value)})

    @classmethod
    def momentum(cls, r: int, j: int) -> "BaseSymbol":
        e = [0] * r
        e[j] = 1
        return cls(r, {(0,) * r: XiProfile.monomial(r, e)})

    @classmethod
    def kinetic(cls, r: int, coef: float = 1.0) -> "BaseSymbol":
        prof = XiProfile(r, [((0.0,) * r, (0.0,) * r,
                              {tuple(2 * int(i == j) for i in range(r)): coef
                               for j in range(r)})])
        return cls(r, {(0,) * r: prof})

    @classmethod
    def exponential(cls, r: int, m, profile: XiProfile | None = None) -> "BaseSymbol":
        """``exp(i m.x) * profile(xi)``."""
        return cls(r, {tuple(m): profile if profile is not None else XiProfile.constant(r)})

    @classmethod
    def cos(cls, r: int, m, profile: XiProfile | None = None) -> "BaseSymbol":
        prof = profile if profile is not None else XiProfile.constant(r)
        m = tuple(m)
        return cls(r, {m: prof * 0.5, tuple(-v for v in m): prof * 0.5})

    @classmethod
    def sin(cls, r: int, m, profile: XiProfile | None = None) -> "BaseSymbol":
        prof = profile if profile is not None else XiProfile.constant(r)
        m = tuple(m)
        return cls(r, {m: prof * (-0.5j), tuple(-v for v in m): prof * 0.5j})

    # -- queries ---------------------------------------------------------------
    @property
    def modes(self) -> list:
        return sorted(self.coeffs)

    def bandwidth(self) -> int:
        return max((max(abs(v) for v in m) for m in self.coeffs), default=0)

    def is_real(self, tol: float = 1e-12, probes: int = 16, seed: int = 0) -> bool:
        """Checks ``A_{-m} = conj(A_m)`` on random momentum probes."""
        rng = np.random.default_rng(seed)
        xi = rng.normal(scale=2.0, size=(probes, self.r))
        for m, prof in self.coeffs.items():
            neg = tuple(-v for v in m)
            other = self.coeffs.get(neg)
            ref = other(xi) if other is not None else np.zeros(probes)
            if np.abs(prof(xi) - np.conj(ref)).max() > tol * (1 + np.abs(ref).max()):
                return False
        return True

    def is_x_independent(self) -> bool:
        return all(all(v == 0 for v in m) for m in self.coeffs)

    def __call__(self, x, xi) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if self.r == 1:
            x = x[..., None] if (x.ndim == 0 or x.shape[-1] != 1) else x
            xi = xi[..., None] if (xi.ndim == 0 or xi.shape[-1] != 1) else xi
        shape = np.broadcast_shapes(x.shape[:-1], xi.shape[:-1])
        out = np.zeros(shape, dtype=complex)
        for m, prof in self.coeffs.items():
            out = out + np.exp(1j * (x @ np.asarray(m, dtype=float))) * prof(xi)
        return out

    # -- algebra ---------------------------------------------------------------
    def _coerce(self, other) -> "BaseSymbol":
        if isinstance(other, BaseSymbol):
            return other
        return BaseSymbol.constant(self.r, complex(other))

    def __add__(self, other):
        other = self._coerce(other)
        coeffs = dict(self.coeffs)
        for m, p in other.coeffs.items():
            coeffs[m] = coeffs[m] + p if m in coeffs else p
        return BaseSymbol(self.r, coeffs)

    __radd__ = __add__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __mul__(self, other):
        if not isinstance(other, BaseSymbol):
            return BaseSymbol(self.r, {m: p * other for m, p in self.coeffs.items()})
        coeffs = {}
        for m1, p1 in self.coeffs.items():
            for m2, p2 in other.coeffs.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                prod = p1 * p2
                coeffs[m] = coeffs[m] + prod if m in coeffs else prod
        return BaseSymbol(self.r, coeffs)

    __rmul__ = __mul__

    def conj(self) -> "BaseSymbol":
        return BaseSymbol(self.r, {tuple(-v for v in m): p.conj()
                                   for m, p in self.coeffs.items()})

    def dx(self, j: int) -> "BaseSymbol":
        return BaseSymbol(self.r, {m: p * (1j * m[j]) for m, p in self.coeffs.items()
                                   if m[j] != 0})

    def dxi(self, j: int, order: int = 1) -> "BaseSymbol":
        return BaseSymbol(self.r, {m: p.derivative(j, order) for m, p in self.coeffs.items()})

    def translate_x(self, x0) -> "BaseSymbol":
        """``A(x + x0, xi)``."""
        x0 = np.asarray(x0, dtype=float)
        return BaseSymbol(self.r, {m: p * np.exp(1j * np.dot(m, x0))
                                   for m, p in self.coeffs.items()})

    def poisson(self, other: "BaseSymbol") -> "BaseSymbol":
        """``{A, B} = sum_j (d_xi A d_x B - d_x A d_xi B)``."""
        out = BaseSymbol(self.r, {})
        for j in range(self.r):
            out = out + self.dxi(j) * other.dx(j) - self.dx(j) * other.dxi(j)
        return out

    def __repr__(self):
        return f"BaseSymbol(r={self.r}, modes={len(self.coeffs)})"


def moyal_terms(A: BaseSymbol, B: BaseSymbol, order: int) -> BaseSymbol:
    """Terms of the Weyl composition expansion ``A # B = sum h^j A #_j B``.

    ``order = 0`` gives ``A B``; ``order = 1`` gives
    ``(1/(2i)) sum_j (d_xi A d_x B - d_x A d_xi B)``; ``order = 2`` gives the
    second Moyal term, used by the third-order commutator checks.
    """
    if order == 0:
        return A * B
    if order == 1:
        return A.poisson(B) * (1 / 2j)
    if order == 2:
        # (1/2)(1/(2i))^2 sum_{jk} (dxi_j dxi_k A dx_j dx_k B
        #   - 2 dxi_j dx_k A dx_j dxi_k B + dx_j dx_k A dxi_j dxi_k B)
        out = BaseSymbol(A.r, {})
        for j in range(A.r):
            for k in range(A.r):
                out = out + A.dxi(j).dxi(k) * B.dx(j).dx(k) \
                    - A.dxi(j).dx(k) * B.dx(j).dxi(k) * 2 \
                    + A.dx(j).dx(k) * B.dxi(j).dxi(k)
        return out * (0.5 * (1 / 2j) ** 2)
    raise ValueError("order must be 0, 1 or 2")


# ----------------------------------------------------------------------------
# lattice and operators
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeLattice:
    """Truncated lattice ``{k in Z^r : |k|_inf <= K}`` with flat indexing."""

    r: int
    K: int

    @property
    def side(self) -> int:
        return 2 * self.K + 1

    @property
    def size(self) -> int:
        return self.side ** self.r

    def modes(self) -> np.ndarray:
        rng = np.arange(-self.K, self.K + 1)
        grids = np.meshgrid(*([rng] * self.r), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def flat(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k) + self.K
        return np.ravel_multi_index(tuple(k.T), (self.side,) * self.r)

    def window(self, radius: float | None = None) -> np.ndarray:
        """Flat indices of modes with ``|k|_inf <= radius`` (default K/2)."""
        radius = self.K / 2 if radius is None else radius
        k = self.modes()
        return np.nonzero(np.abs(k).max(axis=1) <= radius)[0]


@dataclass(frozen=True)
class WeylOperator:
    """Sparse matrix of ``Op_h(A)`` on the truncated twisted mode lattice."""

    h: float
    K: int
    theta: np.ndarray
    entries: sp.csr_matrix = field(repr=False)
    r: int = 1

    @property
    def lattice(self) -> ModeLattice:
        return ModeLattice(self.r, self.K)

    def windowed(self, radius: float | None = None) -> sp.csr_matrix:
        idx = self.lattice.window(radius)
        return self.entries[idx][:, idx]


def _theta(theta, r: int) -> np.ndarray:
    th = np.zeros(r) if theta is None else np.broadcast_to(np.asarray(theta, dtype=float), (r,))
    return np.array(th)


def weyl_op(A: BaseSymbol, h: float, K: int, theta=None) -> WeylOperator:
    """Exact Weyl matrix of ``A`` on modes ``|k|_inf <= K``.

    Raises
    ------
    CutoffError
        If the Fourier support of ``A`` does not fit within ``2K``.
    """
    if not 0 < h <= 1:
        raise ValueError("h must lie in (0, 1]")
    if A.bandwidth() > 2 * K:
        raise CutoffError(f"symbol bandwidth {A.bandwidth()} exceeds 2K = {2 * K}")
    r = A.r
    th = _theta(theta, r)
    lat = ModeLattice(r, K)
    k = lat.modes()
    rows, cols, vals = [], [], []
    for m, prof in A.coeffs.items():
        m = np.asarray(m)
        tgt = k + m
        ok = np.all(np.abs(tgt) <= K, axis=1)
        src = k[ok]
        xi = h * (src + th + m / 2.0)
        rows.append(lat.flat(tgt[ok]))
        cols.append(lat.flat(src))
        vals.append(prof(xi))
    if rows:
        M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(lat.size, lat.size)).tocsr()
    else:
        M = sp.csr_matrix((lat.size, lat.size), dtype=complex)
    return WeylOperator(h=h, K=K, theta=th, entries=M, r=r)


def sobolev_weights(lattice: ModeLattice, h: float, order: float, theta=None) -> np.ndarray:
    """Diagonal semiclassical Sobolev weights ``(1 + |h(k+theta)|^2)^(order/2)``."""
    th = _theta(theta, lattice.r)
    xi = h * (lattice.modes() + th)
    return (1 + np.sum(xi ** 2, axis=1)) ** (order / 2)


def _cutoff_for(h: float, xi_window: float, bandwidth: int) -> int:
    """Cutoff whose half-window covers ``|xi| <= xi_window`` and the bandwidth."""
    K = int(np.ceil(2 * xi_window / h)) + 2 * bandwidth
    return max(K, 4 * max(bandwidth, 1))


def weyl_composition_residual(A: BaseSymbol, B: BaseSymbol, h_list, j: int = 1,
                              xi_window: float = 2.0, theta=None) -> np.ndarray:
    """Windowed ``||Op(A)Op(B) - sum_{i<=j} h^i Op(A #_i B)||`` per h.

    The window is the mode block ``|k|_inf <= K/2``, with K chosen so that the
    window covers ``|xi| <= xi_window``.  Because all symbols have finite
    Fourier support, the windowed product is exact once ``K/2`` exceeds the
    bandwidth, so doubling K leaves the result unchanged.
    """
    terms = [moyal_terms(A, B, i) for i in range(j + 1)]
    band = A.bandwidth() + B.bandwidth()
    out = []
    for h in h_list:
        K = _cutoff_for(h, xi_window, band)
        OA = weyl_op(A, h, K, theta)
        OB = weyl_op(B, h, K, theta)
        R = OA.entries @ OB.entries
        for i, t in enumerate(terms):
            R = R - h ** i * weyl_op(t, h, K, theta).entries
        idx = OA.lattice.window()
        out.append(spectral_norm(R[idx][:, idx]))
    return np.array(out)


def weyl_adjoint_residual(A: BaseSymbol, h: float, K: int, theta=None) -> float:
    """``||Op_h(A)^* - Op_h(conj A)||`` on the full truncated lattice."""
    O1 = weyl_op(A, h, K, theta).entries
    O2 = weyl_op(A.conj(), h, K, theta).entries
    return spectral_norm(O1.conj().T - O2)


def weyl_trace(A: BaseSymbol, h: float, theta=None, tail_tol: float = 1e-12) -> complex:
    """``Tr Op_h(A)`` summed over the full lattice until the tail is negligible.

    Only the zero Fourier mode contributes to the diagonal.  The sum runs over
    growing boxes until the outer shell contributes less than ``tail_tol``
    relative to the scale of the integral.
    """
    r = A.r
    zero = A.coeffs.get((0,) * r)
    if zero is None:
        return 0.0 + 0.0j
    th = _theta(theta, r)
    K = int(np.ceil(4.0 / h))
    for _ in range(12):
        lat = ModeLattice(r, K)
        k = lat.modes()
        vals = zero(h * (k + th))
        shell = np.abs(k).max(axis=1) == K
        tail = np.abs(vals[shell]).max() * (h ** r)
        if tail < tail_tol:
            return complex(vals.sum())
        K *= 2
    raise CutoffError("trace tail did not fall below tolerance")


def weyl_trace_residual(A: BaseSymbol, h_list, theta=None) -> np.ndarray:
    """``|(2 pi h)^r Tr Op_h(A) - integral of A over T*T^r|`` per h.

    The phase-space integral is ``(2 pi)^r`` times the exact integral of the
    zero-mode profile.
    """
    r = A.r
    zero = A.coeffs.get((0,) * r)
    exact = (2 * np.pi) ** r * (zero.integral() if zero is not None else 0.0)
    out = []
    for h in h_list:
        tr = weyl_trace(A, h, theta)
        out.append(abs((2 * np.pi * h) ** r * tr - exact))
    return np.array(out)


def lattice_shift(lattice: ModeLattice, e) -> sp.csr_matrix:
    """Partial isometry ``e_k -> e_{k+e}`` on the truncated lattice."""
    k = lattice.modes()
    tgt = k + np.asarray(e)
    ok = np.all(np.abs(tgt) <= lattice.K, axis=1)
    return sp.coo_matrix((np.ones(ok.sum()), (lattice.flat(tgt[ok]), lattice.flat(k[ok]))),
                         shape=(lattice.size, lattice.size)).tocsr()


def phase_conjugation(lattice: ModeLattice, x0, theta=None) -> sp.csr_matrix:
    """Diagonal ``P = exp(i (k+theta).x0)``; ``P Op(A) P^* = Op(A(. + x0))``."""
    th = _theta(theta, lattice.r)
    return sp.diags(np.exp(1j * (lattice.modes() + th) @ np.asarray(x0, dtype=float)))
