"""Exact algebra of momentum profiles ``poly(xi) * exp(-sum s_i (xi_i - c_i)^2)``.

Profiles are closed under sums, products and differentiation, which gives
symbols analytic derivatives of any order without finite differences.
"""
from __future__ import annotations

from math import comb, gamma
from typing import Iterable

import numpy as np


def _poly_mul(p1: dict, p2: dict) -> dict:
    out = {}
    for e1, c1 in p1.items():
        for e2, c2 in p2.items():
            e = tuple(a + b for a, b in zip(e1, e2))
            out[e] = out.get(e, 0) + c1 * c2
    return {e: c for e, c in out.items() if c != 0}


class XiProfile:
    """Finite sum of polynomial-times-Gaussian terms in ``xi in R^r``.

    Each term is ``(s, c, poly)`` with widths ``s_i >= 0`` (``s_i = 0`` means
    no decay in that direction), centers ``c_i`` and ``poly`` a dict from
    exponent tuples to complex coefficients.
    """

    def __init__(self, r: int, terms: Iterable = ()):
        self.r = int(r)
        merged = {}
        for s, c, poly in terms:
            s = tuple(float(v) for v in s)
            c = tuple(float(v) if sv > 0 else 0.0 for v, sv in zip(c, s))
            if any(v < 0 for v in s):
                raise ValueError("Gaussian widths must be nonnegative")
            key = (s, c)
            acc = merged.setdefault(key, {})
            for e, v in poly.items():
                e = tuple(int(t) for t in e)
                acc[e] = acc.get(e, 0) + complex(v)
        self.terms = [(s, c, {e: v for e, v in poly.items() if v != 0})
                      for (s, c), poly in merged.items()]
        self.terms = [t for t in self.terms if t[2]]

    # -- constructors ----------------------------------------------------------
    @classmethod
    def constant(cls, r: int, value: complex = 1.0) -> "XiProfile":
        return cls(r, [((0.0,) * r, (0.0,) * r, {(0,) * r: value})])

    @classmethod
    def monomial(cls, r: int, exps, value: complex = 1.0) -> "XiProfile":
        return cls(r, [((0.0,) * r, (0.0,) * r, {tuple(exps): value})])

    @classmethod
    def gaussian(cls, r: int, width, center=None, value: complex = 1.0,
                 exps=None) -> "XiProfile":
        """``value * xi^exps * exp(-sum width_i (xi_i - center_i)^2)``."""
        width = np.broadcast_to(np.asarray(width, dtype=float), (r,))
        center = np.zeros(r) if center is None else np.broadcast_to(
            np.asarray(center, dtype=float), (r,))
        exps = (0,) * r if exps is None else tuple(exps)
        return cls(r, [(tuple(width), tuple(center), {exps: value})])

    # -- evaluation -----------------------------------------------------------
    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.r == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
            xi = xi[..., None]
        out = np.zeros(xi.shape[:-1], dtype=complex)
        for s, c, poly in self.terms:
            env = np.exp(-np.sum(np.asarray(s) * (xi - np.asarray(c)) ** 2, axis=-1))
            pv = np.zeros(xi.shape[:-1], dtype=complex)
            for e, v in poly.items():
                pv = pv + v * np.prod(xi ** np.asarray(e), axis=-1)
            out = out + pv * env
        return out

    # -- algebra --------------------------------------------------------------
    def __add__(self, other):
        other = _coerce(self.r, other)
        return XiProfile(self.r, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-_coerce(self.r, other))

    def __mul__(self, other):
        if not isinstance(other, XiProfile):
            v = complex(other)
            return XiProfile(self.r, [(s, c, {e: v * x for e, x in p.items()})
                                      for s, c, p in self.terms])
        terms = []
        for s1, c1, p1 in self.terms:
            for s2, c2, p2 in other.terms:
                s1a, c1a, s2a, c2a = map(np.asarray, (s1, c1, s2, c2))
                s = s1a + s2a
                with np.errstate(invalid="ignore", divide="ignore"):
                    c = np.where(s > 0, (s1a * c1a + s2a * c2a) / np.where(s > 0, s, 1), 0.0)
                const = np.exp(-np.sum(s1a * c1a ** 2 + s2a * c2a ** 2 - s * c ** 2))
                poly = {e: v * const for e, v in _poly_mul(p1, p2).items()}
                terms.append((tuple(s), tuple(c), poly))
        return XiProfile(self.r, terms)

    __rmul__ = __mul__

    def conj(self) -> "XiProfile":
        return XiProfile(self.r, [(s, c, {e: np.conj(v) for e, v in p.items()})
                                  for s, c, p in self.terms])

    def derivative(self, i: int, order: int = 1) -> "XiProfile":
        out = self
        for _ in range(order):
            terms = []
            for s, c, poly in out.terms:
                new = {}
                for e, v in poly.items():
                    if e[i]:
                        e2 = list(e)
                        e2[i] -= 1
                        new[tuple(e2)] = new.get(tuple(e2), 0) + v * e[i]
                    if s[i] > 0:
                        # -2 s_i (xi_i - c_i) * poly
                        e2 = list(e)
                        e2[i] += 1
                        new[tuple(e2)] = new.get(tuple(e2), 0) - 2 * s[i] * v
                        new[e] = new.get(e, 0) + 2 * s[i] * c[i] * v
                terms.append((s, c, new))
            out = XiProfile(self.r, terms)
        return out

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(all(v == 0 for v in s) and set(p) <= {(0,) * self.r}
                   for s, c, p in self.terms)

    def polynomial_degree(self) -> float:
        """Growth order in xi: largest degree in non-decaying directions.

        Terms decaying in every direction contribute ``-inf``.
        """
        deg = -np.inf
        for s, c, p in self.terms:
            if all(si > 0 for si in s):
                continue
            for e in p:
                deg = max(deg, sum(ei for ei, si in zip(e, s) if si == 0))
        return deg

    def integral(self) -> complex:
        """Exact integral over ``R^r``; requires decay in every direction."""
        total = 0.0 + 0.0j
        for s, c, poly in self.terms:
            if any(v == 0 for v in s):
                raise ValueError("profile is not integrable")
            for e, v in poly.items():
                term = v
                for k, si, ci in zip(e, s, c):
                    mom = 0.0
                    for j in range(0, k + 1, 2):
                        mom += comb(k, j) * ci ** (k - j) * gamma((j + 1) / 2) / si ** ((j + 1) / 2)
                    term *= mom
                total += term
        return total

    def __repr__(self):
        return f"XiProfile(r={self.r}, terms={len(self.terms)})"


def _coerce(r: int, other) -> XiProfile:
    if isinstance(other, XiProfile):
        if other.r != r:
            raise ValueError("profile dimensions differ")
        return other
    return XiProfile.constant(r, complex(other))
