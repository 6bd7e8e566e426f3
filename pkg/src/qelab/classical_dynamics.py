"""Classical flows on cotangent bundles with a projective fiber.

Two bases are supported: the flat torus (used by the mixed quantization
checks) and a genus-2 hyperbolic surface built from the regular octagon,
whose flat fiber bundle is twisted by an SU(2) representation.

Conventions
-----------
* Base: ``x' = dH/dxi``, ``xi' = -dH/dx`` for ``omega = d xi ^ d x``.
* Fiber: the Hamiltonian flow of ``c <mu_L, a>`` is ``w' = (c / 2 pi) a w``.
* Half-plane metric ``(dx1^2 + dx2^2) / x2^2``; ``H = x2^2 |xi|^2`` moves at
  hyperbolic speed 2 on the unit level, so ``hamiltonian_flow`` at time t
  equals ``geodesic_flow`` at arc length 2t.
* Fiber vectors are stored as real pairs ``(Re w, Im w)`` so that the
  integrators are real-analytic; this is what makes complex-step
  differentiation of whole trajectories exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .base_weyl import BaseSymbol
from .fiber_geometry import LieElement, fubini_study_form, FiberPoint, moment_map
from .profiles import XiProfile

TWO_PI = 2.0 * np.pi


class StepSizeError(RuntimeError):
    """Energy drift exceeded the monitor threshold; carries the drift trace."""

    def __init__(self, message, drift_trace=None):
        super().__init__(message)
        self.drift_trace = drift_trace


class ClosureError(ValueError):
    """A path whose base projection should close does not."""


class RegularValueError(ValueError):
    """Energy level is not a regular value on the sampled region."""


# ----------------------------------------------------------------------------
# Moebius elements and the genus-2 group
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class MoebiusElement:
    """Element of SL(2, R) acting on the upper half-plane."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.shape != (2, 2):
            raise ValueError("expected a 2x2 matrix")
        if abs(np.linalg.det(M) - 1.0) > 1e-12:
            raise ValueError("determinant must be 1")
        object.__setattr__(self, "matrix", M)

    def __matmul__(self, other: "MoebiusElement") -> "MoebiusElement":
        return MoebiusElement(self.matrix @ other.matrix)

    def inverse(self) -> "MoebiusElement":
        a, b, c, d = self.matrix.ravel()
        return MoebiusElement(np.array([[d, -b], [-c, a]]))

    def act(self, z):
        a, b, c, d = self.matrix.ravel()
        z = np.asarray(z, dtype=complex)
        return (a * z + b) / (c * z + d)

    def act_covector(self, z, xi):
        """Push a covector ``xi1 + i xi2`` at z forward: ``xi * conj(cz+d)^2``."""
        c, d = self.matrix[1]
        q = c * np.asarray(z, dtype=complex) + d
        return np.asarray(xi, dtype=complex) * np.conj(q) ** 2

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def translation_length(self) -> float:
        t = abs(self.trace)
        if t <= 2:
            raise ValueError("element is not hyperbolic")
        return float(2 * np.arccosh(t / 2))

    def equals_projectively(self, other: "MoebiusElement", tol: float = 1e-8) -> bool:
        return min(np.abs(self.matrix - other.matrix).max(),
                   np.abs(self.matrix + other.matrix).max()) <= tol


def _disc_to_sl2(G: np.ndarray) -> np.ndarray:
    """SU(1,1) disc automorphism to SL(2,R) via the Cayley transform."""
    C = np.array([[1, -1j], [1, 1j]])  # half-plane -> disc
    M = np.linalg.inv(C) @ G @ C
    M = M / np.sqrt(np.linalg.det(M))
    if np.abs(M.imag).max() > 1e-10:
        M = M * 1j
    if np.abs(M.imag).max() > 1e-10:
        raise RuntimeError("Cayley transform did not produce a real matrix")
    return M.real


def to_disc(z):
    z = np.asarray(z, dtype=complex)
    return (z - 1j) / (z + 1j)


def from_disc(zeta):
    zeta = np.asarray(zeta, dtype=complex)
    return 1j * (1 + zeta) / (1 - zeta)


def hyperbolic_distance(z1, z2):
    z1, z2 = np.asarray(z1, dtype=complex), np.asarray(z2, dtype=complex)
    return np.arccosh(1 + np.abs(z1 - z2) ** 2 / (2 * z1.imag * z2.imag))


def euler_angle_representation(theta: float, n: int = 1) -> dict:
    """SU(2) images of the generators, embedded in the top-left block for n > 1."""
    c, s = np.cos(theta * np.pi / 2), np.sin(theta * np.pi / 2)
    A = np.diag([np.exp(-1j * theta * np.pi / 2), np.exp(1j * theta * np.pi / 2)])
    B = np.array([[c, 1j * s], [1j * s, c]])

    def embed(M):
        E = np.eye(n + 1, dtype=complex)
        E[:2, :2] = M
        return E

    return {"a1": embed(A), "b1": embed(A), "a2": embed(B), "b2": embed(B)}


GENERATORS = ("a1", "b1", "a2", "b2")


@dataclass
class FuchsianData:
    """Regular-octagon genus-2 group with a flat SU(n+1) twist.

    Side ``k`` of the octagon (between vertices at angles ``pi(2k+1)/8`` and
    ``pi(2k+3)/8``) is crossed into the translate ``side_elements[k](P)``.
    Reading the sides counterclockwise gives ``a1 b1^-1 a1^-1 b1 a2 b2^-1
    a2^-1 b2``, for which ``[a1,b1][a2,b2] = 1``.
    """

    theta: float
    n: int
    generators: dict
    side_elements: list  # MoebiusElement per side
    side_words: list  # word (tuple of (name, +-1)) per side
    rho: dict
    side_rho: list
    vertices: np.ndarray  # half-plane coordinates
    inradius: float
    circumradius: float
    certificate: dict = field(default_factory=dict)

    @classmethod
    def build(cls, theta: float = 1 / np.sqrt(2), n: int = 1) -> "FuchsianData":
        rin = np.arccosh(1 + np.sqrt(2))
        rout = np.arccosh((1 + np.sqrt(2)) ** 2)

        def rot(t):
            return np.array([[np.exp(1j * t / 2), 0], [0, np.exp(-1j * t / 2)]])

        def half_turn(m):
            phi = np.array([[1, m], [np.conj(m), 1]]) / np.sqrt(1 - abs(m) ** 2)
            return phi @ np.diag([1j, -1j]) @ np.linalg.inv(phi)

        mids = [np.tanh(rin / 2) * np.exp(1j * np.pi * (k + 1) / 4) for k in range(8)]
        # g_k = half-turn about the midpoint of side k after a quarter turn: side k+2 -> side k
        g = [MoebiusElement(_disc_to_sl2(half_turn(mids[k]) @ rot(-np.pi / 2))) for k in range(8)]
        gens = {"a1": g[0], "b1": g[1].inverse(), "a2": g[4], "b2": g[5].inverse()}
        words = [(("a1", 1),), (("b1", -1),), (("a1", -1),), (("b1", 1),),
                 (("a2", 1),), (("b2", -1),), (("a2", -1),), (("b2", 1),)]
        rho = euler_angle_representation(theta, n)

        def word_mat(word, table, inv):
            M = None
            for name, e in word:
                X = table[name] if e > 0 else inv(table[name])
                M = X if M is None else M @ X
            return M

        side_el = [word_mat(w, gens, lambda X: X.inverse()) for w in words]
        side_rho = [word_mat(w, rho, lambda X: X.conj().T) for w in words]
        verts = from_disc(np.tanh(rout / 2) * np.exp(1j * np.pi * (2 * np.arange(8) + 1) / 8))
        data = cls(theta=theta, n=n, generators=gens, side_elements=side_el, side_words=words,
                   rho=rho, side_rho=side_rho, vertices=verts, inradius=rin, circumradius=rout)
        data.certificate = data._certify()
        return data

    # -- certificates ---------------------------------------------------------
    def relator(self) -> MoebiusElement:
        a1, b1, a2, b2 = (self.generators[k] for k in GENERATORS)
        return (a1 @ b1 @ a1.inverse() @ b1.inverse() @ a2 @ b2 @ a2.inverse() @ b2.inverse())

    def rho_relator(self) -> np.ndarray:
        A1, B1, A2, B2 = (self.rho[k] for k in GENERATORS)
        inv = lambda X: X.conj().T  # noqa: E731
        return A1 @ B1 @ inv(A1) @ inv(B1) @ A2 @ B2 @ inv(A2) @ inv(B2)

    def _certify(self) -> dict:
        R = self.relator().matrix
        rel = min(np.abs(R - np.eye(2)).max(), np.abs(R + np.eye(2)).max())
        rr = np.abs(self.rho_relator() - np.eye(self.n + 1)).max()
        # side k is the image of the paired side with reversed orientation
        pair = 0.0
        v = self.vertices
        for k in range(8):
            el = self.side_elements[k]
            j = (k + 2) % 8 if k % 4 < 2 else (k - 2) % 8
            # the element crossing side k maps side j of its neighbour onto side k
            img = el.act(np.array([v[j], v[(j + 1) % 8]]))
            pair = max(pair, min(abs(img[0] - v[(k + 1) % 8]) + abs(img[1] - v[k]),
                                 abs(img[0] - v[k]) + abs(img[1] - v[(k + 1) % 8])))
        cert = {"relator": float(rel), "rho_relator": float(rr), "side_pairing": float(pair)}
        if max(cert.values()) > 1e-8:
            raise RuntimeError(f"group certificate failed: {cert}")
        return cert

    # -- reduction ------------------------------------------------------------
    def centers(self) -> np.ndarray:
        """Disc images of ``side_elements[k](i)``: the Dirichlet neighbours of the center."""
        return to_disc(np.array([el.act(1j) for el in self.side_elements]))

    def contains(self, z, tol: float = 1e-12) -> np.ndarray:
        zeta = to_disc(z)
        c = self.centers()
        z2 = np.abs(zeta) ** 2
        viol = z2[..., None] * (1 - np.abs(c) ** 2) - np.abs(zeta[..., None] - c) ** 2
        return np.all(viol <= tol, axis=-1)

    def reduce(self, z, max_steps: int = 10000):
        """Move z into the octagon; returns (z', gamma, sides crossed back).

        ``gamma`` satisfies ``gamma(z) = z'``; the list holds the side index
        used at each step (the inverse of that side's element was applied).
        """
        c = self.centers()
        gamma = MoebiusElement(np.eye(2))
        sides = []
        for _ in range(max_steps):
            zeta = to_disc(z)
            viol = abs(zeta) ** 2 * (1 - np.abs(c) ** 2) - np.abs(zeta - c) ** 2
            k = int(np.argmax(viol))
            if viol[k] <= 1e-13:
                return complex(z), gamma, sides
            step = self.side_elements[k].inverse()
            z = step.act(z)
            gamma = step @ gamma
            sides.append(k)
        raise RuntimeError("reduction did not terminate")

    def rho_of_sides(self, sides: Sequence[int]) -> np.ndarray:
        """Fiber map of a reduction sequence: product of ``rho(side element)^-1``."""
        R = np.eye(self.n + 1, dtype=complex)
        for k in sides:
            R = self.side_rho[k].conj().T @ R
        return R

    def word_of_sides(self, sides: Sequence[int]) -> list:
        """Group word of the reduction ``gamma`` (leftmost applied last)."""
        word = []
        for k in sides:
            word = [(nm, -e) for nm, e in reversed(self.side_words[k])] + word
        return word

    def word_element(self, word) -> MoebiusElement:
        M = MoebiusElement(np.eye(2))
        for nm, e in word:
            X = self.generators[nm]
            M = M @ (X if e > 0 else X.inverse())
        return M

    def word_rho(self, word) -> np.ndarray:
        M = np.eye(self.n + 1, dtype=complex)
        for nm, e in word:
            X = self.rho[nm]
            M = M @ (X if e > 0 else X.conj().T)
        return M

    def kernel_arrays(self):
        """Arrays consumed by the compiled integrators."""
        c = self.centers()
        inv = np.array([el.inverse().matrix for el in self.side_elements])
        R = np.array([S.conj().T for S in self.side_rho])
        return (np.ascontiguousarray(c.real), np.ascontiguousarray(c.imag), inv,
                np.ascontiguousarray(R.real), np.ascontiguousarray(R.imag))


# ----------------------------------------------------------------------------
# states and Hamiltonians
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowState:
    """Point ``(x, xi, w)`` of the fiber bundle over the cotangent bundle.

    ``geometry`` is ``"torus"`` or ``"hyperbolic"``; hyperbolic base points
    are half-plane coordinates ``(x1, x2)``.  ``sides`` records the
    fundamental-domain reductions applied since the state was created.
    """

    x: np.ndarray
    xi: np.ndarray
    w: np.ndarray
    geometry: str = "hyperbolic"
    sides: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).ravel())
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float).ravel())
        w = np.asarray(self.w, dtype=complex).ravel()
        object.__setattr__(self, "w", w / np.linalg.norm(w))
        if self.geometry == "hyperbolic" and self.x[1] <= 0:
            raise ValueError("half-plane point needs x2 > 0")

    @property
    def z(self) -> complex:
        return complex(self.x[0], self.x[1])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.xi, self.w.real, self.w.imag])

    @classmethod
    def from_vector(cls, y, r: int, geometry: str, sides=()) -> "FlowState":
        nf = (len(y) - 2 * r) // 2
        return cls(y[:r], y[r:2 * r], y[2 * r:2 * r + nf] + 1j * y[2 * r + nf:], geometry, tuple(sides))

    def same_point(self, other: "FlowState", tol: float = 1e-9) -> bool:
        if self.geometry != other.geometry:
            return False
        dx = self.x - other.x
        if self.geometry == "torus":
            dx = (dx + np.pi) % TWO_PI - np.pi
        fib = 1 - abs(np.vdot(self.w, other.w))
        return bool(np.abs(dx).max() <= tol and np.abs(self.xi - other.xi).max() <= tol and fib <= tol)


def unit_state(z: complex, direction: float, w, energy: float = 1.0) -> FlowState:
    """Hyperbolic state at z moving in Euclidean direction angle ``direction``."""
    z = complex(z)
    rad = np.sqrt(energy)
    xi = rad * np.array([np.cos(direction), np.sin(direction)]) / z.imag
    return FlowState([z.real, z.imag], xi, w, "hyperbolic")


@dataclass(frozen=True)
class ClassicalHamiltonian:
    """Energy function for either base.

    Torus: ``spec`` is a :class:`HamiltonianSpec`.  Hyperbolic:
    ``H = x2^2 |xi|^2 + epsilon * chi(x) <mu_L, a>(w)`` with ``chi`` a smooth
    bump supported in the hyperbolic ball of radius ``bump_radius`` about i
    (inside the octagon, so H is invariant under the twisted deck group).
    """

    geometry: str
    spec: object = None
    epsilon: float = 0.0
    a: LieElement | None = None
    bump_radius: float = 0.8 * np.arccosh(1 + np.sqrt(2))
    group: FuchsianData | None = None

    def __post_init__(self):
        if self.geometry not in ("torus", "hyperbolic"):
            raise ValueError("geometry must be 'torus' or 'hyperbolic'")
        if self.geometry == "torus" and self.spec is None:
            raise ValueError("torus Hamiltonians need a HamiltonianSpec")
        if self.geometry == "hyperbolic":
            if self.bump_radius >= np.arccosh(1 + np.sqrt(2)):
                raise ValueError("bump must stay inside the inscribed disc")
            if self.epsilon != 0 and self.a is None:
                raise ValueError("perturbation needs a Lie element")
            if self.group is None:
                object.__setattr__(self, "group", FuchsianData.build())

    @property
    def n(self) -> int:
        if self.geometry == "torus":
            return self.spec.n
        return self.group.n

    @property
    def r(self) -> int:
        return self.spec.r if self.geometry == "torus" else 2

    @property
    def s0(self) -> float:
        return float(np.cosh(self.bump_radius) - 1)

    def lie_arrays(self):
        a = self.a.matrix if self.a is not None else np.zeros((self.n + 1,) * 2, dtype=complex)
        return np.ascontiguousarray(a.real), np.ascontiguousarray(a.imag)

    def potential(self, x, w) -> np.ndarray:
        """Fiber-coupled part of H (hyperbolic base)."""
        x = np.atleast_2d(x)
        if self.epsilon == 0:
            return np.zeros(x.shape[0])
        s = (x[:, 0] ** 2 + (x[:, 1] - 1) ** 2) / (2 * x[:, 1])
        return self.epsilon * _bump(s / self.s0) * moment_map(self.a, w)

    def energy(self, state: FlowState) -> float:
        if self.geometry == "torus":
            return float(self.spec(state.x[None], state.xi[None], state.w[None])[0])
        x2 = state.x[1]
        return float(x2 ** 2 * state.xi @ state.xi + self.potential(state.x[None], state.w[None])[0])


def _bump(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = u < 1
    out[inside] = np.exp(1 - 1 / (1 - u[inside]))
    return out


# ----------------------------------------------------------------------------
# compiled hyperbolic integrator
# ----------------------------------------------------------------------------

@njit(cache=True)
def _fiber_moment(y, off, nf, ar, ai):
    nrm = 0.0 * y[0]
    im = 0.0 * y[0]
    for j in range(nf):
        wrj = y[off + j]
        wij = y[off + nf + j]
        nrm = nrm + wrj * wrj + wij * wij
        for k in range(nf):
            wrk = y[off + k]
            wik = y[off + nf + k]
            im = im + wrj * (ar[j, k] * wik + ai[j, k] * wrk) - wij * (ar[j, k] * wrk - ai[j, k] * wik)
    return im / (2.0 * np.pi * nrm)


@njit(cache=True)
def _bump_and_slope(u):
    if u.real < 1.0:
        one = 1.0 - u
        chi = np.exp(1.0 - 1.0 / one)
        return chi, -chi / (one * one)
    z = 0.0 * u
    return z, z


@njit(cache=True)
def _hyp_field(y, out, eps, ar, ai, s0, nf):
    x1 = y[0]
    x2 = y[1]
    k1 = y[2]
    k2 = y[3]
    kk = k1 * k1 + k2 * k2
    mu = _fiber_moment(y, 4, nf, ar, ai)
    s = (x1 * x1 + (x2 - 1.0) * (x2 - 1.0)) / (2.0 * x2)
    chi, dchi = _bump_and_slope(s / s0)
    ds1 = x1 / x2
    ds2 = (x2 * x2 - x1 * x1 - 1.0) / (2.0 * x2 * x2)
    g = eps * dchi / s0 * mu
    out[0] = 2.0 * x2 * x2 * k1
    out[1] = 2.0 * x2 * x2 * k2
    out[2] = -g * ds1
    out[3] = -2.0 * x2 * kk - g * ds2
    c = eps * chi / (2.0 * np.pi)
    for j in range(nf):
        sr = 0.0 * y[0]
        si = 0.0 * y[0]
        for k in range(nf):
            wr = y[4 + k]
            wi = y[4 + nf + k]
            sr = sr + ar[j, k] * wr - ai[j, k] * wi
            si = si + ar[j, k] * wi + ai[j, k] * wr
        out[4 + j] = c * sr
        out[4 + nf + j] = c * si


@njit(cache=True)
def _hyp_energy(y, eps, ar, ai, s0, nf):
    x1 = y[0]
    x2 = y[1]
    kk = y[2] * y[2] + y[3] * y[3]
    s = (x1 * x1 + (x2 - 1.0) * (x2 - 1.0)) / (2.0 * x2)
    chi, _ = _bump_and_slope(s / s0)
    return x2 * x2 * kk + eps * chi * _fiber_moment(y, 4, nf, ar, ai)


@njit(cache=True)
def _hyp_reduce(y, nf, cr, ci, inv, Rr, Ri, sides, nsides, cap):
    """Reduce into the octagon; returns the updated number of recorded sides."""
    for _ in range(100000):
        x1 = y[0].real
        x2 = y[1].real
        den = x1 * x1 + (x2 + 1.0) * (x2 + 1.0)
        zr = (x1 * x1 + x2 * x2 - 1.0) / den
        zi = -2.0 * x1 / den
        z2 = zr * zr + zi * zi
        best = -1
        bestv = 1e-13
        for k in range(8):
            c2 = cr[k] * cr[k] + ci[k] * ci[k]
            dr = zr - cr[k]
            di = zi - ci[k]
            v = z2 * (1.0 - c2) - (dr * dr + di * di)
            if v > bestv:
                bestv = v
                best = k
        if best < 0:
            return nsides
        a = inv[best, 0, 0]
        b = inv[best, 0, 1]
        c = inv[best, 1, 0]
        d = inv[best, 1, 1]
        X1 = y[0]
        X2 = y[1]
        qr = c * X1 + d
        qi = c * X2
        dd = qr * qr + qi * qi
        nr = a * X1 + b
        ni = a * X2
        y[0] = (nr * qr + ni * qi) / dd
        y[1] = (ni * qr - nr * qi) / dd
        A = qr * qr - qi * qi
        B = 2.0 * qr * qi
        k1 = y[2]
        k2 = y[3]
        y[2] = k1 * A + k2 * B
        y[3] = k2 * A - k1 * B
        tr = y[4:4 + nf].copy()
        ti = y[4 + nf:4 + 2 * nf].copy()
        for j in range(nf):
            sr = 0.0 * y[0]
            si = 0.0 * y[0]
            for k in range(nf):
                sr = sr + Rr[best, j, k] * tr[k] - Ri[best, j, k] * ti[k]
                si = si + Rr[best, j, k] * ti[k] + Ri[best, j, k] * tr[k]
            y[4 + j] = sr
            y[4 + nf + j] = si
        if nsides < cap:
            sides[nsides] = best
        nsides += 1
    return nsides


@njit(cache=True)
def _observe(y, nf, kind, om_r, om_i, s0, out):
    x1 = y[0].real
    x2 = y[1].real
    s = (x1 * x1 + (x2 - 1.0) * (x2 - 1.0)) / (2.0 * x2)
    chi = 0.0
    if s / s0 < 1.0:
        chi = np.exp(1.0 - 1.0 / (1.0 - s / s0))
    for q in range(kind.shape[0]):
        kd = kind[q]
        if kd == 0:
            out[q] = 1.0
        elif kd == 1:
            out[q] = _fiber_moment(y, 4, nf, om_r[q], om_i[q]).real
        elif kd == 2:
            out[q] = chi
        elif kd == 3:
            out[q] = chi * _fiber_moment(y, 4, nf, om_r[q], om_i[q]).real
        else:
            out[q] = (x2 * x2 * (y[2] * y[2] + y[3] * y[3])).real


@njit(cache=True)
def _hyp_run(y, nsteps, dt, eps, ar, ai, s0, nf, cr, ci, inv, Rr, Ri,
             kind, om_r, om_i, sides, cap, monitor_every):
    """RK4 with reduction after every step.

    Returns (number of reductions, Birkhoff integrals of the observables,
    initial energy, energy trace sampled every ``monitor_every`` steps).
    """
    n = y.shape[0]
    k1 = np.empty_like(y)
    k2 = np.empty_like(y)
    k3 = np.empty_like(y)
    k4 = np.empty_like(y)
    tmp = np.empty_like(y)
    nobs = kind.shape[0]
    acc = np.zeros(nobs)
    prev = np.zeros(nobs)
    cur = np.zeros(nobs)
    nsides = 0
    nsides = _hyp_reduce(y, nf, cr, ci, inv, Rr, Ri, sides, nsides, cap)
    e0 = _hyp_energy(y, eps, ar, ai, s0, nf).real
    ntrace = nsteps // monitor_every + 1
    trace = np.zeros(ntrace)
    if nobs:
        _observe(y, nf, kind, om_r, om_i, s0, prev)
    for step in range(nsteps):
        _hyp_field(y, k1, eps, ar, ai, s0, nf)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * dt * k1[i]
        _hyp_field(tmp, k2, eps, ar, ai, s0, nf)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * dt * k2[i]
        _hyp_field(tmp, k3, eps, ar, ai, s0, nf)
        for i in range(n):
            tmp[i] = y[i] + dt * k3[i]
        _hyp_field(tmp, k4, eps, ar, ai, s0, nf)
        for i in range(n):
            y[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        nsides = _hyp_reduce(y, nf, cr, ci, inv, Rr, Ri, sides, nsides, cap)
        if nobs:
            _observe(y, nf, kind, om_r, om_i, s0, cur)
            for q in range(nobs):
                acc[q] += 0.5 * dt * (prev[q] + cur[q])
                prev[q] = cur[q]
        if (step + 1) % monitor_every == 0:
            trace[(step + 1) // monitor_every] = _hyp_energy(y, eps, ar, ai, s0, nf).real - e0
    return nsides, acc, e0, trace


def _hyp_args(Hc: ClassicalHamiltonian):
    ar, ai = Hc.lie_arrays()
    cr, ci, inv, Rr, Ri = Hc.group.kernel_arrays()
    return ar, ai, cr, ci, inv, Rr, Ri


_NO_OBS = (np.zeros(0, dtype=np.int64), np.zeros((0, 1, 1)), np.zeros((0, 1, 1)))


def _run_hyperbolic(y, Hc: ClassicalHamiltonian, t: float, dt: float, observables=None,
                    cap: int = 0, monitor_every: int = 100):
    nsteps = int(round(abs(t) / dt))
    if nsteps and abs(nsteps * dt - abs(t)) > 1e-12 * max(1.0, abs(t)):
        raise ValueError("t must be an integer multiple of dt")
    step = np.sign(t) * dt if t != 0 else dt
    ar, ai, cr, ci, inv, Rr, Ri = _hyp_args(Hc)
    kind, om_r, om_i = observables if observables is not None else _NO_OBS
    if om_r.shape[1:] != (Hc.n + 1, Hc.n + 1):
        om_r = np.zeros((len(kind), Hc.n + 1, Hc.n + 1))
        om_i = np.zeros_like(om_r)
    sides = np.zeros(max(cap, 1), dtype=np.int64)
    ns, acc, e0, trace = _hyp_run(y, nsteps, step, float(Hc.epsilon), ar, ai, Hc.s0, Hc.n + 1,
                                  cr, ci, inv, Rr, Ri, kind, om_r, om_i, sides, cap,
                                  max(1, monitor_every))
    return y, [int(v) for v in sides[:min(ns, cap)]], ns, acc, e0, trace


# ----------------------------------------------------------------------------
# torus integrator (vectorized numpy)
# ----------------------------------------------------------------------------

class _RealAnalyticBase:
    """Base symbol evaluated as a real-analytic function.

    ``Re(e^{imx} p(xi))`` is rewritten with real-coefficient profiles and
    real trigonometric functions, so the evaluation is exactly real for
    real inputs and holomorphic in complex-step perturbations.
    """

    def __init__(self, c: BaseSymbol):
        self.r = c.r
        self.terms = []  # (m, profile_re_terms, profile_im_terms)
        for m, prof in c.coeffs.items():
            self.terms.append((np.asarray(m, dtype=float), _split(prof)))
        self.dxi = [[(m, (_split_profile_derivative(prof, j))) for m, prof in c.coeffs.items()]
                    for j in range(c.r)]

    @staticmethod
    def _profile(parts, xi):
        out = 0.0 * xi[:, 0]
        for s, ctr, poly in parts:
            env = np.exp(-np.sum(np.asarray(s) * (xi - np.asarray(ctr)) ** 2, axis=1))
            pv = 0.0 * xi[:, 0]
            for e, v in poly.items():
                pv = pv + v * np.prod(xi ** np.asarray(e), axis=1)
            out = out + pv * env
        return out

    def _eval(self, terms, x, xi, deriv_x=None):
        out = 0.0 * x[:, 0]
        for m, (pre, pim) in terms:
            m = np.asarray(m, dtype=float)
            ph = x @ m
            P, Q = self._profile(pre, xi), self._profile(pim, xi)
            if deriv_x is None:
                out = out + np.cos(ph) * P - np.sin(ph) * Q
            else:
                mj = m[deriv_x]
                out = out - mj * (np.sin(ph) * P + np.cos(ph) * Q)
        return out

    def value(self, x, xi):
        return self._eval(self.terms, x, xi)

    def grad_x(self, x, xi, j):
        return self._eval(self.terms, x, xi, deriv_x=j)

    def grad_xi(self, x, xi, j):
        return self._eval(self.dxi[j], x, xi)


def _split(prof: XiProfile):
    pre, pim = [], []
    for s, c, poly in prof.terms:
        pre.append((s, c, {e: complex(v).real for e, v in poly.items()}))
        pim.append((s, c, {e: complex(v).imag for e, v in poly.items()}))
    return pre, pim


def _split_profile_derivative(prof: XiProfile, j: int):
    return _split(prof.derivative(j))


def _real_moment(wr, wi, ar, ai):
    """``<mu_L, a>`` from real and imaginary parts (holomorphic-safe)."""
    num = np.einsum("nj,jk,nk->n", wr, ar, wi) + np.einsum("nj,jk,nk->n", wr, ai, wr) \
        - np.einsum("nj,jk,nk->n", wi, ar, wr) + np.einsum("nj,jk,nk->n", wi, ai, wi)
    return num / (2 * np.pi * np.sum(wr * wr + wi * wi, axis=1))


class TorusHamiltonianFlow:
    """Vectorized RK4 for ``H = k |xi|^2 + sum_i c_i(x, xi) <mu_L, a_i>(w)`` on T^r."""

    def __init__(self, Hs):
        self.Hs = Hs
        self.r, self.n = Hs.r, Hs.n
        self.coeffs = [(_RealAnalyticBase(c), a.matrix.real.copy(), a.matrix.imag.copy())
                       for c, a in Hs.perturbations]
        self.last_error = 0.0

    @property
    def kinetic_only(self) -> bool:
        return not self.coeffs

    def field(self, x, xi, wr, wi):
        k = self.Hs.kinetic
        dx = 2 * k * xi
        dxi = 0.0 * xi
        dwr = 0.0 * wr
        dwi = 0.0 * wi
        for c, ar, ai in self.coeffs:
            mu = _real_moment(wr, wi, ar, ai)
            for j in range(self.r):
                dx[:, j] = dx[:, j] + c.grad_xi(x, xi, j) * mu
                dxi[:, j] = dxi[:, j] - c.grad_x(x, xi, j) * mu
            val = c.value(x, xi) / (2 * np.pi)
            dwr = dwr + val[:, None] * (wr @ ar.T - wi @ ai.T)
            dwi = dwi + val[:, None] * (wi @ ar.T + wr @ ai.T)
        return dx, dxi, dwr, dwi

    def energy(self, x, xi, wr, wi):
        e = self.Hs.kinetic * np.sum(xi * xi, axis=1)
        for c, ar, ai in self.coeffs:
            e = e + c.value(x, xi) * _real_moment(wr, wi, ar, ai)
        return e

    def step(self, y, dt):
        def f(s):
            return self.field(*s)

        def axpy(s, k, a):
            return tuple(si + a * ki for si, ki in zip(s, k))

        k1 = f(y)
        k2 = f(axpy(y, k1, dt / 2))
        k3 = f(axpy(y, k2, dt / 2))
        k4 = f(axpy(y, k3, dt))
        return tuple(si + dt / 6 * (a + 2 * b + 2 * c + d)
                     for si, a, b, c, d in zip(y, k1, k2, k3, k4))

    def integrate_pairs(self, y, t: float, dt: float, sample: Callable | None = None):
        """Flow a tuple ``(x, xi, Re w, Im w)`` of arrays for time t.

        Kinetic-only Hamiltonians use the exact solution.  ``sample(k, y)``
        is called after each step (and with k = 0 at the start).
        """
        nsteps = int(round(abs(t) / dt)) if t != 0 else 0
        h = t / nsteps if nsteps else 0.0
        if sample is not None:
            sample(0, y)
        for s in range(nsteps):
            if self.kinetic_only:
                y = (y[0] + 2 * self.Hs.kinetic * h * y[1], y[1], y[2], y[3])
            else:
                y = self.step(y, h)
            if sample is not None:
                sample(s + 1, y)
        return y

    def integrate(self, x, xi, w, t: float, dt: float, sample: Callable | None = None):
        """Flow arrays of states; returns ``(x, xi, Re w, Im w)`` with x unwrapped."""
        w = np.asarray(w, dtype=complex)
        y = (np.array(x, dtype=float), np.array(xi, dtype=float), w.real.copy(), w.imag.copy())
        if sample is not None or self.kinetic_only or t == 0:
            return self.integrate_pairs(y, t, dt, sample)
        nsteps = int(round(abs(t) / dt))
        Y = np.ascontiguousarray(np.hstack(y))
        _torus_run_batch(Y, nsteps, t / nsteps, *_torus_tables(self.Hs))
        r, nf = self.r, self.n + 1
        return Y[:, :r], Y[:, r:2 * r], Y[:, 2 * r:2 * r + nf], Y[:, 2 * r + nf:]

    def flowed_function(self, A, t: float, dt: float = 0.01, check_stride: int = 16) -> Callable:
        """``(x, xi, w) -> A(psi_t(x, xi, w))``.

        Every ``check_stride``-th point is also flowed at ``dt / 2``; the
        largest difference is kept in :attr:`last_error`.
        """

        def run(x, xi, w, h):
            y = self.integrate(x, xi, w, t, h)
            return A(y[0] % TWO_PI, y[1], y[2] + 1j * y[3])

        def F(x, xi, w):
            val = run(x, xi, w, dt)
            sub = slice(None, None, check_stride)
            fine = run(x[sub], xi[sub], np.asarray(w)[sub], dt / 2)
            self.last_error = max(self.last_error, float(np.abs(val[sub] - fine).max()))
            return val

        return F

    def time_average_function(self, A, t0: float, dt: float = 0.01) -> Callable:
        """``(x, xi, w) -> (1/t0) int_0^t0 A(psi_t) dt`` by composite Simpson."""
        if t0 <= 0:
            raise ValueError("t0 must be positive")

        def once(x, xi, w, h):
            nsteps = int(round(t0 / h))
            nsteps += nsteps % 2
            acc = [0.0]

            def sample(k, y):
                wt = 1 if k in (0, nsteps) else (4 if k % 2 else 2)
                acc[0] = acc[0] + wt * A(y[0] % TWO_PI, y[1], y[2] + 1j * y[3])

            self.integrate(x, xi, w, t0, t0 / nsteps, sample)
            return acc[0] * (t0 / nsteps) / 3 / t0

        def F(x, xi, w):
            v1 = once(x, xi, w, dt)
            v2 = once(x, xi, w, dt / 2)
            self.last_error = max(self.last_error, float(np.abs(v1 - v2).max()))
            return v2

        return F


# ----------------------------------------------------------------------------
# compiled torus integrator (single trajectories)
# ----------------------------------------------------------------------------

def _torus_tables(Hs):
    """Flatten the perturbations of a HamiltonianSpec into kernel arrays.

    One row per monomial of every profile term: perturbation index, Fourier
    mode, Gaussian width and center, exponent and complex coefficient.
    """
    r, nf = Hs.r, Hs.n + 1
    P = len(Hs.perturbations)
    ar = np.zeros((max(P, 1), nf, nf))
    ai = np.zeros((max(P, 1), nf, nf))
    rows = []
    for i, (c, a) in enumerate(Hs.perturbations):
        ar[i], ai[i] = a.matrix.real, a.matrix.imag
        for m, prof in c.coeffs.items():
            for s, ctr, poly in prof.terms:
                for e, v in poly.items():
                    rows.append((i, m, s, ctr, e, complex(v)))
    T = len(rows)
    t_pert = np.array([row[0] for row in rows], dtype=np.int64)
    t_m = np.array([row[1] for row in rows], dtype=float).reshape(T, r)
    t_s = np.array([row[2] for row in rows], dtype=float).reshape(T, r)
    t_c = np.array([row[3] for row in rows], dtype=float).reshape(T, r)
    t_e = np.array([row[4] for row in rows], dtype=np.int64).reshape(T, r)
    t_v = np.array([row[5] for row in rows], dtype=complex)
    return (float(Hs.kinetic), r, nf, P, ar, ai, t_pert, t_m, t_s, t_c, t_e,
            np.ascontiguousarray(t_v.real), np.ascontiguousarray(t_v.imag))


@njit(cache=True)
def _torus_coeffs(y, r, P, t_pert, t_m, t_s, t_c, t_e, t_vr, t_vi, val, gx, gxi):
    """Values and gradients of the real coefficient functions c_i(x, xi)."""
    for i in range(P):
        val[i] = 0.0 * y[0]
        for j in range(r):
            gx[i, j] = 0.0 * y[0]
            gxi[i, j] = 0.0 * y[0]
    for t in range(t_pert.shape[0]):
        i = t_pert[t]
        ph = 0.0 * y[0]
        q = 0.0 * y[0]
        mon = 1.0 + 0.0 * y[0]
        for j in range(r):
            ph = ph + t_m[t, j] * y[j]
            d = y[r + j] - t_c[t, j]
            q = q + t_s[t, j] * d * d
            for _ in range(t_e[t, j]):
                mon = mon * y[r + j]
        env = np.exp(-q)
        cs = np.cos(ph)
        sn = np.sin(ph)
        re_part = cs * t_vr[t] - sn * t_vi[t]
        g = mon * env
        val[i] = val[i] + re_part * g
        for j in range(r):
            gx[i, j] = gx[i, j] - t_m[t, j] * (sn * t_vr[t] + cs * t_vi[t]) * g
            # d/dxi_j of xi^e exp(-q)
            dm = 0.0 * y[0]
            if t_e[t, j] > 0:
                dm = 1.0 + 0.0 * y[0]
                for k in range(r):
                    ek = t_e[t, k] - (1 if k == j else 0)
                    for _ in range(ek):
                        dm = dm * y[r + k]
                dm = dm * t_e[t, j]
            dg = (dm - 2.0 * t_s[t, j] * (y[r + j] - t_c[t, j]) * mon) * env
            gxi[i, j] = gxi[i, j] + re_part * dg


@njit(cache=True)
def _torus_field(y, out, kin, r, nf, P, ar, ai, t_pert, t_m, t_s, t_c, t_e, t_vr, t_vi,
                 val, gx, gxi):
    _torus_coeffs(y, r, P, t_pert, t_m, t_s, t_c, t_e, t_vr, t_vi, val, gx, gxi)
    off = 2 * r
    for j in range(r):
        out[j] = 2.0 * kin * y[r + j]
        out[r + j] = 0.0 * y[0]
    for k in range(2 * nf):
        out[off + k] = 0.0 * y[0]
    for i in range(P):
        mu = _fiber_moment(y, off, nf, ar[i], ai[i])
        for j in range(r):
            out[j] = out[j] + gxi[i, j] * mu
            out[r + j] = out[r + j] - gx[i, j] * mu
        c = val[i] / (2.0 * np.pi)
        for j in range(nf):
            sr = 0.0 * y[0]
            si = 0.0 * y[0]
            for k in range(nf):
                wr = y[off + k]
                wi = y[off + nf + k]
                sr = sr + ar[i, j, k] * wr - ai[i, j, k] * wi
                si = si + ar[i, j, k] * wi + ai[i, j, k] * wr
            out[off + j] = out[off + j] + c * sr
            out[off + nf + j] = out[off + nf + j] + c * si


@njit(cache=True)
def _torus_energy(y, kin, r, nf, P, ar, ai, t_pert, t_m, t_s, t_c, t_e, t_vr, t_vi,
                  val, gx, gxi):
    _torus_coeffs(y, r, P, t_pert, t_m, t_s, t_c, t_e, t_vr, t_vi, val, gx, gxi)
    e = 0.0 * y[0]
    for j in range(r):
        e = e + kin * y[r + j] * y[r + j]
    for i in range(P):
        e = e + val[i] * _fiber_moment(y, 2 * r, nf, ar[i], ai[i])
    return e


@njit(cache=True)
def _torus_run(y, nsteps, dt, kin, r, nf, P, ar, ai, t_pert, t_m, t_s, t_c, t_e, t_vr, t_vi,
               monitor_every):
    n = y.shape[0]
    k1 = np.empty_like(y)
    k2 = np.empty_like(y)
    k3 = np.empty_like(y)
    k4 = np.empty_like(y)
    tmp = np.empty_like(y)
    val = np.empty(max(P, 1), dtype=y.dtype)
    gx = np.empty((max(P, 1), r), dtype=y.dtype)
    gxi = np.empty((max(P, 1), r), dtype=y.dtype)
    args = (kin, r, nf, P, ar, ai, t_pert, t_m, t_s, t_c, t_e, t_vr, t_vi, val, gx, gxi)
    e0 = _torus_energy(y, *args).real
    trace = np.zeros(nsteps // monitor_every + 1)
    for step in range(nsteps):
        _torus_field(y, k1, *args)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * dt * k1[i]
        _torus_field(tmp, k2, *args)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * dt * k2[i]
        _torus_field(tmp, k3, *args)
        for i in range(n):
            tmp[i] = y[i] + dt * k3[i]
        _torus_field(tmp, k4, *args)
        for i in range(n):
            y[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if (step + 1) % monitor_every == 0:
            trace[(step + 1) // monitor_every] = _torus_energy(y, *args).real - e0
    return e0, trace


def _run_torus(y, Hs, t: float, dt: float, monitor_every: int = 100):
    nsteps = int(round(abs(t) / dt))
    if nsteps and abs(nsteps * dt - abs(t)) > 1e-12 * max(1.0, abs(t)):
        raise ValueError("t must be an integer multiple of dt")
    step = np.sign(t) * dt if t != 0 else dt
    e0, trace = _torus_run(y, nsteps, step, *_torus_tables(Hs), max(1, monitor_every))
    return y, e0, trace


@njit(cache=True)
def _torus_run_batch(Y, nsteps, dt, kin, r, nf, P, ar, ai, t_pert, t_m, t_s, t_c, t_e,
                     t_vr, t_vi):
    """RK4 on every row of Y in place (no energy monitor)."""
    N, n = Y.shape
    y = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    val = np.empty(max(P, 1))
    gx = np.empty((max(P, 1), r))
    gxi = np.empty((max(P, 1), r))
    args = (kin, r, nf, P, ar, ai, t_pert, t_m, t_s, t_c, t_e, t_vr, t_vi, val, gx, gxi)
    for q in range(N):
        for i in range(n):
            y[i] = Y[q, i]
        for _ in range(nsteps):
            _torus_field(y, k1, *args)
            for i in range(n):
                tmp[i] = y[i] + 0.5 * dt * k1[i]
            _torus_field(tmp, k2, *args)
            for i in range(n):
                tmp[i] = y[i] + 0.5 * dt * k2[i]
            _torus_field(tmp, k3, *args)
            for i in range(n):
                tmp[i] = y[i] + dt * k3[i]
            _torus_field(tmp, k4, *args)
            for i in range(n):
                y[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(n):
            Y[q, i] = y[i]


# ----------------------------------------------------------------------------
# flows on states
# ----------------------------------------------------------------------------

def _frame(state: FlowState) -> np.ndarray:
    """SL(2,R) frame g with g(i) = z and unit tangent direction of xi."""
    x1, x2 = state.x
    v = x2 ** 2 * (state.xi[0] + 1j * state.xi[1])
    u = v / abs(v)
    phi = -np.angle(u / 1j) / 2
    g0 = np.array([[np.sqrt(x2), x1 / np.sqrt(x2)], [0.0, 1 / np.sqrt(x2)]])
    k = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    return g0 @ k


def _state_from_frame(g: np.ndarray, w, speed: float, sides) -> FlowState:
    a, b, c, d = g.ravel()
    z = (a * 1j + b) / (c * 1j + d)
    v = 1j / (c * 1j + d) ** 2
    xi = speed * v / z.imag ** 2
    return FlowState([z.real, z.imag], [xi.real, xi.imag], w, "hyperbolic", tuple(sides))


def _apply_frame_flow(state: FlowState, F: FuchsianData, M: np.ndarray, parallel: bool,
                      reduce: bool = True) -> FlowState:
    speed = np.sqrt(state.x[1] ** 2 * state.xi @ state.xi)
    g = _frame(state) @ M
    w = state.w
    sides = list(state.sides)
    if reduce:
        z = (g[0, 0] * 1j + g[0, 1]) / (g[1, 0] * 1j + g[1, 1])
        _, gamma, crossed = F.reduce(z)
        g = gamma.matrix @ g
        if parallel:
            w = F.rho_of_sides(crossed) @ w
        sides += crossed
    return _state_from_frame(g, w, speed, sides)


def geodesic_flow(state: FlowState, t: float, F: FuchsianData | None = None,
                  reduce: bool = True, max_leg: float = 1.0) -> FlowState:
    """Unit-speed geodesic flow ``g -> g diag(e^{t/2}, e^{-t/2})``; fiber ignored.

    Long times are split into legs of length ``max_leg`` with a reduction
    after each, which keeps the cover coordinates bounded.
    """
    return _frame_flow(state, t, F, _diag, parallel=False, reduce=reduce, max_leg=max_leg)


def horizontal_flow(state: FlowState, t: float, F: FuchsianData | None = None,
                    max_leg: float = 1.0) -> FlowState:
    """Geodesic flow lifted by the flat connection: each reduction applies rho."""
    return _frame_flow(state, t, F, _diag, parallel=True, reduce=True, max_leg=max_leg)


def _diag(t):
    return np.diag([np.exp(t / 2), np.exp(-t / 2)])


def _stable(s):
    return np.array([[1.0, s], [0.0, 1.0]])


def _unstable(s):
    return np.array([[1.0, 0.0], [s, 1.0]])


def _frame_flow(state, t, F, gen, parallel, reduce, max_leg):
    F = F if F is not None else FuchsianData.build()
    if not reduce:
        return _apply_frame_flow(state, F, gen(t), parallel, reduce=False)
    legs = max(1, int(np.ceil(abs(t) / max_leg)))
    out = state
    for _ in range(legs):
        out = _apply_frame_flow(out, F, gen(t / legs), parallel)
    return out


def hamiltonian_flow(state: FlowState, Hc: ClassicalHamiltonian, t: float, dt: float,
                     drift_tol: float | None = None, monitor_every: int = 100) -> FlowState:
    """Fixed-step RK4 flow of ``Hc`` with an energy-drift monitor.

    Raises
    ------
    StepSizeError
        If the relative energy drift exceeds ``drift_tol``; the exception
        carries the sampled drift trace.
    """
    if Hc.geometry == "hyperbolic":
        y = state.as_vector().copy()
        y, sides, ns, _, e0, trace = _run_hyperbolic(y, Hc, t, dt, cap=100000,
                                                      monitor_every=monitor_every)
        rel = np.abs(trace) / max(abs(e0), 1e-300)
        if drift_tol is not None and rel.max() > drift_tol:
            raise StepSizeError(f"energy drift {rel.max():.3e} exceeds {drift_tol:.1e}", rel)
        out = FlowState.from_vector(y, 2, "hyperbolic", tuple(state.sides) + tuple(sides))
        object.__setattr__(out, "drift", float(rel.max()))
        return out
    y = state.as_vector().copy()
    y, e0, trace = _run_torus(y, Hc.spec, t, dt, monitor_every)
    rel = np.abs(trace) / max(abs(e0), 1e-300)
    if drift_tol is not None and rel.max() > drift_tol:
        raise StepSizeError(f"energy drift {rel.max():.3e} exceeds {drift_tol:.1e}", rel)
    r = Hc.r
    out = FlowState.from_vector(np.concatenate([y[:r] % TWO_PI, y[r:]]), r, "torus")
    object.__setattr__(out, "drift", float(rel.max()))
    return out


def energy_drift(state: FlowState, Hc: ClassicalHamiltonian, t: float, dt: float) -> float:
    """Largest relative energy deviation sampled along the trajectory."""
    return hamiltonian_flow(state, Hc, t, dt, monitor_every=10).drift


# ----------------------------------------------------------------------------
# symplectic residual
# ----------------------------------------------------------------------------

def _chart_coords(y, r, nf, chart):
    """Real chart coordinates (x, xi, Re z, Im z) of a packed state vector."""
    wr, wi = y[2 * r:2 * r + nf], y[2 * r + nf:]
    cr, ci = wr[chart], wi[chart]
    den = cr * cr + ci * ci
    keep = [j for j in range(nf) if j != chart]
    zr = [(wr[j] * cr + wi[j] * ci) / den for j in keep]
    zi = [(wi[j] * cr - wr[j] * ci) / den for j in keep]
    return np.array(list(y[:2 * r]) + zr + zi)


def _lift(u, r, nf, chart):
    m = nf - 1
    zr, zi = u[2 * r:2 * r + m], u[2 * r + m:]
    wr = np.zeros(nf, dtype=u.dtype)
    wi = np.zeros(nf, dtype=u.dtype)
    keep = [j for j in range(nf) if j != chart]
    wr[chart] = 1.0
    for i, j in enumerate(keep):
        wr[j] = zr[i]
        wi[j] = zi[i]
    return np.concatenate([u[:2 * r], wr, wi])


def _omega(u, r, nf, chart):
    """Coordinate matrix of ``d xi ^ d x`` plus the fiber symplectic form."""
    m = nf - 1
    base = np.zeros((2 * r, 2 * r))
    for j in range(r):
        base[j, r + j] = -1.0
        base[r + j, j] = 1.0
    z = u[2 * r:2 * r + m] + 1j * u[2 * r + m:]
    fib = fubini_study_form(FiberPoint(np.insert(z, chart, 1.0), chart=chart))
    out = np.zeros((2 * r + 2 * m, 2 * r + 2 * m))
    out[:2 * r, :2 * r] = base
    out[2 * r:, 2 * r:] = fib
    return out


def _flow_packed(y, Hc, T, dt):
    if Hc.geometry == "hyperbolic":
        return _run_hyperbolic(y, Hc, T, dt)[0]
    return _run_torus(y, Hc.spec, T, dt, monitor_every=10 ** 9)[0]


def symplectic_residual(Hc: ClassicalHamiltonian, state: FlowState, T: float,
                        dt: float = 1e-3, step: float = 1e-30, relative: bool = False) -> float:
    """``||J^T Omega(end) J - Omega(start)||`` for the time-T flow.

    The Jacobian is obtained by complex-step differentiation of the whole
    integrator (equivalent to integrating the variational equations); chart
    coordinates are the affine chart of the largest fiber coordinate at
    each end.

    With ``relative=True`` the residual is divided by ``max(1, ||J||^2)``.
    On the hyperbolic base ``||J||`` grows like ``e^{2T}``, so the absolute
    residual is dominated by rounding in ``J^T Omega J`` for long times.
    """
    if T == 0:
        return 0.0
    r, nf = Hc.r, Hc.n + 1
    y0 = state.as_vector()
    c0 = int(np.argmax(np.abs(state.w)))
    u0 = _chart_coords(y0, r, nf, c0)
    yT = _flow_packed(y0.copy(), Hc, T, dt)
    wT = yT[2 * r:2 * r + nf] + 1j * yT[2 * r + nf:]
    c1 = int(np.argmax(np.abs(wT)))
    uT = _chart_coords(yT, r, nf, c1)
    dim = len(u0)
    J = np.zeros((dim, dim))
    for k in range(dim):
        du = u0.astype(complex)
        du[k] += 1j * step
        y = _lift(du, r, nf, c0)
        out = _flow_packed(y, Hc, T, dt)
        J[:, k] = _chart_coords(out, r, nf, c1).imag / step
    # reductions are cotangent lifts composed with fiber isometries, so they
    # preserve both forms and need no special treatment
    O0 = _omega(u0, r, nf, c0)
    O1 = _omega(uT, r, nf, c1)
    res = float(np.abs(J.T @ O1 @ J - O0).max())
    if relative:
        res /= max(1.0, float(np.linalg.norm(J, 2)) ** 2)
    return res


# ----------------------------------------------------------------------------
# su-paths and holonomy
# ----------------------------------------------------------------------------

LEAVES = ("stable", "unstable", "flow")


@dataclass(frozen=True)
class SuPathSpec:
    """Ordered legs ``(leaf, length)`` with leaf in stable / unstable / flow."""

    legs: tuple = ()

    def __post_init__(self):
        legs = tuple((str(l), float(s)) for l, s in self.legs)
        for leaf, s in legs:
            if leaf not in LEAVES:
                raise ValueError(f"unknown leaf {leaf!r}")
            if not np.isfinite(s):
                raise ValueError("leg lengths must be finite")
        object.__setattr__(self, "legs", legs)

    def reversed(self) -> "SuPathSpec":
        return SuPathSpec(tuple((l, -s) for l, s in reversed(self.legs)))


@dataclass
class HolonomySample:
    """Result of transporting a fiber frame along an su-path."""

    R: np.ndarray
    end: FlowState
    sides: list
    word: list
    closed: bool


def su_path_holonomy(start: FlowState, path: SuPathSpec, F: FuchsianData | None = None,
                     require_closed: bool = False, max_leg: float = 0.5,
                     tol: float = 1e-8) -> HolonomySample:
    """Compose fundamental-domain twists along an unperturbed su-path.

    Flow legs use ``diag(e^{t/2}, e^{-t/2})``; stable and unstable legs use
    the upper and lower unipotent subgroups (horocycles).
    """
    F = F if F is not None else FuchsianData.build()
    gens = {"flow": _diag, "stable": _stable, "unstable": _unstable}
    # the start is first brought into the octagon; that move is not part of the path
    s = _apply_frame_flow(FlowState(start.x, start.xi, start.w, "hyperbolic"), F, np.eye(2),
                          parallel=False)
    s = replace(s, sides=())
    g0 = _frame(s)
    R = np.eye(F.n + 1, dtype=complex)
    sides = []
    for leaf, length in path.legs:
        legs = max(1, int(np.ceil(abs(length) / max_leg)))
        for _ in range(legs):
            before = len(s.sides)
            s = _apply_frame_flow(s, F, gens[leaf](length / legs), parallel=True)
            new = list(s.sides[before:])
            R = F.rho_of_sides(new) @ R
            sides += new
    g1 = _frame(s)
    closed = bool(min(np.abs(g0 - g1).max(), np.abs(g0 + g1).max()) <= tol)
    if require_closed and not closed:
        raise ClosureError("base projection of the path does not close")
    return HolonomySample(R=R, end=s, sides=sides, word=F.word_of_sides(sides), closed=closed)


def su2_net(size: int, seed: int = 0) -> np.ndarray:
    """Deterministic near-uniform net on SU(2) = S^3 (super-Fibonacci points plus +-1)."""
    i = np.arange(size) + 0.5
    phi = np.sqrt(2.0)
    psi = 1.533751168755204288118041
    s = i / size
    rr = np.sqrt(s)
    R = np.sqrt(1.0 - s)
    alpha = 2 * np.pi * i / phi
    beta = 2 * np.pi * i / psi
    q = np.stack([rr * np.sin(alpha), rr * np.cos(alpha), R * np.sin(beta), R * np.cos(beta)], axis=1)
    return np.vstack([q, [[1, 0, 0, 0], [-1, 0, 0, 0]]])


def _to_matrix_quat(U):
    """Quaternion (a, b, c, d) of ``[[a+ib, c+id], [-c+id, a-ib]]``."""
    return np.array([U[0, 0].real, U[0, 0].imag, U[0, 1].real, U[0, 1].imag])


def holonomy_density_scan(F: FuchsianData | None = None, L_max: int = 12, net_size: int = 20000,
                          generators: Sequence[str] = GENERATORS) -> np.ndarray:
    """Covering radius of ``{rho(word) : |word| <= L}`` for L = 0..L_max.

    Words run over the generators and their inverses; images are deduplicated
    to 1e-12.  Distance on SU(2) is the bi-invariant angle
    ``arccos(<q, q'>)`` between unit quaternions (diameter pi).
    """
    F = F if F is not None else FuchsianData.build()
    if F.n != 1:
        raise ValueError("the density scan is implemented for SU(2)")
    mats = []
    for g in generators:
        mats += [F.rho[g], F.rho[g].conj().T]
    gens = np.array([_to_matrix_quat(M) for M in mats])
    gens = np.unique(np.round(gens, 14), axis=0)
    net = su2_net(net_size)
    frontier = np.array([[1.0, 0.0, 0.0, 0.0]])
    seen = frontier.copy()
    radii = []
    for L in range(L_max + 1):
        if L > 0:
            cand = np.concatenate([_matrix_quat_product(frontier, g) for g in gens])
            key = np.round(cand, 10)
            _, first = np.unique(key, axis=0, return_index=True)
            cand = cand[np.sort(first)]
            old = {tuple(r) for r in np.round(seen, 10)}
            mask = np.array([tuple(r) not in old for r in np.round(cand, 10)])
            frontier = cand[mask]
            seen = np.vstack([seen, frontier])
        tree = cKDTree(seen)
        chord, _ = tree.query(net, k=1)
        radii.append(float(2 * np.arcsin(np.clip(chord.max() / 2, 0, 1))))
    return np.array(radii)


def _matrix_quat_product(Q, g):
    """Quaternions of ``U(q) @ U(g)`` for each row q of Q."""
    a1, b1, c1, d1 = Q.T
    a2, b2, c2, d2 = g
    # (a1+ib1)(a2+ib2) + (c1+id1)(-c2+id2)
    z11 = (a1 + 1j * b1) * (a2 + 1j * b2) + (c1 + 1j * d1) * (-c2 + 1j * d2)
    z12 = (a1 + 1j * b1) * (c2 + 1j * d2) + (c1 + 1j * d1) * (a2 - 1j * b2)
    return np.stack([z11.real, z11.imag, z12.real, z12.imag], axis=1)


# ----------------------------------------------------------------------------
# Birkhoff averages, ergodicity, sampling
# ----------------------------------------------------------------------------

OBS_KINDS = {"constant": 0, "fiber_moment": 1, "bump": 2, "bump_fiber": 3, "base_energy": 4}


@dataclass(frozen=True)
class Observable:
    """Battery observable on the unit cosphere bundle.

    kinds: ``constant`` (value), ``fiber_moment`` (``<mu_L, a>``), ``bump``
    (the perturbation bump chi), ``bump_fiber`` (chi <mu_L, a>),
    ``base_energy`` (``|xi|_g^2``), ``cos_x`` (torus only, ``cos(m.x)``).
    """

    kind: str
    a: LieElement | None = None
    value: float = 1.0
    m: tuple = (1,)

    @property
    def name(self) -> str:
        return self.kind

    def evaluate(self, states: Sequence[FlowState], Hc: ClassicalHamiltonian) -> np.ndarray:
        x = np.array([s.x for s in states])
        xi = np.array([s.xi for s in states])
        w = np.array([s.w for s in states])
        return self._eval_arrays(x, xi, w, Hc)

    def _eval_arrays(self, x, xi, w, Hc):
        N = x.shape[0]
        if self.kind == "constant":
            return np.full(N, float(self.value))
        if self.kind == "fiber_moment":
            return moment_map(self.a, w)
        if self.kind == "cos_x":
            return np.cos(x @ np.asarray(self.m, dtype=float))
        if self.kind == "base_energy":
            if Hc.geometry == "torus":
                return np.sum(xi ** 2, axis=1)
            return x[:, 1] ** 2 * np.sum(xi ** 2, axis=1)
        s = (x[:, 0] ** 2 + (x[:, 1] - 1) ** 2) / (2 * x[:, 1])
        chi = _bump(s / Hc.s0)
        if self.kind == "bump":
            return chi
        if self.kind == "bump_fiber":
            return chi * moment_map(self.a, w)
        raise ValueError(f"unknown observable kind {self.kind!r}")


def default_battery(n: int = 1) -> list:
    """Fiber moments along two non-commuting directions plus base observables."""
    az = LieElement(np.pi * np.diag([1j, -1j]) if n == 1 else
                    np.diag(np.r_[1j, -1j, np.zeros(n - 1)]) * np.pi)
    bx = np.zeros((n + 1, n + 1), dtype=complex)
    bx[0, 1] = bx[1, 0] = 1j * np.pi
    return [Observable("fiber_moment", az), Observable("fiber_moment", LieElement(bx)),
            Observable("bump"), Observable("bump_fiber", az)]


def _kernel_observables(battery, nf):
    kind = np.array([OBS_KINDS[o.kind] for o in battery], dtype=np.int64)
    om_r = np.zeros((len(battery), nf, nf))
    om_i = np.zeros((len(battery), nf, nf))
    for q, o in enumerate(battery):
        if o.a is not None:
            om_r[q], om_i[q] = o.a.matrix.real, o.a.matrix.imag
    return kind, om_r, om_i


def birkhoff_average(A: Observable, state: FlowState, T: float, dt: float,
                     Hc: ClassicalHamiltonian) -> float:
    """``(1/T) int_0^T A(psi_t(state)) dt`` with the trapezoid rule on the integrator steps."""
    return float(birkhoff_averages([A], [state], T, dt, Hc)[0, 0, 0])


def birkhoff_averages(battery: Sequence[Observable], states: Sequence[FlowState], T,
                      dt: float, Hc: ClassicalHamiltonian) -> np.ndarray:
    """Birkhoff averages for every state, at each horizon of ``T`` (scalar or increasing list).

    Returns an array (len(T_list), len(states), len(battery)).
    """
    T_list = np.atleast_1d(np.asarray(T, dtype=float))
    if np.any(np.diff(T_list) <= 0) or T_list[0] <= 0:
        raise ValueError("horizons must be positive and increasing")
    out = np.zeros((len(T_list), len(states), len(battery)))
    if all(o.kind == "constant" for o in battery):
        for q, o in enumerate(battery):
            out[:, :, q] = o.value
        return out
    if Hc.geometry == "hyperbolic":
        if any(o.kind == "cos_x" for o in battery):
            raise ValueError("cos_x observables are torus-only")
        obs = _kernel_observables(battery, Hc.n + 1)
        for i, s in enumerate(states):
            y = s.as_vector().copy()
            acc = np.zeros(len(battery))
            t_prev = 0.0
            for j, T_j in enumerate(T_list):
                y, _, _, part, _, _ = _run_hyperbolic(y, Hc, T_j - t_prev, dt, obs,
                                                      monitor_every=10 ** 9)
                acc = acc + part
                t_prev = T_j
                out[j, i] = acc / T_j
        const = [q for q, o in enumerate(battery) if o.kind == "constant"]
        for q in const:
            out[:, :, q] = battery[q].value
        return out
    # torus: vectorized over the ensemble
    flow = TorusHamiltonianFlow(Hc.spec)
    x = np.array([s.x for s in states])
    xi = np.array([s.xi for s in states])
    w = np.array([s.w for s in states])
    acc = np.zeros((len(states), len(battery)))
    marks = {int(round(Tj / dt)): j for j, Tj in enumerate(T_list)}
    prev = [None]

    def sample(k, y):
        vals = np.stack([o._eval_arrays(y[0] % TWO_PI, y[1], y[2] + 1j * y[3], Hc)
                         for o in battery], axis=1)
        if prev[0] is not None:
            acc[:] += 0.5 * dt * (prev[0] + vals)
        prev[0] = vals
        if k in marks:
            out[marks[k]] = acc / T_list[marks[k]]

    flow.integrate(x, xi, w, T_list[-1], dt, sample)
    for q, o in enumerate(battery):
        if o.kind == "constant":
            out[:, :, q] = o.value
    return out


def energy_surface_sampler(Hc: ClassicalHamiltonian, c: float, count: int, seed: int = 0,
                           margin: float = 1e-3) -> list:
    """Liouville-distributed states on ``H^{-1}(c)``.

    For ``H = |xi|_g^2 + V(x, w)`` the surface measure disintegrates as
    ``(c - V)^{(r-2)/2}`` times the product of base volume, fiber volume and
    the uniform direction of xi.  Candidates are drawn from the product
    measure and accepted with that weight (constant when r = 2).
    """
    rng = np.random.default_rng(seed)
    r, n = Hc.r, Hc.n
    out = []
    while len(out) < count:
        batch = max(64, 2 * (count - len(out)))
        w = rng.standard_normal((batch, n + 1)) + 1j * rng.standard_normal((batch, n + 1))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        if Hc.geometry == "hyperbolic":
            x = _sample_octagon(Hc.group, batch, rng)
            V = Hc.potential(x, w)
            metric_scale = x[:, 1]
        else:
            Hs = Hc.spec
            if not Hs.xi_independent():
                raise NotImplementedError("sampler needs momentum-independent perturbations")
            x = rng.uniform(0, TWO_PI, size=(batch, r))
            V = Hs(x, np.zeros((batch, r)), w)
            metric_scale = np.full(batch, np.sqrt(Hs.kinetic))
        gap = c - V
        if np.any(gap <= margin * max(abs(c), 1.0)):
            raise RegularValueError(f"level {c} is not regular on the sampled region")
        weight = gap ** ((r - 2) / 2)
        accept = rng.uniform(size=batch) * weight.max() <= weight if r != 2 else np.ones(batch, bool)
        d = rng.standard_normal((batch, r))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        xi = np.sqrt(gap)[:, None] * d / metric_scale[:, None]
        for i in np.nonzero(accept)[0]:
            if len(out) == count:
                break
            out.append(FlowState(x[i], xi[i], w[i], Hc.geometry))
    return out


def _sample_octagon(F: FuchsianData, count: int, rng) -> np.ndarray:
    """Hyperbolic-area-uniform points of the octagon (half-plane coordinates)."""
    pts = []
    while len(pts) < count:
        m = 2 * count
        ch = rng.uniform(1, np.cosh(F.circumradius), size=m)
        rho = np.arccosh(ch)
        ang = rng.uniform(0, TWO_PI, size=m)
        zeta = np.tanh(rho / 2) * np.exp(1j * ang)
        z = from_disc(zeta)
        ok = F.contains(z)
        pts += list(z[ok])
    z = np.array(pts[:count])
    return np.column_stack([z.real, z.imag])


@dataclass
class ErgodicityTable:
    T: list
    dispersion: np.ndarray  # (len(T), len(battery))
    names: list
    averages: np.ndarray = field(repr=False, default=None)

    def ratio(self) -> np.ndarray:
        return self.dispersion[-1] / self.dispersion[0]


def ergodicity_scan(Hc: ClassicalHamiltonian, c: float, count: int, T_list, battery=None,
                    seed: int = 0, dt: float = 0.01) -> ErgodicityTable:
    """Ensemble standard deviation of Birkhoff averages per horizon and observable."""
    battery = battery if battery is not None else default_battery(Hc.n)
    states = energy_surface_sampler(Hc, c, count, seed)
    avgs = birkhoff_averages(battery, states, T_list, dt, Hc)
    disp = avgs.std(axis=1)
    return ErgodicityTable(T=list(T_list), dispersion=disp, names=[o.kind for o in battery],
                           averages=avgs)
