"""Piecewise-polynomial PWM basis functions on the unit period.

Every function is stored segment by segment. On a segment ``[a, b]`` the
polynomial is kept in the centred local variable ``u = (2 tau - a - b) / (b - a)``
on ``[-1, 1]``, which keeps the monomial coefficients small and the exact
integrals well conditioned up to degree 12 products.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

SQRT3 = np.sqrt(3.0)
DEGENERATE_NORM = 1e-14


@dataclass(frozen=True)
class PiecewisePolynomial:
    """Polynomial segments on a partition of ``[0, 1]``.

    Parameters
    ----------
    breakpoints : sequence of float
        Strictly increasing, first ``0``, last ``1``.
    segments : sequence of sequence of float
        One monomial coefficient list per interval, lowest degree first, in
        the interval's centred local variable ``u in [-1, 1]``.
    """

    breakpoints: tuple[float, ...]
    segments: tuple[np.ndarray, ...]

    def __init__(self, breakpoints: Sequence[float], segments: Sequence[Sequence[float]]):
        bp = tuple(float(b) for b in breakpoints)
        if len(bp) < 2 or bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if len(segments) != len(bp) - 1:
            raise ValueError("need exactly one segment per interval")
        segs = []
        for s in segments:
            arr = np.array(s, dtype=float).reshape(-1)
            if arr.size == 0:
                arr = np.zeros(1)
            arr.setflags(write=False)
            segs.append(arr)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "segments", tuple(segs))

    @classmethod
    def constant(cls, value: float, breakpoints: Sequence[float] = (0.0, 1.0)) -> "PiecewisePolynomial":
        return cls(breakpoints, [[value]] * (len(breakpoints) - 1))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def degrees(self) -> list[int]:
        """Exact degree per segment (``-1`` for an identically zero segment)."""
        out = []
        for c in self.segments:
            nz = np.flatnonzero(c)
            out.append(int(nz[-1]) if nz.size else -1)
        return out

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        bp = np.asarray(self.breakpoints)
        idx = np.clip(np.searchsorted(bp, tau, side="right") - 1, 0, len(self.segments) - 1)
        u = (2.0 * tau - bp[idx] - bp[idx + 1]) / (bp[idx + 1] - bp[idx])
        out = np.zeros_like(tau)
        for i, c in enumerate(self.segments):
            mask = idx == i
            if np.any(mask):
                out[mask] = npoly.polyval(u[mask], c)
        return out if out.ndim else float(out)

    def side_values(self, i: int) -> tuple[float, float]:
        """Values of segment ``i`` at its left and right end."""
        c = self.segments[i]
        return float(npoly.polyval(-1.0, c)), float(np.sum(c))

    def refine(self, breakpoints: Sequence[float]) -> "PiecewisePolynomial":
        """Re-express on a finer partition that contains the current one."""
        old = np.asarray(self.breakpoints)
        new = np.asarray(breakpoints, dtype=float)
        if not np.all(np.isin(old, new)):
            raise ValueError("refinement must contain the existing breakpoints")
        segs = []
        for c, d in zip(new[:-1], new[1:]):
            i = min(int(np.searchsorted(old, c, side="right")) - 1, len(self.segments) - 1)
            a, b = old[i], old[i + 1]
            # u_old = shift + scale * u_new
            shift, scale = (c + d - a - b) / (b - a), (d - c) / (b - a)
            segs.append(_compose_affine(self.segments[i], shift, scale))
        return PiecewisePolynomial(new, segs)

    def derivative(self) -> "PiecewisePolynomial":
        return PiecewisePolynomial(
            self.breakpoints,
            [npoly.polyder(c) * (2.0 / h) if c.size > 1 else [0.0] for c, h in zip(self.segments, self.widths)],
        )

    def antiderivative(self) -> "PiecewisePolynomial":
        """Continuous antiderivative that vanishes at ``tau = 0``."""
        segs = []
        offset = 0.0
        for c, h in zip(self.segments, self.widths):
            seg = npoly.polyint(c, lbnd=-1.0) * (0.5 * h)
            seg[0] += offset
            offset = float(np.sum(seg))
            segs.append(seg)
        return PiecewisePolynomial(self.breakpoints, segs)

    def integral(self) -> float:
        return float(sum(0.5 * h * _unit_integral(c) for c, h in zip(self.segments, self.widths)))

    def _binary(self, other: "PiecewisePolynomial", op) -> "PiecewisePolynomial":
        bp = np.union1d(self.breakpoints, other.breakpoints)
        f, g = self.refine(bp), other.refine(bp)
        return PiecewisePolynomial(bp, [op(a, b) for a, b in zip(f.segments, g.segments)])

    def __add__(self, other: "PiecewisePolynomial") -> "PiecewisePolynomial":
        return self._binary(other, npoly.polyadd)

    def __sub__(self, other: "PiecewisePolynomial") -> "PiecewisePolynomial":
        return self._binary(other, npoly.polysub)

    def __mul__(self, other):
        if isinstance(other, PiecewisePolynomial):
            return self._binary(other, npoly.polymul)
        return PiecewisePolynomial(self.breakpoints, [c * float(other) for c in self.segments])

    __rmul__ = __mul__

    def __neg__(self) -> "PiecewisePolynomial":
        return self * -1.0


def _unit_integral(c: np.ndarray) -> float:
    """``int_{-1}^{1}`` of a monomial series; odd powers drop out."""
    even = c[::2]
    return float(np.dot(even, 2.0 / np.arange(1, 2 * even.size, 2)))


def _compose_affine(c: np.ndarray, shift: float, scale: float) -> np.ndarray:
    """Coefficients of ``p(shift + scale*v)`` in ``v``."""
    if shift == 0.0 and scale == 1.0:
        return np.array(c)
    out = np.zeros(len(c))
    lin = np.array([shift, scale])
    power = np.array([1.0])
    for ck in c:
        out[: power.size] += ck * power
        power = npoly.polymul(power, lin)
    return out


def inner_product(f: PiecewisePolynomial, g: PiecewisePolynomial) -> float:
    """Exact L2(0, 1) inner product of two piecewise polynomials."""
    return (f * g).integral()


def pulse_waveform(duty: float, amplitude: float = 1.0) -> PiecewisePolynomial:
    """``amplitude`` on ``[0, duty)``, zero on ``[duty, 1]``."""
    return PiecewisePolynomial([0.0, duty, 1.0], [[amplitude], [0.0]])


@dataclass(frozen=True)
class PwmBasis:
    """Orthonormal PWM basis ``p_0 .. p_Np`` with switching parameter ``D``."""

    D: float
    Np: int
    functions: tuple[PiecewisePolynomial, ...]

    def __len__(self) -> int:
        return self.Np + 1

    def __getitem__(self, k: int) -> PiecewisePolynomial:
        return self.functions[k]

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (0.0, self.D, 1.0)

    def values(self, tau) -> np.ndarray:
        """All basis functions at ``tau``; shape ``(Np + 1,) + tau.shape``."""
        return np.array([p(tau) for p in self.functions])

    @cached_property
    def derivatives(self) -> tuple[PiecewisePolynomial, ...]:
        return tuple(p.derivative() for p in self.functions)

    def derivative_values(self, tau) -> np.ndarray:
        """``d p_k / d tau`` at ``tau``; one-sided from the right at ``D``."""
        return np.array([p(tau) for p in self.derivatives])

    def gram(self) -> np.ndarray:
        n = len(self)
        G = np.empty((n, n))
        for k in range(n):
            for l in range(k, n):
                G[k, l] = G[l, k] = inner_product(self.functions[k], self.functions[l])
        return G


def build_basis(D: float, Np: int) -> PwmBasis:
    """Construct the PWM basis by recursive integration and Gram-Schmidt.

    ``p_0 = 1`` and ``p_1`` is the two-segment sawtooth. For ``k >= 2`` the
    antiderivative of ``p_{k-1}`` (zero at ``tau = 0``) is orthogonalised
    against the previous functions with two passes of modified Gram-Schmidt
    and normalised; the sign makes the leading coefficient on ``[0, D]``
    positive.
    """
    if not 0.0 < D < 1.0:
        raise ValueError(f"D must lie in (0, 1), got {D}")
    if int(Np) != Np or Np < 0:
        raise ValueError(f"Np must be a nonnegative integer, got {Np}")
    Np = int(Np)
    bp = (0.0, float(D), 1.0)
    funcs = [PiecewisePolynomial.constant(1.0, bp)]
    if Np >= 1:
        funcs.append(PiecewisePolynomial(bp, [[0.0, SQRT3], [0.0, -SQRT3]]))
    for k in range(2, Np + 1):
        v = funcs[-1].antiderivative()
        for _ in range(2):
            for q in funcs:
                v = v - q * inner_product(v, q)
        norm = np.sqrt(max(inner_product(v, v), 0.0))
        if norm < DEGENERATE_NORM:
            raise ValueError(f"basis degenerates at k={k} (norm {norm:.3e})")
        v = v * (1.0 / norm)
        lead = v.segments[0][-1]
        if lead < 0:
            v = -v
        funcs.append(v)
    return PwmBasis(float(D), Np, tuple(funcs))


def evaluate(basis: PwmBasis, k: int, tau: float) -> float:
    """Value of ``p_k(tau)`` for ``0 <= tau <= 1``."""
    if not 0 <= k <= basis.Np:
        raise IndexError(f"basis index {k} outside 0..{basis.Np}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau={tau} outside [0, 1]")
    return float(basis.functions[k](tau))


@dataclass(frozen=True)
class GalerkinMatrices:
    """Projection matrices for one switching period ``Ts``.

    ``I_mat = Ts * int P P^T`` and ``Q_mat = -int P' P^T`` over the unit period.
    """

    I_mat: np.ndarray
    Q_mat: np.ndarray
    Ts: float


def galerkin_matrices(basis: PwmBasis, Ts: float) -> GalerkinMatrices:
    if not Ts > 0:
        raise ValueError("Ts must be positive")
    n = len(basis)
    derivs = basis.derivatives
    Q = np.empty((n, n))
    for k in range(n):
        for l in range(n):
            Q[k, l] = -inner_product(derivs[k], basis.functions[l])
    I = Ts * basis.gram()
    I.setflags(write=False)
    Q.setflags(write=False)
    return GalerkinMatrices(I, Q, float(Ts))


def project_waveform(basis: PwmBasis, w: PiecewisePolynomial) -> np.ndarray:
    """Exact coefficients ``int_0^1 w(tau) p_l(tau) dtau`` for ``l = 0..Np``."""
    return np.array([inner_product(w, p) for p in basis.functions])
