"""Circuit models of the form ``A(x) x' + B(x) x = c(t)``."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .pwm_basis import PiecewisePolynomial, pulse_waveform

# phases closer than this to a switching instant count as "at" the instant
PHASE_SNAP = 1e-12


def pulse_phase(t, Ts: float):
    """``t / Ts mod 1`` with values within ``PHASE_SNAP`` of 1 wrapped to 0."""
    phase = np.mod(np.asarray(t, dtype=float) / Ts, 1.0)
    return np.where(phase > 1.0 - PHASE_SNAP, 0.0, phase)


def pulse_voltage(t, Vi: float, D_pulse: float, Ts: float):
    """Ideal right-continuous pulse: ``Vi`` while ``t/Ts mod 1 < D_pulse``, else 0."""
    phase = pulse_phase(t, Ts)
    out = np.where(phase < D_pulse - PHASE_SNAP, Vi, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SaturationCurve:
    """Algebraic-sigmoid coil saturation ``L(i) = Linf + (L0 - Linf) / (1 + |i/Iknee|^p)``."""

    L0: float = 1e-3
    Linf: float = 0.2e-3
    Iknee: float = 0.6
    p: float = 4.0

    def __post_init__(self):
        if not (self.L0 > 0 and self.Linf > 0 and self.Iknee > 0):
            raise ValueError("curve parameters must be positive")
        if self.Linf > self.L0:
            raise ValueError("Linf must not exceed L0")
        if self.p < 2:
            raise ValueError("sharpness exponent p must be >= 2")

    @property
    def is_constant(self) -> bool:
        return self.L0 == self.Linf

    def __call__(self, i):
        s = np.abs(np.asarray(i, dtype=float) / self.Iknee) ** self.p
        return self.Linf + (self.L0 - self.Linf) / (1.0 + s)

    def derivative(self, i):
        """``dL/di``; zero at ``i = 0`` since ``p >= 2``."""
        x = np.asarray(i, dtype=float) / self.Iknee
        s = np.abs(x) ** self.p
        ds = self.p * np.abs(x) ** (self.p - 1) * np.sign(x) / self.Iknee
        return -(self.L0 - self.Linf) * ds / (1.0 + s) ** 2


def inductance(curve: SaturationCurve, i):
    return curve(i)


class CircuitModel:
    """Contract for ``A(x) x' + B(x) x = c(t)`` with ``Ts``-periodic excitation.

    Subclasses provide ``ns``, ``Ts`` and the evaluators below. ``eval_A`` and
    ``eval_B`` accept a single state of shape ``(ns,)`` or a batch
    ``(..., ns)`` and return ``(..., ns, ns)``.
    """

    ns: int
    Ts: float

    def eval_A(self, x) -> np.ndarray:
        raise NotImplementedError

    def eval_B(self, x) -> np.ndarray:
        raise NotImplementedError

    def eval_c(self, t) -> np.ndarray:
        raise NotImplementedError

    def eval_dA(self, x) -> np.ndarray | None:
        """``dA/dx_m`` stacked on the last axis, shape ``(..., ns, ns, ns)``; None if unavailable."""
        return None

    def eval_dB(self, x) -> np.ndarray | None:
        """``dB/dx_m`` in the layout of ``eval_dA``; None if unavailable."""
        return None

    def source_profiles(self) -> list[PiecewisePolynomial]:
        """``c_j(tau * Ts)`` over one period, exactly, for each component."""
        raise NotImplementedError

    def switching_phases(self) -> tuple[float, ...]:
        """Phases in ``[0, 1)`` at which ``c`` may jump."""
        phases = set()
        for prof in self.source_profiles():
            phases.update(prof.breakpoints[:-1])
        return tuple(sorted(phases))

    def eval_c_branch(self, t, t_ref: float) -> np.ndarray:
        """Excitation on the smooth piece that contains ``t_ref``.

        The piece's polynomial is evaluated at ``t`` (continued past its ends),
        which gives one-sided limits at switching instants.
        """
        return self.branch(t_ref)(t)

    def branch(self, t_ref: float) -> "Callable[[float], np.ndarray]":
        """Frozen evaluator of the smooth excitation piece containing ``t_ref``."""
        k = np.floor(t_ref / self.Ts)
        phase_ref = t_ref / self.Ts - k
        pieces = []
        for prof in self.source_profiles():
            bp = prof.breakpoints
            i = min(int(np.searchsorted(bp, phase_ref, side="right")) - 1, len(prof.segments) - 1)
            lo, hi = bp[i], bp[i + 1]
            # u = gain * t + shift maps the piece onto [-1, 1]
            gain = 2.0 / ((hi - lo) * self.Ts)
            shift = -(2.0 * k + lo + hi) / (hi - lo)
            pieces.append((gain, shift, prof.segments[i]))
        polyval = np.polynomial.polynomial.polyval

        def c(t):
            return np.stack([polyval(gain * np.asarray(t, dtype=float) + shift, seg)
                             for gain, shift, seg in pieces], axis=-1)

        return c

    @property
    def is_linear(self) -> bool:
        return False

    def period_average(self) -> np.ndarray:
        return np.array([p.integral() for p in self.source_profiles()])


@dataclass(frozen=True)
class LinearCircuit(CircuitModel):
    """Constant-matrix model with piecewise-polynomial periodic excitation."""

    A: np.ndarray
    B: np.ndarray
    profiles: tuple[PiecewisePolynomial, ...]
    Ts: float

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if A.shape != B.shape or A.shape[0] != A.shape[1] or len(self.profiles) != A.shape[0]:
            raise ValueError("inconsistent dimensions")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "profiles", tuple(self.profiles))

    @property
    def ns(self) -> int:
        return self.A.shape[0]

    @property
    def is_linear(self) -> bool:
        return True

    def eval_A(self, x):
        x = np.asarray(x)
        return np.broadcast_to(self.A, x.shape[:-1] + self.A.shape)

    def eval_B(self, x):
        x = np.asarray(x)
        return np.broadcast_to(self.B, x.shape[:-1] + self.B.shape)

    def eval_dA(self, x):
        x = np.asarray(x)
        return np.zeros(x.shape[:-1] + (self.ns,) * 3)

    eval_dB = eval_dA

    def eval_c(self, t):
        phase = pulse_phase(t, self.Ts)
        return np.stack([np.asarray(p(phase)) for p in self.profiles], axis=-1)

    def source_profiles(self):
        return list(self.profiles)


@dataclass(frozen=True)
class BuckConverter(CircuitModel):
    """Simplified buck converter with a saturating coil; state ``x = [iL, vC]``."""

    Vi: float = 10.0
    D_pulse: float = 0.7
    Ts: float = 1e-3
    C: float = 100e-6
    R: float = 10.0
    curve: SaturationCurve = field(default_factory=SaturationCurve)

    ns = 2

    def __post_init__(self):
        if not 0.0 < self.D_pulse < 1.0:
            raise ValueError("D_pulse must lie in (0, 1)")
        if not (self.Ts > 0 and self.C > 0 and self.R > 0):
            raise ValueError("Ts, C and R must be positive")

    @classmethod
    def linear(cls, L: float = 1e-3, **kw) -> "BuckConverter":
        """Same circuit with a constant inductance ``L``."""
        return cls(curve=SaturationCurve(L0=L, Linf=L), **kw)

    @property
    def is_linear(self) -> bool:
        return self.curve.is_constant

    def eval_A(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = self.curve(x[..., 0])
        out[..., 1, 1] = self.C
        return out

    def eval_dA(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = self.curve.derivative(x[..., 0])
        return out

    def eval_dB(self, x):
        x = np.asarray(x)
        return np.zeros(x.shape[:-1] + (2, 2, 2))

    @cached_property
    def _B(self) -> np.ndarray:
        B = np.array([[0.0, 1.0], [-1.0, 1.0 / self.R]])
        B.setflags(write=False)
        return B

    def eval_B(self, x):
        x = np.asarray(x)
        return self._B if x.ndim == 1 else np.broadcast_to(self._B, x.shape[:-1] + (2, 2))

    def eval_c(self, t):
        v = np.asarray(pulse_voltage(t, self.Vi, self.D_pulse, self.Ts))
        return np.stack([v, np.zeros_like(v)], axis=-1)

    @cached_property
    def _profiles(self) -> tuple[PiecewisePolynomial, ...]:
        return (pulse_waveform(self.D_pulse, self.Vi), PiecewisePolynomial.constant(0.0))

    def source_profiles(self):
        return list(self._profiles)

    def dc_operating_point(self) -> np.ndarray:
        """Steady state under the period-averaged input ``D_pulse * Vi``."""
        v = self.D_pulse * self.Vi
        return np.array([v / self.R, v])


def assemble_eq1(model: CircuitModel, x: Sequence[float], t: float):
    """``(A(x), B(x), c(t))`` for one state and time."""
    x = np.asarray(x, dtype=float)
    return np.array(model.eval_A(x)), np.array(model.eval_B(x)), np.asarray(model.eval_c(t), dtype=float)


def residual_eq1(model: CircuitModel, x, xdot, t) -> np.ndarray:
    A, B, c = assemble_eq1(model, x, t)
    return A @ np.asarray(xdot, dtype=float) + B @ x - c


def permuted(model: LinearCircuit, perm: Sequence[int]) -> LinearCircuit:
    """Relabel the states of a linear model."""
    perm = list(perm)
    return LinearCircuit(
        model.A[np.ix_(perm, perm)],
        model.B[np.ix_(perm, perm)],
        tuple(model.profiles[i] for i in perm),
        model.Ts,
    )
