"""End-to-end solves: conventional transient reference and MPDE."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .circuits import BuckConverter, CircuitModel
from .galerkin import ORIGINAL, RIPPLE_PERIODIC, RIPPLE_ZERO, SIMPLIFIED, MpdeSystem, reconstruct
from .pwm_basis import PwmBasis, build_basis
from .radau import ImplicitSystem, IntegrationError, IntegratorConfig, Trajectory, integrate

log = logging.getLogger(__name__)

REFERENCE = "reference"
MPDE_SIMPLIFIED = "mpde_simplified"
MPDE_ORIGINAL = "mpde_original"
MODES = (REFERENCE, MPDE_SIMPLIFIED, MPDE_ORIGINAL)

SAMPLES_PER_PERIOD = 50
MAX_SAMPLES = 2_000_000


class SimulationError(RuntimeError):
    pass


def reference_config(tol: float = 1e-12) -> IntegratorConfig:
    return IntegratorConfig(rtol=tol, atol=tol)


def mpde_config(tol: float = 1e-6) -> IntegratorConfig:
    return IntegratorConfig(rtol=tol, atol=tol)


@dataclass(frozen=True)
class SimulationSpec:
    model: CircuitModel = field(default_factory=BuckConverter)
    fs: float = 1e3
    t_end: float = 10e-3
    Np: int = 4
    D_basis: float | None = None  # None: follow the pulse duty cycle
    mode: str = MPDE_SIMPLIFIED
    tolerances: IntegratorConfig | None = None
    x0: tuple[float, ...] | None = None
    jacobian: str = "fd"
    ripple_init: str = RIPPLE_PERIODIC

    def __post_init__(self):
        if not (self.fs > 0 and self.t_end > 0):
            raise ValueError("fs and t_end must be positive")
        if self.Np < 0:
            raise ValueError("Np must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.ripple_init not in (RIPPLE_ZERO, RIPPLE_PERIODIC):
            raise ValueError(f"unknown ripple_init {self.ripple_init!r}")

    @property
    def Ts(self) -> float:
        return 1.0 / self.fs

    @property
    def basis_D(self) -> float:
        if self.D_basis is not None:
            return self.D_basis
        return getattr(self.model, "D_pulse", 0.5)

    def circuit(self) -> CircuitModel:
        """The model with its switching period set to ``1 / fs``."""
        return dataclasses.replace(self.model, Ts=self.Ts)

    def config(self) -> IntegratorConfig:
        if self.tolerances is not None:
            return self.tolerances
        return reference_config() if self.mode == REFERENCE else mpde_config()

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.model.ns) if self.x0 is None else np.asarray(self.x0, dtype=float)

    def with_(self, **changes) -> "SimulationSpec":
        return dataclasses.replace(self, **changes)


def sample_grid(t_end: float, Ts: float) -> np.ndarray:
    n = min(math.ceil(SAMPLES_PER_PERIOD * t_end / Ts - 1e-9) + 1, MAX_SAMPLES)
    return np.linspace(0.0, t_end, n)


@dataclass
class SolutionRecord:
    spec: SimulationSpec
    trajectory: Trajectory
    t: np.ndarray
    x: np.ndarray  # (len(t), Ns) reconstructed states
    solve_time: float
    setup_time: float = 0.0
    basis: PwmBasis | None = None

    @property
    def n_steps(self) -> int:
        return self.trajectory.n_steps

    def sample(self, t) -> np.ndarray:
        """State at arbitrary times through the trajectory's dense output."""
        if self.basis is None:
            return self.trajectory(t)
        return reconstruct(self.basis, self.trajectory, t, self.spec.Ts)


class ReferenceSystem(ImplicitSystem):
    """``A(x) x' + B(x) x - c(t)`` as an implicit system."""

    def __init__(self, model: CircuitModel, t_ref: float | None = None):
        self.model = model
        self.dimension = model.ns
        self._t_ref = t_ref
        self._c = model.eval_c if t_ref is None else model.branch(t_ref)

    def residual(self, t, y, yp):
        m = self.model
        return m.eval_A(y) @ yp + m.eval_B(y) @ y - self._c(t)

    def residuals(self, ts, Y, Yp):
        m = self.model
        return (np.einsum("sij,sj->si", m.eval_A(Y), Yp) + np.einsum("sij,sj->si", m.eval_B(Y), Y)
                - self._c(ts))

    def jacobians(self, t, y, yp):
        m = self.model
        dA, dB = m.eval_dA(y), m.eval_dB(y)
        if dA is None or dB is None:
            return super().jacobians(t, y, yp)
        A = np.array(m.eval_A(y))
        J = m.eval_B(y) + np.einsum("jam,a->jm", dA, yp) + np.einsum("jam,a->jm", dB, y)
        return J, A

    def on_segment(self, t_start, t_end):
        return ReferenceSystem(self.model, 0.5 * (t_start + t_end))


def switching_edges(model: CircuitModel, t_end: float) -> np.ndarray:
    """All switching instants ``(m + phase) * Ts`` inside ``[0, t_end]``."""
    Ts = model.Ts
    n = math.ceil(t_end / Ts) + 1
    m = np.arange(n)[:, None]
    edges = ((m + np.array(model.switching_phases())[None, :]) * Ts).ravel()
    return np.unique(edges[(edges >= 0) & (edges <= t_end)])


def solve_reference(spec: SimulationSpec) -> SolutionRecord:
    if spec.mode != REFERENCE:
        raise ValueError("solve_reference needs mode='reference'")
    t_setup = time.perf_counter()
    model = spec.circuit()
    sys = ReferenceSystem(model)
    edges = switching_edges(model, spec.t_end)
    setup = time.perf_counter() - t_setup
    start = time.perf_counter()
    try:
        traj = integrate(sys, spec.initial_state(), 0.0, spec.t_end, spec.config(), break_points=edges)
    except IntegrationError as exc:
        raise SimulationError(f"reference solve failed (fs={spec.fs:g} Hz): {exc}") from exc
    elapsed = time.perf_counter() - start
    t = sample_grid(spec.t_end, spec.Ts)
    return SolutionRecord(spec, traj, t, traj(t), elapsed, setup)


def build_mpde_system(spec: SimulationSpec) -> MpdeSystem:
    mode = SIMPLIFIED if spec.mode == MPDE_SIMPLIFIED else ORIGINAL
    basis = build_basis(spec.basis_D, spec.Np)
    return MpdeSystem(basis, spec.circuit(), mode, jacobian=spec.jacobian)


def solve_mpde(spec: SimulationSpec) -> SolutionRecord:
    """Integrate the Galerkin coefficient system over the slow time, then extract the diagonal.

    No break points are passed: the switching is carried by the basis.
    """
    if spec.mode not in (MPDE_SIMPLIFIED, MPDE_ORIGINAL):
        raise ValueError("solve_mpde needs an MPDE mode")
    t_setup = time.perf_counter()
    try:
        sys = build_mpde_system(spec)
    except ValueError as exc:
        raise SimulationError(f"basis construction failed: {exc}") from exc
    W0 = sys.initial_state(spec.initial_state(), spec.ripple_init)
    setup = time.perf_counter() - t_setup
    start = time.perf_counter()
    try:
        traj = integrate(sys, W0, 0.0, spec.t_end, spec.config())
    except IntegrationError as exc:
        raise SimulationError(f"MPDE solve failed (fs={spec.fs:g} Hz, {spec.mode}): {exc}") from exc
    elapsed = time.perf_counter() - start
    t = sample_grid(spec.t_end, spec.Ts)
    x = reconstruct(sys.basis, traj, t, spec.Ts)
    return SolutionRecord(spec, traj, t, x, elapsed, setup, basis=sys.basis)


def solve(spec: SimulationSpec) -> SolutionRecord:
    if spec.mode == REFERENCE:
        return solve_reference(spec)
    return solve_mpde(spec)
