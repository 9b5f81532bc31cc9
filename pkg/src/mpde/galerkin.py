"""Galerkin-in-time MPDE systems for the coefficient vector ``W(t1)``.

``W`` is state-major: ``[w_{1,0} .. w_{1,Np}, w_{2,0} .. w_{Ns,Np}]``, so a
coefficient matrix ``Wm = W.reshape(Ns, Np + 1)`` has one row per state and
Kronecker products ``X (x) Y`` act as ``vec(X Wm Y^T)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss

from .circuits import CircuitModel
from .pwm_basis import GalerkinMatrices, PwmBasis, galerkin_matrices, project_waveform
from .radau import ImplicitSystem, Trajectory, fd_jacobians

SIMPLIFIED = "simplified"
ORIGINAL = "original"

GAUSS_ORDER = 15
PANELS_PER_SEGMENT = 4
ENVELOPE_FD_STEP = 1e-7

RIPPLE_ZERO = "zero"
RIPPLE_PERIODIC = "periodic"


def envelope(W, ns: int, np_: int) -> np.ndarray:
    """Zero-th coefficient of every state: ``[w_{1,0}, .., w_{Ns,0}]``."""
    W = np.asarray(W, dtype=float)
    if W.shape[-1] != ns * (np_ + 1):
        raise ValueError(f"expected {ns * (np_ + 1)} coefficients, got {W.shape[-1]}")
    return W.reshape(W.shape[:-1] + (ns, np_ + 1))[..., 0]


def composite_gauss(breakpoints, order: int = GAUSS_ORDER, panels: int = PANELS_PER_SEGMENT):
    """Nodes and weights of composite Gauss-Legendre on ``[0, 1]`` split at ``breakpoints``."""
    x, w = leggauss(order)
    nodes, weights = [], []
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        edges = np.linspace(a, b, panels + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
            weights.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True)
class Quadrature:
    order: int = GAUSS_ORDER
    panels: int = PANELS_PER_SEGMENT


class MpdeSystem(ImplicitSystem):
    """Coefficient system ``r(t1, W, W') = 0`` of the Galerkin-projected MPDE.

    ``mode="simplified"`` evaluates ``A`` and ``B`` at the envelope only, which
    gives the Kronecker form ``cA(W) W' + cB(W) W - cC``. ``mode="original"``
    integrates the full nonlinear residual over one period by composite
    Gauss-Legendre quadrature.
    """

    def __init__(
        self,
        basis: PwmBasis,
        model: CircuitModel,
        mode: str = SIMPLIFIED,
        quadrature: Quadrature = Quadrature(),
        jacobian: str = "fd",
    ):
        if mode not in (SIMPLIFIED, ORIGINAL):
            raise ValueError(f"unknown mode {mode!r}")
        if jacobian not in ("fd", "analytic"):
            raise ValueError(f"unknown jacobian strategy {jacobian!r}")
        self.basis = basis
        self.model = model
        self.mode = mode
        self.quadrature = quadrature
        self.jacobian = jacobian
        self.matrices: GalerkinMatrices = galerkin_matrices(basis, model.Ts)
        self.ns = model.ns
        self.m = len(basis)
        self.dimension = self.ns * self.m
        C = np.array([model.Ts * project_waveform(basis, prof) for prof in model.source_profiles()])
        C.setflags(write=False)
        self.C_mat = C  # (ns, Np+1)

    @property
    def Ts(self) -> float:
        return self.matrices.Ts

    @cached_property
    def _quad(self):
        bps = np.union1d(self.basis.breakpoints, list(self.model.switching_phases()) + [1.0])
        tau, w = composite_gauss(bps, self.quadrature.order, self.quadrature.panels)
        P = self.basis.values(tau)
        dP = self.basis.derivative_values(tau)
        c = np.asarray(self.model.eval_c(tau * self.Ts))
        # Ts * w_q * p_l(tau_q): projection weights, shape (Np+1, nq)
        proj = self.Ts * w * P
        return tau, P, dP, c, proj

    def initial_state(self, x0, ripple: str = RIPPLE_PERIODIC) -> np.ndarray:
        """Coefficients ``W(0)`` whose reconstruction at ``t = 0`` equals ``x0``.

        ``ripple="zero"`` puts ``x0`` in the envelope and zeros the ripple.
        ``ripple="periodic"`` starts the ripple on its quasi-steady periodic
        shape for ``A(x0)``, ``B(x0)`` and shifts the envelope so that
        ``sum_k p_k(0) w_{j,k}(0) = x0_j`` still holds. A zero ripple excites
        the characteristic modes of the MPDE (frequencies ``k * fs``), which
        are damped only by the circuit and force steps of a fraction of ``Ts``.
        """
        x0 = np.asarray(x0, dtype=float)
        if ripple not in (RIPPLE_ZERO, RIPPLE_PERIODIC):
            raise ValueError(f"unknown ripple initialisation {ripple!r}")
        W = np.zeros((self.ns, self.m))
        W[:, 0] = x0
        if ripple == RIPPLE_ZERO or self.m == 1:
            return W.ravel()
        Wr = self.quasi_steady_ripple(x0)
        W[:, 1:] = Wr
        W[:, 0] = x0 - Wr @ self.basis.values(0.0)[1:]
        return W.ravel()

    def quasi_steady_ripple(self, env) -> np.ndarray:
        """Ripple coefficients ``(Ns, Np)`` that stay constant for a frozen envelope.

        Solves the ripple rows of the simplified system with ``dW/dt1 = 0``:
        ``A(env) Wr Qr^T + B(env) Wr Ir = Cr``.
        """
        A = np.asarray(self.model.eval_A(env))
        B = np.asarray(self.model.eval_B(env))
        Qr = self.matrices.Q_mat[1:, 1:]
        Ir = self.matrices.I_mat[1:, 1:]
        K = np.kron(A, Qr) + np.kron(B, Ir)
        return np.linalg.solve(K, self.C_mat[:, 1:].ravel()).reshape(self.ns, self.m - 1)

    def envelope(self, W) -> np.ndarray:
        return envelope(W, self.ns, self.basis.Np)

    # simplified (Kronecker) form ------------------------------------------

    def assemble_simplified(self, W, t1: float = 0.0):
        """``(cA, cB, cC)`` with ``A``, ``B`` evaluated at the envelope of ``W``."""
        W = self._check(W)
        env = self.envelope(W)
        A = np.asarray(self.model.eval_A(env))
        B = np.asarray(self.model.eval_B(env))
        I, Q = self.matrices.I_mat, self.matrices.Q_mat
        cA = np.kron(A, I)
        cB = np.kron(B, I) + np.kron(A, Q)
        return cA, cB, self.C_mat.ravel().copy()

    def _simplified_residual(self, W, dW):
        Wm = W.reshape(self.ns, self.m)
        dWm = dW.reshape(self.ns, self.m)
        env = Wm[:, 0]
        A = self.model.eval_A(env)
        B = self.model.eval_B(env)
        I, Q = self.matrices.I_mat, self.matrices.Q_mat
        r = A @ (dWm @ I.T + Wm @ Q.T) + B @ Wm @ I.T - self.C_mat
        return r.ravel()

    def _simplified_residuals(self, W, dW):
        # stacked version of _simplified_residual over the leading axis
        Wm = W.reshape(-1, self.ns, self.m)
        dWm = dW.reshape(-1, self.ns, self.m)
        env = Wm[:, :, 0]
        A = self.model.eval_A(env)
        B = self.model.eval_B(env)
        I, Q = self.matrices.I_mat, self.matrices.Q_mat
        r = A @ (dWm @ I.T + Wm @ Q.T) + B @ Wm @ I.T - self.C_mat
        return r.reshape(len(Wm), -1)

    def _simplified_jacobians(self, W, dW):
        cA, cB, _ = self.assemble_simplified(W)
        J = cB.copy()
        r0 = self._simplified_residual(W, dW)
        # envelope columns also carry the dependence of A and B on the envelope
        for j in range(self.ns):
            col = j * self.m
            step = ENVELOPE_FD_STEP * max(abs(W[col]), 1.0)
            Wp = W.copy()
            Wp[col] += step
            J[:, col] = (self._simplified_residual(Wp, dW) - r0) / step
        return J, cA

    # original (quadrature) form --------------------------------------------

    def _fields(self, W, dW):
        _, P, dP, _, _ = self._quad
        Wm = W.reshape(self.ns, self.m)
        dWm = dW.reshape(self.ns, self.m)
        X = (Wm @ P).T
        Xdot = (dWm @ P + (Wm @ dP) / self.Ts).T
        return X, Xdot

    def _original_residual(self, W, dW):
        _, P, dP, c, proj = self._quad
        X, Xdot = self._fields(W, dW)
        Aq = self.model.eval_A(X)
        Bq = self.model.eval_B(X)
        integrand = np.einsum("qij,qj->qi", Aq, Xdot) + np.einsum("qij,qj->qi", Bq, X) - c
        return (integrand.T @ proj.T).ravel()

    def _original_jacobians_analytic(self, W, dW):
        _, P, dP, _, proj = self._quad
        X, Xdot = self._fields(W, dW)
        Aq = np.asarray(self.model.eval_A(X))
        Bq = np.asarray(self.model.eval_B(X))
        dAq = self.model.eval_dA(X)
        dBq = self.model.eval_dB(X)
        # d integrand_j / d x_i at each node
        G = Bq + np.einsum("qjam,qa->qjm", dAq, Xdot) + np.einsum("qjam,qa->qjm", dBq, X)
        M = np.einsum("qji,kq,lq->jlik", Aq, P, proj)
        J = np.einsum("qji,kq,lq->jlik", G, P, proj) + np.einsum("qji,kq,lq->jlik", Aq, dP / self.Ts, proj)
        n = self.dimension
        return J.reshape(n, n), M.reshape(n, n)

    # ImplicitSystem ----------------------------------------------------------

    def residual(self, t, y, yp):
        if self.mode == SIMPLIFIED:
            return self._simplified_residual(y, yp)
        return self._original_residual(y, yp)

    def residuals(self, ts, Y, Yp):
        if self.mode == SIMPLIFIED:
            return self._simplified_residuals(Y, Yp)
        return super().residuals(ts, Y, Yp)

    def jacobians(self, t, y, yp):
        if self.mode == SIMPLIFIED:
            return self._simplified_jacobians(y, yp)
        if self.jacobian == "analytic" and self.model.eval_dA(np.zeros(self.ns)) is not None \
                and self.model.eval_dB(np.zeros(self.ns)) is not None:
            return self._original_jacobians_analytic(y, yp)
        return fd_jacobians(self.residual, t, y, yp)

    def assemble_original_residual(self, W, dW, t1: float = 0.0) -> np.ndarray:
        return self._original_residual(self._check(W), self._check(dW))

    def _check(self, W) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if W.shape != (self.dimension,):
            raise ValueError(f"expected coefficient vector of length {self.dimension}, got shape {W.shape}")
        return W


def assemble_simplified(sys: MpdeSystem, W, t1: float = 0.0):
    return sys.assemble_simplified(W, t1)


def assemble_original_residual(sys: MpdeSystem, W, dW, t1: float = 0.0) -> np.ndarray:
    return sys.assemble_original_residual(W, dW, t1)


def reconstruct(basis: PwmBasis, Wtraj: Trajectory, t, Ts: float) -> np.ndarray:
    """Diagonal extraction ``x(t) = sum_k p_k(t/Ts mod 1) w_k(t)``.

    Scalar ``t`` gives ``(Ns,)``; an array of ``m`` times gives ``(m, Ns)``.
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if np.any(t < Wtraj.t0) or np.any(t > Wtraj.t_end):
        raise ValueError("reconstruction time outside the trajectory span")
    W = Wtraj(t)
    m = len(basis)
    tau = np.mod(t / Ts, 1.0)
    P = basis.values(tau)  # (m, nt)
    x = np.einsum("tjk,kt->tj", W.reshape(len(t), -1, m), P)
    return x[0] if scalar else x
