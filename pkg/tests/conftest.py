import numpy as np
import pytest
from scipy.linalg import expm

from mpde.circuits import BuckConverter, LinearCircuit
from mpde.pwm_basis import PiecewisePolynomial, pulse_waveform


def lti_oracle(model, t, x0):
    """Exact response of a constant-L buck by the matrix exponential over each pulse phase.

    On a phase with constant input ``c`` the state obeys ``x' = F x + g`` with
    ``F = -A^{-1} B`` and ``g = A^{-1} c``; the augmented exponential
    ``expm([[F, g], [0, 0]] h)`` propagates it exactly.
    """
    A = np.array(model.eval_A(np.zeros(2)))
    B = np.array(model.eval_B(np.zeros(2)))
    Ainv = np.linalg.inv(A)
    F = -Ainv @ B

    def prop(x, h, c):
        aug = np.zeros((3, 3))
        aug[:2, :2] = F
        aug[:2, 2] = Ainv @ c
        return (expm(aug * h) @ np.append(x, 1.0))[:2]

    Ts, D = model.Ts, model.D_pulse
    t = np.asarray(t, dtype=float)
    out = np.empty((t.size, 2))
    n_periods = int(np.ceil(t[-1] / Ts)) + 1
    on, off = np.array([model.Vi, 0.0]), np.zeros(2)
    starts = np.empty((n_periods + 1, 2))
    starts[0] = x0
    x = np.asarray(x0, dtype=float)
    for m in range(n_periods):
        x = prop(prop(x, D * Ts, on), (1 - D) * Ts, off)
        starts[m + 1] = x
    for i, ti in enumerate(t):
        m = min(int(np.floor(ti / Ts)), n_periods - 1)
        s = ti - m * Ts
        if s < 0:
            s = 0.0
        if s <= D * Ts:
            out[i] = prop(starts[m], s, on)
        else:
            out[i] = prop(prop(starts[m], D * Ts, on), s - D * Ts, off)
    return out


@pytest.fixture
def linear_buck():
    return BuckConverter.linear(L=1e-3)


def rc_like(Ts=1e-4, D=0.7):
    """Small damped two-state linear model with a pulse on the first state."""
    A = np.array([[2e-3, 0.0], [0.0, 5e-5]])
    B = np.array([[1.0, 1.0], [-1.0, 0.2]])
    return LinearCircuit(A, B, (pulse_waveform(D, 5.0), PiecewisePolynomial.constant(0.0)), Ts)
