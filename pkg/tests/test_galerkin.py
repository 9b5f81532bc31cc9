import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import rc_like
from mpde.circuits import BuckConverter, permuted
from mpde.galerkin import (
    ORIGINAL,
    RIPPLE_PERIODIC,
    RIPPLE_ZERO,
    SIMPLIFIED,
    MpdeSystem,
    assemble_original_residual,
    assemble_simplified,
    envelope,
    reconstruct,
)
from mpde.pwm_basis import build_basis, project_waveform, pulse_waveform
from mpde.radau import Trajectory


def system(model, Np=4, D=0.7, mode=SIMPLIFIED, **kw):
    return MpdeSystem(build_basis(D, Np), model, mode, **kw)


def test_envelope_examples():
    W = np.arange(10.0)
    assert np.array_equal(envelope(W, 2, 4), [0.0, 5.0])
    assert np.array_equal(envelope(W.reshape(1, -1), 2, 4), [[0.0, 5.0]])
    with pytest.raises(ValueError):
        envelope(W, 3, 4)


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(-3, 3))
@settings(max_examples=50, deadline=None)
def test_envelope_linear(w, a):
    W = np.array(w)
    assert np.allclose(envelope(a * W, 2, 2), a * envelope(W, 2, 2))


def test_np0_is_averaged_model():
    m = BuckConverter()
    s = system(m, Np=0)
    x = np.array([0.3, 2.0])
    cA, cB, cC = assemble_simplified(s, x)
    assert np.allclose(cA, m.Ts * m.eval_A(x))
    assert np.allclose(cB, m.Ts * m.eval_B(x))
    assert np.allclose(cC, m.Ts * m.period_average())


def test_linear_model_independent_of_W():
    s = system(rc_like())
    rng = np.random.default_rng(1)
    a = assemble_simplified(s, rng.normal(size=10))
    b = assemble_simplified(s, rng.normal(size=10))
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_source_block_of_buck():
    m = BuckConverter()
    s = system(m, Np=4, D=0.7)
    _, _, cC = assemble_simplified(s, np.zeros(10))
    assert cC[0] == pytest.approx(m.Ts * m.Vi * 0.7, rel=1e-14)
    assert abs(cC[1]) < 1e-14 * m.Ts * m.Vi
    assert np.allclose(cC[:5], m.Ts * m.Vi * project_waveform(s.basis, pulse_waveform(0.7)), rtol=1e-14)
    assert np.all(cC[5:] == 0)
    # constant in the slow time
    assert np.array_equal(cC, assemble_simplified(s, np.zeros(10), t1=3.7e-3)[2])


@pytest.mark.parametrize("D", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("Np", [0, 1, 2, 4])
def test_oracle_equivalence_linear(D, Np):
    """Quadrature residual equals the Kronecker-assembled one on a linear model."""
    model = rc_like(Ts=1e-4, D=D)
    simp = system(model, Np, D, SIMPLIFIED)
    orig = system(model, Np, D, ORIGINAL)
    rng = np.random.default_rng(Np + int(10 * D))
    n = simp.dimension
    for _ in range(100):
        W, dW = rng.normal(size=n), rng.normal(size=n) * 1e4
        cA, cB, cC = assemble_simplified(simp, W)
        r_s = cA @ dW + cB @ W - cC
        r_o = assemble_original_residual(orig, W, dW)
        assert np.linalg.norm(r_o - r_s) <= 1e-9 * np.linalg.norm(r_s)
        assert np.allclose(simp.residual(0.0, W, dW), r_s, rtol=1e-12, atol=1e-12 * np.abs(r_s).max())


def test_batched_residuals_match_single():
    s = system(BuckConverter())
    rng = np.random.default_rng(2)
    Y, Yp = rng.normal(size=(3, 10)), rng.normal(size=(3, 10))
    R = s.residuals(np.zeros(3), Y, Yp)
    for k in range(3):
        assert np.allclose(R[k], s.residual(0.0, Y[k], Yp[k]), rtol=1e-13, atol=1e-15)


def test_permutation_invariance():
    model = rc_like()
    perm = [1, 0]
    s, sp = system(model), system(permuted(model, perm))
    rng = np.random.default_rng(3)
    W, dW = rng.normal(size=10), rng.normal(size=10)
    idx = np.concatenate([np.arange(5) + 5 * p for p in perm])
    r = s.residual(0.0, W, dW)
    rp = sp.residual(0.0, W[idx], dW[idx])
    assert np.allclose(rp, r[idx], rtol=1e-13, atol=1e-16)


@pytest.mark.parametrize("mode", [SIMPLIFIED, ORIGINAL])
def test_jacobians_match_fd(mode):
    s = system(BuckConverter(), Np=2, mode=mode, jacobian="analytic")
    rng = np.random.default_rng(4)
    W, dW = rng.normal(size=6) * 0.5, rng.normal(size=6) * 100
    J, M = s.jacobians(0.0, W, dW)
    h = 1e-6
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        fdJ = (s.residual(0, W + e, dW) - s.residual(0, W - e, dW)) / (2 * h)
        # residual is linear in W', so a unit step is exact up to rounding
        fdM = (s.residual(0, W, dW + e / h) - s.residual(0, W, dW - e / h)) / 2
        assert np.allclose(J[:, j], fdJ, atol=1e-6 * np.abs(fdJ).max())
        assert np.allclose(M[:, j], fdM, atol=1e-10 * np.abs(fdM).max())


@pytest.mark.parametrize("ripple", [RIPPLE_ZERO, RIPPLE_PERIODIC])
@pytest.mark.parametrize("x0", [(0.0, 0.0), (0.4, 5.0)])
def test_initial_state_reconstructs_x0(ripple, x0):
    s = system(BuckConverter())
    W0 = s.initial_state(x0, ripple)
    Wm = W0.reshape(2, 5)
    assert np.allclose(Wm @ s.basis.values(0.0), x0, atol=1e-13)
    if ripple == RIPPLE_ZERO:
        assert np.all(Wm[:, 1:] == 0)
    with pytest.raises(ValueError):
        s.initial_state(x0, "bogus")


def test_quasi_steady_ripple_is_stationary():
    s = system(BuckConverter())
    env = np.array([0.4, 5.0])
    W = np.zeros((2, 5))
    W[:, 0] = env
    W[:, 1:] = s.quasi_steady_ripple(env)
    # ripple rows of the residual vanish with W' = 0 for the frozen envelope
    r = s.residual(0.0, W.ravel(), np.zeros(10)).reshape(2, 5)
    assert np.max(np.abs(r[:, 1:])) < 1e-12 * np.abs(s.C_mat).max()


def test_reconstruct_examples():
    basis = build_basis(0.7, 1)
    Ts = 1e-3
    # constant coefficients: envelope 1, ripple 0.5 on state 0; state 1 zero
    w = np.array([1.0, 0.5, 0.0, 0.0])
    coeffs = np.zeros((1, 4, 6))
    coeffs[0, :, 0] = w
    traj = Trajectory(np.array([0.0, 2e-3]), np.array([w, w]), coeffs)
    t = np.array([0.0, 0.7e-3, 1.35e-3])
    x = reconstruct(basis, traj, t, Ts)
    assert x.shape == (3, 2)
    assert np.allclose(x[:, 0], 1.0 + 0.5 * basis[1](np.array([0.0, 0.7, 0.35])), atol=1e-14)
    assert np.all(x[:, 1] == 0)
    assert reconstruct(basis, traj, 1e-4, Ts).shape == (2,)
    with pytest.raises(ValueError):
        reconstruct(basis, traj, 3e-3, Ts)


def test_bad_arguments():
    with pytest.raises(ValueError):
        system(BuckConverter(), mode="bogus")
    with pytest.raises(ValueError):
        system(BuckConverter(), jacobian="bogus")
    with pytest.raises(ValueError):
        assemble_simplified(system(BuckConverter()), np.zeros(3))
