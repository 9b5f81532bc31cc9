import numpy as np
import pytest
from scipy.integrate import solve_ivp

from mpde.radau import FunctionSystem, IntegrationError, IntegratorConfig, integrate


def decay(lam=1.0, mass=1.0):
    return FunctionSystem(lambda t, y, yp: mass * yp + lam * y, 1)


def test_exponential_decay():
    tr = integrate(decay(), [1.0], 0.0, 1.0, IntegratorConfig(rtol=1e-10, atol=1e-10))
    assert abs(tr.values[-1, 0] - np.exp(-1.0)) < 1e-8
    assert tr.t_end == 1.0


def test_mass_matrix_form():
    tr = integrate(decay(mass=2.0), [1.0], 0.0, 3.0, IntegratorConfig(rtol=1e-10, atol=1e-12))
    assert abs(tr.values[-1, 0] - np.exp(-1.5)) < 1e-9


def stiff_system():
    return FunctionSystem(lambda t, y, yp: yp + 1e6 * (y - np.cos(t)), 1)


def test_stiff_bounded_steps():
    tr = integrate(stiff_system(), [0.0], 0.0, 1.0, IntegratorConfig(rtol=1e-6, atol=1e-6))
    oracle = integrate(stiff_system(), [0.0], 0.0, 1.0, IntegratorConfig(rtol=1e-12, atol=1e-12))
    assert tr.n_steps < 500
    assert abs(tr.values[-1, 0] - oracle.values[-1, 0]) < 1e-5


def test_order_at_least_three():
    errs = []
    for h in (0.2, 0.1, 0.05):
        cfg = IntegratorConfig(rtol=1e-3, atol=1e-3, max_step=h, initial_step=h)
        tr = integrate(decay(), [1.0], 0.0, 2.0, cfg)
        errs.append(abs(tr.values[-1, 0] - np.exp(-2.0)))
    for coarse, fine in zip(errs, errs[1:]):
        if coarse > 1e-13:
            assert coarse / fine >= 8.0


def test_break_points_exact():
    bps = np.sort(np.random.default_rng(0).uniform(0.0, 1.0, 25))
    tr = integrate(decay(), [1.0], 0.0, 1.0, IntegratorConfig(rtol=1e-8, atol=1e-8), break_points=bps)
    knots = set(tr.knots.tolist())
    assert all(b in knots for b in bps)


def test_tolerance_monotone():
    prev = np.inf
    for tol in (1e-4, 1e-6, 1e-8, 1e-10):
        tr = integrate(decay(), [1.0], 0.0, 1.0, IntegratorConfig(rtol=tol, atol=tol))
        err = abs(tr.values[-1, 0] - np.exp(-1.0))
        assert err <= prev
        prev = err


def test_dense_output():
    tr = integrate(decay(), [1.0], 0.0, 2.0, IntegratorConfig(rtol=1e-8, atol=1e-8))
    knot_err = np.max(np.abs(tr.values[:, 0] - np.exp(-tr.knots)))
    assert np.max(np.abs(tr(tr.knots)[:, 0] - tr.values[:, 0])) < 1e-14
    mid = 0.5 * (tr.knots[1:] + tr.knots[:-1])
    assert np.max(np.abs(tr(mid)[:, 0] - np.exp(-mid))) < 10 * knot_err
    with pytest.raises(ValueError):
        tr(2.5)


def test_matches_scipy_on_oscillator():
    def res(t, y, yp):
        return yp - np.array([y[1], -y[0] - 0.1 * y[1]])

    tr = integrate(FunctionSystem(res, 2), [1.0, 0.0], 0.0, 10.0, IntegratorConfig(rtol=1e-9, atol=1e-9))
    ref = solve_ivp(lambda t, y: [y[1], -y[0] - 0.1 * y[1]], (0, 10), [1.0, 0.0],
                    method="Radau", rtol=1e-12, atol=1e-12)
    assert np.allclose(tr.values[-1], ref.y[:, -1], atol=1e-7)


def test_failures():
    bad = FunctionSystem(lambda t, y, yp: yp - np.nan, 1)
    with pytest.raises(IntegrationError, match="non-finite"):
        integrate(bad, [1.0], 0.0, 1.0)
    with pytest.raises(ValueError):
        integrate(decay(), [1.0], 1.0, 0.5)
    with pytest.raises(ValueError):
        integrate(decay(), [1.0], 0.0, 1.0, break_points=[2.0])
    with pytest.raises(ValueError):
        IntegratorConfig(rtol=0.0)
    # finite-time blow-up: y' = y^2 from 1 explodes at t = 1
    blowup = FunctionSystem(lambda t, y, yp: yp - y ** 2, 1)
    with pytest.raises(IntegrationError):
        integrate(blowup, [1.0], 0.0, 2.0, IntegratorConfig(rtol=1e-8, atol=1e-8))
