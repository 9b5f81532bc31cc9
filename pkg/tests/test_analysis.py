import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpde import analysis
from mpde.analysis import (
    SWEEP_COLUMNS,
    DegenerateReferenceError,
    ErrorReport,
    frequency_sweep,
    matched_accuracy_speedup,
    relative_l2,
    relative_l2_error,
    speedup_table,
)
from mpde.circuits import BuckConverter
from mpde.simulation import MPDE_SIMPLIFIED, REFERENCE, SimulationError, SimulationSpec, solve

T = np.linspace(0.0, 1.0, 1001)
V = np.sin(7 * T) + 2.0


def linear_spec(**kw):
    return SimulationSpec(model=BuckConverter.linear(), t_end=1e-3, **kw)


def test_relative_l2_examples():
    assert relative_l2(T, V, V) == 0.0
    assert relative_l2(T, 1.1 * V, V) == pytest.approx(0.1, rel=1e-12)
    assert relative_l2(T, np.zeros_like(V), V) == pytest.approx(1.0, rel=1e-15)


@given(st.floats(1e-6, 1e6), st.floats(-0.5, 0.5))
@settings(max_examples=50, deadline=None)
def test_relative_l2_scale_invariant(a, d):
    base = relative_l2(T, (1 + d) * V, V)
    assert abs(relative_l2(T, a * (1 + d) * V, a * V) - base) <= 1e-14


def test_degenerate_reference():
    with pytest.raises(DegenerateReferenceError):
        relative_l2(T, V, np.zeros_like(V))


def test_relative_l2_error_resamples_and_checks_window():
    spec = linear_spec(fs=10e3)
    ref = solve(spec.with_(mode=REFERENCE))
    mpde = solve(spec)
    eps = relative_l2_error(mpde, ref)
    assert 0.0 < eps < 1e-3
    assert relative_l2_error(ref, ref) == 0.0
    assert relative_l2_error(mpde, ref, omega=(0.5e-3, 1e-3)) > 0.0
    with pytest.raises(ValueError):
        relative_l2_error(mpde, ref, omega=(0.0, 2e-3))
    with pytest.raises(ValueError):
        relative_l2_error(mpde, ref, omega=(1e-3, 1e-3))


def test_error_report_validation():
    ErrorReport(1e3, 0.0, MPDE_SIMPLIFIED, 4)
    with pytest.raises(ValueError):
        ErrorReport(1e3, -1.0, MPDE_SIMPLIFIED, 4)
    with pytest.raises(ValueError):
        ErrorReport(1e3, math.nan, MPDE_SIMPLIFIED, 4)


def test_single_frequency_sweep():
    rep = frequency_sweep([10e3], linear_spec(), repeats=1, warmup=False, keep_records=True)
    (row,) = rep.rows
    assert not row.error
    assert len(row.as_tuple()) == len(SWEEP_COLUMNS)
    assert 0 < row.eps_simplified < 1e-3 and 0 < row.eps_original < 1e-3
    assert row.speedup == pytest.approx(row.t_reference / row.t_mpde_simplified)
    assert set(row.records) == {REFERENCE, MPDE_SIMPLIFIED, "mpde_original"}
    assert rep.column("fs_hz").tolist() == [10e3]
    assert len(rep.error_reports()) == 2


def test_sweep_is_deterministic_and_sorted():
    a = frequency_sweep([20e3, 10e3], linear_spec(), repeats=1, warmup=False)
    b = frequency_sweep([10e3, 20e3], linear_spec(), repeats=1, warmup=False)
    assert a.column("fs_hz").tolist() == [10e3, 20e3]
    for name in ("eps_simplified", "eps_original"):
        assert np.array_equal(a.column(name), b.column(name))


def test_sweep_records_row_failure(monkeypatch):
    real = analysis.solve

    def flaky(spec):
        if spec.fs == 20e3 and spec.mode == MPDE_SIMPLIFIED:
            raise SimulationError("injected")
        return real(spec)

    monkeypatch.setattr(analysis, "solve", flaky)
    rep = frequency_sweep([10e3, 20e3], linear_spec(), repeats=1, warmup=False)
    assert [r.fs for r in rep.failed] == [20e3]
    assert "injected" in rep.failed[0].error
    assert math.isnan(rep.rows[1].eps_simplified)
    assert np.isfinite(rep.rows[0].eps_simplified)


def test_sweep_rejects_bad_frequencies():
    with pytest.raises(ValueError):
        frequency_sweep([])
    with pytest.raises(ValueError):
        frequency_sweep([1e3, -1.0])


def test_matched_accuracy_speedup_brackets():
    spec = linear_spec()
    m = matched_accuracy_speedup(10e3, spec, repeats=1, warmup=False)
    assert m.bracketed
    assert m.eps_ref <= m.eps_mpde
    assert 1e-12 <= m.ref_tol <= 1e-1
    assert m.speedup == pytest.approx(m.t_ref / m.t_mpde)
    with pytest.raises(ValueError):
        matched_accuracy_speedup(0.0, spec)


def test_speedup_table_reuses_sweep_records(monkeypatch):
    spec = linear_spec()
    rep = frequency_sweep([10e3], spec, repeats=1, warmup=False, keep_records=True)
    calls = []
    real = analysis.solve

    def counting(s):
        calls.append((s.mode, s.config().rtol))
        return real(s)

    monkeypatch.setattr(analysis, "solve", counting)
    (m,) = speedup_table([10e3], spec, rep, repeats=1, warmup=False)
    # no fresh oracle and no fresh MPDE solve
    assert (REFERENCE, 1e-12) not in calls
    assert all(mode == REFERENCE for mode, _ in calls)
    assert m.t_mpde == rep.rows[0].t_mpde_simplified
