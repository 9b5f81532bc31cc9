"""Error metric, frequency sweeps and speedup tables."""

from __future__ import annotations

import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .simulation import (
    MPDE_ORIGINAL,
    MPDE_SIMPLIFIED,
    REFERENCE,
    SimulationError,
    SimulationSpec,
    SolutionRecord,
    reference_config,
    solve,
)

log = logging.getLogger(__name__)

VC = 1  # capacitor voltage in the buck state ordering
TIMING_REPEATS = 3
REFERENCE_TOL = 1e-12
TOL_DECADES = tuple(range(1, 13))  # candidate reference tolerances 1e-1 .. 1e-12
TABLE1_FREQS = (10e3, 50e3, 100e3)
SWEEP_FREQS = (0.5e3, 1e3, 2e3, 5e3, 10e3, 20e3, 50e3, 100e3)


class DegenerateReferenceError(ValueError):
    pass


def relative_l2(t, v, v_ref) -> float:
    """``||v_ref - v|| / ||v_ref||`` in L2 over ``t``, trapezoidal rule."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    v_ref = np.asarray(v_ref, dtype=float)
    den = np.trapezoid(v_ref ** 2, t)
    if not den > 0:
        raise DegenerateReferenceError("reference has zero L2 norm on the error window")
    return float(np.sqrt(np.trapezoid((v_ref - v) ** 2, t) / den))


def _values_on(rec: SolutionRecord, t: np.ndarray, component: int) -> np.ndarray:
    if rec.t.shape == t.shape and np.array_equal(rec.t, t):
        return rec.x[:, component]
    return rec.sample(t)[:, component]


def relative_l2_error(
    sol: SolutionRecord,
    ref: SolutionRecord,
    component: int = VC,
    omega: tuple[float, float] | None = None,
) -> float:
    """Relative L2 error of one state component over ``omega``.

    Both records are compared on the finer of their two sample grids
    (restricted to ``omega``); the other record is resampled through its
    dense output.
    """
    if omega is None:
        omega = (0.0, min(sol.t[-1], ref.t[-1]))
    ta, tb = omega
    if not tb > ta:
        raise ValueError("empty error window")
    for rec in (sol, ref):
        if ta < rec.t[0] or tb > rec.t[-1]:
            raise ValueError("record does not cover the error window")
    grid = sol.t if sol.t.size >= ref.t.size else ref.t
    t = grid[(grid >= ta) & (grid <= tb)]
    if t[0] > ta:
        t = np.concatenate([[ta], t])
    if t[-1] < tb:
        t = np.concatenate([t, [tb]])
    return relative_l2(t, _values_on(sol, t, component), _values_on(ref, t, component))


@dataclass(frozen=True)
class ErrorReport:
    fs: float
    epsilon: float
    mode: str
    Np: int

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")


SWEEP_COLUMNS = (
    "fs_hz", "eps_simplified", "eps_original",
    "t_mpde_simplified_s", "t_mpde_original_s", "t_reference_s", "speedup",
)


@dataclass
class SweepRow:
    fs: float
    eps_simplified: float = math.nan
    eps_original: float = math.nan
    t_mpde_simplified: float = math.nan
    t_mpde_original: float = math.nan
    t_reference: float = math.nan
    n_steps: dict = field(default_factory=dict)
    error: str = ""
    records: dict = field(default_factory=dict, repr=False)  # mode -> SolutionRecord, if kept

    @property
    def speedup(self) -> float:
        if not (self.t_mpde_simplified > 0):
            return math.nan
        return self.t_reference / self.t_mpde_simplified

    def as_tuple(self) -> tuple:
        return (self.fs, self.eps_simplified, self.eps_original, self.t_mpde_simplified,
                self.t_mpde_original, self.t_reference, self.speedup)


@dataclass
class SweepReport:
    rows: list[SweepRow]
    Np: int
    serial_timing: bool

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.fs)

    def column(self, name: str) -> np.ndarray:
        """One column by its CSV name, e.g. ``"eps_simplified"``."""
        i = SWEEP_COLUMNS.index(name)
        return np.array([r.as_tuple()[i] for r in self.rows], dtype=float)

    @property
    def failed(self) -> list[SweepRow]:
        return [r for r in self.rows if r.error]

    def error_reports(self) -> list[ErrorReport]:
        out = []
        for r in self.rows:
            for mode, eps in ((MPDE_SIMPLIFIED, r.eps_simplified), (MPDE_ORIGINAL, r.eps_original)):
                if np.isfinite(eps):
                    out.append(ErrorReport(r.fs, eps, mode, self.Np))
        return out


def timed_solve(spec: SimulationSpec, repeats: int = TIMING_REPEATS, warmup: bool = True):
    """Solve ``spec`` and return ``(record, median solve time)``.

    With ``warmup`` the first run is discarded before ``repeats`` timed runs.
    The returned record is the last run; all runs are deterministic.
    """
    rec = solve(spec) if warmup else None
    times = []
    for _ in range(max(repeats, 1)):
        rec = solve(spec)
        times.append(rec.solve_time)
    return rec, statistics.median(times)


def _sweep_row(fs: float, base: SimulationSpec, component: int, repeats: int, warmup: bool,
               keep: bool = False) -> SweepRow:
    row = SweepRow(fs)
    spec = base.with_(fs=fs, tolerances=None)
    stage = REFERENCE
    try:
        ref, row.t_reference = timed_solve(spec.with_(mode=REFERENCE), repeats, warmup)
        row.n_steps[REFERENCE] = ref.n_steps
        if keep:
            row.records[REFERENCE] = ref
        for mode in (MPDE_SIMPLIFIED, MPDE_ORIGINAL):
            stage = mode
            rec, elapsed = timed_solve(spec.with_(mode=mode), repeats, warmup)
            row.n_steps[mode] = rec.n_steps
            if keep:
                row.records[mode] = rec
            eps = relative_l2_error(rec, ref, component)
            if mode == MPDE_SIMPLIFIED:
                row.eps_simplified, row.t_mpde_simplified = eps, elapsed
            else:
                row.eps_original, row.t_mpde_original = eps, elapsed
    except (SimulationError, DegenerateReferenceError) as exc:
        row.error = f"{stage}: {exc}"
        log.warning("sweep row fs=%g failed: %s", fs, row.error)
    return row


def frequency_sweep(
    freqs,
    base_spec: SimulationSpec | None = None,
    *,
    serial_timing: bool = True,
    repeats: int = TIMING_REPEATS,
    warmup: bool = True,
    workers: int | None = None,
    component: int = VC,
    keep_records: bool = False,
) -> SweepReport:
    """Reference, simplified and original solves at every frequency.

    With ``serial_timing`` one solve runs at a time and each timing is the
    median of ``repeats`` runs after a warm-up. Otherwise rows run in
    parallel processes with a single untimed-quality run each; the error
    columns are identical either way. ``keep_records`` retains the solution
    records on each row (serial runs only) for reuse, e.g. as oracles.
    """
    freqs = [float(f) for f in freqs]
    if not freqs:
        raise ValueError("need at least one frequency")
    if any(not f > 0 for f in freqs):
        raise ValueError("frequencies must be positive")
    base = base_spec or SimulationSpec()
    freqs = sorted(freqs)
    if serial_timing or workers == 1:
        rows = [_sweep_row(f, base, component, repeats, warmup, keep_records) for f in freqs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_row, f, base, component, 1, False) for f in freqs]
            rows = [fut.result() for fut in futures]
    return SweepReport(rows, base.Np, serial_timing)


@dataclass(frozen=True)
class MatchedSpeedup:
    """Reference cost at the MPDE's accuracy, for one frequency."""

    fs: float
    eps_mpde: float
    t_mpde: float
    ref_tol: float
    eps_ref: float
    t_ref: float
    bracketed: bool  # False when even the loosest tolerance beat the MPDE error

    @property
    def speedup(self) -> float:
        return self.t_ref / self.t_mpde


def matched_accuracy_speedup(
    fs: float,
    spec: SimulationSpec | None = None,
    *,
    component: int = VC,
    repeats: int = TIMING_REPEATS,
    warmup: bool = True,
    oracle: SolutionRecord | None = None,
    mpde: tuple[SolutionRecord, float] | None = None,
) -> MatchedSpeedup:
    """Speedup of the simplified MPDE over a reference run of equal accuracy.

    The reference tolerance is searched by bisection over the decades
    ``1e-1 .. 1e-12`` for the loosest one whose error against the ``1e-12``
    oracle does not exceed the MPDE error. ``oracle`` and ``mpde`` (record,
    median time) may be passed in from an earlier sweep at the same ``fs``.
    """
    if not fs > 0:
        raise ValueError("fs must be positive")
    base = (spec or SimulationSpec()).with_(fs=fs, tolerances=None)
    if oracle is None:
        oracle = solve(base.with_(mode=REFERENCE, tolerances=reference_config(REFERENCE_TOL)))
    if mpde is None:
        mpde = timed_solve(base.with_(mode=MPDE_SIMPLIFIED), repeats, warmup)
    mpde_rec, t_mpde = mpde
    eps_mpde = relative_l2_error(mpde_rec, oracle, component)

    cache: dict[int, float] = {}

    def eps_at(decade: int) -> float:
        if decade not in cache:
            if decade >= 12:
                cache[decade] = 0.0
            else:
                try:
                    rec = solve(base.with_(mode=REFERENCE, tolerances=reference_config(10.0 ** -decade)))
                    cache[decade] = relative_l2_error(rec, oracle, component)
                except SimulationError:
                    cache[decade] = math.inf
        return cache[decade]

    lo, hi = TOL_DECADES[0], TOL_DECADES[-1]
    bracketed = eps_at(lo) > eps_mpde
    if bracketed:
        # invariant: eps_at(lo) > eps_mpde >= eps_at(hi)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if eps_at(mid) <= eps_mpde:
                hi = mid
            else:
                lo = mid
        decade = hi
    else:
        log.warning("fs=%g: reference at rtol 1e-1 already beats the MPDE error", fs)
        decade = lo
    ref_spec = base.with_(mode=REFERENCE, tolerances=reference_config(10.0 ** -decade))
    _, t_ref = timed_solve(ref_spec, repeats, warmup)
    return MatchedSpeedup(fs, eps_mpde, t_mpde, 10.0 ** -decade, eps_at(decade), t_ref, bracketed)


def speedup_table(
    freqs=TABLE1_FREQS,
    spec: SimulationSpec | None = None,
    sweep: SweepReport | None = None,
    **kw,
) -> list[MatchedSpeedup]:
    """``matched_accuracy_speedup`` at each frequency, reusing sweep records when present."""
    rows = {r.fs: r for r in sweep.rows} if sweep is not None else {}
    out = []
    for fs in freqs:
        row = rows.get(float(fs))
        oracle = mpde = None
        if row is not None and not row.error and REFERENCE in row.records and MPDE_SIMPLIFIED in row.records:
            oracle = row.records[REFERENCE]
            mpde = (row.records[MPDE_SIMPLIFIED], row.t_mpde_simplified)
        out.append(matched_accuracy_speedup(fs, spec, oracle=oracle, mpde=mpde, **kw))
    return out
