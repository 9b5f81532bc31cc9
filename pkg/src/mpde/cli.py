"""Command-line front end: ``solve``, ``sweep`` and ``basis`` subcommands.

Configuration is a flat ``key = value`` text file (``#`` starts a comment)
plus ``--key=value`` overrides; keys are the ``RunConfig`` field names.
Every output is a CSV with one header row, ``,`` separators, LF line endings
and shortest round-trip float formatting.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import typing
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .analysis import (
    SWEEP_FREQS,
    SWEEP_COLUMNS,
    TABLE1_FREQS,
    frequency_sweep,
    speedup_table,
)
from .circuits import BuckConverter, SaturationCurve
from .galerkin import RIPPLE_PERIODIC, RIPPLE_ZERO
from .pwm_basis import build_basis
from .simulation import (
    MODES,
    MPDE_SIMPLIFIED,
    REFERENCE,
    SimulationError,
    SimulationSpec,
    mpde_config,
    reference_config,
    solve,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2

BASIS_SAMPLES = 1001
STATE_NAMES = ("iL", "vC")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """All user-facing parameters; defaults reproduce the benchmark protocol."""

    # circuit
    vi: float = 10.0
    r: float = 10.0
    c: float = 100e-6
    l0: float = 1e-3
    linf: float = 0.2e-3
    iknee: float = 0.6
    p: float = 4.0
    d_pulse: float = 0.7
    il0: float = 0.0
    vc0: float = 0.0
    # method
    np: int = 4
    d_basis: float | None = None  # None: follow d_pulse
    mode: str = MPDE_SIMPLIFIED
    jacobian: str = "fd"
    ripple_init: str = RIPPLE_PERIODIC
    fs: float = 1e3
    t_end: float = 10e-3
    tol_mpde: float = 1e-6
    tol_reference: float = 1e-12
    # sweep
    freqs: tuple[float, ...] = SWEEP_FREQS
    table1_freqs: tuple[float, ...] = TABLE1_FREQS
    serial_timing: bool = True
    repeats: int = 3
    workers: int = 0  # 0: one per CPU when timing is not serial
    error_component: str = "vC"
    out_dir: str = "."

    def __post_init__(self):
        positive = ("vi", "r", "c", "l0", "linf", "iknee", "fs", "t_end", "tol_mpde", "tol_reference")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.p < 2:
            raise ConfigError("p must be >= 2")
        if self.linf > self.l0:
            raise ConfigError("linf must not exceed l0")
        if not 0 < self.d_pulse < 1:
            raise ConfigError("d_pulse must lie in (0, 1)")
        if self.d_basis is not None and not 0 < self.d_basis < 1:
            raise ConfigError("d_basis must lie in (0, 1)")
        if self.np < 0:
            raise ConfigError("np must be nonnegative")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        if self.jacobian not in ("fd", "analytic"):
            raise ConfigError("jacobian must be fd or analytic")
        if self.ripple_init not in (RIPPLE_ZERO, RIPPLE_PERIODIC):
            raise ConfigError("ripple_init must be zero or periodic")
        if self.error_component not in STATE_NAMES:
            raise ConfigError(f"error_component must be one of {', '.join(STATE_NAMES)}")
        if any(not f > 0 for f in self.freqs + self.table1_freqs):
            raise ConfigError("frequencies must be positive")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")

    def model(self) -> BuckConverter:
        curve = SaturationCurve(L0=self.l0, Linf=self.linf, Iknee=self.iknee, p=self.p)
        return BuckConverter(Vi=self.vi, D_pulse=self.d_pulse, Ts=1.0 / self.fs, C=self.c, R=self.r, curve=curve)

    def spec(self, mode: str | None = None) -> SimulationSpec:
        mode = mode or self.mode
        tol = reference_config(self.tol_reference) if mode == REFERENCE else mpde_config(self.tol_mpde)
        return SimulationSpec(
            model=self.model(), fs=self.fs, t_end=self.t_end, Np=self.np, D_basis=self.d_basis,
            mode=mode, tolerances=tol, x0=(self.il0, self.vc0), jacobian=self.jacobian,
            ripple_init=self.ripple_init,
        )

    def sweep_spec(self) -> SimulationSpec:
        # tolerances are chosen per mode inside the sweep
        return dataclasses.replace(self.spec(), tolerances=None)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TYPES = typing.get_type_hints(RunConfig)


def _parse_value(key: str, text: str):
    tp = _TYPES[key]
    text = text.strip()
    try:
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp == (float | None):
            return None if text.lower() in ("", "none", "auto") else float(text)
        if tp == tuple[float, ...]:
            return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
        if key == "mode":
            return text.replace("-", "_")
        return text
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {text!r}") from None


def parse_pairs(pairs: dict[str, str]) -> dict:
    out = {}
    for key, text in pairs.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key: {key}")
        out[key] = _parse_value(key, text)
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` pairs; blank lines and ``#`` comments ignored."""
    pairs = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        pairs[key.strip().lower()] = value.strip()
    return pairs


def load_config(path: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    pairs = read_config_file(path) if path else {}
    pairs.update(overrides or {})
    return RunConfig(**parse_pairs(pairs))


# CSV ------------------------------------------------------------------------

def fmt(x) -> str:
    """Shortest decimal string that round-trips to the same double."""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _component_index(name: str) -> int:
    return STATE_NAMES.index(name)


# subcommands ------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, out: Path) -> int:
    spec = cfg.spec()
    try:
        rec = solve(spec)
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out.mkdir(parents=True, exist_ok=True)
    names = STATE_NAMES[: spec.model.ns]
    write_csv(out / "solution.csv", ("t",) + names, np.column_stack([rec.t, rec.x]))
    if rec.basis is not None:
        m = len(rec.basis)
        header = ["t1"] + [f"w_{j + 1}_{k}" for j in range(spec.model.ns) for k in range(m)]
        tr = rec.trajectory
        write_csv(out / "coefficients.csv", header, np.column_stack([tr.knots, tr.values]))
    print(f"mode={spec.mode} fs_hz={fmt(spec.fs)} solve_time_s={rec.solve_time:.6g} "
          f"setup_time_s={rec.setup_time:.6g} steps={rec.n_steps} rejected={rec.trajectory.n_rejected}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    if not cfg.freqs:
        raise ConfigError("freqs must list at least one frequency")
    component = _component_index(cfg.error_component)
    workers = cfg.workers or None
    report = frequency_sweep(
        cfg.freqs, cfg.sweep_spec(), serial_timing=cfg.serial_timing,
        repeats=cfg.repeats, warmup=True, workers=workers, component=component,
        keep_records=cfg.serial_timing,
    )
    out.mkdir(parents=True, exist_ok=True)
    header = list(SWEEP_COLUMNS)
    rows = [list(r.as_tuple()) for r in report.rows]
    if report.failed:
        header.append("error")
        for row, r in zip(rows, report.rows):
            row.append(r.error.replace(",", ";").replace("\n", " "))
    write_csv(out / "sweep.csv", header, rows)
    for r in report.rows:
        status = f"error: {r.error}" if r.error else (
            f"eps_s={r.eps_simplified:.3e} eps_o={r.eps_original:.3e} "
            f"t_ref={r.t_reference:.3g}s t_s={r.t_mpde_simplified:.3g}s speedup={r.speedup:.3g}")
        print(f"fs={r.fs:g} Hz {status}")

    table = []
    failed = bool(report.failed)
    for fs in cfg.table1_freqs:
        try:
            (m,) = speedup_table([fs], cfg.sweep_spec(), report, component=component, repeats=cfg.repeats)
        except SimulationError as exc:
            print(f"table1 fs={fs:g} Hz error: {exc}", file=sys.stderr)
            failed = True
            table.append([fs] + [float("nan")] * 6 + [0])
            continue
        table.append([m.fs, m.eps_mpde, m.t_mpde, m.ref_tol, m.eps_ref, m.t_ref, m.speedup, int(m.bracketed)])
        print(f"table1 fs={fs:g} Hz speedup={m.speedup:.3g} (ref tol {m.ref_tol:g}, eps {m.eps_mpde:.2e})")
    write_csv(out / "table1.csv",
              ("fs_hz", "eps_mpde", "t_mpde_s", "ref_tol", "eps_ref", "t_ref_s", "speedup", "bracketed"),
              table)
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_basis(cfg: RunConfig, out: Path) -> int:
    D = cfg.d_basis if cfg.d_basis is not None else cfg.d_pulse
    try:
        basis = build_basis(D, cfg.np)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out.mkdir(parents=True, exist_ok=True)
    tau = np.linspace(0.0, 1.0, BASIS_SAMPLES)
    names = [f"p{k}" for k in range(len(basis))]
    write_csv(out / "basis.csv", ["tau"] + names, np.column_stack([tau, basis.values(tau).T]))
    write_csv(out / "gram.csv", names, basis.gram())
    G = basis.gram()
    print(f"D={fmt(D)} Np={cfg.np} max |gram - I| = {np.max(np.abs(G - np.eye(len(basis)))):.3e}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "basis": cmd_basis}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpde",
        description="MPDE solver for switched circuits with pulsed excitation.",
        epilog="Any RunConfig field can be overridden as --key=value, e.g. --fs=10000 --np=4.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--mode", choices=[m.replace("_", "-") for m in MODES])
    parser.add_argument("--out", help="output directory (default: out_dir from config)")
    parser.add_argument("--serial-timing", action="store_true", default=None,
                        help="one solve at a time, median of repeats (default on)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _split_overrides(extra: list[str]) -> dict[str, str]:
    pairs = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"unrecognised argument {item!r} (overrides use --key=value)")
        key, value = item[2:].split("=", 1)
        pairs[key.replace("-", "_").lower()] = value
    return pairs


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = _split_overrides(extra)
        if args.mode:
            overrides["mode"] = args.mode
        if args.serial_timing:
            overrides["serial_timing"] = "true"
        cfg = load_config(args.config, overrides)
        out = Path(args.out or cfg.out_dir)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
