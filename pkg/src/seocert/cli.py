"""Command-line front end.

Subcommands::

    seocert certify  --scenario mub --d 3 --n-m 4 --k 3 --tier dps --t 0.95
    seocert table1   [--include-heavy] [--output table.csv]
    seocert sweep    --scenario mub --d 2 --n-m 3 --k 2 --tier kcompat --grid 0.8,0.85,0.9

``certify`` exits 0 when at least k+1 incompatible measurements are
certified, 2 when the test is inconclusive and 1 on any error.  Solver limits
default to the environment variables SEOCERT_SOLVER, SEOCERT_MAX_ITER,
SEOCERT_TIME_LIMIT and SEOCERT_TOL; explicit flags take precedence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from seocert import certify as cert
from seocert import sdp_adapter as sdp
from seocert.scenarios import (AssemblageError, MeasurementAssemblage, depolarize,
                               hollow_triangle, maximally_entangled, mub_assemblage)
from seocert.seo import seo, seo_rank, steer

EXIT_CERTIFIED = 0
EXIT_ERROR = 1
EXIT_INCONCLUSIVE = 2

log = logging.getLogger("seocert")


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Input files


def _complex_array(raw, shape: tuple[int, ...], what: str) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{what}: entries must be [re, im] number pairs") from exc
    if arr.shape != shape + (2,):
        raise InputError(f"{what}: expected shape {list(shape)} of [re, im] pairs, got {list(arr.shape)}")
    return arr[..., 0] + 1j * arr[..., 1]


def parse_input(doc: dict) -> tuple[MeasurementAssemblage, np.ndarray | None]:
    """Parse the input JSON document.

    ``measurements`` holds ``n_m``, ``n_a``, ``d`` and ``effects`` indexed
    ``[x][a][row][col]``; the optional ``state`` holds ``dims = [d_A, d_B]``
    and a row-major ``data`` matrix.  Complex numbers are ``[re, im]`` pairs.
    """
    try:
        jsonschema.validate(doc, _schema("input"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "document"
        raise InputError(f"input does not match the input schema at {where}: {exc.message}") from exc
    meas = doc["measurements"]
    try:
        n_m, n_a, d = int(meas["n_m"]), int(meas["n_a"]), int(meas["d"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError("measurements need integer n_m, n_a and d") from exc
    effects = _complex_array(meas.get("effects"), (n_m, n_a, d, d), "measurements.effects")
    m = MeasurementAssemblage(effects)
    try:
        m.validate()
    except AssemblageError as exc:
        raise InputError(str(exc)) from exc
    state = None
    if doc.get("state") is not None:
        st = doc["state"]
        try:
            d_a, d_b = (int(v) for v in st["dims"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError("state needs dims = [d_A, d_B]") from exc
        if d_a != d:
            raise InputError(f"state dims[0] = {d_a} does not match measurement dimension {d}")
        state = _complex_array(st.get("data"), (d_a * d_b, d_a * d_b), "state.data")
    return m, state


def dump_input(m: MeasurementAssemblage, state: np.ndarray | None = None) -> dict:
    def pairs(a):
        return np.stack([a.real, a.imag], axis=-1).tolist()

    doc = {"measurements": {"n_m": m.n_m, "n_a": m.n_a, "d": m.d, "effects": pairs(m.effects)}}
    if state is not None:
        d_b = state.shape[0] // m.d
        doc["state"] = {"dims": [m.d, d_b], "data": pairs(np.asarray(state))}
    return doc


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    d: int
    n_m: int
    k: int
    tier: cert.ConstraintTier
    mode: cert.Mode
    t: float
    settings: sdp.SolverSettings
    input_path: str | None = None
    allow_large: bool = False
    cascade: bool = True

    def alice(self) -> tuple[MeasurementAssemblage, np.ndarray | None]:
        """Alice's measurements (before visibility) and the shared state, if any."""
        if self.scenario == "mub":
            return mub_assemblage(self.d, self.n_m), maximally_entangled(self.d)
        if self.scenario == "hollow-triangle":
            return hollow_triangle(), maximally_entangled(2)
        try:
            doc = json.loads(Path(self.input_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read {self.input_path}: {exc}") from exc
        return parse_input(doc)

    def tested_assemblage(self) -> MeasurementAssemblage:
        """The assemblage whose k-compatibility tiers are examined.

        With a state this is Bob's SEO of the noisy measurements; without one,
        the noisy measurements themselves.
        """
        m, state = self.alice()
        noisy = depolarize(m, self.t)
        return seo(steer(state, noisy)) if state is not None else noisy


def _env(name: str, cast, default):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return cast(raw)
    except ValueError as exc:
        raise InputError(f"environment variable {name}={raw!r} is not a valid {cast.__name__}") from exc


def solver_settings(args) -> sdp.SolverSettings:
    base = sdp.SolverSettings()
    s = sdp.SolverSettings(
        solver=args.solver or _env("SEOCERT_SOLVER", str, base.solver),
        max_iter=args.max_iter or _env("SEOCERT_MAX_ITER", int, base.max_iter),
        time_limit=args.time_limit or _env("SEOCERT_TIME_LIMIT", float, base.time_limit),
        tol=args.tol or _env("SEOCERT_TOL", float, base.tol),
    )
    if s.solver not in ("clarabel", "scs"):
        raise InputError(f"unknown solver {s.solver!r}; expected clarabel or scs")
    if s.max_iter <= 0 or s.time_limit <= 0 or s.tol <= 0:
        raise InputError("solver limits must be positive")
    return s


def _config(args, t: float = 1.0) -> RunConfig:
    if args.scenario == "file" and not args.input:
        raise InputError("--scenario file needs --input")
    if not 0.0 <= t <= 1.0:
        raise InputError(f"visibility must lie in [0, 1], got {t}")
    if args.k < 1:
        raise InputError("--k must be at least 1")
    tier = cert.ConstraintTier.parse(args.tier, args.level, args.compressed, args.ppt_cuts)
    cfg = RunConfig(args.scenario, args.d, args.n_m, args.k, tier,
                    cert.Mode(args.mode.upper().replace("-", "_")), t, solver_settings(args),
                    args.input, args.allow_large, not args.no_cascade)
    _check_caps(cfg)
    return cfg


def _check_caps(cfg: RunConfig):
    if cfg.scenario == "mub":
        n_m, n_a, d = cfg.n_m, cfg.d, cfg.d
    else:
        m, _ = cfg.alice()
        n_m, n_a, d = m.n_m, m.n_a, m.d
    ext = None
    if cfg.tier.kind is cert.Tier.KCOMPAT_PPT_DPS and cfg.k >= 2:
        layout = cert.ExtensionLayout(d, cfg.k, cfg.tier.level)
        ext = layout.compressed_dim if cfg.tier.compressed else layout.dim
    cert._check_caps(n_a ** n_m, ext, cfg.allow_large)


# ---------------------------------------------------------------------------
# Reports


def _schema(name: str) -> dict:
    text = resources.files("seocert").joinpath(f"schemas/{name}.schema.json").read_text()
    return json.loads(text)


def report_schema() -> dict:
    return _schema("report")


def validate_report(doc: dict) -> None:
    jsonschema.validate(doc, report_schema())


def _write(text: str, path: str | None):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_certify(args) -> int:
    cfg = _config(args, 1.0 if args.t is None else args.t)
    m = cfg.tested_assemblage()
    if cfg.mode is cert.Mode.MAX_VISIBILITY:
        report = cert.critical_visibility(m, cfg.k, cfg.tier, cfg.settings, cfg.allow_large)
    else:
        report = cert.certify_assemblage(m, cfg.k, cfg.tier, cfg.settings, cfg.cascade,
                                         cfg.allow_large)
        report.t_queried = cfg.t
    alice, state = cfg.alice()
    if state is not None:
        report.seo_rank = seo_rank(state, alice.d)
    doc = report.to_dict()
    validate_report(doc)
    _write(_dumps(doc), args.output)
    print(f"{report.verdict.value}: k={cfg.k} tier={report.tier_used} "
          f"status={report.solver_status}", file=sys.stderr)
    return EXIT_CERTIFIED if report.certified else EXIT_INCONCLUSIVE


TABLE_COLUMNS = ["d", "n_m", "k", "tier", "t_c", "wall_time", "solver_status"]
HEAVY_CELL = (3, 4, 3, "dps")


def table1_cells(include_heavy: bool) -> list[tuple[int, int, int, str]]:
    cells = [(3, n_m, k, tier) for n_m, k in ((3, 2), (4, 2), (4, 3))
             for tier in ("kcompat", "ppt", "dps")]
    cells += [(2, 3, 2, "kcompat"), (2, 3, 2, "ppt")]
    if not include_heavy:
        cells = [c if c != HEAVY_CELL else c + ("skip",) for c in cells]
    return cells


def _table_cell(cell, settings: sdp.SolverSettings, ppt_cuts: str = "first") -> dict:
    d, n_m, k, tier_name = cell[:4]
    row = {"d": d, "n_m": n_m, "k": k, "tier": tier_name, "t_c": None, "wall_time": 0.0}
    tier = cert.ConstraintTier.parse(tier_name, compressed=(d, n_m, k, tier_name) == HEAVY_CELL,
                                     ppt_cuts=ppt_cuts)
    row["tier"] = tier.label
    if len(cell) > 4:
        row["solver_status"] = "SKIPPED"
        return row
    try:
        m = seo(steer(maximally_entangled(d), mub_assemblage(d, n_m)))
        rep = cert.critical_visibility(m, k, tier, settings, allow_large=True)
    except Exception as exc:  # recorded in-row, the table is still emitted
        row["solver_status"] = f"ERROR: {exc}"
        return row
    row["wall_time"] = round(rep.wall_time, 3)
    if rep.raw_status == "MaxTime":
        row["solver_status"] = "INCOMPLETE"
    else:
        row["solver_status"] = rep.solver_status
    if rep.t_c is not None:
        row["t_c"] = round(rep.t_c, 6)
    return row


def _run_cells(fn, cells, jobs: int, *extra) -> list:
    if jobs <= 1 or len(cells) <= 1:
        return [fn(c, *extra) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map keeps config order regardless of completion order
        return list(pool.map(fn, cells, *[[e] * len(cells) for e in extra]))


def _format_rows(rows: list[dict], columns: list[str], fmt: str) -> str:
    if fmt == "json":
        return _dumps(rows)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: "" if row.get(c) is None else row[c] for c in columns})
    return buf.getvalue()


def _output_format(args) -> str:
    if args.format:
        return args.format
    return "json" if args.output and args.output.endswith(".json") else "csv"


def cmd_table1(args) -> int:
    settings = solver_settings(args)
    rows = _run_cells(_table_cell, table1_cells(args.include_heavy), args.jobs, settings,
                      args.ppt_cuts)
    _write(_format_rows(rows, TABLE_COLUMNS, _output_format(args)), args.output)
    failed = [r for r in rows if str(r["solver_status"]).startswith("ERROR")]
    return EXIT_ERROR if failed else 0


def parse_grid(text: str) -> list[float]:
    try:
        grid = sorted({float(v) for v in text.split(",") if v.strip()})
    except ValueError as exc:
        raise InputError(f"cannot parse grid {text!r}") from exc
    if not grid or grid[0] < 0 or grid[-1] > 1:
        raise InputError("grid values must lie in [0, 1]")
    return grid


def _sweep_point(t: float, m: MeasurementAssemblage, k: int, tier, settings, allow_large) -> dict:
    rep = cert.feasible_at(m, k, tier, t, settings, allow_large)
    if rep.certified:
        verdict = "infeasible"
    elif rep.solver_status == sdp.Status.OPTIMAL.value:
        verdict = "feasible"
    else:
        verdict = "unknown"
    return {"t": t, "verdict": verdict, "solver_status": rep.solver_status,
            "wall_time": round(rep.wall_time, 3)}


def monotone_prefix(verdicts: list[str]) -> bool:
    """Feasible verdicts must precede every infeasible one on the sorted grid."""
    seen_infeasible = False
    for v in verdicts:
        if v == "infeasible":
            seen_infeasible = True
        elif v == "feasible" and seen_infeasible:
            return False
    return True


def cmd_sweep(args) -> int:
    cfg = _config(args, 1.0)
    grid = parse_grid(args.grid)
    m = cfg.tested_assemblage()
    rows = _run_cells(_sweep_point, grid, args.jobs, m, cfg.k, cfg.tier, cfg.settings,
                      cfg.allow_large)
    ok = monotone_prefix([r["verdict"] for r in rows])
    for r in rows:
        r["monotone"] = ok
    if not ok:
        print("warning: feasible verdicts do not form a prefix of the grid; "
              "treat as solver instability", file=sys.stderr)
    columns = ["t", "verdict", "solver_status", "wall_time", "monotone"]
    _write(_format_rows(rows, columns, _output_format(args)), args.output)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _add_solver_args(p):
    g = p.add_argument_group("solver")
    g.add_argument("--solver", choices=["clarabel", "scs"], default=None)
    g.add_argument("--max-iter", type=int, default=None)
    g.add_argument("--time-limit", type=float, default=None, help="seconds per solve")
    g.add_argument("--tol", type=float, default=None)


def _add_problem_args(p):
    p.add_argument("--scenario", choices=["mub", "hollow-triangle", "file"], default="mub")
    p.add_argument("--input", help="JSON file with measurements (and optionally a state)")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--n-m", type=int, default=3)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--tier", default="dps", help="kcompat, ppt or dps")
    p.add_argument("--level", type=int, default=2, help="symmetric extension level for dps")
    p.add_argument("--compressed", action="store_true",
                   help="restrict extensions to the symmetric subspace")
    p.add_argument("--ppt-cuts", choices=list(cert.PPT_CUTS), default="all",
                   help="transpose every single copy (all) or only the first copy (first)")
    p.add_argument("--allow-large", action="store_true", help="lift the problem-size caps")
    p.add_argument("--no-cascade", action="store_true",
                   help="solve only the requested tier instead of cheaper tiers first")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seocert", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="certify a lower bound on the number of measurements")
    _add_problem_args(p)
    p.add_argument("--t", type=float, default=None, help="visibility of Alice's measurements")
    p.add_argument("--mode", choices=["feasibility", "max-visibility"], default="feasibility")
    p.add_argument("--output", "-o", default=None, help="report path (default stdout)")
    _add_solver_args(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("table1", help="critical visibilities for MUBs on maximally entangled states")
    p.add_argument("--include-heavy", action="store_true",
                   help="also compute the n_m=4, k=3 extension cell")
    p.add_argument("--ppt-cuts", choices=list(cert.PPT_CUTS), default="first",
                   help="partial transposes imposed by the PPT and DPS columns")
    p.add_argument("--output", "-o", default=None)
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--jobs", type=int, default=1)
    _add_solver_args(p)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("sweep", help="feasibility verdicts over a visibility grid")
    _add_problem_args(p)
    p.add_argument("--grid", required=True, help="comma-separated visibilities")
    p.add_argument("--output", "-o", default=None)
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--jobs", type=int, default=1)
    _add_solver_args(p)
    p.set_defaults(func=cmd_sweep, mode="feasibility")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, AssemblageError, cert.CapExceeded, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
