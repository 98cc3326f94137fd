"""Command-line interface: batch evaluation of transformed potentials and
the independent verification battery.

Subcommands
-----------
``transform``
    Evaluate the transformed potential for a measure read from a JSON file.
``soliton``
    Convenience wrapper: pure point measure given directly on the command
    line (repeat ``--kappa``/``--weight`` for several components).
``gas``
    Convenience wrapper: a single absolutely continuous component from the
    density catalog.
``verify``
    Run the verification battery and write a JSON report.

Output contract
---------------
The potential sweep is written as a CSV table (``x,t,q`` plus optional Jost
columns when ``--jost-k`` is given) with LF line endings and
shortest-round-trip float formatting, so identical scenarios produce
byte-identical files regardless of worker count.  A JSON sidecar next to
the CSV echoes the scenario and carries solver diagnostics; it contains no
timestamps for the same reason.  Files are written atomically (temp file +
rename) and existing outputs are not overwritten unless ``--force`` is
given.

Exit codes: 0 success, 1 verification failure, 2 invalid scenario,
3 singular kernel system (the location is reported on stderr).

``DARBOUX_THREADS`` caps the worker threads used for the grid sweep
(default: up to 8).  Each grid point is solved independently, so the
thread count never changes the numbers.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import verify
from .background import ZeroBackground
from .errors import (
    DarbouxError,
    NonPositiveDeterminantError,
    SingularSystemError,
)
from .measure import Atom, SpectralMeasure, discretize, make_ac_part
from .transform import apply, transformed_potential

__all__ = ["ScenarioConfig", "run_transform", "run_verify", "main"]

_METHODS = ("direct", "logdet", "both")


class ScenarioError(Exception):
    """Invalid scenario: bad flag value, malformed file, refused overwrite."""


@dataclass
class ScenarioConfig:
    """Fully merged description of one potential sweep.

    Built from an optional JSON config file plus command-line flags; flags
    win over file values.  ``measure`` holds the already-parsed spectral
    data as plain lists so the sidecar can echo it verbatim.
    """

    background: str = "zero"
    measure: dict = dc_field(default_factory=lambda: {"atoms": [], "ac_parts": []})
    grid: str = ""
    times: tuple = (0.0,)
    n_nodes: int = 64
    method: str = "direct"
    jost_k: str | None = None
    out: str = ""
    report: str | None = None
    force: bool = False


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------

def _parse_grid(spec: str) -> np.ndarray:
    parts = str(spec).split(":")
    if len(parts) != 3:
        raise ScenarioError(f"grid must look like 'x_min:x_max:dx', got {spec!r}")
    try:
        lo, hi, dx = (float(p) for p in parts)
    except ValueError:
        raise ScenarioError(f"grid has a non-numeric field: {spec!r}") from None
    if not (np.isfinite(lo) and np.isfinite(hi) and np.isfinite(dx)):
        raise ScenarioError(f"grid fields must be finite: {spec!r}")
    if dx <= 0.0 or hi < lo:
        raise ScenarioError(
            f"grid needs x_min <= x_max and dx > 0, got {spec!r}"
        )
    n = int(np.floor((hi - lo) / dx + 1e-9)) + 1
    return lo + dx * np.arange(n)


def _parse_times(value) -> tuple:
    if isinstance(value, str):
        items = [p for p in value.split(",") if p.strip()]
    else:
        items = list(value)
    try:
        times = tuple(float(v) for v in items)
    except (TypeError, ValueError):
        raise ScenarioError(f"times must be numbers, got {value!r}") from None
    if not times:
        raise ScenarioError("at least one time is required")
    return times


def _parse_jost_k(spec: str) -> complex:
    try:
        k = complex(str(spec).replace(" ", ""))
    except ValueError:
        raise ScenarioError(f"cannot parse --jost-k value {spec!r}") from None
    if k.imag < 0.0:
        raise ScenarioError("--jost-k needs Im k >= 0 (upper half plane)")
    return k


def _measure_payload_from_file(path: str) -> dict:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ScenarioError(f"measure file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"measure file {path} is not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ScenarioError("measure file must hold a JSON object")
    unknown = set(payload) - {"atoms", "ac_parts"}
    if unknown:
        raise ScenarioError(f"unknown measure keys: {sorted(unknown)}")
    return {
        "atoms": [list(map(float, pair)) for pair in payload.get("atoms", [])],
        "ac_parts": [dict(spec) for spec in payload.get("ac_parts", [])],
    }


def _build_measure(measure: dict) -> SpectralMeasure:
    try:
        atoms = tuple(Atom(float(k), float(w)) for k, w in measure["atoms"])
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"atoms must be [kappa, weight] pairs: {exc}") from None
    parts = []
    for spec in measure["ac_parts"]:
        if "density" not in spec:
            raise ScenarioError(f"ac part is missing 'density': {spec!r}")
        unknown = set(spec) - {"density", "a", "b", "scale", "params"}
        if unknown:
            raise ScenarioError(f"unknown ac part keys: {sorted(unknown)}")
        try:
            parts.append(
                make_ac_part(
                    spec["density"],
                    a=spec.get("a"),
                    b=spec.get("b"),
                    scale=spec.get("scale", 1.0),
                    params=spec.get("params"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"bad ac part {spec!r}: {exc}") from None
    try:
        return SpectralMeasure(atoms=atoms, ac_parts=tuple(parts))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None


def _merge_transform_config(args) -> ScenarioConfig:
    data: dict = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ScenarioError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ScenarioError("config file must hold a JSON object")
        allowed = {
            "background", "measure_file", "grid", "times", "n_nodes",
            "method", "jost_k", "out", "report", "force",
        }
        unknown = set(data) - allowed
        if unknown:
            raise ScenarioError(f"unknown config keys: {sorted(unknown)}")

    def pick(flag, key, default=None):
        return flag if flag is not None else data.get(key, default)

    measure_file = pick(args.measure_file, "measure_file")
    if measure_file is None:
        raise ScenarioError("a measure file is required (--measure-file)")
    grid = pick(args.grid, "grid")
    if grid is None:
        raise ScenarioError("a grid is required (--grid x_min:x_max:dx)")
    out = pick(args.out, "out")
    if out is None:
        raise ScenarioError("an output path is required (--out)")
    times = pick(args.times, "times", (0.0,))
    method = str(pick(args.method, "method", "direct"))
    if method not in _METHODS:
        raise ScenarioError(f"method must be one of {_METHODS}, got {method!r}")
    try:
        n_nodes = int(pick(args.nodes, "n_nodes", 64))
    except (TypeError, ValueError):
        raise ScenarioError("n_nodes must be an integer") from None
    if n_nodes < 1:
        raise ScenarioError("n_nodes must be positive")
    jost_k = pick(args.jost_k, "jost_k")
    return ScenarioConfig(
        background="zero",
        measure=_measure_payload_from_file(str(measure_file)),
        grid=str(grid),
        times=_parse_times(times),
        n_nodes=n_nodes,
        method=method,
        jost_k=None if jost_k is None else str(jost_k),
        out=str(out),
        report=pick(args.report, "report"),
        force=bool(args.force or data.get("force", False)),
    )


# ---------------------------------------------------------------------------
# sweep and output
# ---------------------------------------------------------------------------

def _thread_count() -> int:
    env = os.environ.get("DARBOUX_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ScenarioError(
                f"DARBOUX_THREADS must be an integer, got {env!r}"
            ) from None
    return min(8, os.cpu_count() or 1)


def _evaluate_point(field, x: float, t: float, method: str, k):
    if method == "both":
        q = float(transformed_potential(field, x, t, method="direct"))
        other = float(transformed_potential(field, x, t, method="logdet"))
        diff = abs(q - other)
    else:
        q = float(transformed_potential(field, x, t, method=method))
        diff = None
    row = [x, t, q]
    if k is not None:
        psi = complex(field.jost(x, t, k))
        row.extend([psi.real, psi.imag])
    if field.is_trivial:
        point_diag = {"x": x, "t": t}
    else:
        sol = field.solve_at(x, t)
        point_diag = {
            "x": x,
            "t": t,
            "det_sign": int(sol.det_sign),
            "logabsdet": float(sol.logabsdet),
            "cond_estimate": float(sol.cond_estimate),
        }
    return row, diff, point_diag


def _sweep(field, xs: np.ndarray, times, method: str, k):
    points = [(float(x), float(t)) for t in times for x in xs]
    workers = _thread_count()
    if workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # map() yields results in submission order, so the worker count
            # cannot change the output
            results = list(
                pool.map(lambda p: _evaluate_point(field, *p, method, k), points)
            )
    else:
        results = [_evaluate_point(field, x, t, method, k) for x, t in points]
    rows = [row for row, _, _ in results]
    diffs = [d for _, d, _ in results if d is not None]
    per_point = [p for _, _, p in results]
    return rows, diffs, per_point


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, str(path))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _refuse_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ScenarioError(
            f"refusing to overwrite existing {path} (pass --force to allow)"
        )


def _write_outputs(cfg: ScenarioConfig, rows, diffs, per_point) -> None:
    out = Path(cfg.out)
    report_path = Path(cfg.report) if cfg.report else out.with_suffix(".json")
    header = "x,t,q" + (",psi_re,psi_im" if cfg.jost_k is not None else "")
    lines = [header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    csv_bytes = ("\n".join(lines) + "\n").encode()

    qcol = [row[2] for row in rows]
    diagnostics = {
        "points": len(rows),
        "q_min": min(qcol) if qcol else None,
        "q_max": max(qcol) if qcol else None,
        "per_point": per_point,
    }
    if diffs:
        diagnostics["cross_check_max_diff"] = max(diffs)
    # the echo is content-only (no output paths), so two runs of the same
    # scenario produce identical sidecars wherever they write
    scenario = asdict(cfg)
    for key in ("out", "report"):
        scenario.pop(key, None)
    scenario["times"] = list(cfg.times)
    report = {"scenario": scenario, "diagnostics": diagnostics}
    report_bytes = (
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    ).encode()

    _write_atomic(out, csv_bytes)
    _write_atomic(report_path, report_bytes)


def run_transform(cfg: ScenarioConfig) -> int:
    """Run one sweep described by ``cfg``; returns the process exit code."""
    xs = _parse_grid(cfg.grid)
    k = None if cfg.jost_k is None else _parse_jost_k(cfg.jost_k)
    out = Path(cfg.out)
    _refuse_overwrite(out, cfg.force)
    report_path = Path(cfg.report) if cfg.report else out.with_suffix(".json")
    _refuse_overwrite(report_path, cfg.force)

    sigma = _build_measure(cfg.measure)
    field = apply(
        ZeroBackground(), sigma, n_nodes=cfg.n_nodes, force=cfg.force
    )
    rows, diffs, per_point = _sweep(field, xs, cfg.times, cfg.method, k)
    _write_outputs(cfg, rows, diffs, per_point)
    return 0


# ---------------------------------------------------------------------------
# verification battery
# ---------------------------------------------------------------------------

def _bool_entry(check: str, params: dict, passed: bool) -> dict:
    return {
        "check": check,
        "params": params,
        "residuals": [],
        "order": None,
        "pass": bool(passed),
    }


def run_verify(n_nodes: int, out: str | None) -> int:
    """Run the verification battery; returns 0 iff every check passes.

    ``n_nodes`` sizes the discretizations used by the field-based checks;
    the convergence study keeps its own fixed refinement ladder.
    """
    zero = ZeroBackground()
    one = apply(zero, SpectralMeasure(atoms=(Atom(1.0, 2.0),), ac_parts=()))
    two = apply(
        zero,
        SpectralMeasure(atoms=(Atom(1.0, 2.0), Atom(2.0, 1.0)), ac_parts=()),
    )
    gas = SpectralMeasure(atoms=(), ac_parts=(make_ac_part("semicircle_2s"),))

    entries = [
        json.loads(
            verify.kdv_residual(
                one, (-5.0, 10.0), (0.0, 1.0), h_list=(0.1, 0.05, 0.025)
            ).to_json()
        ),
        json.loads(
            # the kappa = 2 component steepens the profile, so the
            # asymptotic regime needs a finer ladder
            verify.kdv_residual(
                two, (-5.0, 10.0), (0.0, 1.0), h_list=(0.04, 0.02, 0.01)
            ).to_json()
        ),
        json.loads(
            verify.schrodinger_residual(
                one, (1j, 1.0, 0.7 + 0.4j), (-4.0, 6.0)
            ).to_json()
        ),
        json.loads(
            verify.convergence_study(
                gas, (16, 32, 64, 128), ((0.0, 0.0),)
            ).to_json()
        ),
    ]

    dm_a = discretize(gas, n_per_component=n_nodes)
    dm_b = discretize(gas, n_per_component=2 * n_nodes)
    entries.append(
        _bool_entry(
            "hs_bound",
            {"n_coarse": n_nodes, "n_fine": 2 * n_nodes, "x": -2.0, "t": 0.0},
            verify.hs_bound_check(dm_a, dm_b, zero, x=-2.0, t=0.0),
        )
    )
    entries.append(
        _bool_entry(
            "jost_decay",
            {"s_min": 1.0},
            verify.jost_decay_check(one, s_min=1.0),
        )
    )

    overall = all(entry["pass"] for entry in entries)
    payload = {"pass": overall, "checks": entries}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        _write_atomic(Path(out), text.encode())
    else:
        sys.stdout.write(text)
    return 0 if overall else 1


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def _add_sweep_flags(sub, with_nodes: bool = True) -> None:
    sub.add_argument("--grid", help="evaluation grid as x_min:x_max:dx")
    sub.add_argument("--times", help="comma-separated evaluation times")
    if with_nodes:
        sub.add_argument("--nodes", type=int,
                         help="quadrature nodes per continuous component")
    sub.add_argument("--method", choices=_METHODS,
                     help="potential evaluation route")
    sub.add_argument("--jost-k", dest="jost_k",
                     help="also tabulate the Jost solution at this k "
                          "(complex literal, e.g. '1j' or '0.5+0.3j')")
    sub.add_argument("--out", help="CSV output path")
    sub.add_argument("--report", help="JSON sidecar path "
                                      "(default: output path with .json)")
    sub.add_argument("--force", action="store_true",
                     help="overwrite outputs and skip the admissibility check")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="darboux",
        description="Evaluate continuous-family dressing transformations "
                    "of reflectionless potentials.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    tr = subs.add_parser("transform", help="sweep a measure from a JSON file")
    tr.add_argument("--config", help="JSON file with scenario defaults "
                                     "(flags override it)")
    tr.add_argument("--measure-file", dest="measure_file",
                    help="JSON file with 'atoms' and 'ac_parts'")
    _add_sweep_flags(tr)
    tr.set_defaults(func=_cmd_transform)

    so = subs.add_parser("soliton", help="sweep a pure point measure")
    so.add_argument("--kappa", action="append", type=float, default=None,
                    help="bound state parameter (repeatable)")
    so.add_argument("--weight", action="append", type=float, default=None,
                    help="norming weight paired with the preceding --kappa")
    _add_sweep_flags(so, with_nodes=False)
    so.set_defaults(func=_cmd_soliton)

    ga = subs.add_parser("gas", help="sweep a single continuous component")
    ga.add_argument("--density", help="density name from the catalog")
    ga.add_argument("--a", type=float, default=None, help="support lower end")
    ga.add_argument("--b", type=float, default=None, help="support upper end")
    ga.add_argument("--scale", type=float, default=None,
                    help="multiplicative factor on the density")
    _add_sweep_flags(ga)
    ga.set_defaults(func=_cmd_gas)

    ve = subs.add_parser("verify", help="run the verification battery")
    ve.add_argument("--nodes", type=int, default=32,
                    help="discretization size for the field-based checks")
    ve.add_argument("--out", help="JSON report path (default: stdout)")
    ve.set_defaults(func=_cmd_verify)

    return parser


def _direct_config(args, measure: dict, n_nodes: int | None = None) -> ScenarioConfig:
    if args.grid is None:
        raise ScenarioError("a grid is required (--grid x_min:x_max:dx)")
    if args.out is None:
        raise ScenarioError("an output path is required (--out)")
    return ScenarioConfig(
        background="zero",
        measure=measure,
        grid=str(args.grid),
        times=_parse_times(args.times if args.times is not None else (0.0,)),
        n_nodes=int(n_nodes if n_nodes is not None else 64),
        method=args.method or "direct",
        jost_k=args.jost_k,
        out=str(args.out),
        report=args.report,
        force=bool(args.force),
    )


def _cmd_transform(args) -> int:
    return run_transform(_merge_transform_config(args))


def _cmd_soliton(args) -> int:
    kappas = args.kappa or []
    weights = args.weight or []
    if not kappas or len(kappas) != len(weights):
        raise ScenarioError(
            "--kappa and --weight must appear the same nonzero number of times"
        )
    measure = {
        "atoms": [[float(k), float(w)] for k, w in zip(kappas, weights)],
        "ac_parts": [],
    }
    return run_transform(_direct_config(args, measure))


def _cmd_gas(args) -> int:
    if not args.density:
        raise ScenarioError("a density name is required (--density)")
    spec: dict = {"density": str(args.density)}
    if args.a is not None:
        spec["a"] = args.a
    if args.b is not None:
        spec["b"] = args.b
    if args.scale is not None:
        spec["scale"] = args.scale
    measure = {"atoms": [], "ac_parts": [spec]}
    return run_transform(_direct_config(args, measure, n_nodes=args.nodes))


def _cmd_verify(args) -> int:
    if args.nodes < 4:
        raise ScenarioError("--nodes must be at least 4")
    return run_verify(args.nodes, args.out)


# flags whose values may start with "-" (negative numbers); joined into
# --flag=value form so argparse does not mistake the value for an option
_VALUE_FLAGS = (
    "--grid", "--times", "--jost-k", "--kappa", "--weight",
    "--a", "--b", "--scale",
)


def _canonicalize(argv) -> list:
    out = []
    i = 0
    while i < len(argv):
        if argv[i] in _VALUE_FLAGS and i + 1 < len(argv):
            out.append(argv[i] + "=" + argv[i + 1])
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    """Console entry point; returns the process exit code."""
    parser = _build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(_canonicalize(list(argv)))
    except SystemExit as exc:  # argparse already printed the usage message
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return args.func(args)
    except (SingularSystemError, NonPositiveDeterminantError) as exc:
        print(f"error: {exc} [x={exc.x!r}, t={exc.t!r}]", file=sys.stderr)
        return 3
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DarbouxError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
