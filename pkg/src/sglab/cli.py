"""Command-line interface: classify, atlas, run, sweep and report.

Exit codes: 0 success (a blow-up is a result), 2 configuration or usage
error, 3 numerical failure inside the solver.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Optional

from . import __version__
from .experiments import (
    TIMESERIES_HEADER,
    _clean,
    levels_to_csv,
    rows_to_csv,
    run_probes,
    timeseries_rows,
)
from .field import field_to_bytes, field_to_csv
from .regime import (
    INF,
    DataSpaceSpec,
    DomainError,
    ProblemExponents,
    Regime,
    admissible_data,
    atlas,
    atlas_csv_rows,
    classify,
    derived_exponents,
    exact,
    format_number,
    regime_of,
)
from .render import atlas_svg
from .scenario import Scenario, ScenarioError, parse_document
from .solver import SolverFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# representative p per layout, used when atlas is called without --p
DEFAULT_ATLAS_P = {
    2: ["3/2", "9/5", "6/5", "4/3"],
    3: ["2", "5/2", "9/5", "7/5", "11/10", "6/5"],
    5: ["3", "9/5", "3/2", "6/5"],
}


class UsageError(Exception):
    pass


def _fail(msg: str, code: int = EXIT_CONFIG) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _num_str(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, Fraction):
        return str(x) if x.denominator != 1 else str(x.numerator)
    return format_number(x)


def _json_num(x):
    if x is None:
        return None
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return float(x)


# ---------------------------------------------------------------------------
# classify


def cmd_classify(args) -> int:
    try:
        N = exact(args.N)
        p = exact(args.p)
        q = exact(args.q)
        m = exact(args.m) if args.m is not None else None
        r = exact(args.r) if args.r is not None else INF
        if N != int(N):
            raise DomainError(f"dimension N must be an integer >= 2, got {args.N}")
        e = ProblemExponents(int(N), p, q)
        sublinear = regime_of(e.N, e.p, e.q) is Regime.SUBLINEAR
        rep = classify(e, m) if (m is not None and sublinear) else classify(e)
        der = derived_exponents(e)
        admissible = None
        if m is not None and rep.regime in (Regime.RED, Regime.ORANGE):
            admissible = admissible_data(e, DataSpaceSpec(m=m, r=r))
    except (DomainError, ValueError, ZeroDivisionError) as exc:
        return _fail(str(exc))
    record = {
        "N": int(N), "p": _json_num(p), "q": _json_num(q),
        "regime": rep.regime.value,
        "colour": rep.colour,
        "sigma": _json_num(rep.sigma),
        "beta": _json_num(rep.beta),
        "eta": _json_num(der.eta_grad),
        "solution_notion": rep.solution_notion.value if rep.solution_notion else None,
        "datum_space": rep.datum_space,
        "forcing_space": rep.forcing_space,
        "m_subcase": rep.m_subcase.value if rep.m_subcase else None,
        "notes": rep.notes,
    }
    if m is not None:
        record["m"] = _json_num(m)
        record["r"] = _json_num(r)
        record["admissible"] = admissible
    if args.json:
        print(json.dumps(record, sort_keys=True))
        return EXIT_OK
    lines = [
        f"regime          {rep.regime.value}" + (f" ({rep.colour})" if rep.colour else ""),
        f"sigma           {_num_str(rep.sigma)}",
        f"beta            {_num_str(rep.beta)}",
        f"eta             {_num_str(der.eta_grad)}",
        f"solution        {record['solution_notion'] or '-'}",
        f"datum space     {rep.datum_space or '-'}",
        f"forcing space   {rep.forcing_space or '-'}",
    ]
    if rep.m_subcase:
        lines.append(f"m subcase       {rep.m_subcase.value}")
    if admissible is not None:
        lines.append(f"admissible      {'yes' if admissible else 'no'} (m={_num_str(m)}, r={_num_str(r)})")
    if rep.notes:
        lines.append(f"notes           {rep.notes}")
    print("\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# output directories


def _prepare_out(path: Path, names, force: bool) -> None:
    path.mkdir(parents=True, exist_ok=True)
    clash = [n for n in names if (path / n).exists()]
    if clash and not force:
        raise UsageError(f"refusing to overwrite {', '.join(sorted(clash))} in {path} (use --force)")


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# atlas


def _p_values(args, N: int) -> list:
    if args.p_range:
        lo, hi = exact(args.p_range[0]), exact(args.p_range[1])
        n = args.samples
        if n < 2:
            raise DomainError("--samples must be >= 2")
        if not (1 < lo < hi < N):
            raise DomainError(f"need 1 < p_lo < p_hi < N, got ({args.p_range[0]}, {args.p_range[1]})")
        if isinstance(lo, Fraction) and isinstance(hi, Fraction):
            return [lo + (hi - lo) * Fraction(k, n - 1) for k in range(n)]
        return [float(lo) + (float(hi) - float(lo)) * k / (n - 1) for k in range(n)]
    if args.p:
        return [exact(v) for v in args.p]
    if N in DEFAULT_ATLAS_P:
        return [exact(v) for v in DEFAULT_ATLAS_P[N]]
    # one representative per applicable layout
    out = []
    cands = [Fraction(N + 2, 2) if N > 2 else None, Fraction(2 * N, N + 1) + Fraction(1, 100),
             Fraction(2 * N, N + 2) + Fraction(1, 100), Fraction(1) + Fraction(1, 10)]
    for c in cands:
        if c is not None and 1 < c < N:
            out.append(c)
    return out


def cmd_atlas(args) -> int:
    try:
        N = int(args.N)
        ps = _p_values(args, N)
        atlases = [atlas(N, p) for p in ps]
        out = Path(args.out)
        _prepare_out(out, ["atlas.csv", "atlas.svg"], args.force)
    except (DomainError, ValueError, ZeroDivisionError) as exc:
        return _fail(str(exc))
    except UsageError as exc:
        return _fail(str(exc))
    (out / "atlas.csv").write_text(_csv_text(atlas_csv_rows(atlases)))
    (out / "atlas.svg").write_text(atlas_svg(atlases))
    print(f"wrote {out / 'atlas.csv'} and {out / 'atlas.svg'} ({len(atlases)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run


RUN_FILES = ["manifest.json", "timeseries.csv", "final_field.csv", "final_field.splb"]


def _seed_override(s: Scenario) -> Scenario:
    env = os.environ.get("SPLB_SEED")
    if env is None:
        return s
    try:
        s.seed = int(env)
    except ValueError:
        raise ScenarioError("SPLB_SEED", f"expected an integer, got {env!r}") from None
    return s


def execute(s: Scenario, out: Path) -> dict:
    """Run one scenario and write its artifacts to ``out``; returns the manifest."""
    res, probes = run_probes(s)
    traj = res.trajectory
    rep = s.report()
    manifest = {
        "name": s.name,
        "version": __version__,
        "scenario": s.to_dict(),
        "input_hash": s.content_hash(),
        "seed": s.seed,
        "status": traj.status,
        "reason": traj.reason,
        "steps": len(traj) - 1,
        "final_time": float(traj.times[-1]),
        "regime": None if rep is None else {
            "regime": rep.regime.value, "sigma": _json_num(rep.sigma), "beta": _json_num(rep.beta),
            "solution_notion": rep.solution_notion.value if rep.solution_notion else None,
        },
        "ledger": None if res.ledger is None else res.ledger.to_dict(),
        "probes": probes,
    }
    manifest = _clean(manifest)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "timeseries.csv").write_text(rows_to_csv(TIMESERIES_HEADER, timeseries_rows(res)))
    final = traj.final
    field_to_csv(final, out / "final_field.csv")
    (out / "final_field.splb").write_bytes(field_to_bytes(final))
    if probes:
        (out / "report.json").write_text(json.dumps(manifest["probes"], indent=2, sort_keys=True) + "\n")
        for name, rep in manifest["probes"].items():
            if isinstance(rep, dict) and rep.get("levels"):
                (out / f"{name}.csv").write_text(levels_to_csv(rep["levels"]))
    return manifest


def _load(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError("<file>", f"no such scenario file: {path}")
    doc = parse_document(path)
    return _seed_override(Scenario.from_dict(doc, base_dir=str(path.parent)))


def cmd_run(args) -> int:
    try:
        s = _load(args.scenario)
        out = Path(args.out)
        _prepare_out(out, RUN_FILES + ["report.json"], args.force)
    except (ScenarioError, DomainError, UsageError) as exc:
        return _fail(str(exc))
    try:
        manifest = execute(s, out)
    except SolverFailure as exc:
        return _fail(f"numerical failure: {exc}", EXIT_NUMERIC)
    except DomainError as exc:
        return _fail(str(exc))
    print(f"{s.name}: status={manifest['status']} steps={manifest['steps']} -> {out}")
    return EXIT_NUMERIC if manifest["status"] == "newton_failure" else EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def expand_study(doc: dict, base_dir: Path) -> list:
    """Scenarios of a study: a base scenario and a table of dotted keys to value lists."""
    if "base" not in doc:
        raise ScenarioError("base", "missing required table")
    base = doc["base"]
    if isinstance(base, dict) and set(base) == {"scenario"}:
        base = parse_document(base_dir / base["scenario"])
    if not isinstance(base, dict):
        raise ScenarioError("base", "expected a table or {scenario = path}")
    sweep = doc.get("sweep", {})
    if not isinstance(sweep, dict) or not sweep:
        raise ScenarioError("sweep", "expected a non-empty table of value lists")
    keys = sorted(sweep)
    for k in keys:
        if not isinstance(sweep[k], list) or not sweep[k]:
            raise ScenarioError(f"sweep.{k}", "expected a non-empty list")
    scenarios = []
    for i, combo in enumerate(itertools.product(*(sweep[k] for k in keys))):
        d = json.loads(json.dumps(base))
        for key, value in zip(keys, combo):
            tgt = d
            parts = key.split(".")
            for part in parts[:-1]:
                tgt = tgt.setdefault(part, {})
            tgt[parts[-1]] = value
        d["name"] = f"{base.get('name', 'run')}_{i:03d}"
        try:
            scenarios.append(Scenario.from_dict(d, base_dir=str(base_dir)))
        except ScenarioError as exc:
            raise ScenarioError(f"sweep[{i}].{exc.path}", str(exc).split(": ", 1)[-1]) from None
    return scenarios


def _sweep_worker(payload):
    d, base_dir, out = payload
    s = Scenario.from_dict(d, base_dir=base_dir)
    try:
        m = execute(s, Path(out))
        return s.name, m["status"], None
    except (SolverFailure, DomainError) as exc:
        return s.name, "error", str(exc)


def cmd_sweep(args) -> int:
    try:
        path = Path(args.study)
        if not path.exists():
            raise ScenarioError("<file>", f"no such study file: {path}")
        scenarios = [_seed_override(s) for s in expand_study(parse_document(path), path.parent)]
        out = Path(args.out)
        _prepare_out(out, [s.name for s in scenarios], args.force)
    except (ScenarioError, DomainError, UsageError) as exc:
        return _fail(str(exc))
    payloads = [(s.to_dict() | {"seed": s.seed}, s.base_dir, str(out / s.name)) for s in scenarios]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_worker, payloads))
    else:
        results = [_sweep_worker(pl) for pl in payloads]
    failed = False
    for name, status, err in sorted(results):
        print(f"{name}: {status}" + (f" ({err})" if err else ""))
        failed |= status in ("error", "newton_failure")
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------------------
# report

SUMMARY_COLUMNS = [
    "name", "regime", "N", "p", "q", "gamma", "status", "reason", "steps", "final_time",
    "sup_t_Lsigma", "grad_beta_energy", "grad_renorm_energy", "ledger_total", "input_hash",
]


def _summary_row(m: dict) -> list:
    sc = m.get("scenario", {})
    prob = sc.get("problem", {})
    led = m.get("ledger") or {}
    reg = (m.get("regime") or {}).get("regime", "")
    return [
        m.get("name", ""), reg, prob.get("N", ""), prob.get("p", ""), prob.get("q", ""), prob.get("gamma", ""),
        m.get("status", ""), m.get("reason", ""), m.get("steps", ""), m.get("final_time", ""),
        led.get("sup_t_Lsigma", ""), led.get("grad_beta_energy", ""), led.get("grad_renorm_energy", ""),
        led.get("total", ""), m.get("input_hash", "")[:16],
    ]


def cmd_report(args) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        return _fail(f"not a directory: {root}")
    manifests = sorted(root.rglob("manifest.json"))
    if not manifests:
        return _fail(f"no manifests found under {root}")
    try:
        _prepare_out(root, ["summary.csv", "summary.txt"], args.force)
    except UsageError as exc:
        return _fail(str(exc))
    rows = []
    for path in manifests:
        try:
            rows.append(_summary_row(json.loads(path.read_text())))
        except json.JSONDecodeError as exc:
            return _fail(f"{path}: {exc}")
    rows.sort(key=lambda r: str(r[0]))
    (root / "summary.csv").write_text(rows_to_csv(SUMMARY_COLUMNS, rows))
    show = ["name", "regime", "status", "steps", "ledger_total"]
    idx = [SUMMARY_COLUMNS.index(c) for c in show]
    table = [show] + [[_short(r[i]) for i in idx] for r in rows]
    widths = [max(len(str(row[j])) for row in table) for j in range(len(show))]
    text = "\n".join("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in table) + "\n"
    (root / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sglab", description="Parabolic p-Laplacian problems with gradient sources.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", help="regime and exponents of (N, p, q)")
    c.add_argument("-N", required=True, help="space dimension")
    c.add_argument("-p", required=True, help="operator growth, e.g. 2 or 9/5")
    c.add_argument("-q", required=True, help="gradient-source growth")
    c.add_argument("--m", help="forcing (or sublinear datum) integrability")
    c.add_argument("--r", help="forcing time integrability (default inf)")
    c.add_argument("--json", action="store_true", help="machine-readable output")
    c.set_defaults(func=cmd_classify)

    a = sub.add_parser("atlas", help="regime diagrams as SVG and CSV")
    a.add_argument("-N", required=True, type=int)
    a.add_argument("--p", action="append", help="p value (repeatable)")
    a.add_argument("--p-range", nargs=2, metavar=("LO", "HI"))
    a.add_argument("--samples", type=int, default=5)
    a.add_argument("--out", required=True)
    a.add_argument("--force", action="store_true")
    a.set_defaults(func=cmd_atlas)

    r = sub.add_parser("run", help="run one scenario file")
    r.add_argument("scenario")
    r.add_argument("--out", required=True)
    r.add_argument("--force", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter sweep")
    s.add_argument("study")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("report", help="summarize manifests under a directory")
    rp.add_argument("dir")
    rp.add_argument("--force", action="store_true")
    rp.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SolverFailure as exc:
        return _fail(f"numerical failure: {exc}", EXIT_NUMERIC)
    except FloatingPointError as exc:  # pragma: no cover - defensive
        return _fail(f"numerical failure: {exc}", EXIT_NUMERIC)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
