"""Canned experiments built on the solver: refinement studies and probes.

Every function here is a pure function of its scenario arguments; reports
serialize to JSON and CSV with a fixed key order so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .field import (
    EstimateLedger,
    Field,
    Grid,
    Trajectory,
    bochner_norm,
    cell_gradient_magnitude,
    gradient_power_integral,
    ledger,
    lebesgue_norm,
    marcinkiewicz_norm,
    space_time_gradient_power,
    space_time_weights,
    sphere_area,
)
from .regime import (
    DataSpaceSpec,
    DomainError,
    Regime,
    admissible_data,
    beta_exponent,
    critical_sigma,
    harnack_exponent,
    superlinear_threshold,
)
from .scenario import Scenario
from .solver import RHSSpec, comparison_run, solve, weak_residual

STABLE_DRIFT = 0.10
MARCINKIEWICZ_DRIFT = 0.20
GROWTH_FACTOR = 2.0


def relative_drift(a: float, b: float) -> float:
    """|b - a| / max(|a|, |b|); zero when both vanish."""
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(b - a) / scale


def ledger_exponents(s: Scenario) -> tuple:
    """(sigma, beta) used for the estimate ledger of a scenario.

    Red/Orange scenarios use the critical sigma; elsewhere the datum
    integrability m (default 1) plays its role with beta = (m + p - 2)/p.
    """
    if s.regime in (Regime.RED.value, Regime.ORANGE.value):
        sigma = float(critical_sigma(s.N, s.p, s.q))
        return sigma, float(beta_exponent(sigma, s.p))
    m = float(s.m) if s.m is not None else 1.0
    return m, (m + s.p - 2) / s.p


# ---------------------------------------------------------------------------
# single runs


@dataclass
class RunResult:
    scenario: Scenario
    grid: Grid
    trajectory: Trajectory
    ledger: Optional[EstimateLedger]
    extras: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return self.trajectory.status


def run_scenario(s: Scenario, data_scale: float = 1.0, with_ledger: bool = True) -> RunResult:
    grid = s.make_grid()
    u0 = s.make_datum(grid, data_scale)
    cfg = s.make_solver_config()
    op = s.make_operator(grid)
    rhs = s.make_rhs(grid, data_scale)
    schedule = None
    if s.fixed_dt is not None:
        k = max(1, int(round(grid.T / s.fixed_dt)))
        schedule = [grid.T / k] * k
    traj = solve(grid, u0, cfg, op, rhs, schedule=schedule)
    led = None
    if with_ledger:
        sigma, beta = ledger_exponents(s)
        marc = marcinkiewicz_pairs(s.N, s.p) if s.probes.get("marcinkiewicz") else ()
        led = ledger(traj, sigma, s.p, beta, marcinkiewicz=marc)
    return RunResult(s, grid, traj, led)


def timeseries_rows(result: RunResult) -> list:
    """Rows (t, dt, sup_norm, Lsigma_norm, grad_beta_energy_partial, newton_iters)."""
    traj = result.trajectory
    grid = result.grid
    sigma, beta = ledger_exponents(result.scenario)
    p = result.scenario.p
    rows = []
    acc = 0.0
    for k in range(len(traj)):
        v = traj.values[k]
        if k == 0:
            dt, iters = 0.0, 0
        else:
            dt = float(traj.times[k] - traj.times[k - 1])
            iters = traj.newton_iters[k - 1]
            acc += dt * gradient_power_integral(grid, (1 + np.abs(v)) ** beta - 1, p)
        rows.append([
            float(traj.times[k]), dt, float(np.max(np.abs(v))),
            lebesgue_norm(Field(grid, v), sigma), acc ** (1 / p), int(iters),
        ])
    return rows


TIMESERIES_HEADER = ["t", "dt", "sup_norm", "Lsigma_norm", "grad_beta_energy_partial", "newton_iters"]


def rows_to_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# reports


@dataclass
class ProbeReport:
    name: str
    kind: str
    levels: list
    verdict: str
    details: dict = field(default_factory=dict)
    label: str = ""

    def to_dict(self) -> dict:
        return _clean({
            "name": self.name, "kind": self.kind, "verdict": self.verdict,
            "label": self.label, "levels": self.levels, "details": self.details,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        return levels_to_csv(self.levels)


def levels_to_csv(levels: Sequence[dict]) -> str:
    """One row per refinement level; nested values are left out."""
    keys = sorted({k for lvl in levels for k in lvl if not isinstance(lvl[k], (list, dict))})
    rows = [[_clean(lvl.get(k, "")) for k in keys] for lvl in levels]
    return rows_to_csv(keys, rows)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _level_entry(level: int, res: RunResult) -> dict:
    led = res.ledger
    out = {
        "level": level, "cells": res.grid.cells[0], "status": res.status, "reason": res.trajectory.reason,
        "steps": len(res.trajectory) - 1,
    }
    if led is not None:
        out.update({
            "sup_t_Lsigma": led.sup_t_Lsigma, "grad_beta_energy": led.grad_beta_energy,
            "grad_renorm_energy": led.grad_renorm_energy, "ledger_total": led.total,
        })
    return out


# ---------------------------------------------------------------------------
# regime stability


def _forcing_space(s: Scenario) -> DataSpaceSpec:
    f = s.forcing
    m = float(f.get("m", math.inf))
    r = float(f.get("r", math.inf))
    return DataSpaceSpec(m=m if f["kind"] != "zero" else math.inf, r=r)


def regime_stability_study(s: Scenario, refinements: int = 3) -> ProbeReport:
    """Ledger of the estimate across grid refinements of a Red/Orange scenario."""
    if s.regime not in (Regime.RED.value, Regime.ORANGE.value):
        raise DomainError(f"stability study needs a Red or Orange scenario, got {s.regime}")
    if refinements < 2:
        raise DomainError("need at least two refinement levels")
    if s.forcing["kind"] != "zero" and not admissible_data(s.exponents, _forcing_space(s)):
        raise DomainError("forcing integrability violates the admissibility condition")
    levels = []
    blown = False
    for k in range(refinements):
        res = run_scenario(s.refined(k))
        levels.append(_level_entry(k, res))
        blown |= res.status != "completed"
    drift = relative_drift(levels[-2].get("ledger_total", 0.0), levels[-1].get("ledger_total", 0.0))
    if blown:
        verdict = "unstable"
    else:
        verdict = "stable" if drift < STABLE_DRIFT else "unstable"
    return ProbeReport(s.name, "regime_stability", levels, verdict, {"drift": drift, "tolerance": STABLE_DRIFT})


# ---------------------------------------------------------------------------
# sharpness of the critical exponent


def sieta_slack(N, p, q, eta, omega) -> float:
    """omega eta (eta + q - p + 1)/(p - q) - (sigma - eta); negative means the datum is supercritical."""
    sigma = float(critical_sigma(N, p, q))
    return omega * eta * (eta + q - p + 1) / (p - q) - (sigma - eta)


def harnack_diagnostic(traj: Trajectory, p: float, eta: float, omega: float, radii=None) -> dict:
    """Fit c in  int_{B_r} U(t) >= c t^(-N/lambda) r^(pN(eta-1)/(lambda eta) + p omega/lambda + N).

    Uses radial trajectories on pairs (t, r) with r at least four cells and
    t >= 4 r^2; the constant is fitted by least squares in log space and the
    smallest observed ratio is reported alongside.
    """
    grid = traj.grid
    if grid.mode != "radial":
        raise DomainError("the Harnack diagnostic needs a radial trajectory")
    N = grid.N
    lam = float(harnack_exponent(N, p))
    if lam <= 0:
        raise DomainError("Harnack exponent must be positive")
    expo = p * N * (eta - 1) / (lam * eta) + p * omega / lam + N
    h = grid.h[0]
    edges = np.arange(1, grid.cells[0] + 1) * h
    if radii is None:
        radii = [r for r in edges[3::4] if r <= 0.25 * grid.extent]
    cum = np.cumsum(traj.values[:, :] * grid.volumes[None, :], axis=1)
    logs, ratios = [], []
    for r in radii:
        i = int(round(r / h)) - 1
        for k in range(1, len(traj)):
            t = traj.times[k]
            if t < 4 * r * r:
                continue
            mass = cum[k, i]
            bound = t ** (-N / lam) * edges[i] ** expo
            if mass > 0:
                logs.append(math.log(mass / bound))
                ratios.append(mass / bound)
    if not logs:
        return {"c_fit": float("nan"), "min_ratio": float("nan"), "residual": float("nan"), "samples": 0, "lambda": lam}
    logs = np.array(logs)
    c = float(np.exp(logs.mean()))
    return {
        "c_fit": c, "min_ratio": float(min(ratios)), "residual": float(np.sqrt(np.mean((logs - logs.mean()) ** 2))),
        "samples": len(logs), "lambda": lam, "exponent": expo,
    }


def sharpness_scenario(N, p, q, eta, omega, cells=128, T=0.05, gamma=1.0, name=None, solver=None) -> Scenario:
    return Scenario.from_dict({
        "name": name or f"sharpness_eta{eta:.6g}",
        "problem": {"N": N, "p": p, "q": q, "gamma": gamma},
        "grid": {"mode": "radial", "cells": cells, "extent": 1.0, "T": T},
        "datum": {"kind": "power_law", "eta": eta, "omega": omega, "cutoff": 1.0},
        "solver": solver or {"dt_init": 1e-6, "dt_min": 1e-12, "dt_max": 2e-3},
    })


def sharpness_probe(
    N, p, q, eta, omega=0.01, refinements: int = 3, cells: int = 128, T: float = 0.05,
    gamma: float = 1.0, extrapolation: bool = False, solver: Optional[dict] = None,
) -> ProbeReport:
    """Compare a critical (eta = sigma) control run with a supercritical datum under refinement.

    The tracked quantity is the L^sigma part of the ledger, sup_t ||u(t)||_sigma^sigma;
    the gradient-energy part is reported too but, with omega small, it
    converges too slowly in the control run to serve as a verdict.

    The output is heuristic evidence only: growth of discrete quantities under
    refinement is consistent with, but cannot prove, nonexistence.
    """
    if refinements < 3:
        raise DomainError("the sharpness probe needs at least three refinement levels")
    if p < 2 and not extrapolation:
        raise DomainError("the probe is posed for p >= 2; pass extrapolation=True to run anyway")
    sigma = float(critical_sigma(N, p, q))
    if not (1 <= eta < sigma):
        raise DomainError(f"need 1 <= eta < sigma = {sigma:.6g}, got {eta}")
    slack = sieta_slack(N, p, q, eta, omega)

    def study(e, label):
        s = sharpness_scenario(N, p, q, e, omega, cells, T, gamma, f"{label}_eta{e:.6g}", solver)
        lv, harn = [], None
        for k in range(refinements):
            sk = s.refined(k)
            res = run_scenario(sk)
            entry = _level_entry(k, res)
            entry["sup_norm_t0"] = float(np.max(np.abs(res.trajectory.values[0])))
            entry["tracked"] = entry["sup_t_Lsigma"] ** sigma
            lv.append(entry)
        # source-free flow at the finest resolution
        sk = s.refined(refinements - 1)
        grid = sk.make_grid()
        free = solve(grid, sk.make_datum(grid), sk.make_solver_config(), sk.make_operator(grid), RHSSpec(0.0, q))
        harn = harnack_diagnostic(free, p, e, omega)
        return lv, harn

    control, h_control = study(sigma, "control")
    c_drift = relative_drift(control[-2]["tracked"], control[-1]["tracked"])
    control_ok = all(l["status"] == "completed" for l in control) and c_drift < STABLE_DRIFT
    details = {
        "sigma": sigma, "eta": eta, "omega": omega, "sieta_slack": slack,
        "control_drift": c_drift, "control_stable": control_ok, "harnack_control": h_control,
        "extrapolation": bool(p < 2),
    }
    levels = [{"run": "control", **l} for l in control]
    if not control_ok:
        # the supercritical verdict is only meaningful once the control has stabilized
        return ProbeReport(
            f"sharpness_N{N}_p{p:g}_q{q:g}", "sharpness", levels, "inconclusive", details,
            label="heuristic evidence only",
        )
    probe, h_probe = study(eta, "probe")
    levels += [{"run": "probe", **l} for l in probe]
    # a blow-up flag counts only if it persists under refinement
    blew = all(l["status"] == "blowup" for l in probe[-2:])
    growth = probe[-1]["tracked"] / probe[0]["tracked"]
    energy_growth = probe[-1]["grad_beta_energy"] / probe[0]["grad_beta_energy"]
    details.update({"probe_growth": growth, "probe_energy_growth": energy_growth,
                    "control_energy_drift": relative_drift(control[-2]["grad_beta_energy"], control[-1]["grad_beta_energy"]),
                    "probe_blowup": blew, "harnack_probe": h_probe})
    ok = blew or growth >= GROWTH_FACTOR
    verdict = "sharpness-consistent" if ok else "not-sharpness-consistent"
    if p < 2:
        verdict = "extrapolation (no verdict)"
    return ProbeReport(
        f"sharpness_N{N}_p{p:g}_q{q:g}", "sharpness", levels, verdict, details,
        label="heuristic evidence only",
    )


# ---------------------------------------------------------------------------
# Marcinkiewicz estimates for L^1 data


def marcinkiewicz_pairs(N: float, p: float) -> list:
    """(theta, gamma) for |grad u|^theta in M^gamma: the two weak-type gradient bounds."""
    return [((p * (N + 1) - N) / (N + 2), (N + 2) / (N + 1)), (p / 2, 1.0)]


def data_size_M(res: RunResult) -> float:
    """gamma ||grad u|^q||_{L^1(Q_T)} + ||f||_{L^1(Q_T)} + ||u0||_{L^1}."""
    traj, grid, s = res.trajectory, res.grid, res.scenario
    V = grid.volumes
    u0 = float(np.sum(V * np.abs(traj.values[0])))
    src = 0.0
    forc = 0.0
    rhs = s.make_rhs(grid)
    for k in range(1, len(traj)):
        dt = traj.times[k] - traj.times[k - 1]
        if s.gamma:
            src += dt * float(np.sum(V * cell_gradient_magnitude(grid, traj.values[k]) ** s.q))
        f = rhs.forcing_values(grid, traj.times[k])
        if f is not None:
            forc += dt * float(np.sum(V * np.abs(f)))
    return s.gamma * src + forc + u0


def marcinkiewicz_ratios(res: RunResult) -> dict:
    traj = res.trajectory
    M = data_size_M(res)
    weights = space_time_weights(traj)
    out = {"M": M}
    for tag, (theta, g) in zip(("lorentz_1", "lorentz_2"), marcinkiewicz_pairs(res.scenario.N, res.scenario.p)):
        norm = marcinkiewicz_norm(space_time_gradient_power(traj, theta), g, weights)
        out[f"{tag}_norm"] = norm
        out[f"{tag}_ratio"] = 0.0 if norm == 0 else (norm / M if M > 0 else math.inf)
    return out


def marcinkiewicz_verification(s: Scenario, refinements: int = 3) -> ProbeReport:
    """Ratios of the weak-type gradient norms to the data size M under refinement."""
    allowed = (Regime.YELLOW.value, Regime.SUBLINEAR.value)
    if s.regime not in allowed:
        raise DomainError(f"Marcinkiewicz verification needs L^1 data (Yellow or Sublinear), got {s.regime}")
    if s.regime == Regime.SUBLINEAR.value and s.m not in (None, 1, 1.0):
        raise DomainError("Sublinear scenarios must use m = 1 for this verification")
    levels = []
    for k in range(refinements):
        res = run_scenario(s.refined(k), with_ledger=False)
        entry = {"level": k, "cells": res.grid.cells[0], "status": res.status}
        entry.update(marcinkiewicz_ratios(res))
        levels.append(entry)
    drifts = {
        tag: relative_drift(levels[-2][f"{tag}_ratio"], levels[-1][f"{tag}_ratio"]) for tag in ("lorentz_1", "lorentz_2")
    }
    finite = all(math.isfinite(l[f"{t}_ratio"]) for l in levels for t in drifts)
    ok = finite and all(d < MARCINKIEWICZ_DRIFT for d in drifts.values()) and levels[-1]["status"] == "completed"
    return ProbeReport(s.name, "marcinkiewicz", levels, "verified" if ok else "not-verified",
                       {"drift": drifts, "tolerance": MARCINKIEWICZ_DRIFT})


# ---------------------------------------------------------------------------
# equi-integrability stress


def equi_integrability_stress(
    base: Scenario, js: Sequence[float] = (1, 2, 4, 8), m: Optional[float] = None,
    r: float = math.inf, control_scales: Sequence[float] = (1.0, 0.75, 0.5, 0.25),
    interior_m: Optional[float] = None,
) -> ProbeReport:
    """Ledger under concentrating forcings of constant L^m norm (trend report).

    Three families: spikes j^(N/m) bump(j x) at the critical m, a fixed bump
    with shrinking amplitude (control), and the same spikes at a larger m
    strictly inside the admissible region.
    """
    if base.regime != Regime.RED.value:
        raise DomainError("the stress test starts from a Red scenario")
    sigma = float(critical_sigma(base.N, base.p, base.q))
    if m is None:
        # critical m for the chosen r from the admissibility equality
        N, p = base.N, base.p
        rhs = N * (p - 1) + p * sigma - (0 if r == math.inf else (N * (p - 2) + p * sigma) / r)
        m = N * sigma / rhs
    levels = []

    def one(family, **forcing):
        s = base.with_updates(forcing=forcing)
        res = run_scenario(s)
        e = _level_entry(0, res)
        e["family"] = family
        e["param"] = forcing.get("j", forcing.get("amplitude"))
        e["m"] = forcing.get("m", "")
        levels.append(e)
        return e.get("ledger_total", math.nan)

    spikes = [one("spike", kind="spike", j=j, m=m, r=r) for j in js]
    control = [one("control", kind="bump", amplitude=c) for c in control_scales]
    interior = []
    if interior_m is not None:
        interior = [one("interior", kind="spike", j=j, m=interior_m, r=r) for j in js]

    def trend(vals):
        return "growth" if all(b >= a for a, b in zip(vals, vals[1:])) and vals[-1] > vals[0] else "bounded"

    details = {
        "critical_m": m, "r": r, "spike_trend": trend(spikes), "control_trend": trend(control[::-1]),
        "spike_growth": spikes[-1] / spikes[0] if spikes[0] else math.inf,
    }
    if interior:
        details["interior_growth"] = interior[-1] / interior[0] if interior[0] else math.inf
    return ProbeReport(base.name, "equi_integrability", levels, "trend-only", details)


# ---------------------------------------------------------------------------
# sublinear regime


def sublinear_suite(
    N: int, p: float, m: float, q: float, cells: int = 64, T: float = 0.05,
    scales: Sequence[float] = (1.0, 2.0, 4.0), baseline_q: Optional[float] = None,
    refinements: int = 2,
) -> ProbeReport:
    """mu-ledger, Marcinkiewicz ratio and a data-doubling sweep in the sublinear regime."""
    if not (1 < p < 2):
        raise DomainError("the sublinear suite needs 1 < p < 2")
    if not (0 < q <= p / 2):
        raise DomainError(f"not sublinear: q={q} > p/2={p / 2}")
    base = {
        "name": f"sublinear_N{N}_p{p:g}_q{q:g}_m{m:g}",
        "problem": {"N": N, "p": p, "q": q, "gamma": 1.0, "m": m},
        "grid": {"mode": "radial", "cells": cells, "extent": 1.0, "T": T},
        "datum": {"kind": "bump", "amplitude": 1.0, "radius": 0.3},
        "forcing": {"kind": "bump", "amplitude": 0.5, "radius": 0.3},
        "solver": {"dt_init": 1e-4, "dt_max": 2e-3},
    }
    s = Scenario.from_dict(base)
    levels = []
    for k in range(refinements):
        res = run_scenario(s.refined(k))
        e = _level_entry(k, res)
        e["family"] = "refinement"
        e.update(marcinkiewicz_ratios(res))
        levels.append(e)

    def slope(scn):
        vals = []
        for c in scales:
            res = run_scenario(scn, data_scale=c)
            vals.append(res.ledger.total)
            levels.append({"family": f"scaling_{scn.name}", "scale": c, "ledger_total": res.ledger.total,
                           "status": res.status})
        x, y = np.log(scales), np.log(vals)
        return float(np.polyfit(x, y, 1)[0])

    sub_slope = slope(s)
    details = {"mu": (m + p - 2) / p, "sublinear_slope": sub_slope}
    if baseline_q is None:
        thr = float(superlinear_threshold(N, p))
        baseline_q = 0.5 * (thr + p - N / (N + 2)) if p > 2 * N / (N + 2) else 0.5 * (p / 2 + p)
    try:
        sup = Scenario.from_dict({**base, "name": "superlinear_baseline",
                                  "problem": {"N": N, "p": p, "q": baseline_q, "gamma": 1.0}})
        details["baseline_q"] = baseline_q
        details["superlinear_slope"] = slope(sup)
        details["sub_multiplicative"] = sub_slope < details["superlinear_slope"]
    except DomainError as exc:
        details["baseline_error"] = str(exc)
    return ProbeReport(base["name"], "sublinear", levels, "trend-only", details)


# ---------------------------------------------------------------------------
# heat manufactured solution


def heat_mms_errors(res: RunResult) -> dict:
    """Errors of a p = 2, gamma = 0 sine-datum run against the exact solutions.

    ``error_continuum`` compares with exp(-d pi^2 t / L^2) sin...; the
    ``error_time_discrete`` reference keeps the backward-Euler amplification
    factor, isolating the spatial error.
    """
    traj, grid = res.trajectory, res.grid
    s = res.scenario
    amp = float(s.datum.get("amplitude", 1.0))
    lam = grid.ndim * (math.pi / grid.extent) ** 2
    shape = amp * np.prod([np.sin(math.pi * c / grid.extent) for c in grid.coords], axis=0).ravel()
    T = traj.times[-1]
    exact = math.exp(-lam * T) * shape
    factor = float(np.prod(1.0 / (1.0 + lam * np.asarray(traj.step_sizes))))
    return {
        "error_continuum": float(np.max(np.abs(traj.values[-1] - exact))),
        "error_time_discrete": float(np.max(np.abs(traj.values[-1] - factor * shape))),
    }


def observed_orders(errors: Sequence[float], ratio: float = 2.0) -> list:
    return [math.log(a / b) / math.log(ratio) for a, b in zip(errors, errors[1:])]


def is_heat_mms(s: Scenario) -> bool:
    return (s.p == 2 and s.gamma == 0 and s.forcing["kind"] == "zero" and s.datum["kind"] == "sine"
            and s.grid["mode"] == "cartesian")


def mms_study(s: Scenario, refinements: int = 3) -> ProbeReport:
    if not is_heat_mms(s):
        raise DomainError("the manufactured-solution study needs p = 2, gamma = 0, f = 0 and a sine datum")
    levels = []
    for k in range(refinements):
        res = run_scenario(s.refined(k), with_ledger=False)
        levels.append({"level": k, "cells": res.grid.cells[0], "status": res.status, **heat_mms_errors(res)})
    orders = observed_orders([l["error_time_discrete"] for l in levels])
    # temporal refinement on the finest mesh: dt, dt/2, dt/4 ending at the base step
    finest = s.refined(refinements - 1)
    base_dt = finest.fixed_dt or float(finest.solver.get("dt_init", 1e-3))
    t_errors = []
    for k in range(refinements):
        dt = base_dt * 2 ** (refinements - 1 - k)
        res = run_scenario(finest.with_updates(**{"solver.fixed_dt": dt}), with_ledger=False)
        t_errors.append(heat_mms_errors(res)["error_continuum"])
    t_orders = observed_orders(t_errors)
    ok = min(orders) >= 1.8 and min(t_orders) >= 0.8
    return ProbeReport(s.name, "mms", levels, "ok" if ok else "low-order",
                       {"observed_order": min(orders), "orders": orders,
                        "temporal_order": min(t_orders), "temporal_orders": t_orders,
                        "temporal_errors": t_errors, "final_error": levels[-1]["error_continuum"]})


# ---------------------------------------------------------------------------
# probes attached to a single scenario run


def run_probes(s: Scenario) -> tuple:
    """Run a scenario plus the probes it requests; returns (RunResult, probe dict)."""
    res = run_scenario(s)
    probes = {}
    req = s.probes
    if req.get("comparison") and s.gamma >= 0:
        grid = res.grid
        comp = comparison_run(grid, s.make_datum(grid), s.make_solver_config(), s.make_operator(grid), s.make_rhs(grid))
        probes["comparison"] = {"min_gap": comp.min_gap, "u_status": comp.u.status, "U_status": comp.U.status}
    if req.get("weak_residual") and res.status == "completed":
        grid = res.grid
        wr = weak_residual(res.trajectory, s.make_operator(grid), s.make_rhs(grid), s.make_solver_config())
        probes["weak_residual"] = {"value": wr.value, "per_test": wr.per_test}
    if req.get("marcinkiewicz"):
        probes["marcinkiewicz"] = marcinkiewicz_ratios(res)
    if req.get("mms") or (is_heat_mms(s) and req.get("refinement_levels", 1) > 1):
        probes["mms"] = mms_study(s, max(3, req.get("refinement_levels", 3))).to_dict()
        probes["observed_order"] = probes["mms"]["details"]["observed_order"]
    elif req.get("refinement_levels", 1) > 1 and s.regime in (Regime.RED.value, Regime.ORANGE.value):
        probes["regime_stability"] = regime_stability_study(s, req["refinement_levels"]).to_dict()
    return res, probes
