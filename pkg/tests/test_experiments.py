import json
import math
from pathlib import Path

import numpy as np
import pytest

from sglab.experiments import (
    ProbeReport,
    equi_integrability_stress,
    ledger_exponents,
    marcinkiewicz_verification,
    mms_study,
    observed_orders,
    regime_stability_study,
    run_scenario,
    sharpness_probe,
    sieta_slack,
    sublinear_suite,
    timeseries_rows,
)
from sglab.regime import DomainError
from sglab.scenario import Scenario, ScenarioError, compile_expression, load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def base(**over):
    d = {
        "name": "t",
        "problem": {"N": 3, "p": 2, "q": 1.5, "gamma": 1},
        "grid": {"mode": "radial", "cells": 32, "T": 0.02},
        "datum": {"kind": "bump", "radius": 0.4},
    }
    for k, v in over.items():
        d[k] = v
    return d


def test_declared_regime_mismatch_is_rejected():
    d = base(problem={"N": 2, "p": 1.7, "q": 1.0, "gamma": 1, "regime": "InfiniteEnergyOrange"},
             grid={"mode": "cartesian", "cells": 8})
    with pytest.raises(ScenarioError) as exc:
        Scenario.from_dict(d)
    assert exc.value.path == "problem.regime"
    assert "RenormalizedYellow" in str(exc.value)


@pytest.mark.parametrize(
    "patch, path",
    [
        ({"problem": {"N": 3, "p": 2, "q": 2.5}}, "problem.q"),
        ({"problem": {"N": 3, "p": 2, "q": 2}}, "problem.q"),
        ({"problem": {"N": 2, "p": 2.5, "q": 1}}, "problem.p"),
        ({"grid": {"mode": "cartesian", "cells": [8, 8]}}, "grid.cells"),
        ({"grid": {"mode": "polar", "cells": 8}}, "grid.mode"),
        ({"datum": {"kind": "gaussian"}}, "datum.kind"),
        ({"datum": {"kind": "expression", "expr": "__import__('os')"}}, "datum.expr"),
        ({"solver": {"dt_inti": 1e-3}}, "solver.dt_inti"),
        ({"solver": {"dt_init": 1.0, "dt_max": 0.1}}, "solver"),
        ({"probes": {"refinement_levels": 0}}, "probes.refinement_levels"),
        ({"coefficient": {"alpha": 1, "Lambda": 2}}, "coefficient"),
        ({"seed": "x"}, "seed"),
        ({"colour": "red"}, "<root>.colour"),
    ],
)
def test_schema_errors_name_the_key(patch, path):
    with pytest.raises(ScenarioError) as exc:
        Scenario.from_dict(base(**patch))
    assert exc.value.path == path


def test_pure_diffusion_skips_classification():
    s = Scenario.from_dict(base(problem={"N": 1, "p": 2, "q": 1, "gamma": 0},
                                grid={"mode": "cartesian", "cells": 16}))
    assert s.regime is None and s.report() is None


def test_expression_whitelist():
    f = compile_expression("sin(pi*x) * exp(-t)")
    assert math.isclose(f(x=0.5, t=0.0), 1.0)
    for bad in ("x.real", "open('f')", "[x]", "lambda: 1", "'a'"):
        with pytest.raises(ScenarioError):
            compile_expression(bad)


def test_round_trip_and_hash():
    s = Scenario.from_dict(base())
    again = Scenario.from_dict(s.to_dict())
    assert again.to_dict() == s.to_dict()
    assert again.content_hash() == s.content_hash()
    assert s.with_updates(**{"seed": 3}).content_hash() != s.content_hash()
    t = s.with_updates(**{"problem.q": 1.1})
    assert t.regime == "RenormalizedYellow"


def test_shipped_scenarios_parse():
    names = sorted(p.stem for p in SCENARIOS.glob("*.toml") if p.stem != "sweep_q")
    assert names
    for n in names:
        load_scenario(SCENARIOS / f"{n}.toml")


def test_normalized_datum():
    s = Scenario.from_dict(base(datum={"kind": "bump", "normalize": {"exponent": 3, "value": 2.0}}))
    g = s.make_grid()
    from sglab.field import lebesgue_norm

    assert math.isclose(lebesgue_norm(s.make_datum(g), 3), 2.0, rel_tol=1e-12)


def test_spike_forcing_keeps_lm_norm():
    from sglab.field import Field, lebesgue_norm

    s = Scenario.from_dict(base(grid={"mode": "radial", "cells": 512, "T": 0.02}))
    g = s.make_grid()
    norms = []
    for j in (1, 2, 4):
        t = s.with_updates(forcing={"kind": "spike", "j": j, "m": 1.5})
        norms.append(lebesgue_norm(Field(g, t.make_forcing(g)), 1.5))
    assert max(norms) / min(norms) < 1.02


def test_ledger_exponents():
    s = Scenario.from_dict(base())
    assert ledger_exponents(s) == pytest.approx((3.0, 1.5))
    sub = Scenario.from_dict(base(problem={"N": 2, "p": 1.5, "q": 0.7, "gamma": 1, "m": 1},
                                  grid={"mode": "radial", "cells": 16}))
    assert ledger_exponents(sub) == pytest.approx((1.0, 0.5 / 1.5))


def test_run_and_timeseries():
    res = run_scenario(Scenario.from_dict(base()))
    rows = timeseries_rows(res)
    assert len(rows) == len(res.trajectory)
    assert rows[0][0] == 0.0 and rows[-1][0] == pytest.approx(0.02)
    assert res.ledger.total > 0


def test_regime_stability_small():
    rep = regime_stability_study(Scenario.from_dict(base()), refinements=2)
    assert rep.verdict == "stable"
    assert rep.details["drift"] < 0.1
    with pytest.raises(DomainError):
        regime_stability_study(Scenario.from_dict(base(problem={"N": 3, "p": 2, "q": 1.1})))


def test_sharpness_guards():
    with pytest.raises(DomainError):
        sharpness_probe(3, 1.8, 1.3, 1.2)
    with pytest.raises(DomainError):
        sharpness_probe(3, 2, 1.5, 3.0)  # eta must be below sigma = 3
    with pytest.raises(DomainError):
        sharpness_probe(3, 2, 1.5, 2.4, refinements=2)
    assert sieta_slack(3, 2, 1.5, 2.4, 0.01) < 0


def test_sharpness_probe_small():
    rep = sharpness_probe(3, 2, 1.5, 2.4, cells=64)
    assert rep.label == "heuristic evidence only"
    assert rep.details["control_stable"]
    assert rep.verdict == "sharpness-consistent"


def test_marcinkiewicz_verification_small():
    s = load_scenario(SCENARIOS / "yellow_radial.toml").with_updates(**{"grid.cells": [32]})
    rep = marcinkiewicz_verification(s, refinements=2)
    for tag in ("lorentz_1", "lorentz_2"):
        assert 0 < rep.levels[-1][f"{tag}_ratio"] < math.inf
    with pytest.raises(DomainError):
        marcinkiewicz_verification(Scenario.from_dict(base()))


def test_mms_study_guard():
    with pytest.raises(DomainError):
        mms_study(Scenario.from_dict(base()))
    assert observed_orders([4.0, 1.0, 0.25]) == [2.0, 2.0]


def test_equi_integrability_spikes_grow():
    s = Scenario.from_dict(base(grid={"mode": "radial", "cells": 64, "T": 0.01}))
    rep = equi_integrability_stress(s, js=(1, 2, 4), control_scales=(1.0, 0.5))
    assert rep.verdict == "trend-only"
    assert rep.details["spike_growth"] > 1
    assert rep.details["control_trend"] == "growth"  # larger amplitude, larger ledger


def test_sublinear_suite_small():
    rep = sublinear_suite(2, 1.5, 1.0, 0.7, cells=32, T=0.02, refinements=1)
    assert rep.details["mu"] == pytest.approx(0.5 / 1.5)
    assert math.isfinite(rep.details["sublinear_slope"])
    with pytest.raises(DomainError):
        sublinear_suite(2, 1.5, 1.0, 1.0)


def test_probe_report_serialization():
    rep = ProbeReport("x", "k", [{"level": 0, "v": math.inf, "arr": [1]}], "ok", {"a": np.float64(1.5)})
    d = json.loads(rep.to_json())
    assert d["levels"][0]["v"] == "inf" and d["details"]["a"] == 1.5
    assert rep.to_csv().splitlines()[0] == "level,v"
