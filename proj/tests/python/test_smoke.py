import json
import math

import pytest

import mbsde


def small(scenario, **extra):
    cfg = {"problem": scenario, "grid": {"N": 16}, "ensemble": {"M": 2000, "seed": 3}}
    cfg.update(extra)
    return cfg


def test_scenarios_listed():
    names = {s["name"] for s in mbsde.scenarios()}
    assert {"zero-driver", "scalar-quadratic", "damped-heat"} <= names


def test_normalize_fills_defaults():
    cfg = mbsde.normalize_config({"problem": "sine-terminal"})
    assert cfg["grid"]["N"] == 32
    assert cfg["route"] == "auto"


def test_unknown_field_raises():
    with pytest.raises(mbsde.ConfigError, match="grid.steps"):
        mbsde.run({"problem": "zero-driver", "grid": {"steps": 4}})


def test_zero_driver_y0():
    r = mbsde.run(small("zero-driver"))
    assert r["exit_code"] == mbsde.EXIT_OK
    y0 = [c["value"] for c in r["summary"]["y0"]]
    se = [c["se"] for c in r["summary"]["y0"]]
    assert abs(y0[0]) <= 4 * se[0]
    assert abs(y0[1] - math.exp(-0.5)) <= 4 * se[1]


def test_verify_and_artifacts(tmp_path):
    r = mbsde.verify(small("scalar-quadratic"), out=str(tmp_path))
    assert r["exit_code"] == mbsde.EXIT_OK, r["message"]
    names = {c["name"] for c in r["checks"]}
    assert "backend_agreement" in names
    assert json.loads((tmp_path / "summary.json").read_text())["route"] == "project"
    assert (tmp_path / "knots.csv").read_text().startswith("t,mean_Y")


def test_route_mismatch_exit_code():
    r = mbsde.run(small("scalar-quadratic", route="picard"))
    assert r["exit_code"] == mbsde.EXIT_CONFIG


def test_deterministic():
    a = mbsde.run(small("damped-heat"))
    b = mbsde.run(small("damped-heat"))
    assert a == b


def test_sweep_over_n():
    s = mbsde.sweep(small("zero-driver"), "N", [8, 16, 32])
    assert s["residual_mean_sq"][0] > s["residual_mean_sq"][-1]
    assert s["residual_slope"] > 0.5
