"""Smoke test for the pyldte extension. Run after `pip install --no-build-isolation crates/python`."""

import json
import math
from pathlib import Path

import pyldte

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "core" / "tests" / "fixtures"


def close(a, b, tol=1e-12):
    return len(a) == len(b) and all(math.isclose(x, y, rel_tol=0, abs_tol=tol) for x, y in zip(a, b))


def check_golden():
    expected = json.loads((FIXTURES / "golden_six_rows_zero.json").read_text())
    sample = pyldte.Sample.from_csv(str(FIXTURES / "six_rows.csv"), "y", "d", "z", "stratum")
    assert len(sample) == 6 and sample.n_strata == 2
    out = pyldte.estimate(sample, thresholds=expected["thresholds"], learner="zero", seed=1)
    assert close(out["beta"], expected["beta"]), out["beta"]
    assert close(out["se"], expected["se"]), out["se"]
    assert close(out["ci_lower"], expected["lower"]) and close(out["ci_upper"], expected["upper"])
    assert math.isclose(out["first_stage"], expected["first_stage"], abs_tol=1e-12)
    print("golden six-row estimate: ok")


def check_columns_constructor():
    sample = pyldte.Sample(
        [2.0, 5.0, 1.0, 3.0, 4.0, 0.5], [1, 0, 0, 1, 1, 0], [1, 1, 0, 1, 0, 0], ["a", "a", "a", "b", "b", "b"]
    )
    out = pyldte.estimate(sample, thresholds=[2.0, 4.0], learner="zero")
    assert close(out["beta"], [-1.0, -0.5])
    try:
        pyldte.Sample([1.0], [2], [0], ["a"])
    except pyldte.LdteError as e:
        assert isinstance(e, ValueError)
    else:
        raise AssertionError("invalid treatment value was accepted")
    print("column constructor and error mapping: ok")


def check_assign():
    strata = ["s1"] * 8 + ["s2"] * 8
    z = pyldte.assign(strata, scheme="block", block_size=4, seed=7)
    assert z == pyldte.assign(strata, scheme="block", block_size=4, seed=7)
    assert sum(z[:8]) == 4 and sum(z[8:]) == 4
    print("stratified block assignment: ok")


def check_generate_and_estimate():
    g = pyldte.generate(2000, seed=3)
    sample = g["sample"]
    assert len(sample) == 2000 and sample.covariate_dim == 20
    assert all(abs((b - a) - 1.0) < 1e-12 for a, b in zip(g["y0"], g["y1"]))
    out = pyldte.estimate(sample, quantiles=5, learner="gbt", folds=2, seed=3)
    assert len(out["beta"]) == 5 and all(lo <= b <= hi for lo, b, hi in zip(out["ci_lower"], out["beta"], out["ci_upper"]))
    print(f"generated sample, boosted estimate: ok (first stage {out['first_stage']:.3f})")


def check_simulate():
    report = pyldte.simulate(300, 4, seed=11, levels=[0.25, 0.5, 0.75], estimators=["unadjusted", "linear"], n_ref=20000)
    assert [e["name"] for e in report["estimators"]] == ["unadjusted", "linear"]
    assert all(len(e["rmse"]) == 3 for e in report["estimators"])
    print("monte carlo: ok")


if __name__ == "__main__":
    check_golden()
    check_columns_constructor()
    check_assign()
    check_generate_and_estimate()
    check_simulate()
    print("all smoke checks passed")
