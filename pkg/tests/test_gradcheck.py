"""The finite-difference harness itself."""

import numpy as np

from lipembed.gradcheck import grad_check, relu_kink_mask


def test_linear_map_exact_to_roundoff():
    # quadratic in the parameters: central differences are exact up to roundoff
    rng = np.random.default_rng(0)
    x = rng.standard_normal(6)
    w = rng.standard_normal((6, 4))
    proj = rng.standard_normal(4)
    params = {"w": w}

    def f():
        return float((x @ params["w"]) @ proj)

    analytic = {"w": np.outer(x, proj)}
    report = grad_check(f, params, analytic, tolerance=1e-8)
    assert report.passed
    assert report.max_rel_error < 1e-8


def test_relu_at_kink_flagged_then_excluded():
    params = {"x": np.array([-1.0, 0.0, 2.0])}

    def f():
        return float(np.maximum(params["x"], 0.0).sum())

    # subgradient-at-0 convention: analytic gradient 0 there
    analytic = {"x": np.array([0.0, 0.0, 1.0])}

    report = grad_check(f, params, analytic, tolerance=1e-6)
    assert not report.passed  # the kink element shows up as a failure
    assert report.failures()[0].worst_index == (1,)

    mask = relu_kink_mask(params["x"])
    report2 = grad_check(f, params, analytic, tolerance=1e-6, exclude={"x": mask})
    assert report2.passed
    assert report2.params[0].excluded == 1


def test_report_lists_every_parameter_once():
    params = {"a": np.ones(2), "b": np.ones(3), "c": np.ones(1)}

    def f():
        return float(sum((params[k] ** 2).sum() for k in params))

    analytic = {k: 2.0 * params[k] for k in params}
    report = grad_check(f, params, analytic)
    assert sorted(p.name for p in report.params) == ["a", "b", "c"]
    assert report.passed
    table = report.format_table()
    for name in ("a", "b", "c"):
        assert f"\n{name} " in table or table.startswith(f"{name} ")


def test_tight_tolerance_reports_failure_without_raising():
    params = {"x": np.array([0.5])}

    def f():
        return float(np.sin(params["x"]).sum())

    analytic = {"x": np.cos(params["x"])}
    report = grad_check(f, params, analytic, tolerance=1e-15)
    assert not report.passed  # finite differences cannot hit 1e-15
    assert len(report.failures()) == 1
