from __future__ import annotations

import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hdmix.contact import demo_model
from hdmix.errors import ValidationError
from hdmix.history import TimeGrid
from hdmix.optimize import (
    NAMES,
    TRACE_COLUMNS,
    CostSpec,
    ParameterBox,
    ParameterPoint,
    Template,
    evaluate_cost,
    grid_scan,
    minimize,
    scan_resolution_for,
)

LO = ParameterPoint(0.5, 0.25, 0.5, 0.5, 0.5, 0.05)
HI = ParameterPoint(2.0, 1.0, 2.0, 2.0, 2.0, 0.2)
BOX = ParameterBox(LO, HI)
TARGET = ParameterPoint(1.0, 0.5, 1.0, 1.0, 1.0, 0.1)


@pytest.fixture(scope="module")
def small():
    template = Template(demo_model(3), TimeGrid.from_horizon(1.0, 4))
    _, u0, lam0 = template.solve_at(TARGET, 1.0)
    return template, u0, lam0


def test_box_validation_lists_every_problem():
    with pytest.raises(ValidationError) as info:
        ParameterBox(ParameterPoint(3.0, 0.0, 1, 1, 1, 0.1), ParameterPoint(2.0, 1, 2, 2, 2, 0.2))
    msg = str(info.value)
    assert "beta: empty interval" in msg and "eta: lower bound" in msg
    with pytest.raises(ValidationError):
        ParameterBox(LO, HI, floor=0.0)


@given(arrays(float, 6, elements=st.floats(0, 1)))
def test_unit_coordinates_round_trip(z):
    x = BOX.from_unit(z)
    assert BOX.contains(ParameterPoint.from_array(x))
    np.testing.assert_allclose(BOX.to_unit(x), z, atol=1e-12)


def test_from_unit_clips_to_box():
    x = BOX.from_unit(np.array([-1.0, 2.0, 0.5, 0.5, 0.5, 0.5]))
    assert x[0] == LO.beta and x[1] == HI.eta


def test_point_array_round_trip():
    p = ParameterPoint.from_array(np.arange(1.0, 7.0))
    assert p.as_array().tolist() == [1, 2, 3, 4, 5, 6]
    with pytest.raises(ValueError):
        ParameterPoint.from_array(np.ones(5))


def test_scan_resolution_uses_at_most_half_the_budget():
    assert scan_resolution_for(300) == 2
    assert scan_resolution_for(10_000) == 4
    assert scan_resolution_for(100) == 0
    for budget in (128, 1458, 8192):
        r = scan_resolution_for(budget)
        assert r**6 <= budget // 2


def test_cost_spec_validation(small):
    template, u0, _ = small
    with pytest.raises(ValidationError):
        CostSpec("l1", 1.0)
    with pytest.raises(ValidationError):
        CostSpec("tracking", 1.0, c1=-1.0)
    with pytest.raises(ValidationError):
        evaluate_cost(TARGET, CostSpec("tracking", 1.0, u0=u0[:-1]), template)


def test_costs_vanish_at_target(small):
    template, u0, lam0 = small
    assert evaluate_cost(TARGET, CostSpec("tracking", 1.0, u0=u0, lam0=lam0), template) == pytest.approx(0.0, abs=1e-20)
    assert evaluate_cost(TARGET, CostSpec("misfit", 1.0, u0=u0), template) == pytest.approx(0.0, abs=1e-20)
    off = ParameterPoint(1.2, 0.5, 1.0, 1.0, 1.0, 0.1)
    assert evaluate_cost(off, CostSpec("tracking", 1.0, u0=u0, lam0=lam0), template) > 0


def test_parameter_penalty_needs_no_forward_solve():
    broken = Template(demo_model(2), TimeGrid.from_horizon(1.0, 2), max_iter=1)
    spec = CostSpec("tracking", 1.0, c1=0.0, c2=0.0, c3=2.0, p_weights=np.arange(6.0))
    expected = 2.0 * np.sum(np.arange(6.0) * TARGET.as_array() ** 2)
    assert evaluate_cost(TARGET, spec, broken) == pytest.approx(expected)


def test_grid_scan_is_cell_centered_and_ordered():
    spec = CostSpec("tracking", 1.0, c1=0.0, c2=0.0, c3=1.0)
    table = grid_scan(spec, BOX, Template(demo_model(2), TimeGrid(1.0, 1)), resolution=2)
    assert len(table.rows) == 64
    first, last = table.rows[0].point.as_array(), table.rows[-1].point.as_array()
    np.testing.assert_allclose(first, BOX.lower + 0.25 * BOX.width)
    np.testing.assert_allclose(last, BOX.lower + 0.75 * BOX.width)
    assert table.rows[1].point.g > table.rows[0].point.g
    assert table.best().eval_id == 0
    with pytest.raises(ValueError):
        grid_scan(spec, BOX, Template(demo_model(2), TimeGrid(1.0, 1)), resolution=9)


def test_minimize_finds_lower_corner_for_pure_penalty():
    spec = CostSpec("tracking", 1.0, c1=0.0, c2=0.0, c3=1.0)
    res = minimize(spec, BOX, Template(demo_model(2), TimeGrid(1.0, 1)), budget=300)
    corner = float(np.sum(BOX.lower**2))
    assert res.evaluations <= 300
    assert BOX.contains(res.point)
    assert np.abs(BOX.to_unit(res.point.as_array())).max() <= 0.05
    assert res.cost <= 1.01 * corner


def test_budget_is_respected_and_trace_is_monotone(small):
    template, u0, lam0 = small
    spec = CostSpec("tracking", 1.0, u0=u0, lam0=lam0)
    res = minimize(spec, BOX, template, budget=25)
    assert res.evaluations == 25 and res.scan_resolution == 0 and not res.converged
    assert np.all(np.diff(res.best_so_far()) <= 0)
    assert res.trace[0].phase == "start"
    np.testing.assert_allclose(res.trace[0].point.as_array(), BOX.lower + 0.5 * BOX.width)


def test_failed_forward_solves_are_recorded():
    broken = Template(demo_model(2), TimeGrid.from_horizon(1.0, 2), max_iter=1, tol=1e-14)
    spec = CostSpec("tracking", 1.0)
    res = minimize(spec, BOX, broken, budget=5)
    assert all(math.isinf(e.cost) and "SolverError" in e.incident for e in res.trace)


def test_trace_csv_columns(small):
    template, u0, lam0 = small
    res = minimize(CostSpec("tracking", 1.0, u0=u0, lam0=lam0), BOX, template, budget=3)
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert tuple(rows[0]) == TRACE_COLUMNS and len(rows) == 4
    assert rows[0][1:7] == list(NAMES)

