import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nextsca.metrics import (
    CSV_HEADER,
    MetricRow,
    RunTrace,
    disagreement,
    metric_row,
    nmse,
    read_trace_csv,
    stationarity_gap,
    tracking_error,
)
from nextsca.problem import Box, DistributedProblem, QuadraticCost

states = arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 4)), elements=st.floats(-100, 100))


def test_disagreement_by_hand():
    X = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert disagreement(X) == 1.0


@settings(max_examples=100, deadline=None)
@given(states, arrays(float, 4, elements=st.floats(-100, 100)))
def test_disagreement_ignores_common_shifts(X, shift):
    shift = shift[: X.shape[1]]
    assert disagreement(X + shift) == pytest.approx(disagreement(X), rel=1e-9, abs=1e-9)
    # the mean of equal floats can be one ulp off, hence the tiny slack
    consensus = np.tile(X[0], (X.shape[0], 1))
    assert disagreement(consensus) <= 1e-28 * (1.0 + np.max(X[0] ** 2))


def test_nmse():
    assert nmse([1.0, 1.0], [1.0, 0.0]) == 1.0
    assert nmse([2.0, 0.0], [2.0, 0.0]) == 0.0
    with pytest.raises(ValueError, match="zero truth"):
        nmse([1.0], [0.0])


def small_problem():
    costs = [QuadraticCost(np.eye(2), [-2.0, 0.0]), QuadraticCost(np.eye(2), [0.0, 0.0])]
    return DistributedProblem(costs, feasible=Box(0.0, 0.5, dim=2), truth=[0.5, 0.0])


def test_stationarity_gap_uses_the_infinity_norm():
    problem = small_problem()
    # grad F(0) = (-2, 0); prox step lands on (0.5, 0)
    assert stationarity_gap(problem, np.zeros(2)) == 0.5
    assert stationarity_gap(problem, np.array([0.5, 0.0])) == 0.0


def test_tracking_error_is_zero_for_exact_trackers():
    problem = small_problem()
    X = np.array([[0.1, 0.2], [0.3, 0.4]])
    Y = np.stack([sum(c.gradient(x) for c in problem.costs) / 2 for x in X])
    assert tracking_error(problem, X, Y) == 0.0
    assert tracking_error(problem, X, Y + [[0.0, 1.0], [0.0, 0.0]]) == 1.0


def test_metric_row_fields():
    problem = small_problem()
    X = np.array([[0.5, 0.0], [0.5, 0.0]])
    row = metric_row(problem, X, n=3, comm=6)
    assert (row.J, row.D, row.NMSE) == (0.0, 0.0, 0.0)
    assert row.track_err is None
    assert row.csv_fields()[-1] == "NA"
    assert row.U == pytest.approx(problem.value(np.array([0.5, 0.0])))


def test_trace_csv_round_trip_is_exact():
    trace = RunTrace([MetricRow(0, 0, 0.1, 1 / 3, None, np.pi, 1e-300),
                      MetricRow(1, 2, 2 / 3, 0.0, 0.25, -1.5, None)])
    buf = io.StringIO()
    trace.to_csv(buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert "NA" in text
    back = read_trace_csv(io.StringIO(text))
    assert back.rows == trace.rows


def test_trace_rejects_decreasing_communication_and_bad_headers():
    trace = RunTrace([MetricRow(1, 4, 1.0, 0.0)])
    with pytest.raises(ValueError, match="nondecreasing"):
        trace.append(MetricRow(2, 2, 1.0, 0.0))
    with pytest.raises(ValueError, match="header"):
        read_trace_csv(io.StringIO("a,b\n"))
    with pytest.raises(KeyError):
        trace.column("colour")


def test_first_reaching():
    trace = RunTrace([MetricRow(n, 2 * n, 10.0 ** -n, 0.0) for n in range(5)])
    assert trace.first_reaching(1e-2).comm == 4
    assert trace.first_reaching(1e-9) is None
    np.testing.assert_allclose(trace.column("J"), 10.0 ** -np.arange(5))
