import numpy as np
import pytest

from flexihaz.data import (SurvivalData, SurvivalRecord, TimeGrid, build_grid, expand, load_csv,
                           write_csv)
from flexihaz.errors import ConfigurationError, IngestionError


def one_subject(t, e, x=0.0, z=0.0):
    return SurvivalData(np.array([t]), np.array([e]), np.array([[x]]), np.array([[z]]))


def write(tmp_path, text):
    path = tmp_path / "d.csv"
    path.write_text(text)
    return path


def test_load_csv_single_row(tmp_path):
    data = load_csv(write(tmp_path, "time,event,x1,z1\n1.5,1,0.2,-0.3\n"))
    assert (data.n, data.d, data.p) == (1, 1, 1)
    rec = data[0]
    assert isinstance(rec, SurvivalRecord)
    assert rec.time == 1.5 and rec.event == 1
    assert rec.x.tolist() == [0.2] and rec.z.tolist() == [-0.3]


def test_load_csv_column_order_and_counts(tmp_path):
    data = load_csv(write(tmp_path, "z2,x1,time,z1,event,x2\n5,1,2,4,0,3\n6,7,8,9,1,10\n"))
    assert data.x.tolist() == [[1, 3], [7, 10]]
    assert data.z.tolist() == [[4, 5], [9, 6]]
    assert data.time.tolist() == [2, 8]


@pytest.mark.parametrize("body, message", [
    ("time,event,x1,z1\n1.5,2,0.2,-0.3\n", "row 2"),
    ("time,event,x1,z1\n1.5,1,0.2,-0.3\n-1,0,0,0\n", "row 3"),
    ("time,event,x1,z1\n1.5,1,abc,-0.3\n", "row 2"),
    ("time,event,x1,z1\n", "no records"),
    ("time,x1,z1\n1,2,3\n", "event"),
    ("time,event,x1\n1,1,3\n", "z column"),
])
def test_load_csv_errors(tmp_path, body, message):
    with pytest.raises(IngestionError, match=message):
        load_csv(write(tmp_path, body))


def test_load_csv_tau_check(tmp_path):
    with pytest.raises(IngestionError, match="exceeds tau"):
        load_csv(write(tmp_path, "time,event,x1,z1\n31,1,0,0\n"), tau=30)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = SurvivalData(rng.exponential(size=20), rng.integers(0, 2, 20),
                        rng.normal(size=(20, 3)), rng.normal(size=(20, 2)))
    write_csv(data, tmp_path / "rt.csv")
    back = load_csv(tmp_path / "rt.csv")
    for name in ("time", "event", "x", "z"):
        assert np.array_equal(getattr(back, name), getattr(data, name))


def test_build_grid_union():
    data = SurvivalData([3.0, 7.0], [1, 0], np.zeros((2, 1)), np.zeros((2, 1)))
    assert build_grid(data, 2, 10.0).breakpoints.tolist() == [0, 3, 5, 7, 10]


def test_build_grid_dedup_and_minimal():
    data = SurvivalData([5.0, 5.0, 2.0], [1, 1, 0], np.zeros((3, 1)), np.zeros((3, 1)))
    assert build_grid(data, 2, 10.0).breakpoints.tolist() == [0, 2, 5, 10]
    assert build_grid(data, 1, 10.0).breakpoints.tolist() == [0, 2, 5, 10]


def test_build_grid_errors():
    data = one_subject(1.0, 1)
    with pytest.raises(ConfigurationError):
        build_grid(data, 4, 0.0)
    with pytest.raises(ConfigurationError):
        build_grid(data, 0, 2.0)
    with pytest.raises(ConfigurationError):
        build_grid(data, 4, 0.5)


def test_time_grid_invariants():
    with pytest.raises(ConfigurationError):
        TimeGrid(np.array([0.0, 1.0, 1.0]))
    with pytest.raises(ConfigurationError):
        TimeGrid(np.array([0.1, 1.0]))


GRID = TimeGrid(np.array([0.0, 0.5, 1.0]))


def test_expand_event_at_grid_point():
    rows = expand(one_subject(1.0, 1), GRID)
    assert rows.j.tolist() == [1, 2]
    assert rows.exposure.tolist() == [0.5, 0.5]
    assert rows.delta.tolist() == [0, 1]
    assert rows.eval_time.tolist() == [0.5, 1.0]


def test_expand_censored_inside_interval():
    rows = expand(one_subject(0.3, 0), GRID)
    assert rows.j.tolist() == [1]
    assert rows.exposure.tolist() == [0.3]
    assert rows.delta.tolist() == [0]


def test_expand_zero_time_subject():
    assert len(expand(one_subject(0.0, 0), GRID)) == 0


def test_expand_rejects_time_beyond_tau():
    with pytest.raises(ConfigurationError):
        expand(one_subject(1.5, 1), GRID)


def test_expand_table_export(tmp_path):
    rows = expand(one_subject(1.0, 1), GRID)
    rows.to_csv(tmp_path / "rows.csv")
    lines = (tmp_path / "rows.csv").read_text().splitlines()
    assert lines[0] == "subject,j,eval_time,exposure,delta"
    assert lines[2] == "0,2,1.0,0.5,1"


def test_expand_properties_random():
    rng = np.random.default_rng(11)
    tau = 10.0
    n = 300
    data = SurvivalData(np.minimum(rng.exponential(4.0, n), tau), rng.integers(0, 2, n),
                        rng.normal(size=(n, 2)), rng.normal(size=(n, 1)))
    for _ in range(5):
        extra = np.sort(rng.uniform(0, tau, rng.integers(1, 30)))
        grid = TimeGrid(np.unique(np.concatenate([[0.0, tau], extra])))
        rows = expand(data, grid)
        total = np.bincount(rows.subject, weights=rows.exposure, minlength=n)
        np.testing.assert_allclose(total, data.time, rtol=0, atol=1e-12)
        events = np.bincount(rows.subject, weights=rows.delta, minlength=n)
        assert np.array_equal(events, data.event)
        assert (rows.exposure > 0).all()
        b = grid.breakpoints
        hit = rows.delta == 1
        t = data.time[rows.subject[hit]]
        assert np.all((b[rows.j[hit] - 1] < t) & (t <= b[rows.j[hit]]))
        # one row per interval intersecting (0, T_i]
        expected = np.array([np.count_nonzero(b[:-1] < ti) for ti in data.time])
        assert np.array_equal(np.bincount(rows.subject, minlength=n), expected)
