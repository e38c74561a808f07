import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sskp import metrics


def log_from(rewards, violated, lengths=None):
    lengths = lengths or [5] * len(rewards)
    steps = np.cumsum(lengths)
    return [{"env_step": int(s), "episode": i + 1, "episode_reward": float(r),
             "episode_len": int(n), "violated": int(v), "cum_violations": int(c)}
            for i, (s, r, n, v, c) in enumerate(zip(steps, rewards, lengths, violated,
                                                    np.cumsum(violated)))]


def test_ptr_examples():
    assert metrics.ptr(log_from([10, 20], [0, 0]), 100) == pytest.approx(0.3)
    assert metrics.ptr([], 100) == 0.0
    with pytest.raises(ValueError):
        metrics.ptr([], 0)


def test_ptr_over_violations_and_flag():
    log = log_from([10, 20, 0], [1, 1, 1])
    assert metrics.ptr_over_violations(log, 100) == (pytest.approx(0.1), False)
    assert metrics.ptr_over_violations(log_from([10, 20], [0, 0]), 100) == (pytest.approx(0.3), True)


def test_table_row_scales_by_one_thousand():
    row = metrics.table_row("SSkP", "HazardWorld2D", log_from([10, 20, 0], [1, 1, 1]), 100)
    assert row["ptr_over_v_times_1e3"] == pytest.approx(row["ptr_over_v"] * 1000)
    assert row["ptr_over_v_times_1e3"] == pytest.approx(100.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.integers(1, 10_000))
def test_ptr_matches_resummation(rewards, T):
    log = log_from(rewards, [0] * len(rewards))
    assert metrics.ptr(log, T) == pytest.approx(sum(rewards) / T, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.integers(0, 19), st.floats(0, 1))
def test_ptr_ignores_episode_boundaries(rewards, at, frac):
    at = at % len(rewards)
    split = rewards[:at] + [rewards[at] * frac, rewards[at] * (1 - frac)] + rewards[at + 1:]
    a = metrics.ptr(log_from(rewards, [0] * len(rewards)), 1000)
    b = metrics.ptr(log_from(split, [0] * len(split)), 1000)
    assert a == pytest.approx(b, abs=1e-9)


def test_curve_hand_traced():
    curve = metrics.reward_vs_violations_curve(log_from([1, 2, 3], [1, 0, 1]), window=1)
    np.testing.assert_array_equal(curve, [[1, 1], [1, 2], [2, 3]])


def test_window_ten_matches_moving_average():
    rng = np.random.default_rng(0)
    rewards = rng.normal(size=40)
    viol = rng.integers(0, 2, size=40)
    curve = metrics.reward_vs_violations_curve(log_from(list(rewards), list(viol)), window=10)
    expected = [rewards[max(0, i - 9):i + 1].mean() for i in range(40)]
    np.testing.assert_allclose(curve[:, 1], expected)
    assert np.all(np.diff(curve[:, 0]) >= 0)


def test_curve_rejects_empty_log():
    with pytest.raises(ValueError):
        metrics.reward_vs_violations_curve([])


def test_aggregate_single_and_identical_curves():
    c = np.array([[0.0, 1.0], [1.0, 3.0], [2.0, 2.0]])
    grid, mean, std = metrics.aggregate_seeds([c], n_grid=3)
    np.testing.assert_allclose(mean, c[:, 1])
    np.testing.assert_array_equal(std, 0)
    _, _, std2 = metrics.aggregate_seeds([c, c.copy()], n_grid=7)
    np.testing.assert_array_equal(std2, 0)


def test_aggregate_hand_computed():
    a = np.array([[0.0, 0.0], [2.0, 2.0], [4.0, 0.0]])
    b = np.array([[0.0, 2.0], [1.0, 2.0], [4.0, 8.0]])
    grid, mean, std = metrics.aggregate_seeds([a, b], n_grid=5)
    np.testing.assert_allclose(grid, [0, 1, 2, 3, 4])
    # a -> 0,1,2,1,0 ; b -> 2,2,4,6,8
    np.testing.assert_allclose(mean, [1, 1.5, 3, 3.5, 4])
    np.testing.assert_allclose(std, [1, 0.5, 1, 2.5, 4])


def test_csv_round_trip_is_idempotent(tmp_path):
    log = log_from([0.1, -2.5, 3.0], [0, 1, 0], [4, 7, 2])
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    metrics.write_metrics_csv(log, p1)
    metrics.write_metrics_csv(metrics.read_metrics_csv(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_text().splitlines()[0] == ",".join(metrics.METRIC_COLUMNS)


def test_validate_log():
    bad = log_from([1, 2], [0, 0])
    bad[1]["env_step"] = bad[0]["env_step"]
    with pytest.raises(ValueError):
        metrics.validate_log(bad)
