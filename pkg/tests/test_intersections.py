import numpy as np
import pytest

from models.schemas import PairMode
from services.intersections import count_intersections, fit_loglog_slope, intersection_profile, qn_curve
from services.seeding import make_rng
from services.walks import simulate_pair
from tests.conftest import E2, from_moves, ray
from utils import InvalidPathError


def _nested_loop_count(a, b, n):
    seen = []
    for s in a.sites[:n].tolist():
        if s in seen:
            continue
        if any(s == t for t in b.sites[:n].tolist()):
            seen.append(s)
    return len(seen)


class TestCountIntersections:
    def test_identical_paths(self):
        assert count_intersections((ray(12), ray(12)), 10) == 10

    def test_divergent_rays(self):
        assert count_intersections((ray(12), ray(12, step=E2)), 10) == 1

    def test_revisits_do_not_count(self):
        X = from_moves("RLRLRL")
        assert count_intersections((X, ray(6)), 4) == 2

    def test_symmetric(self, ballistic):
        a, b = simulate_pair(3, ballistic, ((0, 0), (0, 0)), 200, (1, 2))
        for n in (1, 50, 201):
            assert count_intersections((a, b), n) == count_intersections((b, a), n)

    def test_n_too_large(self):
        with pytest.raises(InvalidPathError):
            count_intersections((ray(3), ray(5)), 5)

    def test_matches_nested_loops(self):
        rng = make_rng(8)
        moves = np.array(list("RLUD"))
        for _ in range(40):
            n = int(rng.integers(1, 100))
            a = from_moves("".join(rng.choice(moves, size=n)))
            b = from_moves("".join(rng.choice(moves, size=n)))
            for m in (1, n // 2 + 1, n + 1):
                assert count_intersections((a, b), m) == _nested_loop_count(a, b, m)

    def test_profile_matches_direct_counts(self, ballistic):
        pair = simulate_pair(9, ballistic, ((0, 0), (0, 0)), 300, (4, 5))
        grid = [1, 2, 8, 64, 200, 301]
        profile = intersection_profile(pair, grid)
        assert profile.tolist() == [count_intersections(pair, n) for n in grid]
        assert np.all(np.diff(profile) >= 0)
        assert profile[0] == 1


class TestQnCurve:
    def test_rightward_is_linear(self, rightward, direction):
        curve = qn_curve(rightward, direction, [8, 16, 32, 64], replicates=30, seed=1)
        assert [q.value for q in curve.q_estimates] == [8.0, 16.0, 32.0, 64.0]
        assert curve.fitted_slope.value == pytest.approx(1.0, abs=1e-3)

    def test_frame_columns(self, ballistic, direction):
        curve = qn_curve(ballistic, direction, [8, 16], replicates=5, seed=2)
        frame = curve.to_frame()
        assert frame.columns.tolist() == ["n", "mean_Qn", "stderr", "replicates"]
        assert len(frame) == 2

    def test_independent_mode_is_reported(self, ballistic, direction):
        curve = qn_curve(ballistic, direction, [8, 16, 32], replicates=10, seed=2, pair_mode=PairMode.INDEPENDENT)
        assert curve.pair_mode is PairMode.INDEPENDENT
        assert all(1 <= q.value <= n for q, n in zip(curve.q_estimates, curve.n_grid))

    def test_rejects_unsorted_grid(self, ballistic, direction):
        with pytest.raises(ValueError):
            qn_curve(ballistic, direction, [16, 8], replicates=5, seed=2)

    def test_workers_do_not_change_results(self, ballistic, direction):
        serial = qn_curve(ballistic, direction, [8, 32], replicates=6, seed=4, workers=1)
        parallel = qn_curve(ballistic, direction, [8, 32], replicates=6, seed=4, workers=2)
        assert serial.q_estimates == parallel.q_estimates

    @pytest.mark.slow
    def test_ballistic_is_sublinear(self, ballistic, direction):
        grid = [2 ** k for k in range(6, 12)]
        curve = qn_curve(ballistic, direction, grid, replicates=100, seed=3, workers=2)
        slope = curve.fitted_slope
        assert slope.value + 2 * slope.stderr < 0.95


def test_slope_fit_uses_upper_half():
    grid = [1, 2, 4, 8, 16, 32]
    means = [1, 1, 1, 8, 16, 32]
    assert fit_loglog_slope(grid, means).value == pytest.approx(1.0)
