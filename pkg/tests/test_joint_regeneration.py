import numpy as np
import pandas as pd
import pytest

from models.schemas import DirectionSpec, PairMode
from services.joint_regeneration import (
    JRule,
    coupling_mismatch,
    difference_chain,
    fresh_levels,
    joint_clock,
    joint_regeneration,
    joint_regeneration_oracle,
    lambda_survival,
    records_agree,
    time_change,
)
from services.seeding import derive_seeds
from services.walks import simulate_pair
from tests.conftest import from_moves, ray
from utils import InvalidPathError


def _random_pair(spec, k, horizon=400, mode=PairMode.SHARED):
    seeds = (derive_seeds(5, "a", k), derive_seeds(5, "b", k))
    return simulate_pair(derive_seeds(5, "env", k), spec, ((0, 0), (0, 0)), horizon, seeds, mode)


class TestTimeChange:
    def test_alternation_on_rightward_pair(self, direction):
        tc = time_change((ray(6), ray(6)), direction)
        moved_first = [k for k in range(1, 7) if tc.x_index[k] > tc.x_index[k - 1]]
        assert moved_first == [1, 3, 5]

    def test_lagging_walk_catches_up(self, direction):
        tc = time_change((ray(5), from_moves("UULRR")), direction)
        # after the first walk reaches level 1, only the second walk moves until it reaches 1
        assert tc.x_index[:6].tolist() == [0, 1, 1, 1, 1, 1]
        assert tc.xtilde_index[5] == 4

    def test_conservation_and_same_sites(self, ballistic, direction):
        for k in range(20):
            pair = _random_pair(ballistic, k)
            tc = time_change(pair, direction)
            steps = np.arange(len(tc))
            assert np.array_equal(tc.x_index + tc.xtilde_index, steps)
            assert np.array_equal(tc.underline_X, pair[0].sites[tc.x_index])
            assert np.all(np.diff(tc.x_index) >= 0)
            distinct = np.unique(tc.x_index)
            assert np.array_equal(tc.underline_X[np.searchsorted(tc.x_index, distinct)], pair[0].sites[: distinct[-1] + 1])

    def test_different_start_levels_rejected(self, direction):
        with pytest.raises(InvalidPathError):
            time_change((ray(3), ray(3, start=(1, 0))), direction)


class TestJointClock:
    def test_matches_time_change(self, ballistic, direction):
        for k in range(20):
            pair = _random_pair(ballistic, k, horizon=300)
            tc = time_change(pair, direction)
            la, lb = pair[0].levels(direction.v_star), pair[1].levels(direction.v_star)
            times_a, times_b = joint_clock(la, lb)
            for i, t in enumerate(times_a):
                if t >= 0:
                    assert tc.x_index[t] == i and (i == 0 or tc.x_index[t - 1] == i - 1)
            for j, t in enumerate(times_b):
                if t >= 0:
                    assert tc.xtilde_index[t] == j and (j == 0 or tc.xtilde_index[t - 1] == j - 1)
            assert (times_a >= 0).sum() == tc.x_index[-1] + 1
            assert (times_b >= 0).sum() == tc.xtilde_index[-1] + 1


def test_fresh_levels_skip_jumped_levels():
    levels = np.array([0, 1, 0, 3, 2, 4])
    assert fresh_levels(levels) == {1: 1, 3: 3, 4: 5}


class TestJointRegeneration:
    def test_monotone_pair(self, direction):
        rec = joint_regeneration((ray(10), ray(10)), direction)
        assert rec.Lambda == 1
        assert rec.mu_pairs[0] == (1, 1)
        assert np.all(rec.Y_samples == 0)
        assert not rec.censored

    def test_backtracking_pair(self, direction):
        X = from_moves("RLRRRRRRRR")
        rec = joint_regeneration((X, ray(10)), direction)
        assert rec.Lambda == 2
        assert rec.mu_pairs[0] == (4, 2)
        assert rec.lambda_levels[:3] == (0, 1, 2)
        oracle = joint_regeneration_oracle((X, ray(10)), direction)
        assert oracle.Lambda == 2
        assert records_agree(rec, oracle)

    def test_trapped_pair_is_censored(self, direction):
        rec = joint_regeneration((from_moves("LLL"), from_moves("DDD")), direction)
        assert rec.censored
        assert rec.Lambda is None
        assert rec.Y_samples.shape == (0, 2)

    def test_common_level_and_hyperplane(self, ballistic, direction):
        for k in range(30):
            pair = _random_pair(ballistic, k)
            rec = joint_regeneration(pair, direction)
            la, lb = pair[0].levels(direction.v_star), pair[1].levels(direction.v_star)
            levels = [la[m] for m, _ in rec.mu_pairs]
            assert all(la[m] == lb[mt] for m, mt in rec.mu_pairs)
            assert all(b > a for a, b in zip(levels[:-1], levels[1:]))
            assert np.all(rec.Y_samples @ np.array(direction.v_star) == 0)

    def test_cascade_matches_oracle(self, ballistic):
        dir_ = DirectionSpec(v_star=(1, 0), confirm_margin=5)
        confirmed = 0
        for k in range(200):
            pair = _random_pair(ballistic, k, horizon=300)
            rec = joint_regeneration(pair, dir_)
            assert records_agree(rec, joint_regeneration_oracle(pair, dir_)), k
            confirmed += not rec.censored
        assert confirmed > 100

    def test_both_walks_rule_gives_common_regenerations(self, ballistic):
        dir_ = DirectionSpec(v_star=(1, 0), confirm_margin=5)
        for k in range(50):
            pair = _random_pair(ballistic, k, horizon=300)
            literal = joint_regeneration(pair, dir_, rule=JRule.BOTH_WALKS)
            oracle = joint_regeneration_oracle(pair, dir_)
            assert set(literal.mu_pairs) <= set(oracle.mu_pairs)

    def test_json_record(self, direction):
        payload = joint_regeneration((ray(10), ray(10)), direction).to_json()
        assert set(payload) >= {"lambda_levels", "Lambda", "mu_pairs", "Y", "censored"}
        assert payload["Y"][0] == [0, 0]

    @pytest.mark.slow
    def test_cascade_matches_oracle_at_scale(self, ballistic, direction):
        for k in range(2000):
            pair = _random_pair(ballistic, 1000 + k, horizon=1000)
            assert records_agree(joint_regeneration(pair, direction), joint_regeneration_oracle(pair, direction))


class TestDifferenceChain:
    def test_identical_walks(self, direction):
        records = [joint_regeneration((ray(20), ray(20)), direction) for _ in range(3)]
        chain = difference_chain(records, PairMode.SHARED)
        assert chain.transitions["from"].tolist() == ["0 0"]
        assert chain.transitions["to"].tolist() == ["0 0"]
        assert chain.increments["y"].tolist() == ["0 0"]

    def test_skips_censored_records(self, direction):
        rec = joint_regeneration((from_moves("LLL"), from_moves("DDD")), direction)
        assert difference_chain([rec], PairMode.SHARED).records_used == 0

    @pytest.mark.slow
    def test_independent_increments_symmetric(self, ballistic):
        dir_ = DirectionSpec(v_star=(1, 0), confirm_margin=5)
        records = [
            joint_regeneration(_random_pair(ballistic, k, horizon=1000, mode=PairMode.INDEPENDENT), dir_)
            for k in range(400)
        ]
        chain = difference_chain(records, PairMode.INDEPENDENT)
        frequent = chain.increments[chain.increments["count"] >= 100]
        assert len(frequent) > 0
        assert (frequent["z"].abs() < 4).all()


class TestLambdaSurvival:
    def test_survival_is_nonincreasing(self, ballistic, direction):
        records = [joint_regeneration(_random_pair(ballistic, k, horizon=300), direction) for k in range(60)]
        frame = lambda_survival(records, [1, 2, 4, 8, 16])
        assert np.all(np.diff(frame["survival"].to_numpy()) <= 0)
        assert frame["records"].iloc[0] == sum(not r.censored for r in records)

    @pytest.mark.slow
    def test_log_slope_steepens(self, ballistic):
        dir_ = DirectionSpec(v_star=(1, 0), confirm_margin=3)
        records = [joint_regeneration(_random_pair(ballistic, k, horizon=600), dir_) for k in range(600)]
        frame = lambda_survival(records, [1, 2, 4, 8, 16, 32, 64])
        resolved = frame[frame["survival"] * frame["records"] >= 30]
        slopes = resolved["log_slope"].dropna().to_numpy()
        assert len(slopes) >= 2
        assert np.all(slopes < 0)
        assert np.all(np.diff(slopes) <= 0.5)
        assert slopes[-1] < slopes[0]

    def test_monotone_pairs_never_exceed_one(self, direction):
        records = [joint_regeneration((ray(10), ray(10)), direction)]
        frame = lambda_survival(records, [1, 2])
        assert frame["survival"].tolist() == [0.0, 0.0]


class TestCouplingMismatch:
    def test_rightward_never_mismatches(self, rightward, direction):
        frame = coupling_mismatch(rightward, direction, [0, 4], replicates=3, horizon=40, seed=1)
        assert frame["mismatch_fraction"].tolist() == [0.0, 0.0]

    def test_needs_orthogonal_axis(self, ballistic):
        with pytest.raises(InvalidPathError):
            coupling_mismatch(ballistic, DirectionSpec(v_star=(1, 1)), [1], 1, 10, 0)

    def test_workers_do_not_change_frame(self, ballistic):
        dir_ = DirectionSpec(v_star=(1, 0), confirm_margin=3)
        serial = coupling_mismatch(ballistic, dir_, [0, 3], replicates=6, horizon=150, seed=2, workers=1)
        parallel = coupling_mismatch(ballistic, dir_, [0, 3], replicates=6, horizon=150, seed=2, workers=2)
        pd.testing.assert_frame_equal(serial, parallel)

    @pytest.mark.slow
    def test_mismatch_falls_with_separation(self, ballistic):
        dir_ = DirectionSpec(v_star=(1, 0), confirm_margin=5)
        frame = coupling_mismatch(ballistic, dir_, [0, 16], replicates=80, horizon=400, seed=3, workers=2)
        near, far = frame["mismatch_fraction"].tolist()
        assert frame["used"].min() >= 20
        assert far < near
