"""Intersection counts Q_n of walk pairs and the growth exponent of E[Q_n]."""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from models.schemas import DirectionSpec, EnvironmentSpec, EstimateWithCI, PairMode
from services.runner import map_replicas
from services.seeding import derive_seeds
from services.walks import Trajectory, simulate_pair
from utils import InvalidPathError, get_logger

logger = get_logger(__name__)

MIN_REPLICATES = 30


def count_intersections(pair: Tuple[Trajectory, Trajectory], n: int) -> int:
    """|X_[0,n) ∩ X~_[0,n)|: distinct sites visited by both walks before time n."""
    X, Xt = pair
    if n < 0 or n > len(X) or n > len(Xt):
        raise InvalidPathError(f"n={n} exceeds trajectory lengths ({len(X)}, {len(Xt)})")
    if n == 0:
        return 0
    first = {tuple(s) for s in X.sites[:n].tolist()}
    second = {tuple(s) for s in Xt.sites[:n].tolist()}
    return len(first & second)


def _first_visits(traj: Trajectory) -> Tuple[np.ndarray, np.ndarray]:
    sites, first = np.unique(traj.sites, axis=0, return_index=True)
    return sites, first


def intersection_profile(pair: Tuple[Trajectory, Trajectory], n_grid: Sequence[int]) -> np.ndarray:
    """Q_n for every n in ``n_grid`` from a single pass over first-visit times.

    A site counts towards Q_n once both walks have visited it before n.
    """
    sites_a, first_a = _first_visits(pair[0])
    sites_b, first_b = _first_visits(pair[1])
    both = np.concatenate([sites_a, sites_b])
    times = np.concatenate([first_a, first_b])
    uniq, inverse, counts = np.unique(both, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    latest = np.zeros(len(uniq), dtype=np.int64)
    np.maximum.at(latest, inverse, times)
    shared = np.sort(latest[counts == 2])
    return np.searchsorted(shared, np.asarray(n_grid), side="left")


@dataclass(frozen=True)
class IntersectionCurve:
    n_grid: Tuple[int, ...]
    q_estimates: Tuple[EstimateWithCI, ...]
    fitted_slope: EstimateWithCI
    pair_mode: PairMode = PairMode.SHARED

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "n": list(self.n_grid),
            "mean_Qn": [q.value for q in self.q_estimates],
            "stderr": [q.stderr for q in self.q_estimates],
            "replicates": [q.replicates for q in self.q_estimates],
        })


def fit_loglog_slope(n_grid: Sequence[int], means: Sequence[float]) -> EstimateWithCI:
    """Least-squares slope of log mean vs log n over the upper half of the grid."""
    n = np.asarray(n_grid, dtype=float)
    m = np.asarray(means, dtype=float)
    lo = len(n) // 2
    x, y = np.log(n[lo:]), np.log(m[lo:])
    if x.size < 2:
        return EstimateWithCI(value=float("nan"), stderr=float("nan"), replicates=int(x.size))
    slope, intercept = np.polyfit(x, y, 1)
    if x.size > 2:
        resid = y - (slope * x + intercept)
        se = float(np.sqrt((resid ** 2).sum() / (x.size - 2) / ((x - x.mean()) ** 2).sum()))
    else:
        se = 0.0
    return EstimateWithCI(value=float(slope), stderr=se, replicates=int(x.size))


def _qn_replica(task) -> List[int]:
    spec, n_grid, seed, r, mode = task
    d = spec.dimension
    origin = tuple([0] * d)
    env_seed = derive_seeds(seed, "qn-env", r)
    walk_seeds = (derive_seeds(seed, "qn-walk-a", r), derive_seeds(seed, "qn-walk-b", r))
    pair = simulate_pair(env_seed, spec, (origin, origin), max(n_grid), walk_seeds, mode)
    return intersection_profile(pair, n_grid).tolist()


def qn_curve(
    spec: EnvironmentSpec,
    direction: DirectionSpec,
    n_grid: Sequence[int],
    replicates: int,
    seed: int,
    pair_mode: PairMode = PairMode.SHARED,
    workers: int = 1,
) -> IntersectionCurve:
    """Mean Q_n over replicate pairs started at the origin, with a log-log slope fit.

    ``direction`` is carried for the run record only; Q_n does not depend on it.

    Args:
        spec: environment law
        direction: run-record direction
        n_grid: strictly increasing horizons
        replicates: pairs per horizon; one pair serves the whole grid
        seed: master seed
        pair_mode: shared environment or the independent control
        workers: process count

    Returns:
        Per-n estimates with standard errors and the fitted growth exponent
    """
    grid = [int(n) for n in n_grid]
    if sorted(set(grid)) != grid or grid[0] <= 0:
        raise ValueError("n_grid must be strictly increasing positive integers")
    if replicates < MIN_REPLICATES:
        logger.warning(f"qn_curve with {replicates} replicates (< {MIN_REPLICATES}); errors are rough")

    tasks = [(spec, grid, seed, r, pair_mode) for r in range(replicates)]
    counts = np.array(map_replicas(_qn_replica, tasks, workers, desc="Q_n"), dtype=float)
    means = counts.mean(axis=0)
    ses = counts.std(axis=0, ddof=1) / np.sqrt(replicates) if replicates > 1 else np.zeros(len(grid))
    estimates = tuple(
        EstimateWithCI(value=float(m), stderr=float(s), replicates=replicates) for m, s in zip(means, ses)
    )
    slope = fit_loglog_slope(grid, means)
    logger.info(
        f"Q_n curve ({pair_mode.value}, v_star={direction.v_star}): "
        f"slope={slope.value:.4f} ± {slope.stderr:.4f} over {replicates} replicates"
    )
    return IntersectionCurve(n_grid=tuple(grid), q_estimates=estimates, fitted_slope=slope, pair_mode=pair_mode)
