"""Joint regeneration of a pair of walks and the difference chains Y and Y-bar.

Two constructions are provided and must agree on nearest-neighbour supports:

* :func:`joint_regeneration`, the cascade of common fresh levels lambda_n run on
  the time-changed pair, where only the walk with the smaller running maximum
  moves;
* :func:`joint_regeneration_oracle`, which intersects the individual
  regeneration levels of the two walks.

Both use the censoring policy of :mod:`services.regeneration`: a level is a
joint regeneration only when neither walk drops below it up to the horizon and
both walks climb ``confirm_margin`` levels above it.
"""

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from models.schemas import DirectionSpec, EnvironmentSpec, PairMode
from services.environment import ResampledEnvironment
from services.regeneration import backtrack_time, detect_regenerations, path_radius
from services.runner import map_replicas
from services.seeding import derive_seeds, independent_env_seed
from services.walks import Trajectory, simulate, simulate_pair
from utils import InvalidPathError, get_logger

logger = get_logger(__name__)

Pair = Tuple[Trajectory, Trajectory]


class JRule(str, Enum):
    """Level J from which the next common fresh level is searched after a backtrack.

    BACKTRACKING_WALK: running max of the walk that backtracked first, plus h.
    BOTH_WALKS: running max of both time-changed walks up to that time, plus h.
    Only the first never skips a common regeneration level; the second can step
    over a level the leading walk has already reached.
    """
    BACKTRACKING_WALK = "backtracking-walk"
    BOTH_WALKS = "both-walks"


@dataclass(frozen=True, eq=False)
class TimeChangedPair:
    underline_X: np.ndarray
    underline_Xtilde: np.ndarray
    x_index: np.ndarray
    xtilde_index: np.ndarray

    def __len__(self) -> int:
        return int(self.x_index.shape[0])


@dataclass(frozen=True, eq=False)
class JointRegenRecord:
    lambda_levels: Tuple[int, ...]
    Lambda: Optional[int]
    mu_pairs: Tuple[Tuple[int, int], ...]
    censored: bool
    Y_samples: np.ndarray
    env_seeds: Tuple[int, int] = (0, 0)
    walk_seeds: Tuple[int, int] = (0, 0)

    @property
    def start_level(self) -> int:
        return self.lambda_levels[0]

    def to_json(self) -> dict:
        return {
            "lambda_levels": list(self.lambda_levels),
            "Lambda": self.Lambda,
            "mu_pairs": [list(p) for p in self.mu_pairs],
            "Y": self.Y_samples.tolist(),
            "censored": self.censored,
            "env_seeds": list(self.env_seeds),
            "walk_seeds": list(self.walk_seeds),
        }


def _pair_levels(pair: Pair, direction: DirectionSpec) -> Tuple[np.ndarray, np.ndarray]:
    la = pair[0].levels(direction.v_star)
    lb = pair[1].levels(direction.v_star)
    if la[0] != lb[0]:
        raise InvalidPathError(f"walks start on different levels: {la[0]} != {lb[0]}")
    return la, lb


def time_change(pair: Pair, direction: DirectionSpec) -> TimeChangedPair:
    """Re-clock the pair so that at each joint step only the lagging walk moves.

    The first walk moves when its running maximum is <= the other's, so it moves
    on ties. Stops as soon as the walk due to move has no step left.
    """
    la, lb = _pair_levels(pair, direction)
    n_a, n_b = len(la) - 1, len(lb) - 1
    x, xt = 0, 0
    max_a, max_b = la[0], lb[0]
    xs, xts = [0], [0]
    while True:
        if max_a <= max_b:
            if x == n_a:
                break
            x += 1
            max_a = max(max_a, la[x])
        else:
            if xt == n_b:
                break
            xt += 1
            max_b = max(max_b, lb[xt])
        xs.append(x)
        xts.append(xt)
    x_index = np.array(xs, dtype=np.int64)
    xtilde_index = np.array(xts, dtype=np.int64)
    return TimeChangedPair(
        underline_X=pair[0].sites[x_index],
        underline_Xtilde=pair[1].sites[xtilde_index],
        x_index=x_index,
        xtilde_index=xtilde_index,
    )


def joint_clock(levels_a: np.ndarray, levels_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Joint time at which each walk first sits at each of its indices (-1: never).

    The time change is the stable merge of the two running-maximum sequences
    with ties to the first walk: the first walk leaves index i-1 once the
    second walk's running max reaches its own, i.e. after
    #{j : M~_j < M_{i-1}} moves of the second walk.
    """
    pm_a = np.maximum.accumulate(levels_a)
    pm_b = np.maximum.accumulate(levels_b)
    n_a, n_b = len(pm_a) - 1, len(pm_b) - 1

    times_a = np.full(n_a + 1, -1, dtype=np.int64)
    times_b = np.full(n_b + 1, -1, dtype=np.int64)
    times_a[0] = times_b[0] = 0

    other = np.searchsorted(pm_b, pm_a[:-1], side="left")
    ok = other <= n_b
    idx = np.arange(1, n_a + 1)
    times_a[1:][ok] = idx[ok] + other[ok]

    other = np.searchsorted(pm_a, pm_b[:-1], side="right")
    ok = other <= n_a
    idx = np.arange(1, n_b + 1)
    times_b[1:][ok] = idx[ok] + other[ok]
    return times_a, times_b


def fresh_levels(levels: np.ndarray) -> dict:
    """Levels hit exactly when first reached, mapped to their hitting times."""
    pm = np.maximum.accumulate(levels)
    records = np.flatnonzero(np.diff(pm) > 0) + 1
    return {int(levels[t]): int(t) for t in records}


class _Walks:
    """Per-pair precomputation shared by the cascade stages."""

    def __init__(self, la: np.ndarray, lb: np.ndarray, margin: int, h: int, rule: JRule):
        self.la, self.lb = la, lb
        self.margin, self.h, self.rule = margin, h, rule
        self.fresh_a, self.fresh_b = fresh_levels(la), fresh_levels(lb)
        self.common = np.array(sorted(set(self.fresh_a) & set(self.fresh_b)), dtype=np.int64)
        self.top_a, self.top_b = int(la.max()), int(lb.max())

    def next_common_fresh(self, from_level: int) -> Optional[int]:
        idx = int(np.searchsorted(self.common, from_level, side="left"))
        return int(self.common[idx]) if idx < len(self.common) else None

    def stage(self, level: int) -> Tuple[str, Optional[int]]:
        """One cascade stage from the common fresh level ``level``.

        Returns ("regen", None), ("censored", None) or ("backtrack", J).
        """
        ga, gb = self.fresh_a[level], self.fresh_b[level]
        beta_a = backtrack_time(self.la, ga, base=level)
        beta_b = backtrack_time(self.lb, gb, base=level)
        if beta_a is None and beta_b is None:
            if self.top_a >= level + self.margin and self.top_b >= level + self.margin:
                return "regen", None
            return "censored", None

        sa, sb = self.la[ga:], self.lb[gb:]
        times_a, times_b = joint_clock(sa, sb)
        events = []
        if beta_a is not None and times_a[beta_a - ga] >= 0:
            k = int(times_a[beta_a - ga])
            events.append((k, beta_a - ga, k - (beta_a - ga), "a"))
        if beta_b is not None and times_b[beta_b - gb] >= 0:
            k = int(times_b[beta_b - gb])
            events.append((k, k - (beta_b - gb), beta_b - gb, "b"))
        if not events:
            # the time change ran out before either backtrack
            return "censored", None

        _, i, j, who = min(events)
        max_a = int(sa[: i + 1].max())
        max_b = int(sb[: j + 1].max())
        if self.rule is JRule.BOTH_WALKS:
            top = max(max_a, max_b)
        else:
            top = max_a if who == "a" else max_b
        return "backtrack", top + self.h


def _margin(pair: Pair, direction: DirectionSpec, confirm_margin: Optional[int]) -> int:
    if confirm_margin is not None:
        return confirm_margin
    return direction.margin(max(path_radius(pair[0]), path_radius(pair[1])))


def joint_regeneration(
    pair: Pair,
    direction: DirectionSpec,
    confirm_margin: Optional[int] = None,
    rule: JRule = JRule.BACKTRACKING_WALK,
) -> JointRegenRecord:
    """Joint regeneration levels and times by the cascade of common fresh levels.

    From a common level lambda_0, lambda_1 is the first common fresh level
    >= lambda_0 + h. At each lambda_n both walks are restarted from their hitting
    times of lambda_n: if neither ever drops below lambda_n, lambda_n is the joint
    regeneration level Lambda; otherwise the first backtrack on the time-changed
    pair gives J and lambda_{n+1} is the first common fresh level >= J. The
    construction is then restarted from (mu_i, mu~_i) to obtain the next pair.
    """
    la, lb = _pair_levels(pair, direction)
    walks = _Walks(la, lb, _margin(pair, direction, confirm_margin), direction.h, rule)

    lambdas = [int(la[0])]
    mus: List[Tuple[int, int]] = []
    regen_levels: List[int] = []
    level = int(la[0])
    done = False
    while not done:
        current = walks.next_common_fresh(level + direction.h)
        if current is None:
            break
        lambdas.append(current)
        while True:
            outcome, j_level = walks.stage(current)
            if outcome == "regen":
                break
            if outcome == "censored":
                done = True
                break
            current = walks.next_common_fresh(j_level)
            if current is None:
                done = True
                break
            lambdas.append(current)
        if done:
            break
        mus.append((walks.fresh_a[current], walks.fresh_b[current]))
        regen_levels.append(current)
        level = current

    record = _build_record(pair, lambdas, mus, regen_levels)
    logger.debug(
        f"Joint regeneration: Lambda={record.Lambda}, pairs={len(mus)}, stages={len(lambdas) - 1}"
    )
    return record


def _build_record(pair: Pair, lambdas: List[int], mus: List[Tuple[int, int]], regen_levels: List[int]) -> JointRegenRecord:
    X, Xt = pair
    ys = np.array([Xt.sites[mt] - X.sites[m] for m, mt in mus], dtype=np.int64).reshape(-1, X.dimension)
    return JointRegenRecord(
        lambda_levels=tuple(lambdas),
        Lambda=regen_levels[0] if regen_levels else None,
        mu_pairs=tuple(mus),
        censored=not mus,
        Y_samples=ys,
        env_seeds=(X.env_seed, Xt.env_seed),
        walk_seeds=(X.walk_seed, Xt.walk_seed),
    )


def joint_regeneration_oracle(
    pair: Pair,
    direction: DirectionSpec,
    confirm_margin: Optional[int] = None,
) -> JointRegenRecord:
    """Joint regeneration times as successive common levels of individual regenerations.

    (mu_{k+1}, mu~_{k+1}) is the least pair (tau_n, tau~_m) after (mu_k, mu~_k)
    with X_{tau_n} . v_star = X~_{tau~_m} . v_star. Regeneration levels increase
    with time, so these are the common confirmed regeneration levels in order.
    """
    la, _ = _pair_levels(pair, direction)
    margin = _margin(pair, direction, confirm_margin)
    rec_a = detect_regenerations(pair[0], direction, confirm_margin=margin)
    rec_b = detect_regenerations(pair[1], direction, confirm_margin=margin)
    times_b = dict(zip(rec_b.levels, rec_b.times))

    mus: List[Tuple[int, int]] = []
    levels: List[int] = []
    for level, t in zip(rec_a.levels, rec_a.times):
        if level in times_b:
            mus.append((t, times_b[level]))
            levels.append(level)
    return _build_record(pair, [int(la[0])] + levels, mus, levels)


def records_agree(first: JointRegenRecord, second: JointRegenRecord) -> bool:
    """Equality of Lambda, the time pairs and the Y samples."""
    return (
        first.Lambda == second.Lambda
        and first.mu_pairs == second.mu_pairs
        and np.array_equal(first.Y_samples, second.Y_samples)
    )


@dataclass(frozen=True, eq=False)
class DifferenceChainStats:
    mode: PairMode
    records_used: int
    transitions: pd.DataFrame
    increments: pd.DataFrame
    n_increments: int


def _vec_label(v: Iterable[int]) -> str:
    return " ".join(str(int(c)) for c in v)


def difference_chain(records: Sequence[JointRegenRecord], mode: PairMode) -> DifferenceChainStats:
    """One-step transition counts of Y_i and the pooled increment law q(0, .).

    The chain starts at Y_1; censored records and records with fewer than two
    samples are skipped. The increment table pairs every increment y with -y
    and reports p(y) - p(-y) with its multinomial standard error.
    """
    transitions: Counter = Counter()
    increments: Counter = Counter()
    used = 0
    for rec in records:
        if rec.censored or len(rec.Y_samples) < 2:
            continue
        used += 1
        ys = [tuple(int(c) for c in y) for y in rec.Y_samples]
        for a, b in zip(ys[:-1], ys[1:]):
            transitions[(a, b)] += 1
            increments[tuple(q - p for p, q in zip(a, b))] += 1

    trans_rows = [
        {"from": _vec_label(a), "to": _vec_label(b), "count": n}
        for (a, b), n in sorted(transitions.items())
    ]
    total = sum(increments.values())
    inc_rows = []
    for y in sorted(increments):
        neg = tuple(-c for c in y)
        count, count_neg = increments[y], increments.get(neg, 0)
        p, q = count / total, count_neg / total
        se = float(np.sqrt(max(p + q - (p - q) ** 2, 0.0) / total))
        inc_rows.append({
            "y": _vec_label(y),
            "count": count,
            "count_neg": count_neg,
            "q": p,
            "q_neg": q,
            "diff": p - q,
            "stderr": se,
            "z": (p - q) / se if se > 0 else 0.0,
        })
    logger.info(f"Difference chain ({mode.value}): records={used}, increments={total}")
    return DifferenceChainStats(
        mode=mode,
        records_used=used,
        transitions=pd.DataFrame(trans_rows, columns=["from", "to", "count"]),
        increments=pd.DataFrame(
            inc_rows, columns=["y", "count", "count_neg", "q", "q_neg", "diff", "stderr", "z"]
        ),
        n_increments=total,
    )


def lambda_survival(records: Sequence[JointRegenRecord], m_grid: Sequence[int]) -> pd.DataFrame:
    """Empirical P(Lambda - lambda_0 > m) over uncensored records, with log-log slopes."""
    gaps = np.array([r.Lambda - r.start_level for r in records if not r.censored], dtype=float)
    n = gaps.size
    rows = []
    for m in m_grid:
        p = float((gaps > m).mean()) if n else float("nan")
        rows.append({"m": int(m), "survival": p, "stderr": float(np.sqrt(p * (1 - p) / n)) if n else float("nan"), "records": n})
    frame = pd.DataFrame(rows)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = np.log(frame["survival"].to_numpy())
        log_m = np.log(frame["m"].to_numpy(dtype=float))
        frame["log_slope"] = np.concatenate([[np.nan], np.diff(log_p) / np.diff(log_m)])
    return frame


def perpendicular_axis(direction: DirectionSpec) -> Tuple[int, ...]:
    """A unit lattice vector orthogonal to v_star."""
    for i, c in enumerate(direction.v_star):
        if c == 0:
            e = [0] * len(direction.v_star)
            e[i] = 1
            return tuple(e)
    raise InvalidPathError("v_star has no zero coordinate; no axis is orthogonal to it")


def _coupling_replica(task) -> Optional[bool]:
    """Y_1 != Y-bar_1 for one seed-matched replica, or None when either run is censored.

    The Y-bar run keeps the first walk and replays the second walk's uniforms in the
    shared environment with every site the first walk visited redrawn independently.
    """
    spec, direction, start_b, horizon, seed, sep, r, confirm_margin = task
    origin = tuple(0 for _ in start_b)
    env_seed = derive_seeds(seed, f"coupling-env-{sep}", r)
    walk_seeds = (derive_seeds(seed, f"coupling-walk-a-{sep}", r), derive_seeds(seed, f"coupling-walk-b-{sep}", r))
    first, second = simulate_pair(env_seed, spec, (origin, start_b), horizon, walk_seeds, PairMode.SHARED)
    env_bar = ResampledEnvironment(env_seed, spec, independent_env_seed(env_seed), first.sites)
    second_bar = simulate(env_bar, start_b, horizon, walk_seeds[1])
    rec_s = joint_regeneration((first, second), direction, confirm_margin)
    rec_i = joint_regeneration((first, second_bar), direction, confirm_margin)
    if rec_s.censored or rec_i.censored:
        return None
    return not np.array_equal(rec_s.Y_samples[0], rec_i.Y_samples[0])


def coupling_mismatch(
    spec: EnvironmentSpec,
    direction: DirectionSpec,
    separations: Sequence[int],
    replicates: int,
    horizon: int,
    seed: int,
    confirm_margin: Optional[int] = None,
    workers: int = 1,
) -> pd.DataFrame:
    """Fraction of seed-matched replicas with Y_1 != Y-bar_1, per start separation.

    Each replica runs the same env seed and walk seeds twice: once in a shared
    environment, and once with the sites the first walk visited redrawn for the
    second walk. The second walk starts ``separation`` units away along an axis
    orthogonal to v_star, so far-apart walks rarely see a redrawn site.

    Args:
        spec: environment law
        direction: regeneration direction; the separation axis is orthogonal to it
        separations: start distances of the second walk
        replicates: replicas per separation
        horizon: steps per walk
        seed: master seed
        confirm_margin: overrides the direction's margin
        workers: process count for the replica map

    Returns:
        One row per separation with the mismatch fraction and its binomial stderr,
        over the uncensored replicas only.
    """
    axis = np.array(perpendicular_axis(direction), dtype=np.int64)
    rows = []
    for sep in separations:
        start_b = tuple(int(c) for c in sep * axis)
        tasks = [(spec, direction, start_b, horizon, seed, sep, r, confirm_margin) for r in range(replicates)]
        outcomes = [m for m in map_replicas(_coupling_replica, tasks, workers, desc=f"coupling {sep}") if m is not None]
        used = len(outcomes)
        frac = sum(outcomes) / used if used else float("nan")
        rows.append({
            "separation": int(sep),
            "replicates": replicates,
            "used": used,
            "mismatch_fraction": frac,
            "stderr": float(np.sqrt(frac * (1 - frac) / used)) if used else float("nan"),
        })
        logger.info(f"Coupling mismatch at separation {sep}: {frac:.4f} over {used} replicas")
    return pd.DataFrame(rows)
