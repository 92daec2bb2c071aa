"""Directional regeneration times of finite trajectories.

Levels are ``X_n . v_star`` with an integer ``v_star``, so they are integers and
the separation between consecutive regeneration levels is at least 1.

"Never backtracks" cannot be decided on a finite path. A candidate whose
backtrack clause holds up to the horizon is *confirmed* only if the walk later
climbs ``confirm_margin`` levels above it; other candidates are reported as
censored and kept out of every block statistic.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from models.schemas import DirectionSpec, EstimateWithCI
from services.walks import Trajectory
from utils import InvalidPathError, get_logger

logger = get_logger(__name__)

UNSTABLE_SHARE = 0.5


def first_hit(running_max: np.ndarray, u: int) -> Optional[int]:
    """Least n with running_max[n] >= u, None past the horizon."""
    idx = int(np.searchsorted(running_max, u, side="left"))
    return idx if idx < len(running_max) else None


def backtrack_time(levels: np.ndarray, start: int = 0, base: Optional[int] = None) -> Optional[int]:
    """Least n >= start with levels[n] < base (base defaults to levels[start])."""
    if base is None:
        base = levels[start]
    below = np.flatnonzero(levels[start:] < base)
    return start + int(below[0]) if below.size else None


def path_radius(traj: Trajectory) -> int:
    """Step-support radius r0 of the walk; hand-written paths fall back to their longest step."""
    if traj.radius_r0 is not None:
        return int(traj.radius_r0)
    if traj.n_steps == 0:
        return 1
    return max(1, int(np.abs(traj.increments()).max()))


@dataclass(frozen=True)
class DirectionalFunctionals:
    """T_u, D and the running maximum of a (possibly shifted) path.

    ``first_hits`` maps every level u between the start level and the highest
    level reached to T_u; levels never reached are absent (censored at the horizon).
    ``backtrack`` is None when the path never drops below its start level.
    D and the backtracking time counted from n >= 1 coincide, since
    X_0 . v_star < X_0 . v_star never holds.
    """

    first_hits: Dict[int, int]
    backtrack: Optional[int]
    running_max: np.ndarray
    horizon: int

    def hit(self, u: int) -> Optional[int]:
        if u <= int(self.running_max[0]):
            return 0
        return self.first_hits.get(u)


def directional_functionals(traj: Trajectory, direction: DirectionSpec, shift: int = 0) -> DirectionalFunctionals:
    """Functionals of the shifted path theta_shift X, with times relative to ``shift``."""
    if len(traj) == 0:
        raise InvalidPathError("empty trajectory")
    if not 0 <= shift < len(traj):
        raise InvalidPathError(f"shift {shift} outside trajectory of length {len(traj)}")
    levels = traj.levels(direction.v_star)[shift:]
    running_max = np.maximum.accumulate(levels)
    start_level = int(levels[0])
    hits = {u: first_hit(running_max, u) for u in range(start_level, int(running_max[-1]) + 1)}
    return DirectionalFunctionals(
        first_hits={u: t for u, t in hits.items() if t is not None},
        backtrack=backtrack_time(levels),
        running_max=running_max,
        horizon=len(levels) - 1,
    )


@dataclass(frozen=True)
class RegenerationRecord:
    times: Tuple[int, ...]
    levels: Tuple[int, ...]
    horizon: int
    censored_tail: bool
    censored_times: Tuple[int, ...] = ()
    confirm_margin: int = 1

    @property
    def count(self) -> int:
        return len(self.times)


def _first_regeneration(levels: np.ndarray, running_max: np.ndarray, suffix_min: np.ndarray, start: int) -> Optional[int]:
    """tau_1 of the path restarted at ``start`` by the S/R/M iteration.

    ``start`` is 0 or a regeneration time, so the global running maximum agrees
    with the running maximum of the restarted path from ``start`` on.
    """
    m = int(levels[start])
    while True:
        s = first_hit(running_max, m + 1)
        if s is None:
            return None
        if suffix_min[s] >= levels[s]:
            return s
        r = backtrack_time(levels, s)
        m = int(running_max[r])


def detect_regenerations(
    traj: Trajectory,
    direction: DirectionSpec,
    confirm_margin: Optional[int] = None,
) -> RegenerationRecord:
    """Regeneration times tau_1 < tau_2 < ... of ``traj`` in direction v_star.

    Args:
        traj: walk with at least one step
        direction: v_star and the default confirmation margin
        confirm_margin: levels the path must climb above a candidate before it counts;
            defaults to ``direction.margin`` of the support radius

    Returns:
        Confirmed times and levels, plus the candidates left unconfirmed at the horizon
    """
    if len(traj) < 2:
        raise InvalidPathError("regeneration detection needs at least one step")
    margin = confirm_margin or direction.margin(path_radius(traj))
    levels = traj.levels(direction.v_star)
    running_max = np.maximum.accumulate(levels)
    suffix_min = np.minimum.accumulate(levels[::-1])[::-1]
    top = int(running_max[-1])

    candidates: List[int] = []
    start = 0
    while True:
        tau = _first_regeneration(levels, running_max, suffix_min, start)
        if tau is None:
            break
        candidates.append(tau)
        start = tau

    confirmed = [t for t in candidates if top >= levels[t] + margin]
    unconfirmed = candidates[len(confirmed):]
    return RegenerationRecord(
        times=tuple(confirmed),
        levels=tuple(int(levels[t]) for t in confirmed),
        horizon=traj.n_steps,
        censored_tail=bool(unconfirmed),
        censored_times=tuple(unconfirmed),
        confirm_margin=margin,
    )


def regeneration_oracle(
    traj: Trajectory,
    direction: DirectionSpec,
    confirm_margin: Optional[int] = None,
) -> List[int]:
    """Brute-force scan: n is confirmed iff sup_{m<n} l_m < l_n <= inf_{m>=n} l_m and top >= l_n + margin."""
    margin = confirm_margin or direction.margin(path_radius(traj))
    levels = [int(x) for x in traj.levels(direction.v_star)]
    top = max(levels)
    return [
        n for n in range(1, len(levels))
        if max(levels[:n]) < levels[n] <= min(levels[n:]) and top >= levels[n] + margin
    ]


@dataclass(frozen=True)
class FirstBlock:
    duration: int
    displacement: Tuple[int, ...]
    sup_norm: float


@dataclass(frozen=True, eq=False)
class BlockSummary:
    """Blocks [tau_k, tau_{k+1}] of confirmed regenerations; [0, tau_1] is kept apart."""

    durations: np.ndarray
    displacements: np.ndarray
    sup_norms: np.ndarray
    first_block: Optional[FirstBlock] = None

    def __len__(self) -> int:
        return int(self.durations.shape[0])

    @classmethod
    def empty(cls, dimension: int, first_block: Optional[FirstBlock] = None) -> "BlockSummary":
        return cls(
            durations=np.zeros(0, dtype=np.int64),
            displacements=np.zeros((0, dimension), dtype=np.int64),
            sup_norms=np.zeros(0),
            first_block=first_block,
        )

    @classmethod
    def pooled(cls, summaries: Sequence["BlockSummary"], dimension: int) -> "BlockSummary":
        """i.i.d. blocks of several walks concatenated in the given order."""
        parts = [s for s in summaries if len(s)]
        if not parts:
            return cls.empty(dimension)
        return cls(
            durations=np.concatenate([s.durations for s in parts]),
            displacements=np.vstack([s.displacements for s in parts]),
            sup_norms=np.concatenate([s.sup_norms for s in parts]),
        )


def _segment(traj: Trajectory, a: int, b: int) -> Tuple[int, np.ndarray, float]:
    rel = traj.sites[a:b + 1] - traj.sites[a]
    return b - a, rel[-1], float(np.sqrt((rel ** 2).sum(axis=1)).max())


def blocks(record: RegenerationRecord, traj: Trajectory) -> BlockSummary:
    """Duration, displacement and sup-norm of every confirmed block."""
    d = traj.dimension
    times = record.times
    first = None
    if times:
        dur, disp, sup = _segment(traj, 0, times[0])
        first = FirstBlock(duration=dur, displacement=tuple(int(c) for c in disp), sup_norm=sup)
    if len(times) < 2:
        return BlockSummary.empty(d, first)

    segments = [_segment(traj, a, b) for a, b in zip(times[:-1], times[1:])]
    return BlockSummary(
        durations=np.array([s[0] for s in segments], dtype=np.int64),
        displacements=np.array([s[1] for s in segments], dtype=np.int64).reshape(-1, d),
        sup_norms=np.array([s[2] for s in segments]),
        first_block=first,
    )


def blocks_table(record: RegenerationRecord, traj: Trajectory, replicate: Optional[int] = None) -> pd.DataFrame:
    """One row per block: the first block, the i.i.d. blocks, and the censored tail."""
    times = record.times
    segments = []
    if times:
        segments.append((0, times[0], "first"))
        segments.extend((a, b, "block") for a, b in zip(times[:-1], times[1:]))
    tail_start = times[-1] if times else 0
    if tail_start < traj.n_steps:
        segments.append((tail_start, traj.n_steps, "censored-tail"))

    rows = []
    for k, (a, b, kind) in enumerate(segments):
        dur, disp, sup = _segment(traj, a, b)
        row = {
            "replicate": replicate,
            "env_seed": traj.env_seed,
            "walk_seed": traj.walk_seed,
            "block": k,
            "start": a,
            "duration": dur,
        }
        row.update({f"dx{i}": int(c) for i, c in enumerate(disp)})
        row.update({"sup_norm": sup, "first_block": kind == "first", "censored": kind == "censored-tail"})
        rows.append(row)
    return pd.DataFrame(rows)


def tail_index(samples: Iterable[float], k_top: Optional[int] = None) -> EstimateWithCI:
    """Hill estimate of the tail index from the k_top largest samples.

    Returns the index 1 / mean(ln X_(i) / X_(k_top+1)) with standard error index / sqrt(k_top).
    """
    x = np.asarray(list(samples), dtype=float)
    if x.size == 0 or np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise ValueError("tail_index needs finite positive samples")
    if k_top is None:
        k_top = max(2, int(np.sqrt(x.size)))
    if not 2 <= k_top < x.size:
        raise ValueError(f"k_top must satisfy 2 <= k_top < {x.size}, got {k_top}")

    ordered = np.sort(x)[::-1]
    log_ratios = np.log(ordered[:k_top]) - np.log(ordered[k_top])
    mean_log = log_ratios.mean()
    if mean_log <= 0:
        raise ValueError("degenerate samples: the top order statistics are all tied")
    index = 1.0 / mean_log
    return EstimateWithCI(value=float(index), stderr=float(index / np.sqrt(k_top)), replicates=int(k_top))


def t_gamma_diagnostic(block_sup_norms: Iterable[float], gamma: float, c_grid: Iterable[float]) -> pd.DataFrame:
    """Empirical means of exp(c * sup^gamma) per c, flagged unstable when one sample dominates."""
    s = np.asarray(list(block_sup_norms), dtype=float)
    if s.size == 0:
        raise ValueError("t_gamma_diagnostic needs at least one sample")
    powered = s ** gamma
    rows = []
    for c in c_grid:
        exponents = float(c) * powered
        total = logsumexp(exponents)
        log_mean = total - np.log(s.size)
        max_share = float(np.exp(exponents.max() - total))
        with np.errstate(over="ignore"):
            mean = 1.0 if c == 0 else float(np.exp(log_mean))
        rows.append({
            "c": float(c),
            "gamma": float(gamma),
            "mean": mean,
            "log_mean": float(log_mean),
            "max_share": max_share,
            "unstable": bool(max_share > UNSTABLE_SHARE or not np.isfinite(mean)),
            "samples": int(s.size),
        })
    return pd.DataFrame(rows)
