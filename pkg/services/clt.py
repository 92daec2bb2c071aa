"""Scaled path processes, renewal estimators and the quenched-variance diagnostic."""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from models.schemas import (
    DirectionSpec,
    EnvironmentKind,
    EnvironmentSpec,
    FunctionalKind,
    TestFunctional,
)
from services.environment import QuenchedEnvironment
from services.regeneration import BlockSummary, blocks, detect_regenerations
from services.runner import map_replicas
from services.seeding import derive_seeds, make_rng
from services.walks import Trajectory, simulate
from utils import (
    InsufficientDataError,
    InvalidPathError,
    NonLipschitzFunctionalError,
    RwreError,
    get_logger,
)

logger = get_logger(__name__)

MIN_VELOCITY_BLOCKS = 30
MIN_COVARIANCE_BLOCKS = 100
MIN_NORMALITY_SAMPLES = 200
MIN_ENVS = 50
MIN_WALKS_PER_ENV = 20
PSD_TOLERANCE = 1e-10
LIPSCHITZ_SLACK = 1e-12
BOOTSTRAP_RESAMPLES = 200


@dataclass(frozen=True, eq=False)
class ScaledPath:
    """Polygonal path t -> (X_[nt] - [nt] v) / sqrt(n) on [0, T], vertices at k/n."""

    n: int
    horizon_T: int
    vertices: np.ndarray  # (nT + 1, d)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.vertices.shape[0]) / self.n

    def at(self, t: float) -> np.ndarray:
        if not 0.0 <= t <= self.horizon_T:
            raise ValueError(f"t={t} outside [0, {self.horizon_T}]")
        grid = self.times
        return np.array([np.interp(t, grid, self.vertices[:, i]) for i in range(self.vertices.shape[1])])

    def sup_distance(self, other: "ScaledPath") -> float:
        """Sup over [0, T] of the largest coordinate gap; attained at a vertex."""
        return float(np.abs(self.vertices - other.vertices).max())


def scaled_path(traj: Trajectory, n: int, v: Sequence[float], T: int = 1) -> ScaledPath:
    """Diffusively rescaled, centered polygon of ``traj`` on [0, T].

    Vertex k is (X_k - k v) / sqrt(n) at time k / n; the path is linear in between.

    Args:
        traj: walk of at least nT steps
        n: time scale
        v: centering velocity
        T: horizon in rescaled time

    Returns:
        The polygon with nT + 1 vertices

    Raises:
        InvalidPathError: if ``traj`` is shorter than nT + 1 sites
    """
    if n <= 0 or T <= 0:
        raise ValueError("n and T must be positive")
    last = n * T
    if len(traj) < last + 1:
        raise InvalidPathError(f"trajectory of length {len(traj)} is shorter than nT + 1 = {last + 1}")
    k = np.arange(last + 1)[:, None]
    centered = traj.sites[: last + 1] - k * np.asarray(v, dtype=float)[None, :]
    return ScaledPath(n=n, horizon_T=T, vertices=centered / math.sqrt(n))


def evaluate_functional(F: TestFunctional, path: ScaledPath) -> float:
    """F(path) = clip(scale * g(path), -clip_bound, clip_bound)."""
    if F.coordinate >= path.vertices.shape[1]:
        raise ValueError(f"coordinate {F.coordinate} outside dimension {path.vertices.shape[1]}")
    column = path.vertices[:, F.coordinate]
    if F.kind is FunctionalKind.COORDINATE_SUP:
        g = float(np.abs(column).max())
    elif F.kind is FunctionalKind.ENDPOINT:
        g = float(column[-1])
    else:
        g = float(path.at(min(F.t, path.horizon_T))[F.coordinate])
    return float(np.clip(F.scale * g, -F.clip_bound, F.clip_bound))


def lipschitz_audit(
    F: TestFunctional,
    trials: int = 1000,
    seed: int = 0,
    n: int = 16,
    dimension: int = 2,
) -> int:
    """Number of random path pairs (f, g) with |F(f) - F(g)| > sup|f - g| + 1e-12.

    Pairs mix large independent paths with small perturbations inside the
    clipping window, where a gain above 1 is always visible.
    """
    rng = make_rng(seed)
    T = max(1, math.ceil(F.t))
    size = (n * T + 1, dimension)
    violations = 0
    for trial in range(trials):
        base = rng.normal(0.0, F.clip_bound / 2.0, size=size)
        if trial % 2:
            other = rng.normal(0.0, F.clip_bound, size=size)
        else:
            other = base + rng.normal(0.0, F.clip_bound * 1e-3, size=size)
        f = ScaledPath(n=n, horizon_T=T, vertices=base)
        g = ScaledPath(n=n, horizon_T=T, vertices=other)
        if abs(evaluate_functional(F, f) - evaluate_functional(F, g)) > f.sup_distance(g) + LIPSCHITZ_SLACK:
            violations += 1
    if violations:
        logger.warning(f"Lipschitz audit of {F.kind.value} (scale={F.scale}): {violations}/{trials} violations")
    return violations


def require_lipschitz(F: TestFunctional, dimension: int = 2, trials: int = 1000, seed: int = 0) -> None:
    """Raise unless the audit finds no violation on random paths of the given dimension.

    Args:
        F: functional to audit
        dimension: lattice dimension of the paths F will be applied to
        trials: random path pairs to try
        seed: audit stream seed

    Raises:
        NonLipschitzFunctionalError: if any pair violates the bound
    """
    violations = lipschitz_audit(F, trials=trials, seed=seed, dimension=dimension)
    if violations:
        raise NonLipschitzFunctionalError(
            f"functional {F.kind.value} with scale {F.scale} failed the Lipschitz audit "
            f"({violations}/{trials} violations)"
        )


@dataclass(frozen=True)
class VelocityEstimate:
    v: Tuple[float, ...]
    stderr: Tuple[float, ...]
    n_blocks: int

    def is_nonzero(self, v_star: Sequence[int], z: float = 2.0) -> bool:
        """Lower confidence bound of v . v_star above 0."""
        w = np.asarray(v_star, dtype=float)
        proj = float(np.dot(self.v, w))
        se = float(np.sqrt(np.dot(np.square(self.stderr), np.square(w))))
        return proj - z * se > 0


def estimate_velocity(summary: BlockSummary) -> VelocityEstimate:
    """Ratio of means E[displacement] / E[duration] over i.i.d. blocks.

    Standard errors by the delta method: residuals displacement - duration * v.
    """
    n = len(summary)
    if n < MIN_VELOCITY_BLOCKS:
        raise InsufficientDataError(f"velocity needs at least {MIN_VELOCITY_BLOCKS} blocks, got {n}")
    durations = summary.durations.astype(float)
    disp = summary.displacements.astype(float)
    mean_dur = durations.mean()
    v = disp.mean(axis=0) / mean_dur
    resid = disp - durations[:, None] * v[None, :]
    se = resid.std(axis=0, ddof=1) / (math.sqrt(n) * mean_dur)
    return VelocityEstimate(v=tuple(float(c) for c in v), stderr=tuple(float(c) for c in se), n_blocks=n)


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    matrix: np.ndarray
    stderr: np.ndarray
    n_blocks: int
    min_eigenvalue: float


def annealed_covariance(summary: BlockSummary, v: Sequence[float]) -> CovarianceEstimate:
    """Renewal estimator E[(D - tau v)(D - tau v)^T] / E[tau] with per-entry standard errors."""
    n = len(summary)
    if n < MIN_COVARIANCE_BLOCKS:
        raise InsufficientDataError(f"covariance needs at least {MIN_COVARIANCE_BLOCKS} blocks, got {n}")
    durations = summary.durations.astype(float)
    resid = summary.displacements.astype(float) - durations[:, None] * np.asarray(v, dtype=float)[None, :]
    outer = resid[:, :, None] * resid[:, None, :]
    mean_dur = durations.mean()
    sigma = outer.mean(axis=0) / mean_dur
    sigma = 0.5 * (sigma + sigma.T)
    z = outer - sigma[None, :, :] * durations[:, None, None]
    se = z.std(axis=0, ddof=1) / (math.sqrt(n) * mean_dur)

    min_eig = float(np.linalg.eigvalsh(sigma).min())
    if min_eig < -PSD_TOLERANCE:
        raise RwreError(f"covariance estimate is not positive semidefinite (min eigenvalue {min_eig})")
    return CovarianceEstimate(matrix=sigma, stderr=se, n_blocks=n, min_eigenvalue=min_eig)


def _pilot_replica(task) -> BlockSummary:
    spec, direction, horizon, seed, w = task
    env = QuenchedEnvironment(derive_seeds(seed, "pilot-env", w), spec)
    traj = simulate(env, tuple([0] * spec.dimension), horizon, derive_seeds(seed, "pilot-walk", w))
    return blocks(detect_regenerations(traj, direction), traj)


def pilot_velocity(
    spec: EnvironmentSpec,
    direction: DirectionSpec,
    walks: int,
    horizon: int,
    seed: int,
    workers: int = 1,
) -> VelocityEstimate:
    """Velocity from the regeneration blocks of annealed walks, one environment per walk.

    Uses only the "pilot-*" seed streams, so it shares no randomness with the
    stage walks it is used to center.
    """
    tasks = [(spec, direction, horizon, seed, w) for w in range(walks)]
    summaries = map_replicas(_pilot_replica, tasks, workers, desc="pilot")
    pooled = BlockSummary.pooled(summaries, spec.dimension)
    estimate = estimate_velocity(pooled)
    logger.info(f"Pilot velocity: v={estimate.v} from {estimate.n_blocks} blocks")
    return estimate


def between_environment_variance(values: np.ndarray) -> Tuple[float, float, float]:
    """Split an envs x R table of F values into between- and within-environment variance.

    Args:
        values: one row per environment, one column per walk in it

    Returns:
        (Var_between, mean Var_within, Var_between - Var_within / R). The last entry
        estimates the variance of the quenched mean and may be negative.
    """
    values = np.asarray(values, dtype=float)
    R = values.shape[1]
    var_between = float(values.mean(axis=1).var(ddof=1))
    var_within = float(values.var(axis=1, ddof=1).mean()) if R > 1 else 0.0
    return var_between, var_within, var_between - var_within / R


def bootstrap_stderr(values: np.ndarray, resamples: int, seed: int) -> float:
    """Bootstrap standard error of the floored corrected variance, resampling environments."""
    rng = make_rng(seed)
    envs = values.shape[0]
    draws = np.empty(resamples)
    for b in range(resamples):
        idx = rng.integers(0, envs, size=envs)
        draws[b] = max(0.0, between_environment_variance(values[idx])[2])
    return float(draws.std(ddof=1))


def _stage_replica(task) -> List[float]:
    spec, F, bn, T, v, env_seed, walk_seeds = task
    env = QuenchedEnvironment(env_seed, spec)
    origin = tuple([0] * spec.dimension)
    out = []
    for ws in walk_seeds:
        traj = simulate(env, origin, bn * T, ws)
        out.append(evaluate_functional(F, scaled_path(traj, bn, v, T)))
    return out


def quenched_variance_curve(
    spec: EnvironmentSpec,
    F: TestFunctional,
    b: float,
    n_max_stage: int,
    envs: int,
    walks_per_env: int,
    seed: int,
    direction: Optional[DirectionSpec] = None,
    first_stage: int = 0,
    T: int = 1,
    velocity: Optional[Sequence[float]] = None,
    pilot_walks: int = 40,
    workers: int = 1,
    resamples: int = BOOTSTRAP_RESAMPLES,
) -> pd.DataFrame:
    """Environment variance of the quenched mean of F(W^([b^n])) for each stage n.

    Every stage draws ``envs`` fresh environments and ``walks_per_env`` walks in
    each; the between-environment variance of the per-environment means is
    corrected for within-environment noise and floored at 0. In a deterministic
    environment all environments coincide and the corrected variance is 0.
    """
    if F.coordinate >= spec.dimension:
        raise ValueError(f"functional coordinate {F.coordinate} outside dimension {spec.dimension}")
    require_lipschitz(F, dimension=spec.dimension)
    if not 1.0 < b <= 2.0:
        raise ValueError(f"b must lie in (1, 2], got {b}")
    if envs < MIN_ENVS or walks_per_env < MIN_WALKS_PER_ENV:
        logger.warning(
            f"quenched variance with envs={envs}, walks_per_env={walks_per_env} "
            f"(below {MIN_ENVS} x {MIN_WALKS_PER_ENV}); estimates are rough"
        )
    if envs < 2 or walks_per_env < 2:
        raise InsufficientDataError("quenched variance needs at least 2 environments and 2 walks each")
    direction = direction or DirectionSpec.axis(spec.dimension)

    if velocity is None:
        pilot_horizon = max(1000, int(math.floor(b ** n_max_stage)) * T)
        velocity = pilot_velocity(spec, direction, pilot_walks, pilot_horizon, seed, workers).v
    v = tuple(float(c) for c in velocity)
    single_env = spec.kind is EnvironmentKind.DETERMINISTIC

    rows = []
    for stage in range(first_stage, n_max_stage + 1):
        bn = int(math.floor(b ** stage))
        tasks = []
        for e in range(envs):
            env_seed = derive_seeds(seed, f"stage-{stage}-env", e)
            walk_seeds = [derive_seeds(env_seed, f"stage-{stage}-walk", j) for j in range(walks_per_env)]
            tasks.append((spec, F, bn, T, v, env_seed, walk_seeds))
        values = np.array(map_replicas(_stage_replica, tasks, workers, desc=f"stage {stage}"))

        var_raw, var_within, unfloored = between_environment_variance(values)
        if single_env:
            unfloored, se = 0.0, 0.0
        else:
            se = bootstrap_stderr(values, resamples, derive_seeds(seed, "bootstrap", stage))
        rows.append({
            "n": stage,
            "bn": bn,
            "var_raw": var_raw,
            "var_within": var_within,
            "var_unfloored": unfloored,
            "var_corrected": max(0.0, unfloored),
            "bootstrap_se": se,
            "envs": envs,
            "walks_per_env": walks_per_env,
        })
        logger.info(f"Stage {stage} (bn={bn}): corrected variance {max(0.0, unfloored):.6g} ± {se:.2g}")
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class NormalityReport:
    samples: int
    mean: float
    std: float
    skewness: float
    skewness_se: float
    excess_kurtosis: float
    kurtosis_se: float
    ks_distance: float
    ks_pvalue: float
    ks_critical: float
    degenerate: bool
    max_sigmas: float

    @property
    def moments_pass(self) -> bool:
        return (
            not self.degenerate
            and abs(self.skewness) < self.max_sigmas * self.skewness_se
            and abs(self.excess_kurtosis) < self.max_sigmas * self.kurtosis_se
        )

    @property
    def ks_pass(self) -> bool:
        return not self.degenerate and self.ks_distance < self.ks_critical


def normality_diagnostic(samples: Sequence[float], max_sigmas: float = 5.0) -> NormalityReport:
    """Skewness, excess kurtosis and KS distance to the fitted normal.

    The KS critical value is the asymptotic 1% level 1.63 / sqrt(N).
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < MIN_NORMALITY_SAMPLES:
        logger.warning(f"normality diagnostic on {n} samples (< {MIN_NORMALITY_SAMPLES})")
    mean = float(x.mean()) if n else float("nan")
    std = float(x.std(ddof=1)) if n > 1 else 0.0
    critical = 1.63 / math.sqrt(n) if n else float("nan")
    if n < 3 or std == 0.0:
        return NormalityReport(
            samples=n, mean=mean, std=std,
            skewness=float("nan"), skewness_se=float("nan"),
            excess_kurtosis=float("nan"), kurtosis_se=float("nan"),
            ks_distance=float("nan"), ks_pvalue=float("nan"), ks_critical=critical,
            degenerate=True, max_sigmas=max_sigmas,
        )
    ks = stats.kstest(x, stats.norm(loc=mean, scale=std).cdf)
    return NormalityReport(
        samples=n,
        mean=mean,
        std=std,
        skewness=float(stats.skew(x)),
        skewness_se=math.sqrt(6.0 / n),
        excess_kurtosis=float(stats.kurtosis(x, fisher=True)),
        kurtosis_se=math.sqrt(24.0 / n),
        ks_distance=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        ks_critical=critical,
        degenerate=False,
        max_sigmas=max_sigmas,
    )


def _endpoint_chunk(task) -> List[float]:
    env_seed, spec, n, v, coordinate, walk_seeds = task
    env = QuenchedEnvironment(env_seed, spec)
    origin = tuple([0] * spec.dimension)
    scale = math.sqrt(n)
    out = []
    for ws in walk_seeds:
        traj = simulate(env, origin, n, ws)
        out.append(float((traj.sites[-1][coordinate] - n * v[coordinate]) / scale))
    return out


def endpoint_samples(
    env: QuenchedEnvironment,
    n: int,
    walks: int,
    v: Sequence[float],
    seed: int,
    coordinate: int = 0,
    workers: int = 1,
) -> np.ndarray:
    """(X_n - n v) . e_coordinate / sqrt(n) for ``walks`` independent walks in one environment."""
    seeds = [derive_seeds(seed, "endpoint-walk", j) for j in range(walks)]
    chunks = max(1, workers * 4)
    size = math.ceil(walks / chunks)
    v = tuple(float(c) for c in v)
    tasks = [
        (env.env_seed, env.spec, n, v, coordinate, seeds[i:i + size])
        for i in range(0, walks, size)
    ]
    parts = map_replicas(_endpoint_chunk, tasks, workers, desc="endpoints")
    return np.array([x for part in parts for x in part])


def quenched_annealed_check(
    spec: EnvironmentSpec,
    n: int,
    envs: int,
    walks_per_env: int,
    v: Sequence[float],
    seed: int,
    coordinate: int = 0,
    workers: int = 1,
) -> Tuple[pd.DataFrame, dict]:
    """Per-environment quenched endpoint variances against the pooled (annealed) variance.

    The annealed variance splits into the mean quenched variance plus the variance
    of the quenched means; both parts are reported.
    """
    env_seeds, samples = [], []
    for e in range(envs):
        env_seed = derive_seeds(seed, "qa-env", e)
        env = QuenchedEnvironment(env_seed, spec)
        env_seeds.append(env_seed)
        samples.append(
            endpoint_samples(env, n, walks_per_env, v, derive_seeds(seed, "qa-walks", e), coordinate, workers)
        )
    frame, summary = quenched_annealed_summary(env_seeds, samples)
    logger.info(
        f"Quenched/annealed check at n={n}: annealed={summary['annealed_var']:.4f}, "
        f"mean quenched={summary['mean_quenched_var']:.4f}"
    )
    return frame, summary


def quenched_annealed_summary(env_seeds: Sequence[int], samples: Sequence[np.ndarray]) -> Tuple[pd.DataFrame, dict]:
    frame = pd.DataFrame({
        "env": np.arange(len(samples)),
        "env_seed": [int(s) for s in env_seeds],
        "mean": [float(x.mean()) for x in samples],
        "var": [float(x.var(ddof=1)) for x in samples],
    })
    envs = len(samples)
    summary = {
        "annealed_var": float(np.concatenate(samples).var(ddof=1)),
        "mean_quenched_var": float(frame["var"].mean()),
        "quenched_var_se": float(frame["var"].std(ddof=1) / math.sqrt(envs)) if envs > 1 else 0.0,
        "var_of_quenched_means": float(frame["mean"].var(ddof=1)) if envs > 1 else 0.0,
        "envs": envs,
        "walks_per_env": int(min(len(x) for x in samples)),
    }
    return frame, summary
