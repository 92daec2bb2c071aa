"""Random environments: site laws, quenched realizations and Dirichlet diagnostics."""

import math
from functools import lru_cache, reduce
from typing import Iterable, Tuple

import numpy as np
import pandas as pd
from numpy.random import Generator

from models.schemas import (
    ConditionReport,
    DirichletParams,
    DirichletReport,
    EnvironmentKind,
    EnvironmentSpec,
    ProbVector,
    StepSupport,
)
from services.seeding import make_rng, site_rng
from utils import SamplingError, get_logger

logger = get_logger(__name__)

MAX_GAMMA_ATTEMPTS = 100
SITE_CACHE_SIZE = 1 << 17


def _gamma(alpha: float, stream: Generator) -> float:
    # Gamma(a) = Gamma(a + 1) * U^(1/a) for small shapes
    if alpha < 1.0:
        return stream.standard_gamma(alpha + 1.0) * stream.random() ** (1.0 / alpha)
    return stream.standard_gamma(alpha)


def sample_dirichlet(params: DirichletParams, stream: Generator) -> ProbVector:
    """Draw one Dirichlet(alphas) vector by normalizing independent Gamma(alpha_i, 1) draws.

    Raises:
        SamplingError: if 100 consecutive attempts underflow or overflow.
    """
    for attempt in range(MAX_GAMMA_ATTEMPTS):
        draws = np.array([_gamma(a, stream) for a in params.alphas])
        total = draws.sum()
        if np.all(np.isfinite(draws)) and np.isfinite(total) and total > 0:
            return ProbVector(probs=tuple(draws / total))
        logger.debug(f"Degenerate gamma draw on attempt {attempt + 1}, resampling")
    raise SamplingError(
        f"Dirichlet sampling failed after {MAX_GAMMA_ATTEMPTS} attempts for alphas={params.alphas}"
    )


class QuenchedEnvironment:
    """One realization of an i.i.d. environment, evaluated lazily site by site.

    The vector at a site depends only on ``(env_seed, site)``; the per-instance
    cache only avoids redrawing it.
    """

    def __init__(self, env_seed: int, spec: EnvironmentSpec, cache_size: int = SITE_CACHE_SIZE):
        self.env_seed = int(env_seed)
        self.spec = spec
        self.steps = np.array(spec.support.steps, dtype=np.int64)
        self._vector = lru_cache(maxsize=cache_size)(self._draw)
        self._cdf = lru_cache(maxsize=cache_size)(self._cumulative)

    def __repr__(self) -> str:
        return f"QuenchedEnvironment(env_seed={self.env_seed}, kind={self.spec.kind.value})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, QuenchedEnvironment)
            and self.env_seed == other.env_seed
            and self.spec == other.spec
        )

    def __hash__(self) -> int:
        return hash((self.env_seed, self.spec))

    def _draw(self, site: Tuple[int, ...]) -> ProbVector:
        spec = self.spec
        if spec.kind is EnvironmentKind.DETERMINISTIC:
            return spec.probs
        stream = site_rng(self.env_seed, site)
        if spec.kind is EnvironmentKind.DIRICHLET:
            return sample_dirichlet(spec.dirichlet, stream)
        weights = np.cumsum([c.weight for c in spec.components])
        idx = min(int(np.searchsorted(weights, stream.random(), side="right")), len(weights) - 1)
        return spec.components[idx].probs

    def _cumulative(self, site: Tuple[int, ...]) -> np.ndarray:
        cdf = np.cumsum(self._vector(site).probs)
        cdf[-1] = 1.0
        return cdf

    def env_at(self, site: Iterable[int]) -> ProbVector:
        return self._vector(tuple(int(c) for c in site))

    def cdf_at(self, site: Tuple[int, ...]) -> np.ndarray:
        return self._cdf(site)


class ResampledEnvironment(QuenchedEnvironment):
    """``base_seed``'s environment with the vectors on ``sites`` redrawn from ``resample_seed``.

    Off ``sites`` it agrees with ``QuenchedEnvironment(base_seed, spec)``.
    """

    def __init__(
        self,
        base_seed: int,
        spec: EnvironmentSpec,
        resample_seed: int,
        sites: Iterable[Iterable[int]],
        cache_size: int = SITE_CACHE_SIZE,
    ):
        super().__init__(base_seed, spec, cache_size)
        self.resample_seed = int(resample_seed)
        self.sites = frozenset(tuple(int(c) for c in s) for s in sites)
        self._resampled = QuenchedEnvironment(resample_seed, spec, cache_size)

    def __repr__(self) -> str:
        return (
            f"ResampledEnvironment(env_seed={self.env_seed}, resample_seed={self.resample_seed}, "
            f"sites={len(self.sites)})"
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ResampledEnvironment)
            and super().__eq__(other)
            and self.resample_seed == other.resample_seed
            and self.sites == other.sites
        )

    def __hash__(self) -> int:
        return hash((self.env_seed, self.resample_seed, self.sites, self.spec))

    def _draw(self, site: Tuple[int, ...]) -> ProbVector:
        if site in self.sites:
            return self._resampled.env_at(site)
        return super()._draw(site)


def env_at(env: QuenchedEnvironment, site: Iterable[int]) -> ProbVector:
    """Site vector of ``env`` at ``site``; deterministic in (env_seed, site)."""
    return env.env_at(site)


def kappa(params: DirichletParams) -> float:
    """2 * sum(alpha) - max_i (alpha_i + alpha_{i+d})."""
    d = params.dimension_d
    a = params.alphas
    return 2.0 * math.fsum(a) - max(a[i] + a[i + d] for i in range(d))


def t_gamma_sufficient(params: DirichletParams) -> bool:
    """Sufficient condition for (T)_gamma, all gamma in (0, 1]: sum_i |alpha_i - alpha_{i+d}| > 1."""
    d = params.dimension_d
    a = params.alphas
    return math.fsum(abs(a[i] - a[i + d]) for i in range(d)) > 1.0


def dirichlet_report(params: DirichletParams) -> DirichletReport:
    """Closed-form diagnostics of a Dirichlet environment.

    Args:
        params: Dirichlet weights (alpha_1..alpha_2d), paired as e_i and -e_i

    Returns:
        kappa, the sufficient ballisticity condition, the implied moment order, the
        annealed mean drift and whether the functional CLT applies
    """
    d = params.dimension_d
    a = params.alphas
    total = math.fsum(a)
    drift = [(a[i] - a[i + d]) / total for i in range(d)]
    k = kappa(params)
    sufficient = t_gamma_sufficient(params)
    return DirichletReport(
        alphas=list(a),
        kappa=k,
        t_gamma_sufficient=sufficient,
        moment_order=k,
        mean_drift=drift,
        non_symmetric=max(abs(a[i] - a[i + d]) for i in range(d)) > 0,
        # the sufficient condition also gives transience
        fclt_applicable=sufficient and k > 2.0,
    )


def check_conditions(spec: EnvironmentSpec) -> ConditionReport:
    """Bounded steps and non-degeneracy of the admissible step set."""
    steps = spec.support.steps
    zero = tuple(0 for _ in range(spec.dimension))

    if spec.kind is EnvironmentKind.DIRICHLET:
        admissible = list(steps)
        two_point_mass = 0.0
    else:
        if spec.kind is EnvironmentKind.DETERMINISTIC:
            weighted = [(1.0, spec.probs)]
        else:
            weighted = [(c.weight, c.probs) for c in spec.components]
        mean = sum(w * vec.as_array() for w, vec in weighted)
        admissible = [z for z, m in zip(steps, mean) if m > 0]
        two_point_mass = math.fsum(w for w, vec in weighted if _is_two_point(vec, steps, zero))

    r0 = max(max(abs(c) for c in z) for z in admissible)
    rank = np.linalg.matrix_rank(np.array(admissible, dtype=float))
    return ConditionReport(
        radius_r0=int(r0),
        admissible_steps=admissible,
        bounded_steps=True,
        admissible_not_on_line=bool(rank >= 2),
        not_two_point=two_point_mass < 1.0,
    )


def _is_two_point(vec: ProbVector, steps, zero) -> bool:
    mass = {z: p for z, p in zip(steps, vec.probs) if p > 0}
    stay = mass.pop(zero, 0.0)
    return len(mass) <= 1 and math.isclose(stay + sum(mass.values()), 1.0)


def dirichlet_moment_check(params: DirichletParams, draws: int, seed: int) -> pd.DataFrame:
    """Empirical coordinate means and variances against the Dirichlet moment identities."""
    stream = make_rng(seed)
    samples = np.array([sample_dirichlet(params, stream).probs for _ in range(draws)])
    a = np.asarray(params.alphas)
    a0 = a.sum()

    mean = samples.mean(axis=0)
    var = samples.var(axis=0, ddof=1)
    centered = samples - mean
    m4 = (centered ** 4).mean(axis=0)

    frame = pd.DataFrame({
        "coordinate": np.arange(len(a)),
        "alpha": a,
        "mean": mean,
        "mean_se": np.sqrt(var / draws),
        "mean_theory": a / a0,
        "var": var,
        "var_se": np.sqrt(np.maximum(m4 - var ** 2, 0.0) / draws),
        "var_theory": a * (a0 - a) / (a0 ** 2 * (a0 + 1.0)),
    })
    frame["mean_z"] = (frame["mean"] - frame["mean_theory"]) / frame["mean_se"]
    frame["var_z"] = (frame["var"] - frame["var_theory"]) / frame["var_se"]
    logger.info(
        f"Dirichlet moment check: draws={draws}, "
        f"max |mean z|={frame['mean_z'].abs().max():.2f}, max |var z|={frame['var_z'].abs().max():.2f}"
    )
    return frame


def lattice_span(support: StepSupport, v_star: Iterable[int]) -> int:
    """gcd of the nonzero one-step levels z . v_star; 1 when there are none."""
    v = np.asarray(tuple(v_star), dtype=np.int64)
    levels = [abs(int(np.dot(z, v))) for z in support.steps]
    levels = [lvl for lvl in levels if lvl > 0]
    if not levels:
        return 1
    return reduce(math.gcd, levels)
