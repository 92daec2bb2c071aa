"""Quenched random walks: single walks and pairs of walks."""

from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from numpy.random import Generator

from models.schemas import EnvironmentSpec, PairMode, ProbVector
from services.environment import QuenchedEnvironment
from services.seeding import independent_env_seed, make_rng
from utils import get_logger

logger = get_logger(__name__)

Site = Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Finite lattice path X_0..X_N together with the seeds that produced it."""

    start: Site
    sites: np.ndarray  # (N + 1, d) int64
    walk_seed: int
    env_seed: int
    radius_r0: Optional[int] = None  # step-support radius; None for hand-written paths

    def __len__(self) -> int:
        return int(self.sites.shape[0])

    @property
    def n_steps(self) -> int:
        return len(self) - 1

    @property
    def dimension(self) -> int:
        return int(self.sites.shape[1])

    def levels(self, v_star: Iterable[int]) -> np.ndarray:
        """X_n . v_star for every n, as integers."""
        return self.sites @ np.asarray(tuple(v_star), dtype=np.int64)

    def increments(self) -> np.ndarray:
        return np.diff(self.sites, axis=0)

    def same_path(self, other: "Trajectory") -> bool:
        return self.sites.shape == other.sites.shape and bool(np.array_equal(self.sites, other.sites))

    @classmethod
    def from_sites(
        cls, sites, walk_seed: int = 0, env_seed: int = 0, radius_r0: Optional[int] = None
    ) -> "Trajectory":
        """Wrap a hand-written path (tests, oracles, replays)."""
        arr = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        return cls(
            start=tuple(int(c) for c in arr[0]),
            sites=arr,
            walk_seed=walk_seed,
            env_seed=env_seed,
            radius_r0=radius_r0,
        )

    def suffix(self, shift: int) -> "Trajectory":
        """The path from time ``shift`` on, translated to start at the origin."""
        rel = self.sites[shift:] - self.sites[shift]
        return Trajectory.from_sites(rel, self.walk_seed, self.env_seed, self.radius_r0)


def _advance(env: QuenchedEnvironment, site: Site, u: float) -> Site:
    idx = int(np.searchsorted(env.cdf_at(site), u, side="right"))
    z = env.steps[idx]
    return tuple(int(a + b) for a, b in zip(site, z))


def step(env: QuenchedEnvironment, site: Sequence[int], stream: Generator) -> Site:
    """One quenched step: site + z with z drawn from env_at(site) by inverse CDF."""
    return _advance(env, tuple(int(c) for c in site), stream.random())


def simulate(
    env: QuenchedEnvironment,
    start: Sequence[int],
    n_steps: int,
    walk_seed: int,
    visit_log: Optional[Dict[Site, ProbVector]] = None,
) -> Trajectory:
    """Run a walk of ``n_steps`` steps in ``env``.

    The uniforms are drawn in one block from the walk stream; this consumes the
    stream exactly as ``n_steps`` successive calls to :func:`step` would.
    """
    if n_steps < 0:
        raise ValueError(f"n_steps must be nonnegative, got {n_steps}")
    origin: Site = tuple(int(c) for c in start)
    uniforms = make_rng(walk_seed).random(n_steps)
    path = np.empty((n_steps + 1, len(origin)), dtype=np.int64)
    path[0] = origin
    site = origin
    for k, u in enumerate(uniforms, start=1):
        if visit_log is not None:
            visit_log[site] = env.env_at(site)
        site = _advance(env, site, u)
        path[k] = site
    return Trajectory(
        start=origin,
        sites=path,
        walk_seed=int(walk_seed),
        env_seed=env.env_seed,
        radius_r0=env.spec.support.radius_r0,
    )


def pair_environments(
    env_seed: int, spec: EnvironmentSpec, mode: PairMode
) -> Tuple[QuenchedEnvironment, QuenchedEnvironment]:
    first = QuenchedEnvironment(env_seed, spec)
    if mode is PairMode.SHARED:
        return first, first
    return first, QuenchedEnvironment(independent_env_seed(env_seed), spec)


def simulate_pair(
    env_seed: int,
    spec: EnvironmentSpec,
    starts: Tuple[Sequence[int], Sequence[int]],
    n_steps: int,
    walk_seeds: Tuple[int, int],
    mode: PairMode = PairMode.SHARED,
    visit_logs: Optional[Tuple[Dict, Dict]] = None,
) -> Tuple[Trajectory, Trajectory]:
    """Two walks with independent walk randomness.

    In shared-environment mode both walks read the same environment; in
    independent-environments mode the second walk reads a derived, distinct one.

    Args:
        env_seed: seed of the first walk's environment
        spec: environment law
        starts: start sites of the two walks
        n_steps: steps per walk
        walk_seeds: two distinct walk seeds
        mode: shared or independent environments
        visit_logs: optional per-walk dicts filled with the site vectors read

    Returns:
        The two trajectories

    Raises:
        ValueError: if the walk seeds coincide
    """
    if int(walk_seeds[0]) == int(walk_seeds[1]):
        raise ValueError("walk seeds of a pair must differ")
    env, env_tilde = pair_environments(env_seed, spec, mode)
    logs = visit_logs or (None, None)
    first = simulate(env, starts[0], n_steps, walk_seeds[0], visit_log=logs[0])
    second = simulate(env_tilde, starts[1], n_steps, walk_seeds[1], visit_log=logs[1])
    logger.debug(
        f"Simulated pair: mode={mode.value}, n_steps={n_steps}, "
        f"env_seeds=({first.env_seed}, {second.env_seed})"
    )
    return first, second
