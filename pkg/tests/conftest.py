import numpy as np
import pytest

from models.schemas import DirectionSpec, EnvironmentSpec
from services.walks import Trajectory

E1 = (1, 0)
E2 = (0, 1)


def path(*sites, walk_seed: int = 0, env_seed: int = 0) -> Trajectory:
    return Trajectory.from_sites(list(sites), walk_seed=walk_seed, env_seed=env_seed)


def ray(n: int, step=E1, start=(0, 0)) -> Trajectory:
    k = np.arange(n + 1)[:, None]
    return Trajectory.from_sites(np.asarray(start) + k * np.asarray(step))


def from_moves(moves, start=(0, 0), walk_seed: int = 0) -> Trajectory:
    """Path from a string of moves: R, L, U, D."""
    table = {"R": (1, 0), "L": (-1, 0), "U": (0, 1), "D": (0, -1)}
    sites = [start]
    for m in moves:
        dx, dy = table[m]
        sites.append((sites[-1][0] + dx, sites[-1][1] + dy))
    return Trajectory.from_sites(sites, walk_seed=walk_seed)


@pytest.fixture
def direction() -> DirectionSpec:
    return DirectionSpec(v_star=E1, h=1, confirm_margin=1)


@pytest.fixture
def rightward() -> EnvironmentSpec:
    return EnvironmentSpec.deterministic_nn([1.0, 0.0, 0.0, 0.0])


@pytest.fixture
def ballistic() -> EnvironmentSpec:
    return EnvironmentSpec.dirichlet_nn([2.0, 0.5, 0.5, 0.5])


@pytest.fixture
def heavy_tail() -> EnvironmentSpec:
    return EnvironmentSpec.dirichlet_nn([1.5, 0.1, 0.3, 0.1])
