from .environment import QuenchedEnvironment, env_at, sample_dirichlet
from .experiments import run_experiment
from .joint_regeneration import joint_regeneration, joint_regeneration_oracle, time_change
from .regeneration import detect_regenerations
from .seeding import derive_seeds
from .walks import Trajectory, simulate, simulate_pair, step

__all__ = [
    "QuenchedEnvironment",
    "Trajectory",
    "derive_seeds",
    "detect_regenerations",
    "env_at",
    "joint_regeneration",
    "joint_regeneration_oracle",
    "run_experiment",
    "sample_dirichlet",
    "simulate",
    "simulate_pair",
    "step",
    "time_change",
]
