from .schemas import (
    ConditionReport,
    DirectionSpec,
    DirichletParams,
    DirichletReport,
    EnvironmentKind,
    EnvironmentSpec,
    EstimateWithCI,
    ExperimentConfig,
    ExperimentName,
    FunctionalKind,
    MixtureComponent,
    PairMode,
    ProbVector,
    RunManifest,
    StepSupport,
    TestFunctional,
    nearest_neighbour_steps,
)

__all__ = [
    "ConditionReport",
    "DirectionSpec",
    "DirichletParams",
    "DirichletReport",
    "EnvironmentKind",
    "EnvironmentSpec",
    "EstimateWithCI",
    "ExperimentConfig",
    "ExperimentName",
    "FunctionalKind",
    "MixtureComponent",
    "PairMode",
    "ProbVector",
    "RunManifest",
    "StepSupport",
    "TestFunctional",
    "nearest_neighbour_steps",
]
