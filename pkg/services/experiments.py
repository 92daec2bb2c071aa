"""The named experiments: each turns an ExperimentConfig into tables, records and a summary.

Replica workers are module-level functions taking one task tuple, so they can be
shipped to a process pool; every task derives its own seeds from the master seed.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
import pandas as pd

from models.schemas import (
    DirectionSpec,
    EnvironmentKind,
    EnvironmentSpec,
    ExperimentConfig,
    ExperimentName,
)
from services.clt import (
    endpoint_samples,
    normality_diagnostic,
    pilot_velocity,
    quenched_annealed_summary,
    quenched_variance_curve,
)
from services.environment import (
    QuenchedEnvironment,
    check_conditions,
    dirichlet_moment_check,
    dirichlet_report,
    lattice_span,
)
from services.intersections import qn_curve
from services.joint_regeneration import (
    coupling_mismatch,
    difference_chain,
    joint_regeneration,
    joint_regeneration_oracle,
    lambda_survival,
    records_agree,
)
from services.regeneration import (
    BlockSummary,
    blocks,
    blocks_table,
    detect_regenerations,
    t_gamma_diagnostic,
    tail_index,
)
from services.runner import map_replicas
from services.seeding import derive_seeds
from services.walks import simulate, simulate_pair
from utils import ConfigError, InsufficientDataError, get_logger

logger = get_logger(__name__)


@dataclass
class ExperimentResult:
    """Everything an experiment writes; tables carry their canonical sort keys."""

    tables: Dict[str, Tuple[pd.DataFrame, List[str]]] = field(default_factory=dict)
    records: Dict[str, List[dict]] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    replicas: int = 0


def _origin(spec: EnvironmentSpec) -> Tuple[int, ...]:
    return tuple([0] * spec.dimension)


def _environment_summary(spec: EnvironmentSpec, direction: DirectionSpec) -> Dict[str, Any]:
    out: Dict[str, Any] = {
        "conditions": check_conditions(spec).model_dump(),
        "lattice_span": lattice_span(spec.support, direction.v_star),
    }
    if spec.kind is EnvironmentKind.DIRICHLET:
        out["dirichlet"] = dirichlet_report(spec.dirichlet).model_dump()
    return out


# regen-tail

def _regen_replica(task):
    spec, direction, horizon, seed, r = task
    env_seed = derive_seeds(seed, "env", r)
    walk_seed = derive_seeds(seed, "walk", r)
    traj = simulate(QuenchedEnvironment(env_seed, spec), _origin(spec), horizon, walk_seed)
    record = detect_regenerations(traj, direction)
    summary = blocks(record, traj)
    first = summary.first_block
    tau1 = {
        "replicate": r,
        "env_seed": env_seed,
        "walk_seed": walk_seed,
        "tau1": first.duration if first else None,
        "first_block_sup": first.sup_norm if first else None,
        "regenerations": record.count,
        "censored": first is None,
    }
    return blocks_table(record, traj, replicate=r), tau1, summary


def run_regen_tail(config: ExperimentConfig, workers: int) -> ExperimentResult:
    spec, direction = config.environment, config.direction
    tasks = [(spec, direction, config.horizon, config.master_seed, r) for r in range(config.replicates)]
    results = map_replicas(_regen_replica, tasks, workers, desc="regen-tail")

    block_frame = pd.concat([res[0] for res in results], ignore_index=True)
    tau_frame = pd.DataFrame([res[1] for res in results])
    pooled = BlockSummary.pooled([res[2] for res in results], spec.dimension)

    confirmed = tau_frame.loc[~tau_frame["censored"], "tau1"].astype(float).to_numpy()
    sups = tau_frame.loc[~tau_frame["censored"], "first_block_sup"].astype(float).to_numpy()
    summary: Dict[str, Any] = {
        "replicates": config.replicates,
        "confirmed_tau1": int(confirmed.size),
        "censored_fraction": float(tau_frame["censored"].mean()),
        "iid_blocks": len(pooled),
        **_environment_summary(spec, direction),
    }
    try:
        summary["tail_index"] = tail_index(confirmed, config.k_top).model_dump()
    except ValueError as e:
        logger.warning(f"Tail index not estimated: {e}")
        summary["tail_index"] = None

    tables = {
        "blocks.csv": (block_frame, ["replicate", "block"]),
        "tau1.csv": (tau_frame, ["replicate"]),
    }
    if sups.size:
        tables["t_gamma.csv"] = (t_gamma_diagnostic(sups, config.gamma, config.c_grid), ["c"])
    logger.info(
        f"regen-tail: {summary['confirmed_tau1']}/{config.replicates} confirmed tau_1, "
        f"{len(pooled)} i.i.d. blocks"
    )
    return ExperimentResult(tables=tables, summary=summary, replicas=config.replicates)


# joint-regen

def _joint_replica(task):
    spec, direction, horizon, seed, r, mode = task
    env_seed = derive_seeds(seed, "pair-env", r)
    walk_seeds = (derive_seeds(seed, "pair-walk-a", r), derive_seeds(seed, "pair-walk-b", r))
    origin = _origin(spec)
    pair = simulate_pair(env_seed, spec, (origin, origin), horizon, walk_seeds, mode)
    record = joint_regeneration(pair, direction)
    agree = records_agree(record, joint_regeneration_oracle(pair, direction))
    return record, agree


def _power_grid(limit: int) -> List[int]:
    return [2 ** k for k in range(int(math.log2(max(limit, 1))) + 1)]


def run_joint_regen(config: ExperimentConfig, workers: int) -> ExperimentResult:
    spec, direction, mode = config.environment, config.direction, config.pair_mode
    tasks = [(spec, direction, config.horizon, config.master_seed, r, mode) for r in range(config.replicates)]
    results = map_replicas(_joint_replica, tasks, workers, desc="joint-regen")
    records = [rec for rec, _ in results]
    agreements = sum(int(ok) for _, ok in results)

    chain = difference_chain(records, mode)
    survival = lambda_survival(records, _power_grid(config.horizon))
    jsonl = [{"replicate": r, **rec.to_json()} for r, rec in enumerate(records)]

    tables = {
        "transitions.csv": (chain.transitions, ["from", "to"]),
        "increments.csv": (chain.increments, ["y"]),
        "lambda_survival.csv": (survival, ["m"]),
    }
    if config.separations:
        coupling = coupling_mismatch(
            spec, direction, config.separations, config.replicates, config.horizon, config.master_seed,
            workers=workers,
        )
        tables["coupling.csv"] = (coupling, ["separation"])

    symmetric = chain.increments[chain.increments["count"] >= 100]
    summary = {
        "pair_mode": mode.value,
        "replicates": config.replicates,
        "censored_fraction": float(np.mean([rec.censored for rec in records])),
        "oracle_agreement": agreements,
        "chain_records": chain.records_used,
        "increments": chain.n_increments,
        "max_symmetry_z": float(symmetric["z"].abs().max()) if len(symmetric) else None,
    }
    logger.info(f"joint-regen: oracle agreement {agreements}/{config.replicates}")
    return ExperimentResult(
        tables=tables, records={"joint_records.jsonl": jsonl}, summary=summary, replicas=config.replicates
    )


# qn-curve

def run_qn_curve(config: ExperimentConfig, workers: int) -> ExperimentResult:
    curve = qn_curve(
        config.environment,
        config.direction,
        config.n_grid,
        config.replicates,
        config.master_seed,
        pair_mode=config.pair_mode,
        workers=workers,
    )
    summary = {
        "pair_mode": curve.pair_mode.value,
        "replicates": config.replicates,
        "fitted_slope": curve.fitted_slope.model_dump(),
    }
    return ExperimentResult(
        tables={"qn_curve.csv": (curve.to_frame(), ["n"])}, summary=summary, replicas=config.replicates
    )


# quenched-variance

def run_quenched_variance(config: ExperimentConfig, workers: int) -> ExperimentResult:
    first, last = config.stages
    stages = quenched_variance_curve(
        config.environment,
        config.functional,
        config.b,
        last,
        config.envs,
        config.walks_per_env,
        config.master_seed,
        direction=config.direction,
        first_stage=first,
        T=config.T,
        velocity=config.velocity,
        pilot_walks=config.pilot_walks,
        workers=workers,
    )
    corrected = stages["var_corrected"].to_numpy()
    se = stages["bootstrap_se"].to_numpy()
    decreasing = bool(np.all(np.diff(corrected) <= 2 * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)))
    summary = {
        "functional": config.functional.model_dump(),
        "b": config.b,
        "stages": [first, last],
        "nonincreasing_within_2se": decreasing,
        "last_below_half_first": bool(corrected[-1] < 0.5 * corrected[0]) if corrected[0] > 0 else None,
    }
    return ExperimentResult(
        tables={"stages.csv": (stages, ["n"])}, summary=summary, replicas=config.envs * (last - first + 1)
    )


# clt-endpoint

def run_clt_endpoint(config: ExperimentConfig, workers: int) -> ExperimentResult:
    spec, seed = config.environment, config.master_seed
    if config.velocity is not None:
        v = tuple(config.velocity)
    else:
        try:
            v = pilot_velocity(spec, config.direction, config.pilot_walks, max(1000, config.horizon), seed, workers).v
        except InsufficientDataError as e:
            raise ConfigError(f"pilot velocity failed ({e}); set 'velocity' or raise 'pilot_walks'") from e
    coordinate = config.functional.coordinate

    rows, env_seeds, samples = [], [], []
    for e in range(config.envs):
        env_seed = derive_seeds(seed, "clt-env", e)
        env = QuenchedEnvironment(env_seed, spec)
        x = endpoint_samples(env, config.horizon, config.walks_per_env, v, derive_seeds(seed, "clt-walks", e), coordinate, workers)
        report = normality_diagnostic(x, config.normality_sigmas)
        row = {"env": e, "env_seed": env_seed, **asdict(report)}
        row.update({"moments_pass": report.moments_pass, "ks_pass": report.ks_pass})
        rows.append(row)
        env_seeds.append(env_seed)
        samples.append(x)

    frame = pd.DataFrame(rows)
    _, qa = quenched_annealed_summary(env_seeds, samples)
    summary = {
        "n": config.horizon,
        "velocity": list(v),
        "coordinate": coordinate,
        "envs_passing_moments": int(frame["moments_pass"].sum()),
        "envs": config.envs,
        "quenched_vs_annealed": qa,
    }
    return ExperimentResult(
        tables={"normality.csv": (frame, ["env"])}, summary=summary, replicas=config.envs
    )


# dirichlet-diag

def run_dirichlet_diag(config: ExperimentConfig, workers: int) -> ExperimentResult:
    params = config.environment.dirichlet
    moments = dirichlet_moment_check(params, config.draws, derive_seeds(config.master_seed, "dirichlet", 0))
    summary = _environment_summary(config.environment, config.direction)
    report = summary["dirichlet"]
    summary.update({"kappa": report["kappa"], "t_gamma_sufficient": report["t_gamma_sufficient"]})
    return ExperimentResult(tables={"moments.csv": (moments, ["coordinate"])}, summary=summary, replicas=1)


EXPERIMENTS: Dict[ExperimentName, Callable[[ExperimentConfig, int], ExperimentResult]] = {
    ExperimentName.REGEN_TAIL: run_regen_tail,
    ExperimentName.JOINT_REGEN: run_joint_regen,
    ExperimentName.QN_CURVE: run_qn_curve,
    ExperimentName.QUENCHED_VARIANCE: run_quenched_variance,
    ExperimentName.CLT_ENDPOINT: run_clt_endpoint,
    ExperimentName.DIRICHLET_DIAG: run_dirichlet_diag,
}


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    return EXPERIMENTS[config.experiment](config, workers)
