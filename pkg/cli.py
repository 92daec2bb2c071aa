"""Command line entry point: ``rwre <experiment> --config path.json``.

Exit status: 0 on success, 1 on an invalid configuration, 2 on a runtime error.
"""

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from config import settings
from models.schemas import ExperimentConfig, ExperimentName, RunManifest
from services.experiments import run_experiment
from services.export import ensure_output_dir, write_json, write_jsonl, write_table
from services.runner import resolve_workers
from utils import ConfigError, get_logger, get_run_tracker, setup_logging

logger = get_logger(__name__)

ARTIFACT_VERSION = "1.0.0"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def format_validation_error(error: ValidationError) -> str:
    """One line per failing field: ``loc.path: message``."""
    lines = []
    for item in error.errors():
        loc = ".".join(str(p) for p in item.get("loc", ())) or "<root>"
        lines.append(f"{loc}: {item.get('msg')}")
    return "\n".join(lines)


def load_config(path, experiment: Optional[str] = None) -> ExperimentConfig:
    """Read and validate an experiment config; the positional experiment name fills or must match it."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")
    if experiment is not None:
        declared = raw.setdefault("experiment", experiment)
        if declared != experiment:
            raise ConfigError(f"config declares experiment '{declared}' but '{experiment}' was requested")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}:\n{format_validation_error(e)}") from e


def run(config: ExperimentConfig, workers: Optional[int] = None, output_dir: Optional[str] = None) -> RunManifest:
    """Run one experiment and write its files plus ``manifest.json`` into the output directory."""
    n_workers = resolve_workers(workers, config.workers)
    out = ensure_output_dir(output_dir or config.output_dir or settings.output_dir)
    tracker = get_run_tracker(logger)
    name = config.experiment.value
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")

    with tracker.run_context(name) as run_id:
        logger.info(f"Running {name} with master_seed={config.master_seed}, workers={n_workers}, out={out}")
        result = run_experiment(config, n_workers)
        tracker.log_replicas(run_id, result.replicas)

        files, columns = [], {}
        for filename, (frame, sort_by) in sorted(result.tables.items()):
            target = f"{name}_{filename}"
            rows = write_table(frame, out / target, sort_by)
            tracker.log_rows(run_id, target, rows)
            files.append(target)
            columns[target] = [str(c) for c in frame.columns]
        for filename, records in sorted(result.records.items()):
            target = f"{name}_{filename}"
            rows = write_jsonl(records, out / target)
            tracker.log_rows(run_id, target, rows)
            files.append(target)

        summary_name = f"{name}_summary.json"
        write_json({"master_seed": config.master_seed, "experiment": name, **result.summary}, out / summary_name)
        files.append(summary_name)

        manifest = RunManifest(
            experiment=config.experiment,
            artifact_version=ARTIFACT_VERSION,
            master_seed=config.master_seed,
            workers=n_workers,
            config=config.model_dump(mode="json"),
            started_at=started,
            wall_time_seconds=tracker.elapsed(run_id),
            files=files,
            columns=columns,
        )
        write_json(manifest.model_dump(mode="json"), out / "manifest.json")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwre", description="Random walk in random environment experiments")
    parser.add_argument("experiment", choices=[e.value for e in ExperimentName])
    parser.add_argument("--config", required=True, help="path to the experiment JSON config")
    parser.add_argument("--workers", type=int, default=None, help="worker processes (default: config, RWRE_WORKERS, 1)")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(settings.log_level_int, settings.enable_log_file, settings.log_file)

    try:
        config = load_config(args.config, args.experiment)
        if args.seed is not None:
            config = ExperimentConfig.model_validate({**config.model_dump(mode="json"), "master_seed": args.seed})
        if args.workers is not None and args.workers < 1:
            raise ConfigError(f"--workers must be positive, got {args.workers}")
    except ConfigError as e:
        logger.error(f"Configuration error: {e}", exc_info=True)
        return EXIT_CONFIG
    except ValidationError as e:
        logger.error(f"Configuration error:\n{format_validation_error(e)}", exc_info=True)
        return EXIT_CONFIG

    try:
        run(config, args.workers, args.out)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}", exc_info=True)
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
