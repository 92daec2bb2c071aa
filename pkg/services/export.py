"""Result files: canonically sorted CSV tables, JSONL records and JSON summaries."""

import json
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence

import pandas as pd

from services.walks import Trajectory
from utils import OutputError, get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = "%.12g"


def ensure_output_dir(path) -> Path:
    """Create ``path`` if needed and check that it accepts writes.

    Raises:
        OutputError: if the directory cannot be created or written
    """
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        marker = out / ".write-test"
        marker.write_text("")
        marker.unlink()
    except OSError as e:
        raise OutputError(f"output directory {out} is not writable: {e}") from e
    return out


def write_table(frame: pd.DataFrame, path, sort_by: Optional[Sequence[str]] = None) -> int:
    """Write ``frame`` as CSV sorted by ``sort_by`` (stable), returning the row count."""
    if sort_by:
        frame = frame.sort_values(list(sort_by), kind="mergesort").reset_index(drop=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return len(frame)


def write_jsonl(records: Iterable[dict], path) -> int:
    """Write one JSON object per line, keys sorted.

    Args:
        records: JSON-serializable dicts, written in the given order
        path: target file, overwritten

    Returns:
        Number of records written
    """
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            count += 1
    return count


def write_json(payload: Any, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def dump_jsonl(traj: Trajectory, path) -> int:
    """One record {t, x} per time step of ``traj``."""
    rows: List[dict] = [{"t": t, "x": site} for t, site in enumerate(traj.sites.tolist())]
    return write_jsonl(rows, path)
