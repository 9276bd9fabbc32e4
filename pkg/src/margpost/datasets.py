"""Loaders for the three shipped case-study datasets.

CSV files live in the repository's ``data/`` directory (see the PROVENANCE
file there for sources). Loaders validate structure loudly: silent data
corruption is how published numbers become unreproducible.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["Dataset", "DataError", "data_dir", "load_wind", "load_galaxy", "load_epilepsy"]

# Corrected 78th galaxy velocity; a widely circulated copy misprints it as 26690.
GALAXY_OBS78 = 26960.0
GALAXY_OBS78_TYPO = 26690.0


class DataError(RuntimeError):
    """A dataset failed structural validation."""


@dataclass(frozen=True)
class Dataset:
    name: str
    columns: dict

    @property
    def n_rows(self):
        return len(next(iter(self.columns.values())))


def data_dir():
    """Locate the data directory: $MARGPOST_DATA, else walk up from the package."""
    env = os.environ.get("MARGPOST_DATA")
    if env:
        return Path(env)
    here = Path(__file__).resolve()
    for parent in here.parents:
        candidate = parent / "data"
        if (candidate / "wind.csv").exists():
            return candidate
    raise DataError("could not locate the data directory; set MARGPOST_DATA")


def _read_csv(path, expected_columns):
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != list(expected_columns):
            raise DataError(
                f"{path.name}: expected columns {list(expected_columns)}, found {header}"
            )
        rows = list(reader)
    if not rows:
        raise DataError(f"{path.name}: no data rows")
    try:
        values = np.array(rows, dtype=float)
    except ValueError as err:
        raise DataError(f"{path.name}: non-numeric cell ({err})") from None
    return {name: values[:, j] for j, name in enumerate(expected_columns)}


def load_wind(path=None):
    """Windmill DC output (volts) against wind speed, 25 observations."""
    path = Path(path) if path else data_dir() / "wind.csv"
    cols = _read_csv(path, ("volts", "wind_speed"))
    if len(cols["volts"]) != 25:
        raise DataError(f"wind data must have 25 rows, found {len(cols['volts'])}")
    return Dataset("wind", cols)


def load_galaxy(path=None):
    """82 galaxy velocities in km/s; enforces the corrected 78th value."""
    path = Path(path) if path else data_dir() / "galaxy.csv"
    cols = _read_csv(path, ("velocity",))
    v = cols["velocity"]
    if len(v) != 82:
        raise DataError(f"galaxy data must have 82 rows, found {len(v)}")
    if v[77] == GALAXY_OBS78_TYPO:
        raise DataError(
            "galaxy observation 78 is 26690, the known transcription error; "
            "the correct value is 26960"
        )
    if v[77] != GALAXY_OBS78:
        raise DataError(f"galaxy observation 78 must be 26960, found {v[77]:g}")
    return Dataset("galaxy", cols)


def load_epilepsy(path=None):
    """Seizure counts, long format: subject, period (0 = baseline), count, treatment."""
    path = Path(path) if path else data_dir() / "epilepsy.csv"
    cols = _read_csv(path, ("subject", "period", "count", "treatment"))
    subjects = cols["subject"].astype(int)
    periods = cols["period"].astype(int)
    counts = cols["count"]
    treatment = cols["treatment"].astype(int)
    if np.any(counts < 0) or np.any(counts != np.round(counts)):
        raise DataError("epilepsy counts must be non-negative integers")
    if not set(np.unique(treatment)) <= {0, 1}:
        raise DataError("treatment must be 0/1")
    ids = np.unique(subjects)
    if len(ids) != 59:
        raise DataError(f"epilepsy data must cover 59 subjects, found {len(ids)}")
    for sid in ids:
        mask = subjects == sid
        if sorted(periods[mask]) != [0, 1, 2, 3, 4]:
            raise DataError(f"subject {sid} must have periods 0..4 exactly once")
        if len(np.unique(treatment[mask])) != 1:
            raise DataError(f"subject {sid} has inconsistent treatment codes")
    # subject 49's extreme pre/post counts distort the analysis; excluded by convention
    keep = subjects != 49
    return Dataset(
        "epilepsy",
        {
            "subject": subjects[keep].astype(float),
            "period": periods[keep].astype(float),
            "count": counts[keep],
            "treatment": treatment[keep].astype(float),
            "offset": np.where(periods[keep] == 0, 8.0, 2.0),
        },
    )
