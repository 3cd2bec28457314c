"""Bundled example data."""
import os
from importlib import resources

from .io import ModelFormulaLite, ingest_csv

ACCIDENT_ENV = "MNB_ACCIDENT_CSV"

SEIZURE_FORMULA = ModelFormulaLite.parse("Y", "trt,period,trt:period", "log:weeks")
ACCIDENT_FORMULA = ModelFormulaLite.parse("Y", "factor(year)", "log:length")


def seizure_path():
    return resources.files("mnbreg") / "data" / "seizures.csv"


def load_seizures(formula=SEIZURE_FORMULA):
    """Epilepsy panel: 59 patients, an 8-week baseline and four 2-week visits.

    Columns are ``id, Y, trt, period, weeks, age``; ``period`` is 0 at
    baseline and 1 afterwards, ``trt`` is 1 for progabide.
    """
    with resources.as_file(seizure_path()) as path:
        return ingest_csv(path, "id", formula)


def accident_path():
    """Location of the road-accident table, or None when it is not available.

    The table is not redistributed with the package.  It is looked up in
    ``$MNB_ACCIDENT_CSV`` and then as ``data/accidents.csv`` inside the
    package; expected columns are ``road, Y, year, length``.
    """
    env = os.environ.get(ACCIDENT_ENV)
    if env:
        return env if os.path.exists(env) else None
    bundled = resources.files("mnbreg") / "data" / "accidents.csv"
    return str(bundled) if bundled.is_file() else None


def load_accidents(formula=ACCIDENT_FORMULA):
    path = accident_path()
    if path is None:
        raise FileNotFoundError(
            f"road accident data not found; set {ACCIDENT_ENV} to a CSV with "
            "columns road, Y, year, length"
        )
    return ingest_csv(path, "road", formula)
