"""CSV ingestion with a small formula language, and a canonical CSV form.

Formula terms are column names, ``a:b`` interactions and ``factor(col)``
(treat a numeric column as categorical).  Categorical columns are coded
against their lexicographically first level: two levels give one 0/1 column
named after the column, ``k`` levels give ``k - 1`` columns ``col[level]``.
"""
import csv
import hashlib
import io
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    DataError,
    EmptyCluster,
    MissingColumn,
    NegativeCount,
    NonIntegerResponse,
    UnseenLevel,
)
from .model import Cluster, LongitudinalDataset

INTERCEPT = "(Intercept)"
_FACTOR = re.compile(r"^factor\((.+)\)$")


@dataclass(frozen=True)
class ModelFormulaLite:
    """Response, main effects and two-way interactions, offset and intercept.

    ``terms`` holds tuples of one or two column names.  ``offset`` is
    ``("none", None)``, ``("log", col)`` or ``("column", col)``.
    """

    response: str
    terms: tuple = ()
    offset: tuple = ("none", None)
    intercept: bool = True
    factors: tuple = ()

    def __post_init__(self):
        terms = tuple(tuple(t) if not isinstance(t, str) else (t,) for t in self.terms)
        for t in terms:
            if len(t) not in (1, 2) or not all(t):
                raise DataError(f"bad term {':'.join(t)!r}")
        if len(set(terms)) != len(terms):
            raise DataError("duplicated terms")
        kind = self.offset[0]
        if kind not in ("none", "log", "column") or (kind != "none" and not self.offset[1]):
            raise DataError(f"bad offset specification {self.offset!r}")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "factors", tuple(self.factors))

    @classmethod
    def parse(cls, response, terms="", offset="none", intercept=True):
        """Build a formula from the command-line spellings.

        >>> f = ModelFormulaLite.parse("Y", "trt,period,trt:period", "log:weeks")
        >>> f.terms, f.offset
        ((('trt',), ('period',), ('trt', 'period')), ('log', 'weeks'))
        """
        factors, parsed = [], []
        for raw in (s.strip() for s in terms.split(",")):
            if not raw:
                continue
            parts = []
            for name in raw.split(":"):
                name = name.strip()
                m = _FACTOR.match(name)
                if m:
                    name = m.group(1).strip()
                    factors.append(name)
                parts.append(name)
            parsed.append(tuple(parts))
        offset = (offset or "none").strip()
        if offset == "none":
            off = ("none", None)
        elif offset.startswith("log:"):
            off = ("log", offset[4:])
        else:
            off = ("column", offset)
        return cls(response, tuple(parsed), off, intercept, tuple(dict.fromkeys(factors)))

    @property
    def columns(self):
        """Every column the formula references (excluding the id)."""
        cols = [self.response]
        for t in self.terms:
            cols.extend(t)
        if self.offset[0] != "none":
            cols.append(self.offset[1])
        return list(dict.fromkeys(cols))


def read_table(path):
    """Header and data rows of a UTF-8 CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        return _read_rows(fh)


def _read_rows(fh):
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty CSV file") from None
    rows = [r for r in reader if any(c.strip() for c in r)]
    for i, r in enumerate(rows, 1):
        if len(r) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(r)}", row=i)
    return header, rows


def _as_float(text):
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def _column(header, rows, name):
    if name not in header:
        raise MissingColumn(f"column {name!r} not found; available: {', '.join(header)}")
    j = header.index(name)
    return [r[j].strip() for r in rows]


def _response(values):
    y = np.empty(len(values), dtype=np.int64)
    for i, text in enumerate(values, 1):
        v = _as_float(text)
        if v is None or v != round(v):
            raise NonIntegerResponse(f"response value {text!r} is not an integer", row=i)
        if v < 0:
            raise NegativeCount(f"negative count {text}", row=i)
        y[i - 1] = int(v)
    return y


def _encode(name, values, factor, levels):
    """Design columns for one variable: ``(names, matrix, levels_used)``."""
    nums = [_as_float(v) for v in values]
    for i, v in enumerate(values, 1):
        if v == "":
            raise DataError(f"missing value in column {name!r}", row=i)
    if not factor and all(x is not None for x in nums) and levels is None:
        return [name], np.array(nums, dtype=float)[:, None], None
    known = sorted(set(values)) if levels is None else list(levels)
    index = {lev: k for k, lev in enumerate(known)}
    codes = np.empty(len(values), dtype=int)
    for i, v in enumerate(values, 1):
        if v not in index:
            raise UnseenLevel(f"level {v!r} of column {name!r} not among {known}", row=i)
        codes[i - 1] = index[v]
    if len(known) < 2:
        raise DataError(f"categorical column {name!r} has a single level")
    if len(known) == 2:
        return [name], (codes == 1).astype(float)[:, None], known
    mat = np.column_stack([(codes == k).astype(float) for k in range(1, len(known))])
    return [f"{name}[{lev}]" for lev in known[1:]], mat, known


def _offset(header, rows, spec):
    kind, col = spec
    if kind == "none":
        return np.zeros(len(rows))
    out = np.empty(len(rows))
    for i, text in enumerate(_column(header, rows, col), 1):
        v = _as_float(text)
        if v is None:
            raise DataError(f"offset column {col!r} value {text!r} is not numeric", row=i)
        if kind == "log":
            if v <= 0:
                raise DataError(f"log offset needs positive {col!r}, got {text}", row=i)
            v = math.log(v)
        out[i - 1] = v
    return out


def design_from_table(header, rows, id_column, formula, levels=None):
    """Assemble ``(ids, y, X, offset, names, levels)`` from parsed CSV rows."""
    if not rows:
        raise DataError("CSV file has no data rows")
    ids = _column(header, rows, id_column)
    for i, v in enumerate(ids, 1):
        if v == "":
            raise EmptyCluster(f"missing cluster id in column {id_column!r}", row=i)
    for col in formula.columns:
        _column(header, rows, col)
    y = _response(_column(header, rows, formula.response))
    levels = dict(levels or {})
    coded = {}
    for t in formula.terms:
        for col in t:
            if col not in coded:
                names, mat, used = _encode(col, _column(header, rows, col),
                                           col in formula.factors, levels.get(col))
                coded[col] = (names, mat)
                if used is not None:
                    levels[col] = used
    names, blocks = [], []
    if formula.intercept:
        names.append(INTERCEPT)
        blocks.append(np.ones((len(rows), 1)))
    for t in formula.terms:
        if len(t) == 1:
            n, m = coded[t[0]]
        else:
            (na, ma), (nb, mb) = coded[t[0]], coded[t[1]]
            n = [f"{a}:{b}" for a in na for b in nb]
            m = np.column_stack([ma[:, i] * mb[:, j]
                                 for i in range(len(na)) for j in range(len(nb))])
        names.extend(n)
        blocks.append(m)
    if not blocks:
        raise DataError("the model has no columns")
    X = np.hstack(blocks)
    return ids, y, X, _offset(header, rows, formula.offset), names, levels


def ingest_csv(path, id_column, formula, levels=None):
    """Read a long-format CSV into a :class:`LongitudinalDataset`.

    Parameters
    ----------
    path : str or path-like
    id_column : str
        Column holding the cluster label; clusters keep the order in which
        their labels first appear.
    formula : ModelFormulaLite
    levels : dict, optional
        Known levels per categorical column; other values raise
        :class:`UnseenLevel`.

    Errors name the 1-based data row that caused them.
    """
    header, rows = read_table(path)
    ids, y, X, off, names, _ = design_from_table(header, rows, id_column, formula, levels)
    return LongitudinalDataset.from_arrays(y, X, np.array(ids, dtype=object), off, names)


def _fmt(v):
    return repr(float(v))


def canonical_csv(data):
    """Text of the canonical CSV form: id, y, one column per design column, offset."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "y", *data.covariate_names, "offset"])
    for c in data.clusters:
        for j in range(c.size):
            w.writerow([c.id, int(c.y[j]), *map(_fmt, c.X[j]), _fmt(c.offset[j])])
    return buf.getvalue()


def write_canonical_csv(data, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(canonical_csv(data))


def read_canonical_csv(path):
    """Inverse of :func:`write_canonical_csv`."""
    header, rows = read_table(path)
    if header[:2] != ["id", "y"] or header[-1] != "offset":
        raise DataError("not a canonical dataset file")
    ids = [r[0] for r in rows]
    y = _response([r[1] for r in rows])
    X = np.array([[float(v) for v in r[2:-1]] for r in rows]).reshape(len(rows), -1)
    off = np.array([float(r[-1]) for r in rows])
    clusters, seen = [], {}
    for i, cid in enumerate(ids):
        seen.setdefault(cid, []).append(i)
    for cid, idx in seen.items():
        clusters.append(Cluster(cid, y[idx], X[idx], off[idx]))
    return LongitudinalDataset(clusters, header[2:-1])


def dataset_digest(data):
    """SHA-256 over ids, counts, design, offsets and column names."""
    h = hashlib.sha256()
    h.update("\x1f".join(data.covariate_names).encode())
    h.update("\x1f".join(data.ids).encode())
    for arr in (data.sizes.astype(np.int64), data.y.astype(np.int64),
                np.ascontiguousarray(data.X, dtype="<f8"),
                np.ascontiguousarray(data.offset, dtype="<f8")):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
