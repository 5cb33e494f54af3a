"""CSV datasets and JSON/CSV reports.

Dataset files
-------------
``players.csv``    ``id, z, y[, y_pre], <feature columns...>``
``sessions.csv``   ``session_id, p1, ..., pT`` (player ids, one column per slot)
``exposures.csv``  ``id, m``; used when session logs are unavailable

Floats are written with ``repr`` so a written dataset reads back bit for bit.

Reports
-------
A report is one JSON document (``report.json``) with a ``format`` tag, a
``version``, the software version, the command, the master seed, the full
effective configuration, and a ``results`` section.  The tidy per-level table
(``levels.csv``) and the overall table (``overall.csv``) are rendered from the
``results`` section alone, so a stored report can be re-rendered exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .domain import DataError, ExperimentDataset, exposure_counts, reconcile_exposures

REPORT_FORMAT = "spillover.report"
REPORT_VERSION = 1

RESERVED = ("id", "z", "y", "y_pre")

TABLE_COLUMNS = {
    "estimate": {
        "levels": ["estimator", "level", "label", "estimate", "n_units", "ess", "defined", "reason"],
        "overall": ["estimator", "overall", "dropped_mass", "error"],
    },
    "mc-eval": {
        "levels": ["estimator", "level", "label", "mean", "lower", "upper", "truth", "bias", "rmse",
                   "defined_fraction", "support", "included"],
        "overall": ["estimator", "mean", "lower", "upper", "truth", "bias", "defined_fraction"],
    },
}


# ---------------------------------------------------------------- writing data

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def write_dataset(ds: ExperimentDataset, out_dir) -> dict[str, Path]:
    """Write players, exposures and (when present) sessions CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["id", "z", "y"] + (["y_pre"] if ds.y_pre is not None else []) + list(ds.feature_names)

    def player_rows():
        for i in range(ds.n):
            pre = [ds.y_pre[i]] if ds.y_pre is not None else []
            yield [ds.ids[i], int(ds.z[i]), float(ds.y[i]), *pre, *(float(v) for v in ds.x[i])]

    paths = {"players": _write_csv(out / "players.csv", header, player_rows())}
    paths["exposures"] = _write_csv(out / "exposures.csv", ["id", "m"], zip(ds.ids, ds.m.tolist()))
    if len(ds.session_ids):
        width = ds.rosters.shape[1]
        rows = ([sid, *(ds.ids[p] for p in roster)] for sid, roster in zip(ds.session_ids, ds.rosters))
        paths["sessions"] = _write_csv(
            out / "sessions.csv", ["session_id", *(f"p{k + 1}" for k in range(width))], rows
        )
    return paths


# ---------------------------------------------------------------- reading data

@dataclass(frozen=True)
class IngestionReport:
    n_rows: int
    n_kept: int
    outlier_cap: float | None
    outliers: tuple[str, ...]
    exposure_source: str
    mismatches: tuple[tuple[str, int, int], ...] = ()
    session_table_dropped: bool = False
    notes: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_rows": self.n_rows,
            "n_kept": self.n_kept,
            "outlier_cap": self.outlier_cap,
            "n_outliers": len(self.outliers),
            "outlier_ids": list(self.outliers),
            "exposure_source": self.exposure_source,
            "n_exposure_mismatches": len(self.mismatches),
            "exposure_mismatches": [list(m) for m in self.mismatches],
            "session_table_dropped": self.session_table_dropped,
            "notes": list(self.notes),
        }


def _rows(path: Path, required: Sequence[str]):
    """Yield ``(line_number, row_dict)``; validates the header."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    fh = open(path, newline="")
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}:1: missing required columns {missing}")
        if len(set(header)) != len(header):
            raise DataError(f"{path}:1: duplicate column names")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, header, dict(zip(header, (c.strip() for c in row)))


def _float(path, line, name, text, allow_negative=False) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{path}:{line}: column {name}: cannot parse {text!r} as a number") from None
    if not math.isfinite(v):
        raise DataError(f"{path}:{line}: column {name}: non-finite value {text!r}")
    if v < 0 and not allow_negative:
        raise DataError(f"{path}:{line}: column {name}: negative value {text!r}")
    return v


def _int(path, line, name, text) -> int:
    try:
        v = int(text)
    except ValueError:
        raise DataError(f"{path}:{line}: column {name}: cannot parse {text!r} as an integer") from None
    if v < 0:
        raise DataError(f"{path}:{line}: column {name}: negative value {v}")
    return v


def read_players(path):
    ids, z, y, y_pre, x = [], [], [], [], []
    features: list[str] | None = None
    has_pre = False
    seen: dict[str, int] = {}
    for line, header, row in _rows(path, ("id", "z", "y")):
        if features is None:
            features = [h for h in header if h not in RESERVED]
            has_pre = "y_pre" in header
            if not features:
                raise DataError(f"{path}:1: no feature columns (need at least one besides {list(RESERVED)})")
        pid = row["id"]
        if not pid:
            raise DataError(f"{path}:{line}: empty id")
        if pid in seen:
            raise DataError(f"{path}:{line}: duplicate id {pid!r} (first on line {seen[pid]})")
        seen[pid] = line
        if row["z"] not in ("0", "1"):
            raise DataError(f"{path}:{line}: column z must be 0 or 1, got {row['z']!r}")
        ids.append(pid)
        z.append(int(row["z"]))
        y.append(_float(path, line, "y", row["y"]))
        if has_pre:
            y_pre.append(_float(path, line, "y_pre", row["y_pre"]))
        x.append([_float(path, line, f, row[f], allow_negative=True) for f in features])
    if not ids:
        raise DataError(f"{path}: no player rows")
    return {
        "ids": ids,
        "z": np.array(z, dtype=np.int8),
        "y": np.array(y),
        "y_pre": np.array(y_pre) if has_pre else None,
        "x": np.array(x, dtype=float).reshape(len(ids), len(features)),
        "features": tuple(features),
    }


def read_sessions(path, index: dict[str, int]):
    session_ids, rosters = [], []
    seen = set()
    width = None
    for line, header, row in _rows(path, ("session_id",)):
        slots = [h for h in header if h != "session_id"]
        if width is None:
            width = len(slots)
            if width < 1:
                raise DataError(f"{path}:1: no roster columns")
        sid = row["session_id"]
        if sid in seen:
            raise DataError(f"{path}:{line}: duplicate session id {sid!r}")
        seen.add(sid)
        members = [row[s] for s in slots]
        if any(not pid for pid in members):
            raise DataError(f"{path}:{line}: session {sid}: empty roster slot")
        if len(set(members)) != len(members):
            dupes = sorted({p for p in members if members.count(p) > 1})
            raise DataError(f"{path}:{line}: session {sid}: duplicate players {dupes}")
        unknown = [p for p in members if p not in index]
        if unknown:
            raise DataError(f"{path}:{line}: session {sid}: unknown player ids {unknown}")
        session_ids.append(sid)
        rosters.append([index[p] for p in members])
    return tuple(session_ids), np.array(rosters, dtype=np.int64).reshape(len(session_ids), width or 0)


def read_exposures(path, index: dict[str, int]) -> dict[str, int]:
    out: dict[str, int] = {}
    for line, _, row in _rows(path, ("id", "m")):
        pid = row["id"]
        if pid not in index:
            raise DataError(f"{path}:{line}: unknown player id {pid!r}")
        if pid in out:
            raise DataError(f"{path}:{line}: duplicate id {pid!r}")
        out[pid] = _int(path, line, "m", row["m"])
    return out


def load_dataset(
    players,
    sessions=None,
    exposures=None,
    *,
    outlier_cap: float | None = None,
    require_y_pre: bool = False,
) -> tuple[ExperimentDataset, IngestionReport]:
    """Read an experiment export.

    Exposures are derived from ``sessions`` when given; an ``exposures`` file
    is then only cross-checked (mismatches warn, derived values win).
    Without session logs the exposure file is required.  Players whose
    outcome is at or above ``outlier_cap`` are dropped after exposures are
    counted, so they still contaminate their teammates; the session table is
    then not kept, since its rosters refer to removed rows.
    """
    p = read_players(players)
    if require_y_pre and p["y_pre"] is None:
        raise DataError(f"{players}: the did-linear baseline needs a y_pre column")
    index = {pid: i for i, pid in enumerate(p["ids"])}
    n = len(index)
    session_ids: tuple[str, ...] = ()
    rosters = np.zeros((0, 5), dtype=np.int64)
    mismatches: tuple = ()
    if sessions is not None:
        session_ids, rosters = read_sessions(sessions, index)
        m = exposure_counts(rosters, p["z"]) if len(session_ids) else np.zeros(n, dtype=np.int64)
        source = "sessions"
        if exposures is not None:
            supplied = read_exposures(exposures, index)
            derived = dict(zip(p["ids"], m.tolist()))
            mismatches = tuple(reconcile_exposures(derived, supplied))
    elif exposures is not None:
        supplied = read_exposures(exposures, index)
        missing = [pid for pid in p["ids"] if pid not in supplied]
        if missing:
            raise DataError(f"{exposures}: no exposure count for {len(missing)} players, e.g. {missing[:5]}")
        m = np.array([supplied[pid] for pid in p["ids"]], dtype=np.int64)
        source = "exposures"
    else:
        raise DataError("need a sessions file or an exposures file to know each player's exposure")

    keep = np.ones(n, dtype=bool) if outlier_cap is None else p["y"] < outlier_cap
    outliers = tuple(pid for pid, k in zip(p["ids"], keep) if not k)
    if not keep.any():
        raise DataError(f"every player has y >= {outlier_cap}; nothing left after outlier removal")
    dropped_sessions = bool(outliers) and len(session_ids) > 0
    if dropped_sessions:
        session_ids, rosters = (), np.zeros((0, rosters.shape[1]), dtype=np.int64)
    ds = ExperimentDataset(
        ids=tuple(pid for pid, k in zip(p["ids"], keep) if k),
        z=p["z"][keep],
        x=p["x"][keep],
        y=p["y"][keep],
        m=m[keep],
        session_ids=session_ids,
        rosters=rosters,
        y_pre=None if p["y_pre"] is None else p["y_pre"][keep],
        feature_names=p["features"],
    )
    notes = ("outliers removed after exposure counting; session table not kept",) if dropped_sessions else ()
    report = IngestionReport(n, int(keep.sum()), outlier_cap, outliers, source, mismatches, dropped_sessions, notes)
    return ds, report


# ---------------------------------------------------------------- reports

def clean(obj):
    """JSON-safe copy: numpy scalars to Python, tuples to lists, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def make_report(command: str, config: dict, seed: int | None, results: dict) -> dict:
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "software": {"name": "spillover", "version": __version__},
        "command": command,
        "seed": seed,
        "config": clean(config),
        "results": clean(results),
    }


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    try:
        path.write_text(dumps(obj))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def read_report(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        report = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(report, dict) or report.get("format") != REPORT_FORMAT:
        raise DataError(f"{path}: not a spillover report")
    if report.get("version") != REPORT_VERSION:
        raise DataError(f"{path}: unsupported report version {report.get('version')}")
    return report


def emit_report(report: dict, out_dir, fmt: str = "both") -> list[Path]:
    """Write ``report.json`` and/or the CSV tables derived from it."""
    if fmt not in ("json", "csv", "both"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    written = []
    if fmt in ("json", "both"):
        written.append(write_json(out / "report.json", report))
    tables = TABLE_COLUMNS.get(report["command"])
    if tables and fmt in ("csv", "both"):
        for name, columns in tables.items():
            rows = report["results"][name]
            written.append(_write_csv(out / f"{name}.csv", columns, ([r.get(c) for c in columns] for r in rows)))
    return written
