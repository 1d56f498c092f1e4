"""CSV ingestion, date alignment, cumulative-to-incident conversion and reports.

Input schemas (UTF-8, comma separated, header row required, ISO-8601 dates):

* survey:    ``date,n,ybar``
* benchmark: ``date,N,count`` or ``date,N,ybar`` (optional ``sd`` column)
* paired:    ``date,a,b`` (optional ``n`` column)
* values:    ``date,value``

Reports are JSON documents tagged with :data:`SCHEMA_VERSION`, plus a flat
CSV.  Infinite effective sample sizes are written as ``null`` with a
companion ``<field>_inf: true`` flag in JSON and as ``inf`` in CSV.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
import os
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Iterable, Literal, Optional, Sequence

import numpy as np

from .assist import PairedSeries
from .decomp import BenchmarkPoint, Decomposition, SurveySnapshot

__all__ = [
    "SCHEMA_VERSION",
    "InputError",
    "MissingColumnError",
    "DateParseError",
    "DuplicateDateError",
    "ValueRangeError",
    "SeriesFile",
    "parse_series",
    "AlignResult",
    "align",
    "IncidentSeries",
    "to_incident",
    "factor_key",
    "decomposition_to_dict",
    "decomposition_from_dict",
    "emit_report",
    "load_report",
]

SCHEMA_VERSION = "defect-lens/1"

Kind = Literal["survey", "benchmark", "paired", "values"]


class InputError(ValueError):
    """Malformed or inconsistent input data."""


class MissingColumnError(InputError):
    pass


class DateParseError(InputError):
    pass


class DuplicateDateError(InputError):
    pass


class ValueRangeError(InputError):
    pass


@dataclass
class SeriesFile:
    kind: str
    path: Optional[Path]
    records: list
    lines: list[int] = field(default_factory=list)

    @property
    def dates(self) -> list[date]:
        if self.kind == "paired":
            return list(self.records[0].dates) if self.records else []
        return [r.date if hasattr(r, "date") else r[0] for r in self.records]

    def paired(self) -> PairedSeries:
        if self.kind != "paired":
            raise TypeError("not a paired series file")
        return self.records[0]

    def values(self) -> list[tuple[date, float]]:
        if self.kind == "values":
            return list(self.records)
        if self.kind == "survey":
            return [(r.date, r.sample_mean) for r in self.records]
        if self.kind == "benchmark":
            return [(r.date, r.population_mean) for r in self.records]
        raise TypeError(f"no single value column in a {self.kind} file")


_REQUIRED = {
    "survey": (("date", "n", "ybar"),),
    "benchmark": (("date", "N", "count"), ("date", "N", "ybar")),
    "paired": (("date", "a", "b"),),
    "values": (("date", "value"), ("date", "ybar")),
}


def _float(raw: str, line: int, col: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise InputError(f"line {line}, column {col!r}: cannot parse {raw!r} as a number") from None
    if not math.isfinite(v):
        raise InputError(f"line {line}, column {col!r}: non-finite value {raw!r}")
    return v


def _int(raw: str, line: int, col: str) -> int:
    v = _float(raw, line, col)
    if v != int(v) or v < 1:
        raise InputError(f"line {line}, column {col!r}: expected a positive integer, got {raw!r}")
    return int(v)


def _proportion(v: float, line: int, col: str, binary: bool) -> float:
    if binary and not 0.0 <= v <= 1.0:
        raise ValueRangeError(f"line {line}, column {col!r}: value {v!r} outside [0, 1]")
    return v


def parse_series(path: str | os.PathLike, kind: Kind, binary: bool = True) -> SeriesFile:
    """Read one CSV series file; rows are validated with line numbers in errors."""
    p = Path(path)
    if kind not in _REQUIRED:
        raise ValueError(f"unknown series kind {kind!r}")
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if not header:
            raise InputError(f"{p}: no data rows")
        reader.fieldnames = header
        layouts = _REQUIRED[kind]
        layout = next((cols for cols in layouts if set(cols) <= set(header)), None)
        if layout is None:
            missing = sorted(set(layouts[0]) - set(header))
            raise MissingColumnError(f"{p}: missing column(s) {', '.join(missing)} for {kind} file")
        rows = []
        for row in reader:
            if not any((v or "").strip() for v in row.values()):
                continue
            rows.append((reader.line_num, {k: (v or "").strip() for k, v in row.items() if k}))
    if not rows:
        raise InputError(f"{p}: no data rows")

    seen: dict[date, int] = {}
    parsed = []
    prev: Optional[date] = None
    for line, row in rows:
        raw = row.get("date", "")
        try:
            d = date.fromisoformat(raw)
        except ValueError:
            raise DateParseError(f"line {line}, column 'date': {raw!r} is not an ISO-8601 date") from None
        if d in seen:
            raise DuplicateDateError(f"duplicate date {d} on lines {seen[d]} and {line}")
        if prev is not None and d < prev:
            raise InputError(f"line {line}, column 'date': {d} precedes {prev}; dates must increase")
        seen[d] = line
        prev = d
        parsed.append((line, d, row))

    records: list[Any] = []
    if kind == "survey":
        for line, d, row in parsed:
            n = _int(row["n"], line, "n")
            y = _proportion(_float(row["ybar"], line, "ybar"), line, "ybar", binary)
            records.append(SurveySnapshot(d, n, y, label=p.stem, binary=binary))
    elif kind == "benchmark":
        for line, d, row in parsed:
            N = _int(row["N"], line, "N")
            if "count" in layout:
                count = _float(row["count"], line, "count")
                y = count / N
                col = "count"
            else:
                y = _float(row["ybar"], line, "ybar")
                col = "ybar"
            _proportion(y, line, col, binary)
            sd = _float(row["sd"], line, "sd") if row.get("sd") else None
            if sd is None and not binary:
                raise MissingColumnError(f"line {line}: column 'sd' required for continuous outcomes")
            records.append(BenchmarkPoint(d, N, y, sd, binary=binary))
    elif kind == "paired":
        a = [_proportion(_float(row["a"], line, "a"), line, "a", True) for line, _, row in parsed]
        b = [_proportion(_float(row["b"], line, "b"), line, "b", True) for line, _, row in parsed]
        ns = None
        if "n" in header:
            ns = tuple(_int(row["n"], line, "n") for line, _, row in parsed)
        try:
            records.append(PairedSeries(tuple(d for _, d, _ in parsed), a, b, ns, label=p.stem))
        except ValueError as exc:
            raise InputError(f"{p}: {exc}") from None
    else:
        col = layout[1]
        for line, d, row in parsed:
            records.append((d, _float(row[col], line, col)))
    return SeriesFile(kind, p, records, [line for line, _, _ in parsed])


@dataclass
class AlignResult:
    pairs: list[tuple[SurveySnapshot, BenchmarkPoint]]
    unmatched: list[date]
    policy: str

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


def align(
    survey: SeriesFile | Sequence[SurveySnapshot],
    bench: SeriesFile | Sequence[BenchmarkPoint],
    policy: Literal["exact", "nearest_preceding"] = "exact",
) -> AlignResult:
    """Match survey dates to benchmark dates.

    ``exact`` joins equal dates; ``nearest_preceding`` uses the latest
    benchmark date on or before each survey date.  Unmatched survey dates
    are listed in the result.
    """
    s_recs = survey.records if isinstance(survey, SeriesFile) else list(survey)
    b_recs = bench.records if isinstance(bench, SeriesFile) else list(bench)
    if not s_recs or not b_recs:
        raise InputError("cannot align empty series")
    b_dates = [b.date for b in b_recs]
    pairs, unmatched = [], []
    if policy == "exact":
        lookup = dict(zip(b_dates, b_recs))
        for s in s_recs:
            if s.date in lookup:
                pairs.append((s, lookup[s.date]))
            else:
                unmatched.append(s.date)
        if not pairs:
            raise InputError("no common dates between survey and benchmark")
    elif policy == "nearest_preceding":
        for s in s_recs:
            i = bisect.bisect_right(b_dates, s.date) - 1
            if i < 0:
                unmatched.append(s.date)
            else:
                pairs.append((s, b_recs[i]))
        if not pairs:
            raise InputError("no precedent benchmark for any survey date")
    else:
        raise ValueError(f"unknown alignment policy {policy!r}")
    return AlignResult(pairs, unmatched, policy)


@dataclass
class IncidentSeries:
    values: list[float]
    dates: Optional[list] = None
    warnings: list[str] = field(default_factory=list)


def to_incident(series: Sequence[float] | Sequence[tuple[Any, float]]) -> IncidentSeries:
    """First differences of a cumulative series.

    Accepts plain values or ``(date, value)`` pairs; dates of the output are
    those of the later point in each difference.  Decreases (benchmark
    revisions) produce warnings, not errors.
    """
    items = list(series)
    if len(items) < 2:
        raise InputError("need at least 2 points to difference a cumulative series")
    if isinstance(items[0], tuple):
        dates = [d for d, _ in items]
        vals = [float(v) for _, v in items]
    else:
        dates = None
        vals = [float(v) for v in items]
    out = [b - a for a, b in zip(vals, vals[1:])]
    warnings = []
    for i, d in enumerate(out):
        if d < 0:
            where = dates[i + 1] if dates is not None else i + 1
            warnings.append(f"downward revision at {where}: cumulative value fell by {-d!r}")
    return IncidentSeries(out, dates[1:] if dates is not None else None, warnings)


def factor_key(f: float) -> str:
    """Canonical JSON key for a sensitivity factor (``1.0`` -> ``"1"``)."""
    return format(float(f), "g")


_DEC_FIELDS = (
    "estimation_error",
    "ddc",
    "data_deficiency",
    "problem_difficulty",
    "n_eff_approx",
    "n_eff_exact",
    "sensitivity_factor",
)


def encode_float(v: float) -> Any:
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return None
    if math.isinf(v):
        return None
    return v


def put_float(out: dict, name: str, v: float) -> None:
    """Store ``v`` under ``name``; infinities become ``null`` plus ``name_inf``."""
    out[name] = encode_float(v)
    if v is not None and math.isinf(float(v)):
        out[f"{name}_inf"] = True if v > 0 else "-inf"


def get_float(d: dict, name: str) -> float:
    flag = d.get(f"{name}_inf")
    if flag:
        return -math.inf if flag == "-inf" else math.inf
    v = d.get(name)
    return math.nan if v is None else float(v)


def decomposition_to_dict(dec: Decomposition) -> dict:
    out: dict[str, Any] = {}
    for name in _DEC_FIELDS:
        put_float(out, name, getattr(dec, name))
    out["date"] = dec.date.isoformat() if dec.date else None
    out["sample_size"] = dec.sample_size
    out["population_size"] = dec.population_size
    return out


def decomposition_from_dict(d: dict) -> Decomposition:
    return Decomposition(
        **{name: get_float(d, name) for name in _DEC_FIELDS},
        date=date.fromisoformat(d["date"]) if d.get("date") else None,
        sample_size=d.get("sample_size"),
        population_size=d.get("population_size"),
    )


def _csv_cell(v: Any) -> Any:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return ""
        return repr(v)
    if isinstance(v, (np.floating,)):
        return _csv_cell(float(v))
    if isinstance(v, date):
        return v.isoformat()
    if v is None:
        return ""
    return v


def _json_default(o: Any) -> Any:
    if isinstance(o, date):
        return o.isoformat()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return encode_float(float(o))
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"


def emit_report(
    report: dict,
    table: Sequence[dict],
    out_dir: str | os.PathLike,
    stem: str,
    fmt: Literal["json", "csv", "both"] = "both",
    csv_name: Optional[str] = None,
) -> list[Path]:
    """Write ``<stem>.json`` and/or a CSV table into ``out_dir``.

    ``table`` rows are flat dicts; infinities render as ``inf``.  The JSON
    gets a ``schema`` key if missing.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    report = {"schema": SCHEMA_VERSION, **report}
    if fmt in ("json", "both"):
        path = out / f"{stem}.json"
        path.write_text(dumps_report(report), encoding="utf-8")
        written.append(path)
    if fmt in ("csv", "both"):
        path = out / (csv_name or f"{stem}.csv")
        columns: list[str] = []
        for row in table:
            for k in row:
                if k not in columns:
                    columns.append(k)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            for row in table:
                writer.writerow({k: _csv_cell(row.get(k)) for k in columns})
        written.append(path)
    return written


def load_report(path: str | os.PathLike) -> dict:
    """Load a JSON report, checking the schema tag."""
    report = json.loads(Path(path).read_text(encoding="utf-8"))
    if report.get("schema") != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported report schema {report.get('schema')!r}")
    return report


def report_decompositions(report: dict) -> list[dict[str, Decomposition]]:
    """Per-date sweep blocks of a ``decompose`` report as Decomposition objects."""
    return [
        {k: decomposition_from_dict(v) for k, v in row["sweep"].items()}
        for row in report["results"]
    ]


def iter_rows(records: Iterable[Decomposition], **extra: Any) -> list[dict]:
    rows = []
    for dec in records:
        row = {"date": dec.date, **extra}
        row.update({name: getattr(dec, name) for name in _DEC_FIELDS})
        rows.append(row)
    return rows
