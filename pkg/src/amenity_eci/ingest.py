"""Reading and writing the delimited input files.

Every reader is all-or-nothing: all rows are validated, and if any fail the
first failure is raised with the complete list attached as ``errors``.
Row numbers are 1-based file lines, so the first data row is row 2.
"""

from __future__ import annotations

import csv
import math
import os
from collections.abc import Iterable, Iterator

from .exceptions import (
    CoordinateOutOfRange,
    DuplicateId,
    DuplicatePeriod,
    IngestError,
    InvalidValue,
    MissingColumn,
    NegativeCount,
    NegativePrecip,
    UnknownTimeslot,
)
from .model import (
    TIMESLOTS,
    ClusterAttribute,
    MobilityCount,
    StorePoint,
    WeatherRecord,
    is_valid_demographic,
)

STORE_COLUMNS = ("store_id", "lon", "lat", "category")
WEATHER_COLUMNS = ("year", "month", "mean_high_temp_c", "max_temp_c", "precip_mm")
MOBILITY_COLUMNS = ("source_id", "lon", "lat", "year", "month", "timeslot", "demographic", "count")
ATTRIBUTE_COLUMNS = ("cluster_id", "green_area_m2")


def _sniff_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line else ","


def _read_rows(path, required: Iterable[str]) -> tuple[list[str], Iterator[tuple[int, dict]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    first = text.split("\n", 1)[0]
    reader = csv.DictReader(text.splitlines(keepends=True), delimiter=_sniff_delimiter(first))
    fieldnames = [f.strip() for f in (reader.fieldnames or [])]
    reader.fieldnames = fieldnames
    for col in required:
        if col not in fieldnames:
            raise MissingColumn(col)

    def rows():
        for row in reader:
            if not any((v or "").strip() for v in row.values() if isinstance(v, str)):
                continue
            yield reader.line_num, {k: (v.strip() if isinstance(v, str) else v) for k, v in row.items()}

    return fieldnames, rows()


def _raise_collected(errors: list[IngestError]) -> None:
    if errors:
        raise errors[0].with_errors(errors)


def _num(row: dict, key: str, line: int, kind=float):
    raw = row.get(key)
    try:
        value = kind(raw)
    except (TypeError, ValueError):
        raise InvalidValue(line, f"{key}={raw!r} is not a valid {kind.__name__}") from None
    if kind is float and not math.isfinite(value):
        raise InvalidValue(line, f"{key}={raw!r} is not finite")
    return value


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write(path, header: list[str], rows: Iterable[Iterable]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# -- stores ----------------------------------------------------------------


def ingest_stores(path, year: int | None = None) -> list[StorePoint]:
    """Read a store file.

    The file may carry a ``year`` column holding several snapshots; pass
    ``year`` to keep one of them. Without a ``year`` column, ``year`` is
    required and stamped onto every record.
    """
    fields, rows = _read_rows(path, STORE_COLUMNS)
    has_year = "year" in fields
    if not has_year and year is None:
        raise MissingColumn("year")
    has_sub = "subcategory" in fields

    out: list[StorePoint] = []
    errors: list[IngestError] = []
    seen: dict[tuple[int, int], int] = {}
    for line, row in rows:
        try:
            row_year = _num(row, "year", line, int) if has_year else int(year)
            sid = _num(row, "store_id", line, int)
            lon = _num(row, "lon", line)
            lat = _num(row, "lat", line)
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise CoordinateOutOfRange(line, lon, lat)
            category = row.get("category") or ""
            if not category:
                raise InvalidValue(line, "empty category")
            if (row_year, sid) in seen:
                raise DuplicateId(sid, line)
            seen[(row_year, sid)] = line
            out.append(StorePoint(sid, lon, lat, category, row_year, (row.get("subcategory") or "") if has_sub else ""))
        except IngestError as exc:
            errors.append(exc)
    _raise_collected(errors)
    if has_year and year is not None:
        out = [s for s in out if s.year == year]
    return out


def write_stores(path, stores: Iterable[StorePoint], *, with_year: bool = True) -> None:
    stores = list(stores)
    with_sub = any(s.subcategory for s in stores)
    header = list(STORE_COLUMNS) + (["subcategory"] if with_sub else []) + (["year"] if with_year else [])

    def rows():
        for s in stores:
            row = [s.store_id, s.lon, s.lat, s.category]
            if with_sub:
                row.append(s.subcategory)
            if with_year:
                row.append(s.year)
            yield row

    _write(path, header, rows())


# -- weather ---------------------------------------------------------------


def ingest_weather(path) -> list[WeatherRecord]:
    _, rows = _read_rows(path, WEATHER_COLUMNS)
    out: list[WeatherRecord] = []
    errors: list[IngestError] = []
    seen: set[tuple[int, int]] = set()
    for line, row in rows:
        try:
            year = _num(row, "year", line, int)
            month = _num(row, "month", line, int)
            if not 1 <= month <= 12:
                raise InvalidValue(line, f"month {month} outside 1-12")
            mean_high = _num(row, "mean_high_temp_c", line)
            max_temp = _num(row, "max_temp_c", line)
            precip = _num(row, "precip_mm", line)
            if precip < 0:
                raise NegativePrecip(line)
            if max_temp < mean_high:
                raise InvalidValue(line, "max_temp_c below mean_high_temp_c")
            if (year, month) in seen:
                raise DuplicatePeriod(year, month, line)
            seen.add((year, month))
            out.append(WeatherRecord(year, month, mean_high, max_temp, precip))
        except IngestError as exc:
            errors.append(exc)
    _raise_collected(errors)
    return out


def write_weather(path, records: Iterable[WeatherRecord]) -> None:
    _write(
        path,
        list(WEATHER_COLUMNS),
        ([r.year, r.month, r.mean_high_temp_c, r.max_temp_c, r.precip_mm] for r in records),
    )


# -- mobility --------------------------------------------------------------


def ingest_mobility(path) -> list[MobilityCount]:
    _, rows = _read_rows(path, MOBILITY_COLUMNS)
    out: list[MobilityCount] = []
    errors: list[IngestError] = []
    for line, row in rows:
        try:
            source = row.get("source_id") or ""
            if not source:
                raise InvalidValue(line, "empty source_id")
            lon = _num(row, "lon", line)
            lat = _num(row, "lat", line)
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise CoordinateOutOfRange(line, lon, lat)
            year = _num(row, "year", line, int)
            month = _num(row, "month", line, int)
            if not 1 <= month <= 12:
                raise InvalidValue(line, f"month {month} outside 1-12")
            slot = row.get("timeslot") or ""
            if slot not in TIMESLOTS:
                raise UnknownTimeslot(slot, line)
            demo = row.get("demographic") or ""
            if not is_valid_demographic(demo):
                raise InvalidValue(line, f"unknown demographic {demo!r}")
            count = _num(row, "count", line)
            if count < 0:
                raise NegativeCount(line)
            out.append(MobilityCount(source, lon, lat, year, month, slot, demo, count))
        except IngestError as exc:
            errors.append(exc)
    _raise_collected(errors)
    return out


def write_mobility(path, records: Iterable[MobilityCount]) -> None:
    _write(
        path,
        list(MOBILITY_COLUMNS),
        ([r.source_id, r.lon, r.lat, r.year, r.month, r.timeslot, r.demographic, r.count] for r in records),
    )


# -- cluster attributes ----------------------------------------------------


def ingest_cluster_attributes(path) -> list[ClusterAttribute]:
    """Read pre-aggregated green area per cluster.

    ``metro_station_ids`` is optional and semicolon-separated.
    """
    _, rows = _read_rows(path, ATTRIBUTE_COLUMNS)
    out: list[ClusterAttribute] = []
    errors: list[IngestError] = []
    seen: set[int] = set()
    for line, row in rows:
        try:
            cid = _num(row, "cluster_id", line, int)
            green = _num(row, "green_area_m2", line)
            if green < 0:
                raise InvalidValue(line, "negative green_area_m2")
            if cid in seen:
                raise DuplicateId(cid, line)
            seen.add(cid)
            stations = tuple(s for s in (row.get("metro_station_ids") or "").split(";") if s)
            out.append(ClusterAttribute(cid, green, stations))
        except IngestError as exc:
            errors.append(exc)
    _raise_collected(errors)
    return out


def write_cluster_attributes(path, attrs: Iterable[ClusterAttribute]) -> None:
    _write(
        path,
        ["cluster_id", "green_area_m2", "metro_station_ids"],
        ([a.cluster_id, a.green_area_m2, ";".join(a.metro_station_ids)] for a in attrs),
    )
