"""Reading long-format curve files and writing result tables.

Two long CSV layouts are understood:

``id,time,value``
    one row per sample of a generic curve;
``station_id,city,timestamp,bikes,docks``
    bike-sharing station counts. Each row becomes the loading
    ``bikes / docks`` at ``timestamp`` (epoch seconds), expressed in hours
    since the earliest timestamp of the file.

Rows are streamed and accumulated per curve in compact ``array`` buffers, so
memory grows with the number of samples, not with the text size of the file.
"""
from __future__ import annotations

import csv
import math
from array import array
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .basis import SampledCurveSet

GENERIC_HEADER = ("id", "time", "value")
BSS_HEADER = ("station_id", "city", "timestamp", "bikes", "docks")
FLOAT_FMT = "%.12g"


class InputFormatError(ValueError):
    """Malformed or inconsistent curve file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class LoadedCurves:
    """Curves read from a long CSV plus per-curve metadata.

    ``cities`` is set for bike-sharing files; ``origin`` is the epoch second
    mapped to time 0 (bike-sharing files only).
    """

    curves: SampledCurveSet
    fmt: str
    cities: Optional[list] = None
    origin: Optional[float] = None


def _detect(header, fmt):
    cols = tuple(c.strip().lower() for c in header)
    if fmt in (None, "auto"):
        if cols == GENERIC_HEADER:
            return "generic"
        if cols == BSS_HEADER:
            return "bss"
        raise InputFormatError(f"unrecognized header {','.join(header)!r}", 1)
    expected = {"generic": GENERIC_HEADER, "bss": BSS_HEADER}.get(fmt)
    if expected is None:
        raise ValueError(f"unknown format {fmt!r}")
    if cols != expected:
        raise InputFormatError(f"expected header {','.join(expected)!r} for format "
                               f"{fmt!r}, got {','.join(header)!r}", 1)
    return fmt


def _number(text, what, line):
    try:
        x = float(text)
    except ValueError:
        raise InputFormatError(f"{what} {text!r} is not a number", line) from None
    if not math.isfinite(x):
        raise InputFormatError(f"{what} is not finite", line)
    return x


def _count(text, what, line):
    try:
        return int(text)
    except ValueError:
        raise InputFormatError(f"{what} {text!r} is not an integer", line) from None


def read_long_csv(path, fmt="auto"):
    """Stream a long CSV into per-curve series.

    Parameters
    ----------
    path : str or path-like
    fmt : ``"generic"``, ``"bss"`` or ``"auto"`` (decided from the header).

    Returns
    -------
    LoadedCurves
        Curves in order of first appearance, each sorted by time.

    Raises
    ------
    InputFormatError
        Empty file, unknown header, malformed row, ``bikes > docks``,
        inconsistent city of a station or duplicated (id, time) pair.
    """
    times, values, order, cities = {}, {}, [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputFormatError("empty file")
        fmt = _detect(header, fmt)
        width = len(header)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != width:
                raise InputFormatError(f"expected {width} fields, got {len(row)}", line)
            key = row[0].strip()
            if not key:
                raise InputFormatError("empty curve id", line)
            if fmt == "generic":
                t = _number(row[1], "time", line)
                v = _number(row[2], "value", line)
            else:
                t = _number(row[2], "timestamp", line)
                bikes = _count(row[3], "bikes", line)
                docks = _count(row[4], "docks", line)
                if docks <= 0:
                    raise InputFormatError("docks must be positive", line)
                if not 0 <= bikes <= docks:
                    raise InputFormatError(f"bikes={bikes} outside [0, docks={docks}]", line)
                v = bikes / docks
                city = row[1].strip()
                known = cities.setdefault(key, city)
                if known != city:
                    raise InputFormatError(f"station {key!r} listed in cities {known!r} "
                                           f"and {city!r}", line)
            if key not in times:
                times[key] = array("d")
                values[key] = array("d")
                order.append(key)
            times[key].append(t)
            values[key].append(v)
    if not order:
        raise InputFormatError("file holds a header but no rows")

    origin = min(min(times[k]) for k in order) if fmt == "bss" else None
    ts, vs = [], []
    for key in order:
        t = np.frombuffer(times.pop(key), dtype=float)
        v = np.frombuffer(values.pop(key), dtype=float)
        idx = np.argsort(t, kind="stable")
        t, v = t[idx], v[idx]
        dup = np.flatnonzero(np.diff(t) == 0)
        if dup.size:
            raise InputFormatError(f"duplicate time {t[dup[0]]!r} for curve {key!r}")
        if origin is not None:
            t = (t - origin) / 3600.0
        ts.append(t)
        vs.append(v)
    curves = SampledCurveSet(ts, vs, ids=order)
    city_list = [cities[k] for k in order] if fmt == "bss" else None
    return LoadedCurves(curves, fmt, city_list, origin)


def load_long_csv(path, fmt="auto", labels=None):
    """Read a long CSV (generic or bike-sharing) into a :class:`SampledCurveSet`.

    ``labels`` optionally names an ``id,label`` CSV whose integer classes are
    attached to the curves (for accuracy benchmarks on labelled data).
    """
    curves = read_long_csv(path, fmt).curves
    if labels is None:
        return curves
    table = read_labels(labels)
    missing = [cid for cid in curves.ids if cid not in table]
    if missing:
        raise InputFormatError(f"no label for curve {missing[0]!r}")
    return SampledCurveSet(curves.times, curves.values,
                           labels=np.array([table[cid] for cid in curves.ids]), ids=curves.ids)


def read_labels(path):
    """Read an ``id,label`` CSV into a dict mapping curve id to integer class."""
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(c.strip().lower() for c in header) != ("id", "label"):
            raise InputFormatError("expected header 'id,label'", 1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise InputFormatError(f"expected 2 fields, got {len(row)}", line)
            try:
                table[row[0]] = int(row[1])
            except ValueError:
                raise InputFormatError(f"label {row[1]!r} is not an integer", line) from None
    return table


def write_rows(path, header, rows, fmt=FLOAT_FMT):
    """Write a UTF-8 CSV, printing floats with 12 significant digits."""
    def cell(x):
        if isinstance(x, (float, np.floating)):
            return fmt % x
        if isinstance(x, np.integer):
            return str(int(x))
        return x

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([cell(x) for x in row])
