"""CSV readers and writers and the TOML configuration loader.

Reals are written with 17 significant digits so files round-trip exactly
and identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import math
import os
import sys

import numpy as np

from .errors import AlignmentError, ConfigError, InvalidInput, ParseError
from .glm import Family
from .scan import Binary, Continuous, Counts, GenotypeMatrix, ScanReport, ScreenResult, Survival

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "fmt",
    "read_genotypes",
    "write_genotypes",
    "read_phenotype",
    "write_phenotype",
    "read_covariates",
    "read_thresholds",
    "write_screen",
    "write_pairs",
    "write_table",
    "load_config",
    "PHENOTYPE_COLUMNS",
]

PHENOTYPE_COLUMNS = {
    Family.LINEAR: ("y",),
    Family.LOGISTIC: ("y",),
    Family.POISSON: ("y", "offset"),
    Family.COX: ("time", "event"),
}


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(value)


def _write_rows(target, header, rows):
    """Write to a path, or to an already open text stream."""
    if hasattr(target, "write"):
        _emit(target, header, rows)
        return
    with open(target, "w", newline="") as fh:
        _emit(fh, header, rows)


def _emit(fh, header, rows):
    fh.write(",".join(header) + "\n")
    for row in rows:
        fh.write(",".join(fmt(v) for v in row) + "\n")


def _reader(path):
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise InvalidInput(f"{path}: file not found") from None
    return fh


def _header(path, reader):
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file", path, 1, None) from None
    return [h.strip() for h in header]


def read_genotypes(path) -> GenotypeMatrix:
    """Marker-name header, then one row of 0/1/2 counts per individual."""
    with _reader(path) as fh:
        reader = csv.reader(fh)
        names = _header(path, reader)
        p = len(names)
        if p == 0 or any(not nm for nm in names):
            raise ParseError("header must name every marker", path, 1, None)
        buf = bytearray()
        lookup = {"0": 0, "1": 1, "2": 2}
        n = 0
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != p:
                raise ParseError(f"expected {p} fields, found {len(row)}", path, line, None)
            for j, cell in enumerate(row):
                v = lookup.get(cell.strip())
                if v is None:
                    raise ParseError(f"genotype {cell!r} not in {{0,1,2}} (marker {names[j]})",
                                     path, line, j + 1)
                buf.append(v)
            n += 1
    data = np.frombuffer(bytes(buf), dtype=np.uint8).reshape(n, p)
    return GenotypeMatrix(data, tuple(names))


def write_genotypes(path, geno: GenotypeMatrix):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(geno.names) + "\n")
        for row in geno.data:
            fh.write(",".join(map(str, row.tolist())) + "\n")


def _read_real_table(path, required=None):
    with _reader(path) as fh:
        reader = csv.reader(fh)
        header = _header(path, reader)
        if required is not None:
            missing = [c for c in required if c not in header]
            if missing:
                raise ParseError(f"missing column(s) {', '.join(missing)}; found {', '.join(header)}",
                                 path, 1, None)
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", path, line, None)
            vals = []
            for j, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"not a number: {cell!r} (column {header[j]})", path, line, j + 1) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value {cell!r} (column {header[j]})", path, line, j + 1)
                vals.append(v)
            rows.append(vals)
    table = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, table


def read_phenotype(path, family) -> Binary | Continuous | Counts | Survival:
    family = Family.parse(family)
    cols = PHENOTYPE_COLUMNS[family]
    header, table = _read_real_table(path, cols)
    get = {c: table[:, header.index(c)] for c in cols}
    try:
        if family is Family.LINEAR:
            return Continuous(get["y"])
        if family is Family.LOGISTIC:
            return Binary(get["y"])
        if family is Family.POISSON:
            return Counts(get["y"], get["offset"])
        return Survival(get["time"], get["event"])
    except InvalidInput as exc:
        raise InvalidInput(f"{path}: {exc}") from None


def write_phenotype(path, outcome):
    if isinstance(outcome, Survival):
        header, cols = ("time", "event"), (outcome.time, outcome.event.astype(int))
    elif isinstance(outcome, Counts):
        header, cols = ("y", "offset"), (outcome.y.astype(int), outcome.offset)
    elif isinstance(outcome, Binary):
        header, cols = ("y",), (outcome.y.astype(int),)
    else:
        header, cols = ("y",), (outcome.y,)
    _write_rows(path, header, zip(*(c.tolist() for c in cols)))


def read_covariates(path, n: int) -> np.ndarray:
    _, table = _read_real_table(path)
    if table.shape[0] != n:
        raise AlignmentError(f"{path}: {table.shape[0]} covariate rows, expected {n}")
    return table


def read_thresholds(path, names) -> np.ndarray:
    """Per-marker stage-1 thresholds.

    Either a single ``threshold`` column in marker order, or ``marker`` and
    ``threshold`` columns matched by name.
    """
    with _reader(path) as fh:
        reader = csv.reader(fh)
        header = _header(path, reader)
        if "threshold" not in header:
            raise ParseError("missing column threshold", path, 1, None)
        jt = header.index("threshold")
        jm = header.index("marker") if "marker" in header else None
        by_name, ordered = {}, []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", path, line, None)
            try:
                v = float(row[jt])
            except ValueError:
                raise ParseError(f"not a number: {row[jt]!r}", path, line, jt + 1) from None
            if not 0.0 < v <= 1.0:
                raise ParseError(f"threshold {v} outside (0, 1]", path, line, jt + 1)
            if jm is None:
                ordered.append(v)
            else:
                by_name[row[jm].strip()] = v
    if jm is None:
        if len(ordered) != len(names):
            raise AlignmentError(f"{path}: {len(ordered)} thresholds for {len(names)} markers")
        return np.array(ordered)
    missing = [nm for nm in names if nm not in by_name]
    if missing:
        raise AlignmentError(f"{path}: no threshold for marker(s) {', '.join(missing[:5])}")
    return np.array([by_name[nm] for nm in names])


def write_screen(path, screen: ScreenResult, names):
    rows = zip(names, screen.z, screen.p_value, screen.passed, screen.flag)
    _write_rows(path, ("marker", "z", "p", "passed", "flag"), rows)


def write_pairs(path, report: ScanReport):
    _write_rows(path, ("k", "l", "estimate", "z", "raw_p", "corrected_p", "significant", "quality_flag"),
                report.records())


def write_table(path, columns, rows):
    _write_rows(path, columns, rows)


def load_config(path, allowed) -> dict:
    """Flat TOML mapping; keys outside ``allowed`` are rejected."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")
    base = os.path.dirname(os.path.abspath(path))
    for key in ("covariates", "fst_file"):
        if isinstance(data.get(key), str) and not os.path.isabs(data[key]):
            data[key] = os.path.join(base, data[key])
    return data
