"""Fixed-format MPS export and an independent reader.

The writer emits deterministic text: rows and columns appear in instance
order, names are mangled to MPS-safe 8-character identifiers when needed
(mapping emitted alongside), and every column appears in the COLUMNS section
(via its objective coefficient) so zero columns survive a round trip.

Only minimization is expressed; a constant objective offset is stored as a
negated RHS entry on the objective row, the convention most solvers share.
Two-sided rows become G rows with a RANGES entry.  Free constraint rows are
written as extra N rows (readers treat N rows after the first as free).

The reader is deliberately independent of the writer — whitespace-token
parsing of the standard sections — so a round trip is a real check of both.
"""

import json
import re

import numpy as np

from ..exceptions import InputError
from .model import MilpInstance

_SAFE_NAME = re.compile(r"^[A-Za-z][A-Za-z0-9_.]{0,7}$")


def _mangle(names, prefix):
    """Deterministic MPS-safe names; returns (list, mps->original map)."""
    out = []
    mapping = {}
    seen = set()
    for k, name in enumerate(names):
        candidate = str(name)
        if not _SAFE_NAME.match(candidate) or candidate in seen:
            candidate = f"{prefix}{k + 1:07d}"
        seen.add(candidate)
        out.append(candidate)
        if candidate != name:
            mapping[candidate] = str(name)
    return out, mapping


def _value(v):
    """Render a float to at most 12 characters."""
    for fmt in ("%.10g", "%.9g", "%.6g", "%.4e"):
        text = fmt % v
        if len(text) <= 12:
            return text
    return text  # 3-digit exponents; wider than the field but unambiguous


def _pair_line(name, row, value):
    return f"    {name:<8}  {row:<8}  {_value(value):>12}"


def write_mps(instance, path, *, name="TREEGOPT"):
    """Write ``instance`` (LpInstance or MilpInstance) as fixed-format MPS.

    Returns ``{"columns": {...}, "rows": {...}}`` mapping mangled MPS names
    back to the original ones (renamed entries only).  When anything was
    renamed the same mapping is also written to ``<path>.names.json``.
    """
    n, m = instance.n_vars, instance.n_rows
    cols, col_map = _mangle(instance.names, "C")
    rows, row_map = _mangle(instance.row_names, "R")
    integers = set(getattr(instance, "integers", []) or [])

    lines = [f"NAME          {name}", "ROWS", " N  OBJ"]
    kinds = []
    for i in range(m):
        lo, hi = instance.row_lb[i], instance.row_ub[i]
        if lo == hi:
            kind = "E"
        elif np.isfinite(lo):
            kind = "G"
        elif np.isfinite(hi):
            kind = "L"
        else:
            kind = "N"
        kinds.append(kind)
        lines.append(f" {kind}  {rows[i]}")

    lines.append("COLUMNS")
    in_int = False
    markers = 0
    marker_word = "'MARKER'"
    for j in range(n):
        want_int = j in integers
        if want_int != in_int:
            markers += 1
            tag = "'INTORG'" if want_int else "'INTEND'"
            lines.append(f"    M{markers:<7}  {marker_word:<8}  {tag:>12}")
            in_int = want_int
        lines.append(_pair_line(cols[j], "OBJ", instance.c[j]))
        for i in range(m):
            if instance.A[i, j] != 0.0:
                lines.append(_pair_line(cols[j], rows[i], instance.A[i, j]))
    if in_int:
        markers += 1
        tag = "'INTEND'"
        lines.append(f"    M{markers:<7}  {marker_word:<8}  {tag:>12}")

    lines.append("RHS")
    if instance.c0 != 0.0:
        lines.append(_pair_line("RHS", "OBJ", -instance.c0))
    for i in range(m):
        if kinds[i] == "E" or kinds[i] == "G":
            rhs = instance.row_lb[i]
        elif kinds[i] == "L":
            rhs = instance.row_ub[i]
        else:
            continue
        if rhs != 0.0:
            lines.append(_pair_line("RHS", rows[i], rhs))

    ranged = [
        i
        for i in range(m)
        if kinds[i] == "G" and np.isfinite(instance.row_ub[i])
    ]
    if ranged:
        lines.append("RANGES")
        for i in ranged:
            lines.append(
                _pair_line("RNG", rows[i], instance.row_ub[i] - instance.row_lb[i])
            )

    lines.append("BOUNDS")
    for j in range(n):
        lo, hi = instance.lb[j], instance.ub[j]
        if lo == hi:
            lines.append(f" FX {'BND':<8}  {cols[j]:<8}  {_value(lo):>12}")
            continue
        if np.isfinite(lo):
            lines.append(f" LO {'BND':<8}  {cols[j]:<8}  {_value(lo):>12}")
        else:
            lines.append(f" MI {'BND':<8}  {cols[j]:<8}")
        if np.isfinite(hi):
            lines.append(f" UP {'BND':<8}  {cols[j]:<8}  {_value(hi):>12}")
        else:
            lines.append(f" PL {'BND':<8}  {cols[j]:<8}")
    lines.append("ENDATA")

    text = "\n".join(lines) + "\n"
    with open(path, "w") as handle:
        handle.write(text)
    mapping = {"columns": col_map, "rows": row_map}
    if col_map or row_map:
        with open(f"{path}.names.json", "w") as handle:
            json.dump(mapping, handle, indent=2, sort_keys=True)
    return mapping


def read_mps(path):
    """Parse an MPS file into a MilpInstance (pick groups are not encoded).

    Handles N/L/G/E rows, RANGES, integrality markers, and the standard
    bound types.  The first N row is the objective; later N rows come back
    as free constraint rows in order of appearance.
    """
    section = None
    obj_row = None
    row_kind: dict[str, str] = {}
    row_order: list[str] = []
    col_order: list[str] = []
    col_entries: dict[str, dict[str, float]] = {}
    integers: set[str] = set()
    rhs: dict[str, float] = {}
    ranges: dict[str, float] = {}
    bounds: dict[str, list] = {}
    in_integer = False

    with open(path) as handle:
        for raw in handle:
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("*"):
                continue
            if not line[0].isspace():
                word = line.split()[0].upper()
                if word in {
                    "NAME",
                    "ROWS",
                    "COLUMNS",
                    "RHS",
                    "RANGES",
                    "BOUNDS",
                    "ENDATA",
                    "OBJSENSE",
                }:
                    section = word
                    if word == "ENDATA":
                        break
                    continue
                raise InputError(f"unrecognized MPS section line: {line!r}")
            tokens = line.split()
            if section == "ROWS":
                kind, rname = tokens[0].upper(), tokens[1]
                if kind == "N" and obj_row is None:
                    obj_row = rname
                    continue
                if kind not in {"N", "L", "G", "E"}:
                    raise InputError(f"unknown row type {kind!r}")
                row_kind[rname] = kind
                row_order.append(rname)
            elif section == "COLUMNS":
                if len(tokens) >= 3 and tokens[1].strip("'′") == "MARKER":
                    marker = tokens[2].strip("'′").upper()
                    in_integer = marker == "INTORG"
                    continue
                if len(tokens) >= 3 and tokens[2].strip("'′") in (
                    "INTORG",
                    "INTEND",
                ):
                    in_integer = tokens[2].strip("'′") == "INTORG"
                    continue
                cname = tokens[0]
                if cname not in col_entries:
                    col_entries[cname] = {}
                    col_order.append(cname)
                if in_integer:
                    integers.add(cname)
                for rname, value in zip(tokens[1::2], tokens[2::2]):
                    col_entries[cname][rname] = float(value)
            elif section == "RHS":
                for rname, value in zip(tokens[1::2], tokens[2::2]):
                    rhs[rname] = float(value)
            elif section == "RANGES":
                for rname, value in zip(tokens[1::2], tokens[2::2]):
                    ranges[rname] = float(value)
            elif section == "BOUNDS":
                btype = tokens[0].upper()
                cname = tokens[2]
                value = float(tokens[3]) if len(tokens) > 3 else None
                bounds.setdefault(cname, []).append((btype, value))
            elif section in {"NAME", "OBJSENSE", None}:
                continue

    if obj_row is None:
        raise InputError("MPS file has no objective (N) row")

    n = len(col_order)
    m = len(row_order)
    c = np.zeros(n)
    A = np.zeros((m, n))
    row_index = {rname: i for i, rname in enumerate(row_order)}
    for j, cname in enumerate(col_order):
        for rname, value in col_entries[cname].items():
            if rname == obj_row:
                c[j] = value
            elif rname in row_index:
                A[row_index[rname], j] = value
            else:
                raise InputError(f"column {cname!r} references unknown row {rname!r}")

    row_lb = np.full(m, -np.inf)
    row_ub = np.full(m, np.inf)
    for rname, i in row_index.items():
        kind = row_kind[rname]
        b = rhs.get(rname, 0.0)
        if kind == "E":
            row_lb[i] = row_ub[i] = b
        elif kind == "G":
            row_lb[i] = b
        elif kind == "L":
            row_ub[i] = b
        if rname in ranges:
            r = ranges[rname]
            if kind == "G":
                row_ub[i] = row_lb[i] + abs(r)
            elif kind == "L":
                row_lb[i] = row_ub[i] - abs(r)
            elif kind == "E":
                if r >= 0:
                    row_ub[i] = row_lb[i] + r
                else:
                    row_lb[i] = row_ub[i] + r

    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    col_index = {cname: j for j, cname in enumerate(col_order)}
    for cname, entries in bounds.items():
        if cname not in col_index:
            raise InputError(f"bound on unknown column {cname!r}")
        j = col_index[cname]
        for btype, value in entries:
            if value is None and btype in {"LO", "UP", "FX", "LI", "UI"}:
                raise InputError(f"bound {btype} on {cname!r} is missing its value")
            if btype == "LO":
                lb[j] = value
            elif btype == "UP":
                ub[j] = value
                if value is not None and value < 0 and lb[j] == 0.0:
                    lb[j] = -np.inf  # historical MPS quirk
            elif btype == "FX":
                lb[j] = ub[j] = value
            elif btype == "FR":
                lb[j], ub[j] = -np.inf, np.inf
            elif btype == "MI":
                lb[j] = -np.inf
            elif btype == "PL":
                ub[j] = np.inf
            elif btype == "BV":
                lb[j], ub[j] = 0.0, 1.0
                integers.add(cname)
            elif btype == "LI":
                lb[j] = value
                integers.add(cname)
            elif btype == "UI":
                ub[j] = value
                integers.add(cname)
            else:
                raise InputError(f"unknown bound type {btype!r}")

    return MilpInstance(
        c=c,
        A=A,
        row_lb=row_lb,
        row_ub=row_ub,
        lb=lb,
        ub=ub,
        c0=-rhs.get(obj_row, 0.0),
        names=col_order,
        row_names=row_order,
        integers=sorted(col_index[cname] for cname in integers),
    )
