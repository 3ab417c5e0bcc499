"""CSV ingestion and deterministic JSON/CSV emission."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import Dataset
from .posterior import ChainSet, credible_sets

SUMMARY_LEVELS = (0.90, 0.95, 0.99)


def fmt_float(x):
    """17 significant digits; non-finite values are not valid JSON numbers."""
    return format(float(x), ".17g")


def to_json(obj, indent=2, _level=0):
    """Serialise ``obj`` writing every float with 17 significant digits.

    Non-finite floats become ``null``.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(to_json(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    return json.dumps(str(obj))


def write_json(path, obj):
    Path(path).write_text(to_json(obj) + "\n", encoding="utf-8")


def read_table(path):
    """Read a headered UTF-8 CSV into ``(header, rows, line_numbers)``.

    Rows with blank cells or a wrong field count are rejected with the file
    line number.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"data file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise ValidationError(f"{path}: not valid UTF-8 ({exc})") from None
    reader = csv.reader(text.splitlines())
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ValidationError(f"{path}: empty file") from None
    if len(set(header)) != len(header) or any(not h for h in header):
        raise ValidationError(f"{path}: header must have unique non-empty column names")
    rows, lines = [], []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ValidationError(f"{path}, line {line_no}: expected {len(header)} fields, got {len(row)}")
        cells = [c.strip() for c in row]
        for name, c in zip(header, cells):
            if c == "":
                raise ValidationError(f"{path}, line {line_no}: missing value in column {name!r}")
        rows.append(cells)
        lines.append(line_no)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return header, rows, lines


def _numeric_column(path, header, rows, lines, name):
    if name not in header:
        raise ValidationError(f"column {name!r} not found in {path} (columns: {', '.join(header)})")
    k = header.index(name)
    out = np.empty(len(rows))
    for i, (row, line_no) in enumerate(zip(rows, lines)):
        try:
            out[i] = float(row[k])
        except ValueError:
            raise ValidationError(f"{path}, line {line_no}: column {name!r} value {row[k]!r} is not a number") from None
        if not math.isfinite(out[i]):
            raise ValidationError(f"{path}, line {line_no}: column {name!r} is not finite")
    return out


def load_dataset(path, response, covariates=(), groups=None, intercept=True):
    """Build a :class:`Dataset` from CSV columns.

    Group labels may be arbitrary strings; they are numbered 1..J in order
    of first appearance.  Returns the dataset, the coefficient names and the
    group labels (or ``None``).
    """
    header, rows, lines = read_table(path)
    y = _numeric_column(path, header, rows, lines, response)
    cols, names = [], []
    if intercept:
        cols.append(np.ones(len(rows)))
        names.append("(Intercept)")
    for c in covariates:
        cols.append(_numeric_column(path, header, rows, lines, c))
        names.append(c)
    if not cols:
        raise ValidationError("design matrix has no columns")
    group_ids, labels = None, None
    if groups:
        if groups not in header:
            raise ValidationError(f"column {groups!r} not found in {path}")
        k = header.index(groups)
        index = {}
        for row in rows:
            index.setdefault(row[k], len(index) + 1)
        group_ids = np.array([index[row[k]] for row in rows])
        labels = list(index)
    return Dataset(y, np.column_stack(cols), group_ids), names, labels


def write_chains_csv(path, chains):
    C, S, d = chains.draws.shape
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["chain", "draw"] + [f"param_{k + 1}" for k in range(d)]) + "\n")
        for c in range(C):
            for s in range(S):
                fh.write(f"{c + 1},{s + 1}," + ",".join(fmt_float(v) for v in chains.draws[c, s]) + "\n")


def read_chains_csv(path, warmup=0, seed=0, acceptance_rate=None, param_names=None):
    """Rebuild a :class:`ChainSet` from ``chains.csv``."""
    header, rows, lines = read_table(path)
    if header[:2] != ["chain", "draw"] or any(h != f"param_{k + 1}" for k, h in enumerate(header[2:])):
        raise ValidationError(f"{path}: unexpected chains.csv header")
    arr = np.array([[float(v) for v in r] for r in rows])
    C = int(arr[:, 0].max())
    S = int(arr[:, 1].max())
    draws = np.empty((C, S, arr.shape[1] - 2))
    draws[arr[:, 0].astype(int) - 1, arr[:, 1].astype(int) - 1] = arr[:, 2:]
    rate = np.full(C, np.nan) if acceptance_rate is None else np.asarray(acceptance_rate)
    return ChainSet(draws=draws, warmup=warmup, acceptance_rate=rate, seed=seed, param_names=param_names)


def summarize(chains, levels=SUMMARY_LEVELS):
    """Per-parameter summary dictionary used for ``summary.json``."""
    mean, sd = chains.mean(), chains.sd()
    enough = chains.flat.shape[0] >= 100
    intervals = {}
    for kind in ("equal_tailed", "hpd"):
        intervals[kind] = {lv: credible_sets(chains, lv, kind) if enough else None for lv in levels}
    params = []
    for k, name in enumerate(chains.param_names):
        entry = {
            "name": name,
            "mean": mean[k],
            "sd": sd[k],
            "rhat": chains.rhat[k],
            "ess": chains.ess[k],
            "mcse": chains.mcse[k],
            "intervals": {
                kind: {f"{lv:.2f}": (None if cs is None else [cs.lower[k], cs.upper[k]])
                       for lv, cs in by_level.items()}
                for kind, by_level in intervals.items()
            },
        }
        params.append(entry)
    return {"parameters": params}


def write_coverage_csv(path, reports):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "level", "coefficient", "coverage", "replicates", "failures"])
        for rep in reports:
            for row in rep.rows():
                writer.writerow([row["method"], f"{row['level']:.2f}", row["coefficient"],
                                 fmt_float(row["coverage"]), row["replicates"], row["failures"]])


def write_posterior_means_csv(path, reports):
    """Tidy posterior means per replicate, one row per (method, replicate, coefficient)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "replicate", "coefficient", "posterior_mean"])
        for rep in reports:
            for r, row in enumerate(rep.posterior_means):
                for k, v in enumerate(row):
                    writer.writerow([rep.method, r + 1, f"beta_{k + 1}", fmt_float(v)])
