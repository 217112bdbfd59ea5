"""Tab-separated file formats and atomic writes.

Dataset files have one row per (gene, probe, channel, array) with columns

    gene_id  probe_idx  channel  array_id  condition  intensity  sequence

in that order, UTF-8, a header row, ``.`` as decimal separator and no
scientific notation. Rows are written gene by gene, then probe, channel
and array, and floats use the shortest positional representation that
round-trips, so parse-then-write reproduces a written file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile

import numpy as np

from .errors import DataFormatError
from .model import ArrayMeta, ProbeLevelDataset

DATASET_COLUMNS = ("gene_id", "probe_idx", "channel", "array_id", "condition",
                   "intensity", "sequence")


def format_positional(x):
    """Shortest round-tripping decimal without an exponent."""
    return np.format_float_positional(float(x), unique=True, trim="-")


def format_value(x):
    """Result-table cell: shortest round-trip repr, empty for ``None``."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------
# Datasets
# --------------------------------------------------------------------------

def dataset_to_tsv(dataset):
    lines = ["\t".join(DATASET_COLUMNS)]
    Y = dataset.intensities
    probe_idx = dataset.probe_index
    for p in range(dataset.n_probes):
        gid = dataset.gene_ids[dataset.probe_gene[p]]
        seq = dataset.sequences[p]
        j = str(int(probe_idx[p]))
        for h, ch in enumerate(dataset.channels):
            for i, a in enumerate(dataset.arrays):
                lines.append("\t".join((gid, j, ch, a.array_id, str(a.condition),
                                        format_positional(Y[p, i, h]), seq)))
    return "\n".join(lines) + "\n"


def write_dataset(dataset, path):
    atomic_write(path, dataset_to_tsv(dataset))


def _parse_float(text, path, line, column):
    if not text or any(c in text for c in "eE") or text.strip() != text:
        raise DataFormatError(path, line, column, f"invalid number {text!r}")
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(path, line, column, f"invalid number {text!r}") from None
    if not math.isfinite(value):
        raise DataFormatError(path, line, column, f"non-finite number {text!r}")
    return value


def _parse_int(text, path, line, column):
    try:
        return int(text)
    except ValueError:
        raise DataFormatError(path, line, column, f"invalid integer {text!r}") from None


def read_dataset(path):
    """Parse a dataset TSV.

    Raises
    ------
    DataFormatError
        Naming the file, 1-based line and column of the first problem.
    """
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    rows = text.split("\n")
    if rows and rows[-1] == "":
        rows.pop()
    if not rows:
        raise DataFormatError(path, 1, "gene_id", "missing header row")
    header = rows[0].split("\t")
    if tuple(header) != DATASET_COLUMNS:
        raise DataFormatError(path, 1, header[0] if header else "",
                              f"expected header {' '.join(DATASET_COLUMNS)}")
    genes, gene_index = [], {}
    arrays, array_index = [], {}
    channels, channel_index = [], {}
    probes = {}  # (gene, j) -> sequence
    values = {}
    for ln, row in enumerate(rows[1:], start=2):
        fields = row.split("\t")
        if len(fields) != len(DATASET_COLUMNS):
            col = DATASET_COLUMNS[min(len(fields), len(DATASET_COLUMNS) - 1)]
            raise DataFormatError(path, ln, col,
                                  f"expected {len(DATASET_COLUMNS)} fields, got {len(fields)}")
        gid, j, ch, aid, cond, inten, seq = fields
        if not gid:
            raise DataFormatError(path, ln, "gene_id", "empty gene id")
        j = _parse_int(j, path, ln, "probe_idx")
        if j < 0:
            raise DataFormatError(path, ln, "probe_idx", "negative probe index")
        cond = _parse_int(cond, path, ln, "condition")
        y = _parse_float(inten, path, ln, "intensity")
        if y < 0:
            raise DataFormatError(path, ln, "intensity", "negative intensity")
        if gid not in gene_index:
            gene_index[gid] = len(genes)
            genes.append(gid)
        if aid not in array_index:
            array_index[aid] = len(arrays)
            arrays.append(ArrayMeta(aid, cond))
        elif arrays[array_index[aid]].condition != cond:
            raise DataFormatError(path, ln, "condition",
                                  f"array {aid!r} has conflicting conditions")
        if ch not in channel_index:
            channel_index[ch] = len(channels)
            channels.append(ch)
        key = (gene_index[gid], j)
        if probes.setdefault(key, seq) != seq:
            raise DataFormatError(path, ln, "sequence", "probe sequence differs between rows")
        cell = (key, channel_index[ch], array_index[aid])
        if cell in values:
            raise DataFormatError(path, ln, "intensity", "duplicate measurement")
        values[cell] = y
    keys = sorted(probes)
    for g in range(len(genes)):
        js = [j for gg, j in keys if gg == g]
        if js != list(range(len(js))):
            raise DataFormatError(path, len(rows), "probe_idx",
                                  f"gene {genes[g]!r} probe indices are not 0..J-1")
    row_of = {k: r for r, k in enumerate(keys)}
    Y = np.full((len(keys), len(arrays), len(channels)), np.nan)
    for (key, h, i), y in values.items():
        Y[row_of[key], i, h] = y
    if np.isnan(Y).any():
        r, i, h = np.argwhere(np.isnan(Y))[0]
        raise DataFormatError(path, len(rows), "intensity",
                              f"missing measurement for gene {genes[keys[r][0]]!r} probe "
                              f"{keys[r][1]} channel {channels[h]!r} array {arrays[i].array_id!r}")
    probe_gene = np.array([g for g, _ in keys], dtype=np.int64)
    return ProbeLevelDataset(genes, probe_gene, [probes[k] for k in keys], arrays,
                             tuple(channels), Y)


# --------------------------------------------------------------------------
# Generic tables
# --------------------------------------------------------------------------

def table_to_tsv(columns, rows):
    lines = ["\t".join(columns)]
    for r in rows:
        lines.append("\t".join(format_value(v) for v in r))
    return "\n".join(lines) + "\n"


def write_table(path, columns, rows):
    atomic_write(path, table_to_tsv(columns, rows))


def read_table(path):
    """Header plus rows of string cells; returns ``(columns, list of dict)``."""
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataFormatError(path, 1, "", "missing header row")
    columns = lines[0].split("\t")
    out = []
    for ln, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(columns):
            raise DataFormatError(path, ln, columns[min(len(fields), len(columns) - 1)],
                                  f"expected {len(columns)} fields, got {len(fields)}")
        out.append(dict(zip(columns, fields)))
    return columns, out


def column_floats(path, rows, column):
    """Parse one column of :func:`read_table` output as floats (empty -> nan)."""
    out = []
    for ln, r in enumerate(rows, start=2):
        if column not in r:
            raise DataFormatError(path, 1, column, "column not found")
        text = r[column]
        if text == "":
            out.append(float("nan"))
            continue
        try:
            out.append(float(text))
        except ValueError:
            raise DataFormatError(path, ln, column, f"invalid number {text!r}") from None
    return np.array(out)


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
