"""Raw CSV loading, preprocessing, label encoding, and stratified splits.

The pipeline is deliberately rigid: missing values abort (the shipped
schema covers a dataset with none), categorical columns are one-hot
encoded against category lists pinned in the schema, booleans map to
0/1, and continuous columns are min-max scaled per column. Everything is
a pure function of (input, seed).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

CLASS_NAMES = ["Dropout", "Enrolled", "Graduate"]
LABEL_CODES = {"Dropout": 0, "Enrolled": 1, "Graduate": 2}

# exact header repairs applied before schema lookup
HEADER_REPAIRS = {
    "Nacionality": "Nationality",
    "Daytime/evening attendance\t": "Daytime attendance",
}


class IngestError(ValueError):
    pass


@dataclass
class RawTable:
    column_names: list[str]
    cells: list[list[str]]

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    @property
    def n_cols(self) -> int:
        return len(self.column_names)

    def column(self, name: str) -> list[str]:
        j = self.column_names.index(name)
        return [row[j] for row in self.cells]


@dataclass
class FeatureMatrix:
    values: np.ndarray  # N x D float64
    feature_names: list[str]
    column_kinds: list[str]  # per column: "one-hot" | "scaled-continuous"
    onehot_groups: dict[str, list[int]]  # source column -> output column indices

    @property
    def shape(self):
        return self.values.shape


@dataclass
class LabelVector:
    labels: np.ndarray  # N ints in {0,1,2}
    class_names: list[str]


@dataclass
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int


def load_raw(path, delimiter: str = ";") -> RawTable:
    """Parse a delimited text file with a header row.

    Header names are preserved verbatim (including stray whitespace and
    embedded tabs) so that the repair step can match them exactly.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        rows = list(reader)
    if not rows or (len(rows) == 1 and rows[0] == [""]):
        raise IngestError("empty input")
    header = rows[0]
    n_cols = len(header)
    if len(set(header)) != n_cols:
        raise IngestError("duplicate column names in header")
    cells = []
    for i, row in enumerate(rows[1:], start=2):
        if row == [""] or not row:
            continue  # ignore blank trailing lines
        if len(row) != n_cols:
            raise IngestError(f"ragged row at line {i}: expected {n_cols} cells, got {len(row)}")
        cells.append(row)
    return RawTable(column_names=header, cells=cells)


def audit_missing(raw: RawTable) -> dict[str, int]:
    """Count empty or whitespace-only cells per column."""
    counts = {name: 0 for name in raw.column_names}
    for row in raw.cells:
        for name, cell in zip(raw.column_names, row):
            if cell.strip() == "":
                counts[name] += 1
    return counts


def repair_headers(names: list[str]) -> list[str]:
    return [HEADER_REPAIRS.get(n, n) for n in names]


def load_schema(path=None) -> dict:
    """Load a column-kind schema; default is the bundled UCI schema."""
    if path is None:
        text = resources.files("dropgraph.data").joinpath("uci_schema.json").read_text()
    else:
        text = Path(path).read_text()
    schema = json.loads(text)
    for name, col in schema["columns"].items():
        if col["kind"] not in ("categorical", "continuous", "boolean", "target"):
            raise IngestError(f"unknown column kind {col['kind']!r} for {name!r}")
        if col["kind"] == "categorical":
            col["categories"] = sorted(col["categories"])
    return schema


def preprocess(raw: RawTable, schema: dict) -> FeatureMatrix:
    """Encode a raw table into the model-ready feature matrix.

    Column order follows the original table; categorical columns expand
    into one indicator per schema category (sorted lexicographically).
    A constant continuous column maps to all zeros with a warning.
    """
    missing = audit_missing(raw)
    bad = {k: v for k, v in missing.items() if v > 0}
    if bad:
        raise IngestError(f"missing values present, refusing to continue: {bad}")

    names = repair_headers(raw.column_names)
    spec_cols = schema["columns"]
    unknown = [n for n in names if n not in spec_cols]
    if unknown:
        raise IngestError(f"columns not declared in schema: {unknown}")

    n = raw.n_rows
    blocks: list[np.ndarray] = []
    feature_names: list[str] = []
    column_kinds: list[str] = []
    groups: dict[str, list[int]] = {}

    for j, name in enumerate(names):
        kind = spec_cols[name]["kind"]
        col = [row[j] for row in raw.cells]
        if kind == "target":
            continue
        if kind == "categorical":
            cats = spec_cols[name]["categories"]
            index = {c: i for i, c in enumerate(cats)}
            block = np.zeros((n, len(cats)))
            for i, cell in enumerate(col):
                k = index.get(cell)
                if k is None:
                    raise IngestError(f"column {name!r}: category {cell!r} not in schema")
                block[i, k] = 1.0
            start = len(feature_names)
            groups[name] = list(range(start, start + len(cats)))
            blocks.append(block)
            feature_names.extend(f"{name}={c}" for c in cats)
            column_kinds.extend(["one-hot"] * len(cats))
        elif kind == "boolean":
            vals = np.empty(n)
            for i, cell in enumerate(col):
                if cell not in ("0", "1"):
                    raise IngestError(f"column {name!r}: boolean cell {cell!r} is not 0/1")
                vals[i] = float(cell)
            blocks.append(vals.reshape(-1, 1))
            feature_names.append(name)
            column_kinds.append("one-hot")
        elif kind == "continuous":
            try:
                vals = np.array([float(c) for c in col])
            except ValueError as e:
                raise IngestError(f"column {name!r}: non-numeric cell ({e})") from None
            lo, hi = vals.min(), vals.max()
            if hi == lo:
                warnings.warn(f"constant continuous column {name!r} mapped to zeros")
                vals = np.zeros(n)
            else:
                vals = (vals - lo) / (hi - lo)
            blocks.append(vals.reshape(-1, 1))
            feature_names.append(name)
            column_kinds.append("scaled-continuous")

    values = np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))
    return FeatureMatrix(values, feature_names, column_kinds, groups)


def encode_labels(raw: RawTable, target_column: str = "Target") -> LabelVector:
    names = repair_headers(raw.column_names)
    if target_column not in names:
        raise IngestError(f"target column {target_column!r} not found")
    j = names.index(target_column)
    labels = np.empty(raw.n_rows, dtype=np.int64)
    for i, row in enumerate(raw.cells):
        code = LABEL_CODES.get(row[j])
        if code is None:
            raise IngestError(f"unknown class value {row[j]!r} in row {i}")
        labels[i] = code
    return LabelVector(labels=labels, class_names=list(CLASS_NAMES))


def _apportion(quotas: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of non-negative quotas to integers summing to total."""
    floors = np.floor(quotas).astype(np.int64)
    short = total - int(floors.sum())
    remainders = quotas - floors
    # ties broken by lower class index
    order = np.lexsort((np.arange(len(quotas)), -remainders))
    out = floors.copy()
    for i in range(short):
        out[order[i % len(quotas)]] += 1
    return out


def stratified_split(label_vec: LabelVector, seed: int) -> SplitMasks:
    """60/20/20 stratified masks built as 80/20, then 75/25 of the 80%.

    Per-class counts use floor + largest-remainder against the global
    class proportions, so each mask's class counts stay within one
    instance of the exact proportional share. Deterministic given seed.
    """
    labels = label_vec.labels
    n = labels.shape[0]
    classes, counts = np.unique(labels, return_counts=True)
    if (counts < 3).any():
        small = classes[counts < 3]
        raise IngestError(f"classes {small.tolist()} have fewer than 3 members")

    n_test = int(round(0.2 * n))
    n_val = int(round(0.25 * (n - n_test)))
    test_per_class = _apportion(counts * n_test / n, n_test)
    val_per_class = _apportion(counts * n_val / n, n_val)
    if ((test_per_class + val_per_class) > counts).any():
        raise IngestError("a class is too small to populate all three masks")

    rng = np.random.default_rng(seed)
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for c, n_t, n_v in zip(classes, test_per_class, val_per_class):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        test[idx[:n_t]] = True
        val[idx[n_t:n_t + n_v]] = True
        train[idx[n_t + n_v:]] = True
    return SplitMasks(train=train, val=val, test=test, seed=seed)


# -- persistence -------------------------------------------------------


def save_features(fm: FeatureMatrix, out_dir, fmt: str = "npy") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "feature_names": fm.feature_names,
        "column_kinds": fm.column_kinds,
        "onehot_groups": fm.onehot_groups,
    }
    meta_path = out_dir / "features_meta.json"
    meta_path.write_text(json.dumps(meta, indent=1))
    if fmt == "npy":
        data_path = out_dir / "features.npy"
        np.save(data_path, fm.values)
    elif fmt == "csv":
        data_path = out_dir / "features.csv"
        with open(data_path, "w") as fh:
            fh.write(",".join(f'"{n}"' for n in fm.feature_names) + "\n")
            for row in fm.values:
                fh.write(",".join(repr(v) for v in row) + "\n")
    else:
        raise ValueError(f"unknown feature format {fmt!r}")
    return [data_path, meta_path]


def load_features(out_dir) -> FeatureMatrix:
    out_dir = Path(out_dir)
    meta = json.loads((out_dir / "features_meta.json").read_text())
    npy = out_dir / "features.npy"
    if npy.exists():
        values = np.load(npy)
    else:
        with open(out_dir / "features.csv") as fh:
            next(fh)
            values = np.array([[float(v) for v in line.split(",")] for line in fh])
    return FeatureMatrix(values, meta["feature_names"], meta["column_kinds"],
                         {k: list(v) for k, v in meta["onehot_groups"].items()})


def save_labels(lv: LabelVector, path):
    Path(path).write_text(
        json.dumps({"labels": lv.labels.tolist(), "class_names": lv.class_names})
    )


def load_labels(path) -> LabelVector:
    d = json.loads(Path(path).read_text())
    return LabelVector(np.array(d["labels"], dtype=np.int64), d["class_names"])


def save_masks(masks: SplitMasks, path):
    d = {
        "seed": masks.seed,
        "train": np.flatnonzero(masks.train).tolist(),
        "val": np.flatnonzero(masks.val).tolist(),
        "test": np.flatnonzero(masks.test).tolist(),
        "n": int(masks.train.shape[0]),
    }
    Path(path).write_text(json.dumps(d))


def load_masks(path) -> SplitMasks:
    d = json.loads(Path(path).read_text())
    n = d["n"]
    out = {}
    for key in ("train", "val", "test"):
        m = np.zeros(n, dtype=bool)
        m[np.array(d[key], dtype=np.int64)] = True
        out[key] = m
    return SplitMasks(train=out["train"], val=out["val"], test=out["test"], seed=d["seed"])
