"""Loading, splitting and encoding MQTTset-schema CSV tables."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fsutil import write_atomic
from .schema import (
    CATEGORICAL_COLUMNS,
    FEATURE_COLUMNS,
    OPTIONAL_COLUMNS,
    TARGET_COLUMN,
    ClassLabel,
)

log = logging.getLogger(__name__)


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class LabeledTable:
    rows: list[tuple[str, ...]]
    labels: list[ClassLabel]
    schema: tuple[str, ...] = FEATURE_COLUMNS
    # Original row index of each row, for split manifests.
    row_ids: list[int] = field(default_factory=list)
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.rows) != len(self.labels):
            raise DatasetError("rows and labels differ in length")
        if not self.row_ids:
            object.__setattr__(self, "row_ids", list(range(len(self.rows))))
        width = len(self.schema)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise DatasetError(f"row {i} has {len(row)} values, schema has {width}")

    def __len__(self) -> int:
        return len(self.rows)

    def label_array(self) -> np.ndarray:
        return np.fromiter((int(lab) for lab in self.labels), dtype=np.int64, count=len(self.labels))

    def subset(self, indices: Sequence[int]) -> "LabeledTable":
        return LabeledTable(
            rows=[self.rows[i] for i in indices],
            labels=[self.labels[i] for i in indices],
            schema=self.schema,
            row_ids=[self.row_ids[i] for i in indices],
        )

    def select_columns(self, names: Sequence[str]) -> "LabeledTable":
        idx = [self.schema.index(n) for n in names]
        return LabeledTable(
            rows=[tuple(r[i] for i in idx) for r in self.rows],
            labels=list(self.labels),
            schema=tuple(names),
            row_ids=list(self.row_ids),
        )

    def concat(self, other: "LabeledTable") -> "LabeledTable":
        if other.schema != self.schema:
            raise DatasetError("cannot concatenate tables with different schemas")
        offset = (max(self.row_ids) + 1) if self.row_ids else 0
        return LabeledTable(
            rows=self.rows + other.rows,
            labels=self.labels + other.labels,
            schema=self.schema,
            row_ids=self.row_ids + [offset + i for i in other.row_ids],
        )


def class_histogram(table: LabeledTable) -> dict[ClassLabel, int]:
    counts = Counter(table.labels)
    return {lab: counts.get(lab, 0) for lab in ClassLabel}


def load_dataset(path: str | Path, schema: Sequence[str] = FEATURE_COLUMNS) -> LabeledTable:
    """Read a CSV with the given feature columns plus a `target` column.

    Rows with the wrong number of cells, or with a blank target (firewall-blocked
    FeatureLog records), are skipped and listed in ``table.skipped``.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    schema = tuple(schema)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        expected = set(schema) | {TARGET_COLUMN}
        missing = [c for c in (*schema, TARGET_COLUMN) if c not in header]
        extra = [c for c in header if c not in expected and c not in OPTIONAL_COLUMNS]
        if missing or extra:
            raise DatasetError(
                f"{path}: header mismatch; missing={missing} extra={extra}"
            )
        positions = [header.index(c) for c in schema]
        target_pos = header.index(TARGET_COLUMN)
        rows, labels, row_ids, skipped = [], [], [], []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                skipped.append((lineno, f"expected {len(header)} cells, got {len(cells)}"))
                continue
            raw_label = cells[target_pos].strip()
            if not raw_label:
                skipped.append((lineno, "blank target"))
                continue
            try:
                label = ClassLabel.from_string(raw_label)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: unknown label {raw_label!r}") from None
            rows.append(tuple(cells[p].strip() for p in positions))
            labels.append(label)
            row_ids.append(len(row_ids))
    if skipped:
        log.warning("%s: skipped %d unparseable rows", path, len(skipped))
    return LabeledTable(rows=rows, labels=labels, schema=schema, row_ids=row_ids, skipped=skipped)


def write_dataset(path: str | Path, table: LabeledTable, extra: dict[str, Sequence[str]] | None = None) -> Path:
    """Write a table in the loader's CSV format (atomically)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    extra = extra or {}
    writer.writerow([*table.schema, TARGET_COLUMN, *extra])
    for i, (row, label) in enumerate(zip(table.rows, table.labels)):
        writer.writerow([*row, label.dataset_name, *(col[i] for col in extra.values())])
    return write_atomic(path, buf.getvalue())


def _n_test(n: int, test_fraction: float) -> int:
    # Guard against 100 * 0.29 == 28.999999999999996.
    return int(math.floor(n * test_fraction + 1e-9))


def split_train_test(
    table: LabeledTable,
    test_fraction: float,
    seed: int,
    stratify: bool = False,
) -> tuple[LabeledTable, LabeledTable]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(table)
    if n == 0:
        raise DatasetError("cannot split an empty table")
    rng = np.random.default_rng(seed)
    n_test = _n_test(n, test_fraction)
    if not stratify:
        perm = rng.permutation(n)
        test_idx = np.sort(perm[:n_test])
        train_idx = np.sort(perm[n_test:])
    else:
        y = table.label_array()
        test_parts, leftovers = [], []
        for cls in range(len(ClassLabel)):
            members = np.flatnonzero(y == cls)
            if members.size == 0:
                continue
            members = rng.permutation(members)
            exact = members.size * test_fraction
            k = _n_test(members.size, test_fraction)
            test_parts.append(members[:k])
            leftovers.append((exact - k, cls, members[k:]))
        deficit = n_test - sum(p.size for p in test_parts)
        # Largest fractional remainder first, class index breaks ties.
        leftovers.sort(key=lambda t: (-t[0], t[1]))
        for _, _, rest in leftovers:
            if deficit <= 0:
                break
            if rest.size:
                test_parts.append(rest[:1])
                deficit -= 1
        test_idx = np.sort(np.concatenate(test_parts)) if test_parts else np.empty(0, dtype=np.int64)
        mask = np.ones(n, dtype=bool)
        mask[test_idx] = False
        train_idx = np.flatnonzero(mask)
    train, test = table.subset(train_idx.tolist()), table.subset(test_idx.tolist())
    _warn_empty_classes(table, train, "train")
    _warn_empty_classes(table, test, "test")
    return train, test


def _warn_empty_classes(full: LabeledTable, part: LabeledTable, name: str) -> None:
    present = set(full.labels)
    got = set(part.labels)
    for lab in sorted(present - got):
        log.warning("class %s is absent from the %s split", lab.dataset_name, name)


def write_split_manifest(
    path: str | Path,
    seed: int,
    fractions: dict[str, float],
    splits: dict[str, LabeledTable],
) -> Path:
    lines = [f"seed = {seed}"]
    for key, value in fractions.items():
        lines.append(f"fraction.{key} = {value}")
    for name, part in splits.items():
        hist = class_histogram(part)
        lines.append(f"split.{name}.size = {len(part)}")
        lines.append(
            f"split.{name}.classes = "
            + ",".join(f"{lab.dataset_name}:{hist[lab]}" for lab in ClassLabel)
        )
        lines.append(f"split.{name}.rows = " + " ".join(map(str, part.row_ids)))
    return write_atomic(path, "\n".join(lines) + "\n")


def _to_float(text: str) -> float | None:
    if text == "":
        return 0.0
    try:
        return float(text)
    except ValueError:
        if text[:2].lower() == "0x":
            try:
                return float(int(text, 16))
            except ValueError:
                return None
        return None


# Categorical values longer than this are keyed by a short digest to keep
# encoder tables (and serialized models) small; payload hex can run to kilobytes.
MAX_PLAIN_KEY = 32


def category_key(value: str) -> str:
    if len(value) <= MAX_PLAIN_KEY:
        return value
    return "\x00" + hashlib.blake2b(value.encode("utf-8"), digest_size=8).hexdigest()


@dataclass(frozen=True)
class Encoders:
    """Per-column ordinal codes for categorical columns; 0 is reserved for unseen or blank."""

    columns: tuple[str, ...]
    codes: dict[str, dict[str, int]]

    def encode_cell(self, column: str, value: str) -> float:
        table = self.codes.get(column)
        if table is not None:
            return float(table.get(category_key(value), 0))
        num = _to_float(value)
        return 0.0 if num is None or math.isnan(num) else num

    def transform_row(self, row: Sequence[str]) -> np.ndarray:
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} values, encoders expect {len(self.columns)}")
        return np.array([self.encode_cell(c, v) for c, v in zip(self.columns, row)], dtype=np.float64)

    def transform(self, rows: Iterable[Sequence[str]]) -> np.ndarray:
        rows = list(rows)
        out = np.zeros((len(rows), len(self.columns)), dtype=np.float64)
        for j, col in enumerate(self.columns):
            table = self.codes.get(col)
            if table is not None:
                get = table.get
                out[:, j] = [get(category_key(r[j]), 0) for r in rows]
            else:
                cache: dict[str, float] = {}
                vals = out[:, j]
                for i, r in enumerate(rows):
                    v = r[j]
                    x = cache.get(v)
                    if x is None:
                        num = _to_float(v)
                        x = 0.0 if num is None or math.isnan(num) else num
                        cache[v] = x
                    vals[i] = x
        return out

    def restrict(self, names: Sequence[str]) -> "Encoders":
        return Encoders(tuple(names), {n: self.codes[n] for n in names if n in self.codes})


def fit_encoders(train: LabeledTable) -> Encoders:
    """Assign ordinal codes 1, 2, ... in first-seen order to each categorical column.

    A schema-numeric column that holds non-numeric text in training is
    treated as categorical as well.
    """
    if len(train) == 0:
        raise DatasetError("cannot fit encoders on an empty table")
    codes: dict[str, dict[str, int]] = {}
    for j, col in enumerate(train.schema):
        values = [r[j] for r in train.rows]
        categorical = col in CATEGORICAL_COLUMNS or any(_to_float(v) is None for v in set(values))
        if not categorical:
            continue
        table: dict[str, int] = {}
        for v in values:
            k = category_key(v)
            if v != "" and k not in table:
                table[k] = len(table) + 1
        codes[col] = table
    return Encoders(columns=tuple(train.schema), codes=codes)


@dataclass(frozen=True)
class EncodedMatrix:
    values: np.ndarray
    labels: np.ndarray
    encoders: Encoders

    @property
    def column_names(self) -> tuple[str, ...]:
        return self.encoders.columns


def encode(table: LabeledTable, encoders: Encoders) -> EncodedMatrix:
    if tuple(table.schema) != encoders.columns:
        raise DatasetError("table schema does not match encoder columns")
    return EncodedMatrix(encoders.transform(table.rows), table.label_array(), encoders)
