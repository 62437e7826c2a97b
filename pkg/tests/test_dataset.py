import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeguard.dataset import (
    DatasetError,
    LabeledTable,
    encode,
    fit_encoders,
    load_dataset,
    split_train_test,
    write_dataset,
    write_split_manifest,
)
from edgeguard.schema import FEATURE_COLUMNS, TARGET_COLUMN, ClassLabel

LABEL_STRINGS = ["legitimate", "malformed", "dos", "bruteforce", "slowite", "flood"]


def _blank_row(**cells):
    row = [""] * len(FEATURE_COLUMNS)
    for name, value in cells.items():
        row[FEATURE_COLUMNS.index(name)] = value
    return row


def _write_csv(path, rows, labels, header=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header or [*FEATURE_COLUMNS, TARGET_COLUMN])
        for r, lab in zip(rows, labels):
            w.writerow([*r, lab])


def _table(n, seed=0):
    rng = np.random.default_rng(seed)
    rows = [tuple(str(int(v)) for v in rng.integers(0, 5, len(FEATURE_COLUMNS))) for _ in range(n)]
    labels = [ClassLabel(int(v)) for v in rng.integers(0, 6, n)]
    return LabeledTable(rows, labels)


def test_schema_has_33_columns_and_six_labels():
    assert len(FEATURE_COLUMNS) == 33
    assert len(set(FEATURE_COLUMNS)) == 33
    assert len(ClassLabel) == 6


def test_label_mapping_is_a_bijection():
    names = [lab.dataset_name for lab in ClassLabel]
    assert sorted(names) == sorted(LABEL_STRINGS)
    for lab in ClassLabel:
        assert ClassLabel.from_string(lab.dataset_name) is lab
    assert ClassLabel.from_string(" DoS ") is ClassLabel.DOS


def test_six_rows_one_per_class(tmp_path):
    path = tmp_path / "six.csv"
    _write_csv(path, [_blank_row(**{"tcp.len": str(i)}) for i in range(6)], LABEL_STRINGS)
    table = load_dataset(path)
    assert len(table) == 6
    assert [lab.dataset_name for lab in table.labels] == LABEL_STRINGS
    assert set(table.labels) == set(ClassLabel)


def test_unknown_label_names_label_and_line(tmp_path):
    path = tmp_path / "scan.csv"
    _write_csv(path, [_blank_row(), _blank_row()], ["dos", "scan"])
    with pytest.raises(DatasetError, match=r"scan") as err:
        load_dataset(path)
    assert ":3:" in str(err.value)


def test_missing_file_and_header_mismatch(tmp_path):
    with pytest.raises(DatasetError, match="not found"):
        load_dataset(tmp_path / "nope.csv")
    path = tmp_path / "bad.csv"
    header = [c for c in FEATURE_COLUMNS if c != "mqtt.qos"] + ["bogus", TARGET_COLUMN]
    _write_csv(path, [[""] * 33], ["dos"], header=header)
    with pytest.raises(DatasetError) as err:
        load_dataset(path)
    assert "mqtt.qos" in str(err.value) and "bogus" in str(err.value)


def test_unparseable_rows_are_reported_not_dropped_silently(tmp_path):
    path = tmp_path / "short.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*FEATURE_COLUMNS, TARGET_COLUMN])
        w.writerow([*_blank_row(), "dos"])
        w.writerow(["1", "2", "dos"])
    table = load_dataset(path)
    assert len(table) == 1
    assert table.skipped and table.skipped[0][0] == 3


def test_row_count_matches_independent_line_count(tmp_path, corpus):
    path = tmp_path / "full.csv"
    write_dataset(path, corpus)
    with open(path, "rb") as fh:
        lines = sum(1 for _ in fh)
    assert len(load_dataset(path)) == lines - 1


def test_split_sizes():
    train, test = split_train_test(_table(1000), 0.30, seed=3)
    assert (len(train), len(test)) == (700, 300)
    fit, val = split_train_test(train, 0.33, seed=3)
    assert (len(fit), len(val)) == (469, 231)


def test_split_is_deterministic():
    t = _table(500)
    a = split_train_test(t, 0.3, seed=11)
    b = split_train_test(t, 0.3, seed=11)
    assert a[0].row_ids == b[0].row_ids and a[1].row_ids == b[1].row_ids
    c = split_train_test(t, 0.3, seed=12)
    assert c[1].row_ids != a[1].row_ids


def test_split_rejects_bad_fraction_and_empty():
    with pytest.raises(ValueError):
        split_train_test(_table(10), 0.0, seed=0)
    with pytest.raises(ValueError):
        split_train_test(_table(10), 1.0, seed=0)
    with pytest.raises(DatasetError):
        split_train_test(LabeledTable([], []), 0.3, seed=0)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 300),
    frac=st.floats(0.01, 0.99),
    seed=st.integers(0, 2**32 - 1),
    stratify=st.booleans(),
)
def test_split_is_an_exact_partition(n, frac, seed, stratify):
    table = _table(n, seed=seed % 1000)
    train, test = split_train_test(table, frac, seed=seed, stratify=stratify)
    ids = sorted(train.row_ids + test.row_ids)
    assert ids == list(range(n))
    assert not set(train.row_ids) & set(test.row_ids)
    assert len(test) in (int(np.floor(n * frac)), int(np.ceil(n * frac)))
    for part in (train, test):
        for rid, row, lab in zip(part.row_ids, part.rows, part.labels):
            assert table.rows[rid] == row and table.labels[rid] == lab


def test_absent_class_is_warned(caplog):
    rows = [("0",) * 33] * 10
    labels = [ClassLabel.DOS] * 9 + [ClassLabel.FLOOD]
    with caplog.at_level("WARNING"):
        split_train_test(LabeledTable(rows, labels), 0.3, seed=0)
    assert "flood" in caplog.text


def test_split_manifest_lists_indices(tmp_path):
    t = _table(20)
    train, test = split_train_test(t, 0.3, seed=5)
    path = write_split_manifest(tmp_path / "split.txt", 5, {"test": 0.3}, {"train": train, "test": test})
    text = path.read_text()
    assert "seed = 5" in text
    rows_line = [ln for ln in text.splitlines() if ln.startswith("split.test.rows")][0]
    assert [int(x) for x in rows_line.split("=")[1].split()] == test.row_ids


def test_repeated_category_gets_one_code():
    col = FEATURE_COLUMNS.index("mqtt.protoname")
    rows = [tuple(_blank_row(**{"mqtt.protoname": "MQTT"})) for _ in range(2)]
    enc = fit_encoders(LabeledTable(rows, [ClassLabel.LEGITIMATE] * 2))
    X = enc.transform(rows)
    assert X[0, col] == X[1, col] == 1.0


def test_unseen_value_encodes_to_zero():
    train = LabeledTable([tuple(_blank_row(**{"mqtt.protoname": "MQTT"}))], [ClassLabel.LEGITIMATE])
    enc = fit_encoders(train)
    col = FEATURE_COLUMNS.index("mqtt.protoname")
    assert enc.transform([_blank_row(**{"mqtt.protoname": "MQIsdp"})])[0, col] == 0.0
    assert enc.transform([_blank_row()])[0, col] == 0.0


def test_numeric_passthrough_and_blank_sentinel():
    enc = fit_encoders(LabeledTable([tuple(_blank_row(**{"tcp.len": "12"}))], [ClassLabel.DOS]))
    col = FEATURE_COLUMNS.index("tcp.len")
    assert enc.transform([_blank_row(**{"tcp.len": "7.5"})])[0, col] == 7.5
    assert enc.transform([_blank_row()])[0, col] == 0.0


def test_encoding_is_deterministic_and_complete(corpus):
    enc_a = fit_encoders(corpus)
    enc_b = fit_encoders(corpus)
    assert enc_a.codes == enc_b.codes
    m1 = encode(corpus, enc_a).values
    m2 = encode(corpus, enc_a).values
    assert np.array_equal(m1, m2)
    assert not np.isnan(m1).any()
    # Row-wise and bulk paths agree.
    for i in range(0, len(corpus), 997):
        assert np.array_equal(enc_a.transform_row(corpus.rows[i]), m1[i])


def test_table_invariants():
    with pytest.raises(DatasetError):
        LabeledTable([("1",) * 33], [])
    with pytest.raises(DatasetError):
        LabeledTable([("1",) * 32], [ClassLabel.DOS])
