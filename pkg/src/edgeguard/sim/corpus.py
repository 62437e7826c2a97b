"""Turn generated traffic into MQTTset-schema tables, ground truth and replays."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

from ..dataset import LabeledTable
from ..fsutil import write_atomic
from ..mqtt import codec
from ..mqtt.features import ConnTable, extract_features
from ..mqtt.replay import ReplayRecord, read_replay, write_replay
from ..schema import FEATURE_COLUMNS, ClassLabel
from .generators import PRESETS, Scenario, SimPacket, generate


def feature_rows(packets: Sequence[SimPacket]) -> list[tuple[str, ...]]:
    """Extract one schema row per packet, in the order the gateway would see them."""
    conns = ConnTable(idle_timeout=float("inf"))
    rows = []
    for p in packets:
        src = p.source
        state = conns.get(src, p.conn_id, p.time)
        item, used = codec.parse_frame(p.frame, eof=True)
        rows.append(extract_features(item, state, p.time).as_row())
        if isinstance(item, codec.MqttPacket) and item.msg_type == codec.DISCONNECT:
            conns.close(src, p.conn_id)
    return rows


def to_table(packets: Sequence[SimPacket]) -> LabeledTable:
    rows = feature_rows(packets)
    return LabeledTable(rows=rows, labels=[p.label for p in packets], schema=FEATURE_COLUMNS,
                        row_ids=list(range(len(rows))))


def surrogate_corpus(seeds: Sequence[int] = range(8), base: Scenario = PRESETS["all-attacks"]) -> LabeledTable:
    """Concatenate feature tables of several seeded scenarios."""
    table = None
    for seed in seeds:
        part = to_table(generate(base.with_seed(seed)))
        table = part if table is None else table.concat(part)
    return table


def write_ground_truth(path: str | Path, packets: Sequence[SimPacket]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["conn_id", "seq", "time", "label"])
    for p in packets:
        w.writerow([p.conn_id, p.seq, f"{p.time:.6f}", p.label.dataset_name])
    return write_atomic(path, buf.getvalue())


def read_ground_truth(path: str | Path) -> dict[tuple[str, int], ClassLabel]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {(r["conn_id"], int(r["seq"])): ClassLabel.from_string(r["label"]) for r in csv.DictReader(fh)}


def write_stream(replay_path: str | Path, truth_path: str | Path, packets: Sequence[SimPacket]) -> None:
    write_replay(replay_path, (ReplayRecord(p.time, p.conn_id, p.frame) for p in packets))
    write_ground_truth(truth_path, packets)


def read_stream(replay_path: str | Path, truth_path: str | Path) -> list[SimPacket]:
    """Rebuild labeled packets from a replay file and its ground-truth CSV."""
    truth = read_ground_truth(truth_path)
    seqs: dict[str, int] = {}
    out = []
    for rec in read_replay(replay_path):
        n = seqs.get(rec.conn_id, 0)
        seqs[rec.conn_id] = n + 1
        try:
            label = truth[(rec.conn_id, n)]
        except KeyError:
            raise ValueError(f"no ground truth for {rec.conn_id} packet {n}") from None
        out.append(SimPacket(rec.time, rec.conn_id, n, rec.frame, label))
    return out
