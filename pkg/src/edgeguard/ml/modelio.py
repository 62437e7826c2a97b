"""Binary model file format (``MQBM``).

Layout, all integers little-endian::

    "MQBM" | u8 version | u8 kind (0 tree, 1 forest, 2 gbm) | u32 n_features
    | 32-byte schema hash
    | n_features x (u16 len, utf-8 column name)
    | u32 n_encoded_columns x (u16 len, name, u32 n_values, n_values x (u16 len, value))
    | body
    | u32 CRC-32 of every preceding byte

Bodies:
    tree   : u32 node_count, preorder nodes
    forest : u32 n_trees, then per tree u32 node_count + preorder nodes
    gbm    : f64 learning_rate, 6 x f64 initial scores, u32 n_stages,
             then 6 trees per stage, each u32 node_count + preorder nodes

Node records: u8 kind, then
    0 internal          : u32 feature, f64 threshold
    1 classification leaf: 6 x u64 class counts
    2 regression leaf    : f64 value
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from ..dataset import Encoders
from ..fsutil import write_atomic
from ..schema import N_CLASSES
from .ensemble import ForestModel, GbmModel
from .tree import LEAF, RegressionTree, TreeModel

MAGIC = b"MQBM"
FORMAT_VERSION = 1
KIND_TREE, KIND_FOREST, KIND_GBM = 0, 1, 2
NODE_INTERNAL, NODE_LEAF, NODE_VALUE = 0, 1, 2


class ModelFormatError(Exception):
    pass


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class SchemaMismatchError(ModelFormatError):
    pass


def _str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ModelFormatError("string too long for the model format")
    return struct.pack("<H", len(raw)) + raw


def _nodes(out: bytearray, feature, threshold, left, right, leaf_payload) -> None:
    out += struct.pack("<I", len(feature))
    # Stored arrays are already preorder (left child = i + 1).
    for i in range(len(feature)):
        if feature[i] == LEAF:
            out += leaf_payload(i)
        else:
            out += struct.pack("<BId", NODE_INTERNAL, int(feature[i]), float(threshold[i]))


def _tree_nodes(out: bytearray, t: TreeModel) -> None:
    fmt = "<B" + "Q" * N_CLASSES
    _nodes(out, t.feature, t.threshold, t.left, t.right,
           lambda i: struct.pack(fmt, NODE_LEAF, *(int(c) for c in t.counts[i])))


def _reg_nodes(out: bytearray, t: RegressionTree) -> None:
    _nodes(out, t.feature, t.threshold, t.left, t.right,
           lambda i: struct.pack("<Bd", NODE_VALUE, float(t.value[i])))


def serialize_model(model) -> bytes:
    kind = {"tree": KIND_TREE, "forest": KIND_FOREST, "gbm": KIND_GBM}[model.kind]
    out = bytearray(MAGIC)
    out += struct.pack("<BBI", FORMAT_VERSION, kind, model.n_features)
    if len(model.schema_hash) != 32:
        raise ModelFormatError("schema hash must be 32 bytes")
    out += model.schema_hash
    for name in model.feature_names:
        out += _str(name)
    enc = model.encoders
    codes = {} if enc is None else {c: enc.codes[c] for c in enc.columns if c in enc.codes}
    out += struct.pack("<I", len(codes))
    for col, table in codes.items():
        out += _str(col)
        ordered = sorted(table.items(), key=lambda kv: kv[1])
        if [code for _, code in ordered] != list(range(1, len(ordered) + 1)):
            raise ModelFormatError(f"encoder codes for {col} are not dense")
        out += struct.pack("<I", len(ordered))
        for value, _ in ordered:
            out += _str(value)
    if kind == KIND_TREE:
        _tree_nodes(out, model)
    elif kind == KIND_FOREST:
        out += struct.pack("<I", len(model.trees))
        for t in model.trees:
            _tree_nodes(out, t)
    else:
        out += struct.pack("<d", model.learning_rate)
        out += struct.pack("<" + "d" * N_CLASSES, *model.init_scores)
        out += struct.pack("<I", len(model.stages))
        for stage in model.stages:
            for t in stage:
                _reg_nodes(out, t)
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedModelError(f"model stream ends at byte {len(self.data)}, needed {self.pos + n}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelFormatError(f"invalid utf-8 in model strings: {exc}") from None


def _read_nodes(r: _Reader, n_features: int, regression: bool):
    (count,) = r.unpack("<I")
    if count == 0:
        raise ModelFormatError("tree with zero nodes")
    # Every node record is at least 9 bytes; reject absurd counts before allocating.
    if count * 9 > len(r.data) - r.pos:
        raise TruncatedModelError(f"node count {count} exceeds remaining stream")
    feature = np.full(count, LEAF, dtype=np.int64)
    threshold = np.zeros(count)
    left = np.full(count, LEAF, dtype=np.int64)
    right = np.full(count, LEAF, dtype=np.int64)
    payload = np.zeros((count, N_CLASSES), dtype=np.uint64) if not regression else np.zeros(count)
    # Rebuild child links from preorder: an internal node's left child follows it,
    # its right child follows the left subtree.
    pending: list[int] = []
    for i in range(count):
        (kind,) = r.unpack("<B")
        if kind == NODE_INTERNAL:
            f, thr = r.unpack("<Id")
            if f >= n_features:
                raise ModelFormatError(f"node {i} uses feature {f} of {n_features}")
            feature[i], threshold[i] = f, thr
        elif kind == NODE_LEAF and not regression:
            payload[i] = r.unpack("<" + "Q" * N_CLASSES)
            if not payload[i].any():
                raise ModelFormatError(f"leaf {i} has no training counts")
        elif kind == NODE_VALUE and regression:
            (payload[i],) = r.unpack("<d")
        else:
            raise ModelFormatError(f"unexpected node kind {kind} at node {i}")
        if i > 0:
            if not pending:
                raise ModelFormatError("preorder node records do not form a tree")
            parent = pending[-1]
            if left[parent] == LEAF:
                left[parent] = i
            else:
                right[parent] = i
                pending.pop()
        if kind == NODE_INTERNAL:
            pending.append(i)
    if pending:
        raise ModelFormatError("tree records end before all subtrees are complete")
    return feature, threshold, left, right, payload


def deserialize_model(data: bytes, expected_schema_hash: bytes | None = None):
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("stream does not start with MQBM")
    r = _Reader(data)
    r.take(4)
    version, kind, n_features = r.unpack("<BBI")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, expected {FORMAT_VERSION}")
    if kind not in (KIND_TREE, KIND_FOREST, KIND_GBM):
        raise ModelFormatError(f"unknown model kind {kind}")
    if n_features > (len(data) - r.pos) // 2:
        raise TruncatedModelError("feature count exceeds remaining stream")
    hash_ = r.take(32)
    names = [r.string() for _ in range(n_features)]
    (n_enc,) = r.unpack("<I")
    if n_enc > n_features:
        raise ModelFormatError("more encoded columns than features")
    codes: dict[str, dict[str, int]] = {}
    for _ in range(n_enc):
        col = r.string()
        (n_values,) = r.unpack("<I")
        if n_values * 2 > len(data) - r.pos:
            raise TruncatedModelError("encoder table exceeds remaining stream")
        codes[col] = {r.string(): j + 1 for j in range(n_values)}
    encoders = Encoders(tuple(names), codes) if codes else None
    if kind == KIND_TREE:
        arrays = _read_nodes(r, n_features, regression=False)
        model = TreeModel(*arrays, feature_names=names, schema_hash_=hash_, encoders=encoders)
    elif kind == KIND_FOREST:
        (n_trees,) = r.unpack("<I")
        if n_trees == 0:
            raise ModelFormatError("forest with zero trees")
        trees = [
            TreeModel(*_read_nodes(r, n_features, False), feature_names=names, schema_hash_=hash_)
            for _ in range(n_trees)
        ]
        model = ForestModel(trees, names, hash_, encoders)
    else:
        (lr,) = r.unpack("<d")
        init = r.unpack("<" + "d" * N_CLASSES)
        (n_stages,) = r.unpack("<I")
        if n_stages > 20:
            raise ModelFormatError(f"{n_stages} boosting stages exceeds the cap of 20")
        stages = []
        for _ in range(n_stages):
            stages.append([RegressionTree(*_read_nodes(r, n_features, True)) for _ in range(N_CLASSES)])
        model = GbmModel(init, stages, lr, names, hash_, encoders)
    body_end = r.pos
    (crc,) = r.unpack("<I")
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after the checksum")
    if zlib.crc32(data[:body_end]) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC-32 mismatch")
    if expected_schema_hash is not None and hash_ != expected_schema_hash:
        raise SchemaMismatchError("model schema hash differs from the expected feature schema")
    return model


def save_model(path, model) -> None:
    write_atomic(path, serialize_model(model))


def load_model(path, expected_schema_hash: bytes | None = None):
    with open(path, "rb") as fh:
        return deserialize_model(fh.read(), expected_schema_hash)
