"""Class labels and the 33-column MQTTset feature schema."""

from __future__ import annotations

import enum
import hashlib
from typing import Iterable, Sequence


class ClassLabel(enum.IntEnum):
    LEGITIMATE = 0
    MALFORMED = 1
    DOS = 2
    BRUTEFORCE = 3
    SLOWITE = 4
    FLOOD = 5

    @property
    def dataset_name(self) -> str:
        return _LABEL_STRINGS[self]

    @property
    def is_attack(self) -> bool:
        return self is not ClassLabel.LEGITIMATE

    @classmethod
    def from_string(cls, text: str) -> "ClassLabel":
        try:
            return _STRING_LABELS[text.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown class label {text!r}") from None


_LABEL_STRINGS = {
    ClassLabel.LEGITIMATE: "legitimate",
    ClassLabel.MALFORMED: "malformed",
    ClassLabel.DOS: "dos",
    ClassLabel.BRUTEFORCE: "bruteforce",
    ClassLabel.SLOWITE: "slowite",
    ClassLabel.FLOOD: "flood",
}
_STRING_LABELS = {v: k for k, v in _LABEL_STRINGS.items()}

N_CLASSES = len(ClassLabel)
ATTACK_LABELS = tuple(c for c in ClassLabel if c.is_attack)

TARGET_COLUMN = "target"

FEATURE_COLUMNS: tuple[str, ...] = (
    "tcp.flags",
    "tcp.time_delta",
    "tcp.len",
    "mqtt.conack.flags",
    "mqtt.conack.flags.reserved",
    "mqtt.conack.flags.sp",
    "mqtt.conack.val",
    "mqtt.conflag.cleansess",
    "mqtt.conflag.passwd",
    "mqtt.conflag.qos",
    "mqtt.conflag.reserved",
    "mqtt.conflag.retain",
    "mqtt.conflag.uname",
    "mqtt.conflag.willflag",
    "mqtt.conflags",
    "mqtt.dupflag",
    "mqtt.hdrflags",
    "mqtt.kalive",
    "mqtt.len",
    "mqtt.msg",
    "mqtt.msgid",
    "mqtt.msgtype",
    "mqtt.proto_len",
    "mqtt.protoname",
    "mqtt.qos",
    "mqtt.retain",
    "mqtt.sub.qos",
    "mqtt.suback.qos",
    "mqtt.ver",
    "mqtt.willmsg",
    "mqtt.willmsg_len",
    "mqtt.willtopic",
    "mqtt.willtopic_len",
)

# Text-valued columns: hex flag words, protocol name, payload strings.
CATEGORICAL_COLUMNS = frozenset(
    {
        "tcp.flags",
        "mqtt.conack.flags",
        "mqtt.conflags",
        "mqtt.hdrflags",
        "mqtt.msg",
        "mqtt.protoname",
        "mqtt.willmsg",
        "mqtt.willtopic",
    }
)

# Extra columns a FeatureLog carries on top of the dataset schema.
OPTIONAL_COLUMNS = ("disposition",)


def schema_hash(columns: Iterable[str]) -> bytes:
    """32-byte SHA-256 over the newline-joined column names."""
    return hashlib.sha256("\n".join(columns).encode("utf-8")).digest()


MQTT_SCHEMA_HASH = schema_hash(FEATURE_COLUMNS)


def label_names(labels: Sequence[ClassLabel] = tuple(ClassLabel)) -> list[str]:
    return [lab.dataset_name for lab in labels]
