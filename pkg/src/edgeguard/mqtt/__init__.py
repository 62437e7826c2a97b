from .codec import NEED_MORE, MalformedFrame, MqttPacket, Reason, encode_packet, iter_frames, parse_frame
from .features import ConnState, ConnTable, PacketFeatures, SchemaMismatch, extract_features, preprocess

__all__ = [
    "NEED_MORE", "ConnState", "ConnTable", "MalformedFrame", "MqttPacket", "PacketFeatures",
    "Reason", "SchemaMismatch", "encode_packet", "extract_features", "iter_frames",
    "parse_frame", "preprocess",
]
