"""File formats, the OSC pose codec and the UDP capture service."""

from trackbench.ingest.formats import (
    CAPTURE_HEADER,
    TRAJECTORY_HEADER,
    read_trajectory_csv,
    write_trajectory_csv,
)
from trackbench.ingest.osc import (
    OscBundle,
    OscMessage,
    OscPoseMessage,
    encode_bundle,
    encode_osc,
    parse_osc,
    parse_packet,
)

__all__ = [
    "CAPTURE_HEADER",
    "TRAJECTORY_HEADER",
    "read_trajectory_csv",
    "write_trajectory_csv",
    "OscBundle",
    "OscMessage",
    "OscPoseMessage",
    "encode_bundle",
    "encode_osc",
    "parse_osc",
    "parse_packet",
]
