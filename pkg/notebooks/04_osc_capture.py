"""
Capturing an OSC pose stream
============================

Pose messages arrive as OSC over UDP. A capture session writes one CSV per
source and a manifest with counts and checksums.
"""

import tempfile

import numpy as np

from trackbench.ingest.capture import CaptureSession, send_packets
from trackbench.ingest.osc import OscPoseMessage, encode_osc, parse_osc

#%%
# The wire format for a single pose.
msg = OscPoseMessage("vive1", 1.25, (0.1, 0.2, 0.3), (1.0, 0.0, 0.0, 0.0))
packet = encode_osc(msg)
print(len(packet), "bytes:", packet[:24])
assert parse_osc(packet) == msg

#%%
# Replay two trackers over loopback at 1 kHz, plus a little garbage.
out = tempfile.mkdtemp(prefix="trackbench-capture-")
t = np.arange(1000) / 1000
packets = [encode_osc(OscPoseMessage(f"tracker{i % 2}", ti, (np.sin(ti), np.cos(ti), 0.0))) for i, ti in enumerate(t)]
packets += [b"\x00junk"] * 5

with CaptureSession(out, expected_sources=["tracker0", "tracker1"]) as session:
    send_packets(packets, session.address, rate=1000)
# leaving the block drains the socket and flushes every file

m = session.manifest
print({k: v.count for k, v in m.sources.items()}, "malformed:", m.malformed)
