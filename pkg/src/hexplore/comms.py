"""Fixed-layout frames and the loopback bus that carries them.

Every broadcast is one frame: a 16-byte header followed by fixed-size
records.  Layouts are little-endian and versioned; decoding a frame and
re-encoding it must reproduce the exact bytes, which the tests lean on.

Frame categories:
  0 pose   robot position, heading and the finished flag
  1 map    supervoxel records changed since the last publish, plus edges
  2 path   the waypoints the robot will follow next
  3 route  per-robot cluster sequences of the sender's current solution

Map frames carry deltas only.  The bus also tallies what two blunter
policies would have cost (full table each publish, raw voxel updates)
so the saving can be read off one run.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .supervoxels import NORMAL_UNDEFINED, SupervoxelRecord

MAGIC = 0x48455850
CODEC_VERSION = 1

CAT_POSE = 0
CAT_MAP = 1
CAT_PATH = 2
CAT_ROUTE = 3
CATEGORY_NAMES = {CAT_POSE: "pose", CAT_MAP: "map", CAT_PATH: "path", CAT_ROUTE: "route"}

_HEADER = struct.Struct("<IBBHIHH")      # magic, version, category, sender, tick, n_a, n_b
_SV_RECORD = struct.Struct("<Q3fBBH")    # key, center, flags, version, normal code
_EDGE_RECORD = struct.Struct("<QQf")     # key_a, key_b, weight
_POSE_BODY = struct.Struct("<4fBB")      # position, yaw, finished, species index
_WAYPOINT = struct.Struct("<3f")
_ROUTE_HEAD = struct.Struct("<HH")       # robot id, waypoint count

HEADER_BYTES = _HEADER.size             # 16
SV_RECORD_BYTES = _SV_RECORD.size       # 24
EDGE_RECORD_BYTES = _EDGE_RECORD.size   # 20

# what one raw voxel update would cost on the wire: key, count, mean,
# normal, slope, density, view angle, view distance, risk mask, covered
RAW_VOXEL_BYTES = 8 + 4 + 12 + 12 + 4 + 4 + 4 + 4 + 1 + 1


class CodecError(ValueError):
    pass


class TruncatedFrame(CodecError):
    pass


class BadMagic(CodecError):
    pass


class BadVersion(CodecError):
    pass


@dataclass(frozen=True)
class PoseFrame:
    sender: int
    tick: int
    position: tuple[float, float, float]
    yaw: float
    finished: bool
    species_index: int


@dataclass(frozen=True)
class MapIncrement:
    sender: int
    window_end: int
    records: tuple[SupervoxelRecord, ...]
    edges: tuple[tuple[int, int, float], ...]


@dataclass(frozen=True)
class PathFrame:
    sender: int
    tick: int
    waypoints: tuple[tuple[float, float, float], ...]


@dataclass(frozen=True)
class RouteFrame:
    sender: int
    tick: int
    sequences: tuple[tuple[int, tuple[tuple[float, float, float], ...]], ...]


def _pack_record(rec: SupervoxelRecord) -> bytes:
    flags = (rec.kind & 1) | (int(rec.covered) << 1) | ((rec.requirement & 0x3F) << 2)
    return _SV_RECORD.pack(
        rec.key,
        *[float(np.float32(c)) for c in rec.center],
        flags,
        min(rec.version, 255),
        rec.normal_oct,
    )


def _unpack_record(buf: bytes, offset: int, stamp: int) -> SupervoxelRecord:
    key, cx, cy, cz, flags, version, noct = _SV_RECORD.unpack_from(buf, offset)
    return SupervoxelRecord(
        key=key,
        center=(cx, cy, cz),
        normal_oct=noct,
        kind=flags & 1,
        covered=bool(flags & 2),
        requirement=(flags >> 2) & 0x3F,
        version=version,
        updated_at=stamp,
    )


def encode_pose(frame: PoseFrame) -> bytes:
    head = _HEADER.pack(
        MAGIC, CODEC_VERSION, CAT_POSE, frame.sender, frame.tick, 0, 0
    )
    body = _POSE_BODY.pack(
        *[float(np.float32(c)) for c in frame.position],
        float(np.float32(frame.yaw)),
        int(frame.finished),
        frame.species_index,
    )
    return head + body


def encode_map(inc: MapIncrement) -> bytes:
    head = _HEADER.pack(
        MAGIC,
        CODEC_VERSION,
        CAT_MAP,
        inc.sender,
        inc.window_end,
        len(inc.records),
        len(inc.edges),
    )
    parts = [head]
    parts.extend(_pack_record(r) for r in inc.records)
    parts.extend(
        _EDGE_RECORD.pack(a, b, float(np.float32(w))) for a, b, w in inc.edges
    )
    return b"".join(parts)


def encode_path(frame: PathFrame) -> bytes:
    head = _HEADER.pack(
        MAGIC, CODEC_VERSION, CAT_PATH, frame.sender, frame.tick,
        len(frame.waypoints), 0,
    )
    parts = [head]
    parts.extend(
        _WAYPOINT.pack(*[float(np.float32(c)) for c in w]) for w in frame.waypoints
    )
    return b"".join(parts)


def encode_route(frame: RouteFrame) -> bytes:
    head = _HEADER.pack(
        MAGIC, CODEC_VERSION, CAT_ROUTE, frame.sender, frame.tick,
        len(frame.sequences), 0,
    )
    parts = [head]
    for robot_id, seq in frame.sequences:
        parts.append(_ROUTE_HEAD.pack(robot_id, len(seq)))
        parts.extend(
            _WAYPOINT.pack(*[float(np.float32(c)) for c in w]) for w in seq
        )
    return b"".join(parts)


def decode(buf: bytes):
    """Parse one frame; returns the matching dataclass."""
    if len(buf) < HEADER_BYTES:
        raise TruncatedFrame(f"frame of {len(buf)} bytes is shorter than a header")
    magic, version, category, sender, tick, n_a, n_b = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic 0x{magic:08x}")
    if version != CODEC_VERSION:
        raise BadVersion(f"unsupported codec version {version}")
    off = HEADER_BYTES
    if category == CAT_POSE:
        if len(buf) < off + _POSE_BODY.size:
            raise TruncatedFrame("pose body missing")
        x, y, z, yaw, fin, sp = _POSE_BODY.unpack_from(buf, off)
        return PoseFrame(sender, tick, (x, y, z), yaw, bool(fin), sp)
    if category == CAT_MAP:
        need = off + n_a * SV_RECORD_BYTES + n_b * EDGE_RECORD_BYTES
        if len(buf) < need:
            raise TruncatedFrame(f"map frame needs {need} bytes, has {len(buf)}")
        records = []
        for _ in range(n_a):
            records.append(_unpack_record(buf, off, tick))
            off += SV_RECORD_BYTES
        edges = []
        for _ in range(n_b):
            a, b, w = _EDGE_RECORD.unpack_from(buf, off)
            edges.append((a, b, w))
            off += EDGE_RECORD_BYTES
        return MapIncrement(sender, tick, tuple(records), tuple(edges))
    if category == CAT_PATH:
        need = off + n_a * _WAYPOINT.size
        if len(buf) < need:
            raise TruncatedFrame("path frame truncated")
        pts = []
        for _ in range(n_a):
            pts.append(_WAYPOINT.unpack_from(buf, off))
            off += _WAYPOINT.size
        return PathFrame(sender, tick, tuple(pts))
    if category == CAT_ROUTE:
        sequences = []
        for _ in range(n_a):
            if len(buf) < off + _ROUTE_HEAD.size:
                raise TruncatedFrame("route frame truncated")
            rid, cnt = _ROUTE_HEAD.unpack_from(buf, off)
            off += _ROUTE_HEAD.size
            if len(buf) < off + cnt * _WAYPOINT.size:
                raise TruncatedFrame("route sequence truncated")
            seq = []
            for _ in range(cnt):
                seq.append(_WAYPOINT.unpack_from(buf, off))
                off += _WAYPOINT.size
            sequences.append((rid, tuple(seq)))
        return RouteFrame(sender, tick, tuple(sequences))
    raise CodecError(f"unknown category {category}")


class NetworkBus:
    """Broadcast medium with a fixed delivery delay.

    Publishing counts each frame once toward the sender's byte ledger,
    regardless of how many robots pick it up.  Delivery happens no
    earlier than the next tick, so nothing an agent sends can influence
    a teammate in the same tick.
    """

    def __init__(self, latency_ticks: int = 1):
        self.latency = max(1, int(latency_ticks))
        self._log: list[tuple[int, int, int, bytes]] = []  # tick, sender, cat, data
        self._cursor: dict[int, int] = {}
        self.sent_bytes: dict[tuple[int, int], int] = {}
        self.sent_frames: dict[tuple[int, int], int] = {}
        self.full_policy_bytes: dict[int, int] = {}
        self.raw_policy_bytes: dict[int, int] = {}

    def publish(self, sender: int, category: int, data: bytes, tick: int) -> None:
        self._log.append((tick, sender, category, data))
        key = (sender, category)
        self.sent_bytes[key] = self.sent_bytes.get(key, 0) + len(data)
        self.sent_frames[key] = self.sent_frames.get(key, 0) + 1

    def note_policy_costs(self, sender: int, full_bytes: int, raw_bytes: int) -> None:
        """Record what the same publish would have cost under blunt policies."""
        self.full_policy_bytes[sender] = (
            self.full_policy_bytes.get(sender, 0) + full_bytes
        )
        self.raw_policy_bytes[sender] = self.raw_policy_bytes.get(sender, 0) + raw_bytes

    def collect(self, receiver: int, tick: int) -> list[tuple[int, int, bytes]]:
        """Frames from other senders whose delay has elapsed, in order."""
        start = self._cursor.get(receiver, 0)
        out = []
        pos = start
        for pos in range(start, len(self._log)):
            sent, sender, category, data = self._log[pos]
            if sent + self.latency > tick:
                break
            if sender != receiver:
                out.append((sender, category, data))
        else:
            pos = len(self._log)
        self._cursor[receiver] = pos
        return out

    def category_bytes(self, category: int) -> int:
        return sum(v for (s, c), v in self.sent_bytes.items() if c == category)

    def total_bytes(self) -> int:
        return sum(self.sent_bytes.values())
