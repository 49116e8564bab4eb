"""Framed byte protocol between the parameter server and socket shards.

Frame layout (all little-endian)::

    u32 frame_length            # bytes after this field
    u8  message_type            # 0 fetch-request, 1 snapshot, 2 gradient
    u64 stamp                   # snapshot version / gradient step_stamp / shard id
    u32 block_count
    per block: u32 name_len | name (UTF-8) | u32 rows | u32 cols | f32[rows*cols]

Scalar metadata rides along as reserved blocks whose names start with ``@``.
Float64 scalars (learning rate, minibatch loss) are stored as a 1x2 block
holding the raw eight bytes, so they cross the wire without rounding.
A snapshot with zero parameter blocks tells the shard to stop.
"""

import socket
import struct
from collections import OrderedDict

import numpy as np

from .errors import ProtocolError
from .model import ModelParams

FETCH, SNAPSHOT, GRADIENT = 0, 1, 2
_HEAD = struct.Struct("<BQI")
_LEN = struct.Struct("<I")
_DIMS = struct.Struct("<II")


def _f64_block(value):
    return np.array([value], dtype="<f8").view("<f4").reshape(1, 2)


def _f64_value(block):
    return float(np.ascontiguousarray(block, dtype="<f4").view("<f8")[0, 0])


def encode_frame(msg_type, stamp, blocks):
    parts = [_HEAD.pack(msg_type, stamp, len(blocks))]
    for name, arr in blocks.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        if arr.ndim != 2:
            raise ProtocolError(f"block {name} must be 2-D, got {arr.shape}")
        raw = name.encode("utf-8")
        parts.append(_LEN.pack(len(raw)))
        parts.append(raw)
        parts.append(_DIMS.pack(*arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return _LEN.pack(len(body)) + body


def decode_body(body):
    """Parse a frame body (everything after the length prefix)."""
    if len(body) < _HEAD.size:
        raise ProtocolError(f"frame body of {len(body)} bytes is shorter than its header")
    msg_type, stamp, count = _HEAD.unpack_from(body, 0)
    if msg_type not in (FETCH, SNAPSHOT, GRADIENT):
        raise ProtocolError(f"unknown message type {msg_type}")
    pos = _HEAD.size
    blocks = OrderedDict()
    try:
        for _ in range(count):
            (n,) = _LEN.unpack_from(body, pos)
            pos += 4
            name = body[pos : pos + n].decode("utf-8")
            pos += n
            rows, cols = _DIMS.unpack_from(body, pos)
            pos += _DIMS.size
            size = rows * cols * 4
            if pos + size > len(body):
                raise ProtocolError(f"block {name} overruns the frame")
            blocks[name] = np.frombuffer(body, "<f4", rows * cols, pos).reshape(rows, cols).astype(np.float32)
            pos += size
    except struct.error as exc:
        raise ProtocolError(f"truncated frame at byte {pos}") from exc
    if pos != len(body):
        raise ProtocolError(f"{len(body) - pos} trailing bytes in frame")
    return msg_type, stamp, blocks


def decode_frame(data):
    if len(data) < 4:
        raise ProtocolError("frame shorter than its length prefix")
    (length,) = _LEN.unpack_from(data, 0)
    if len(data) != 4 + length:
        raise ProtocolError(f"frame length field says {length}, got {len(data) - 4} bytes")
    return decode_body(data[4:])


# ---------------------------------------------------------------------------
# typed messages
# ---------------------------------------------------------------------------


def encode_fetch(shard_id):
    return encode_frame(FETCH, shard_id, OrderedDict())


def encode_snapshot(snapshot):
    if snapshot is None:
        return encode_frame(SNAPSHOT, 0, OrderedDict())
    blocks = OrderedDict(snapshot.params.items())
    blocks["@lr"] = _f64_block(snapshot.current_lr)
    return encode_frame(SNAPSHOT, snapshot.version, blocks)


def encode_gradient(msg):
    blocks = OrderedDict(msg.grads.items())
    blocks["@shard"] = _f64_block(msg.shard_id)
    blocks["@loss"] = _f64_block(msg.minibatch_loss)
    blocks["@rows"] = _f64_block(msg.rows)
    return encode_frame(GRADIENT, msg.step_stamp, blocks)


def _split_meta(blocks):
    meta = {k[1:]: _f64_value(v) for k, v in blocks.items() if k.startswith("@")}
    params = ModelParams((k, v) for k, v in blocks.items() if not k.startswith("@"))
    return meta, params


def to_snapshot(stamp, blocks):
    from .asgd import ParamSnapshot

    meta, params = _split_meta(blocks)
    if len(params) == 0:
        return None
    return ParamSnapshot(version=stamp, params=params, current_lr=meta.get("lr", 0.0))


def to_gradient(stamp, blocks):
    from .asgd import GradMessage

    meta, grads = _split_meta(blocks)
    try:
        return GradMessage(
            shard_id=int(meta["shard"]),
            step_stamp=stamp,
            grads=grads,
            minibatch_loss=meta["loss"],
            rows=int(meta["rows"]),
        )
    except KeyError as exc:
        raise ProtocolError(f"gradient frame lacks metadata block @{exc.args[0]}") from exc


# ---------------------------------------------------------------------------
# sockets
# ---------------------------------------------------------------------------


def _recv_exact(sock, n):
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            raise ConnectionError("peer closed the connection mid-frame" if got else "peer closed")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock):
    (length,) = _LEN.unpack(_recv_exact(sock, 4))
    return decode_body(_recv_exact(sock, length))


def write_frame(sock, frame):
    sock.sendall(frame)


def connect(port, host="127.0.0.1", retries=50, delay=0.1):
    """Connect with bounded retry; raises ``ConnectionError`` when exhausted."""
    import time

    last = None
    for _ in range(retries):
        try:
            sock = socket.create_connection((host, port))
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError as exc:
            last = exc
            time.sleep(delay)
    raise ConnectionError(f"parameter server at {host}:{port} unreachable after {retries} tries: {last}")
