"""Binary weight file.

Layout (all integers little-endian)::

    b"CDNM"  u32 version (=1)  u32 group_count
    per group:  u16 name_len, name (UTF-8), u8 tensor_count
    per tensor: u8 rank, rank x u32 extents, prod(extents) x float32

Tensor names are not stored; they are recovered from the group's layer kind
(``kernel, bias`` or ``scale, shift`` for instance norm).
"""
import os
import struct
import tempfile

import numpy as np

from ..errors import FormatError
from .network import NetworkGraph

MAGIC = b"CDNM"
VERSION = 1


def _tensor_names(group, count):
    if group.endswith("instancenorm"):
        names = ["scale", "shift"]
    else:
        names = ["kernel", "bias"]
    if count > len(names):
        names += [f"t{i}" for i in range(len(names), count)]
    return names[:count]


def dumps(weights):
    out = [MAGIC, struct.pack("<II", VERSION, len(weights))]
    for gname, tensors in weights.items():
        raw = gname.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", len(tensors)))
        for t in tensors.values():
            out.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
            out.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return b"".join(out)


def loads(data):
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated file while reading {what}", pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected b'CDNM'", 0)
    version, ngroups = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    weights = {}
    for _ in range(ngroups):
        (nlen,) = struct.unpack("<H", take(2, "group name length"))
        start = pos
        try:
            gname = take(nlen, "group name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("group name is not valid UTF-8", start) from exc
        (ntensors,) = struct.unpack("<B", take(1, "tensor count"))
        group = {}
        for tname in _tensor_names(gname, ntensors):
            (rank,) = struct.unpack("<B", take(1, "tensor rank"))
            shape = struct.unpack(f"<{rank}I", take(4 * rank, "tensor extents"))
            n = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(take(4 * n, "tensor data"), dtype="<f4")
            group[tname] = values.reshape(shape).astype(np.float32)
        weights[gname] = group
    if pos != len(data):
        raise FormatError("trailing bytes after last group", pos)
    return weights


def save_weights(net, path):
    """Write ``net.weights`` atomically (temp file + rename)."""
    payload = dumps(net.weights if isinstance(net, NetworkGraph) else net)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_weights(path, net=None):
    """Read a weight file. With ``net`` given, check it matches and return a new network."""
    with open(path, "rb") as f:
        weights = loads(f.read())
    if net is None:
        return weights
    if list(weights) != list(net.weights):
        raise FormatError(f"group names {list(weights)} do not match network {list(net.weights)}")
    for g, ts in net.weights.items():
        for k, t in ts.items():
            if k not in weights[g] or weights[g][k].shape != t.shape:
                raise FormatError(f"tensor {g}/{k} has the wrong shape for this network")
    return NetworkGraph(list(net.layers), net.input_shape, weights, net.name)
