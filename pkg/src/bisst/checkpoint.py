"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"BSST"                         magic
    u32                             format version (1)
    UTF-8 "key=value\\n" lines       header, terminated by an empty line
    u32                             tensor count
    per tensor:
        u16 name length, UTF-8 name
        u8 rank, rank x u64 dims
        prod(dims) x float64        row-major data

The header carries every ``ModelConfig`` field, ``anchors`` (comma
separated) and ``vocab`` (space separated, reserved tokens first).
"""

import struct

import numpy as np

from . import tensor as tn
from .decoder import Vocabulary
from .errors import FormatError
from .geometry import AnchorSet
from .model import Model, ModelConfig

MAGIC = b"BSST"
VERSION = 1


def _header(model):
    lines = [f"{k}={v}" for k, v in model.config.to_dict().items()]
    lines.append("anchors=" + ",".join(str(x) for x in model.anchors.lengths))
    lines.append("vocab=" + " ".join(model.vocab.tokens))
    return ("\n".join(lines) + "\n\n").encode("utf-8")


def checkpoint_bytes(model):
    out = [MAGIC, struct.pack("<I", VERSION), _header(model)]
    out.append(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", p.data.ndim))
        out.append(struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
        out.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(out)


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def model_from_bytes(buf):
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a checkpoint", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    end = buf.find(b"\n\n", r.pos)
    if end < 0:
        raise FormatError("unterminated header", r.pos)
    header_start = r.pos
    try:
        text = buf[r.pos:end].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("header is not UTF-8", header_start + exc.start) from exc
    r.pos = end + 2
    meta = {}
    for line in text.split("\n"):
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"malformed header line {line!r}", header_start)
        meta[key] = value
    try:
        anchors = AnchorSet(tuple(int(x) for x in meta.pop("anchors").split(",")))
        vocab = Vocabulary.from_token_list(meta.pop("vocab").split(" "))
        config = ModelConfig.from_dict(meta)
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"invalid header: {exc}", header_start) from exc
    if config.vocab_size != len(vocab) or config.num_anchors != len(anchors):
        raise FormatError("header sizes disagree with the stored vocabulary or anchors", header_start)
    (count,) = r.unpack("<I", "tensor count")
    params = {}
    for _ in range(count):
        at = r.pos
        (n,) = r.unpack("<H", "name length")
        try:
            name = r.take(n, "tensor name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not UTF-8", at) from exc
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}Q", f"dims of {name}")
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(r.take(8 * size, f"data of {name}"), dtype="<f8")
        params[name] = tn.parameter(data.astype(np.float64).reshape(dims), name)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last tensor", r.pos)
    expected = Model.create(config, anchors, vocab).params
    if set(expected) != set(params):
        missing = sorted(set(expected) ^ set(params))
        raise FormatError(f"parameter set does not match config: {missing[:5]}", r.pos)
    for name, p in expected.items():
        if params[name].shape != p.shape:
            raise FormatError(f"tensor {name} has shape {params[name].shape}, expected {p.shape}", r.pos)
    # Keep the canonical parameter order.
    return Model(config, anchors, vocab, {k: params[k] for k in expected})


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
