"""Binary checkpoint container.

Layout (little-endian)::

    b"ATTS" | u32 version | u32 count
    count x ( u16 name_len | name utf-8 | u8 dtype | u8 rank | rank x u32 dim | data )
    u32 meta_len | metadata JSON (utf-8, sorted keys)

dtype codes: 0 = float32, 1 = float64.
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ATTS"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict
    metadata: dict = field(default_factory=dict)

    def to_bytes(self):
        out = [MAGIC, struct.pack("<II", VERSION, len(self.tensors))]
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            dt = arr.dtype.newbyteorder("<")
            if dt not in DTYPE_CODES:
                raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
            raw = name.encode("utf-8")
            out.append(struct.pack("<H", len(raw)) + raw)
            out.append(struct.pack("<BB", DTYPE_CODES[dt], arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
        meta = json.dumps(self.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
        out.append(struct.pack("<I", len(meta)) + meta)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf):
        view = memoryview(buf)
        if bytes(view[:4]) != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        version, count = struct.unpack_from("<II", view, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 12
        tensors = {}
        try:
            for _ in range(count):
                (n,) = struct.unpack_from("<H", view, pos)
                pos += 2
                name = bytes(view[pos:pos + n]).decode("utf-8")
                pos += n
                code, rank = struct.unpack_from("<BB", view, pos)
                pos += 2
                shape = struct.unpack_from(f"<{rank}I", view, pos)
                pos += 4 * rank
                dt = CODE_DTYPES[code]
                nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
                if pos + nbytes > len(view):
                    raise CheckpointError("truncated tensor data")
                if name in tensors:
                    raise CheckpointError(f"duplicate tensor name {name!r}")
                tensors[name] = np.frombuffer(view[pos:pos + nbytes], dtype=dt).reshape(shape).copy()
                pos += nbytes
            (m,) = struct.unpack_from("<I", view, pos)
            pos += 4
            metadata = json.loads(bytes(view[pos:pos + m]).decode("utf-8"))
        except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
        return cls(tensors, metadata)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def from_model(model, **metadata):
    return Checkpoint({k: np.array(v) for k, v in model.state_dict().items()}, metadata)
