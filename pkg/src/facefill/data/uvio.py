"""UVF1 codec for precomputed dense correspondence fields.

Little-endian layout::

    b"UVF1"            4-byte magic
    uint32 H, uint32 W
    float32[H*W]       u, row-major
    float32[H*W]       v, row-major
    uint8[H*W]         validity (0/1)

Decoding enforces u, v in [0,1] and u = v = 0 wherever validity is 0.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from facefill.data.synthetic import UVField
from facefill.errors import ContractError, IngestionError

MAGIC = b"UVF1"
UV_SUFFIXES = (".uvf", ".npyish")
_HEADER = np.dtype([("magic", "S4"), ("height", "<u4"), ("width", "<u4")])


def encode_uv_field(field: UVField) -> bytes:
    h, w = field.shape
    header = np.array([(MAGIC, h, w)], dtype=_HEADER)
    return b"".join(
        [
            header.tobytes(),
            np.ascontiguousarray(field.u, dtype="<f4").tobytes(),
            np.ascontiguousarray(field.v, dtype="<f4").tobytes(),
            (np.ascontiguousarray(field.validity) > 0).astype(np.uint8).tobytes(),
        ]
    )


def decode_uv_field(payload: bytes, *, source: str = "<bytes>") -> UVField:
    if len(payload) < _HEADER.itemsize:
        raise IngestionError(source, "truncated UVF1 header")
    header = np.frombuffer(payload, dtype=_HEADER, count=1)[0]
    if bytes(header["magic"]) != MAGIC:
        raise IngestionError(source, f"bad magic {bytes(header['magic'])!r}, expected {MAGIC!r}")
    h, w = int(header["height"]), int(header["width"])
    count = h * w
    expected = _HEADER.itemsize + count * 9
    if len(payload) != expected:
        raise IngestionError(source, f"UVF1 body has {len(payload)} bytes, expected {expected}")
    offset = _HEADER.itemsize
    u = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(h, w)
    v = np.frombuffer(payload, dtype="<f4", count=count, offset=offset + 4 * count).reshape(h, w)
    validity = np.frombuffer(payload, dtype=np.uint8, count=count, offset=offset + 8 * count)
    try:
        return UVField(
            u=u.astype(np.float32),
            v=v.astype(np.float32),
            validity=validity.reshape(h, w).copy(),
        )
    except ContractError as exc:
        raise IngestionError(source, str(exc)) from exc


def write_uv_field(path: str | Path, field: UVField) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_uv_field(field))
    return target


def read_uv_field(path: str | Path) -> UVField:
    source = Path(path)
    try:
        payload = source.read_bytes()
    except OSError as exc:
        raise IngestionError(source, f"unreadable UV file ({exc.strerror or exc})") from exc
    return decode_uv_field(payload, source=str(source))
