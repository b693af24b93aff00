"""Binary dataset persistence and grayscale map rendering.

Dataset file layout (all little-endian):

    offset  size  field
    0       4     magic "USSI"
    4       2     version (u16) = 1
    6       1     endianness flag (0 = little)
    7       1     reserved
    8       8     record count (u64)
    16      4x5   n_transmits, n_elements, n_time, out_h, out_w (u32)
    36      8     sample_rate (f64)
    44      8     meta length in bytes (u64)
    52      32    sha256 digest of the meta bytes
    84      ...   meta: UTF-8 JSON of the shared run configuration
    then records, each with a fixed stride:
    sample_id (u64), channel tensor (f32), label tensor (f32)

The fixed stride gives O(1) random access by index. Tensors round-trip
bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import FormatError
from .solver import ChannelData

MAGIC = b"USSI"
VERSION = 1
_HEADER_FMT = "<4sHBBQ5IdQ32s"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


@dataclass
class SampleRecord:
    """One training example: channel data, label map, shared run metadata."""

    sample_id: int
    channel: ChannelData
    label: np.ndarray  # out_h x out_w, m/s
    meta: dict

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=np.float32)


def _meta_bytes(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True).encode()


def write_dataset(records: Iterable[SampleRecord], path: str | Path,
                  meta: dict | None = None) -> int:
    """Write records sequentially; returns the number written.

    Dims are locked by the first record; later mismatches raise FormatError.
    ``meta`` overrides the per-record meta for an empty stream.
    """
    path = Path(path)
    count = 0
    dims = None
    sample_rate = 0.0
    mbytes = _meta_bytes(meta or {})
    try:
        with open(path, "wb") as f:
            f.write(b"\0" * _HEADER_SIZE)  # placeholder, rewritten at the end
            header_meta_written = False
            for rec in records:
                ch = rec.channel
                d = (ch.n_transmits, ch.n_elements, ch.n_time,
                     rec.label.shape[0], rec.label.shape[1])
                if dims is None:
                    dims = d
                    sample_rate = ch.sample_rate
                    if meta is None:
                        mbytes = _meta_bytes(rec.meta)
                    f.seek(_HEADER_SIZE)
                    f.write(mbytes)
                    header_meta_written = True
                elif d != dims:
                    raise FormatError(f"record {rec.sample_id} dims {d} != {dims}")
                f.write(struct.pack("<Q", rec.sample_id))
                f.write(np.ascontiguousarray(ch.traces, dtype="<f4").tobytes())
                f.write(np.ascontiguousarray(rec.label, dtype="<f4").tobytes())
                count += 1
            if not header_meta_written:
                f.seek(_HEADER_SIZE)
                f.write(mbytes)
            if dims is None:
                dims = (0, 0, 0, 0, 0)
            header = struct.pack(
                _HEADER_FMT, MAGIC, VERSION, 0, 0, count, *dims, sample_rate,
                len(mbytes), hashlib.sha256(mbytes).digest())
            f.seek(0)
            f.write(header)
    except OSError as e:
        raise OSError(f"writing dataset {path}: {e}") from e
    return count


@dataclass
class DatasetReader:
    """Random-access reader over a dataset file."""

    path: Path
    count: int
    n_transmits: int
    n_elements: int
    n_time: int
    out_h: int
    out_w: int
    sample_rate: float
    meta: dict
    _data_start: int
    _stride: int

    @classmethod
    def open(cls, path: str | Path) -> "DatasetReader":
        path = Path(path)
        raw = path.read_bytes()
        if len(raw) < _HEADER_SIZE:
            raise FormatError(f"{path}: truncated header")
        (magic, version, endian, _res, count, nt, ne, ntime, oh, ow,
         sample_rate, meta_len, digest) = struct.unpack_from(_HEADER_FMT, raw)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if endian != 0:
            raise FormatError(f"{path}: unsupported endianness flag {endian}")
        mbytes = raw[_HEADER_SIZE:_HEADER_SIZE + meta_len]
        if hashlib.sha256(mbytes).digest() != digest:
            raise FormatError(f"{path}: meta digest mismatch")
        meta = json.loads(mbytes) if mbytes else {}
        stride = 8 + 4 * (nt * ne * ntime) + 4 * (oh * ow)
        expected = _HEADER_SIZE + meta_len + count * stride
        if len(raw) != expected:
            raise FormatError(f"{path}: size {len(raw)} != expected {expected}")
        return cls(path=path, count=count, n_transmits=nt, n_elements=ne,
                   n_time=ntime, out_h=oh, out_w=ow, sample_rate=sample_rate,
                   meta=meta, _data_start=_HEADER_SIZE + meta_len, _stride=stride)

    def read(self, index: int) -> SampleRecord:
        if not 0 <= index < self.count:
            raise IndexError(f"record index {index} out of range [0, {self.count})")
        with open(self.path, "rb") as f:
            f.seek(self._data_start + index * self._stride)
            buf = f.read(self._stride)
        (sample_id,) = struct.unpack_from("<Q", buf)
        n_ch = self.n_transmits * self.n_elements * self.n_time
        traces = np.frombuffer(buf, dtype="<f4", count=n_ch, offset=8).reshape(
            self.n_transmits, self.n_elements, self.n_time)
        label = np.frombuffer(buf, dtype="<f4", count=self.out_h * self.out_w,
                              offset=8 + 4 * n_ch).reshape(self.out_h, self.out_w)
        channel = ChannelData(traces=traces.copy(), sample_rate=self.sample_rate)
        return SampleRecord(sample_id=sample_id, channel=channel,
                            label=label.copy(), meta=self.meta)

    def __iter__(self) -> Iterator[SampleRecord]:
        for i in range(self.count):
            yield self.read(i)


def read_dataset(path: str | Path, indices: list | None = None) -> Iterator[SampleRecord]:
    """Yield records in the given index order (all records if None)."""
    reader = DatasetReader.open(path)
    for i in (indices if indices is not None else range(reader.count)):
        yield reader.read(i)


def render_speed_map(speed_map: np.ndarray, path: str | Path,
                     vmin: float = 1300.0, vmax: float = 1800.0) -> None:
    """Write an 8-bit P5 graymap: vmin maps to black, vmax to white."""
    if vmin >= vmax:
        raise ValueError("vmin must be < vmax")
    m = np.asarray(speed_map, dtype=np.float64)
    pix = np.round(255.0 * np.clip((m - vmin) / (vmax - vmin), 0.0, 1.0)).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(pix.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise FormatError(f"{path}: not a P5 graymap")
    parts = raw.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
