"""PONQ binary grid format (little-endian).

Header: magic ``PONQ``, u32 version, u32 N, u32 K, f64 bounds x6, u64 cell
count. Each cell: u32 linear index, u8 sample count, then per sample 16 f64:
point (3), normal (3), quadric upper triangle (10).
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError
from .grid import PoNQGrid

PONQ_MAGIC = b"PONQ"
PONQ_VERSION = 1
_HEADER = struct.Struct("<4sIII6dQ")
_CELL = struct.Struct("<IB")
_RECORD = np.dtype("<f8")
_RECORD_LEN = 16 * 8


def write_ponq(grid: PoNQGrid) -> bytes:
    if grid.N ** 3 > 2 ** 32 or grid.K > 255:
        raise ValueError("grid too large for the PONQ format")
    parts = [_HEADER.pack(PONQ_MAGIC, PONQ_VERSION, grid.N, grid.K, *grid.bounds, grid.n_cells)]
    rec = np.concatenate([grid.points, grid.normals, grid.quadrics], axis=1).astype(_RECORD)
    off = grid.offsets
    for m, (ci, c) in enumerate(zip(grid.cell_index.tolist(), grid.counts.tolist())):
        parts.append(_CELL.pack(ci, c))
        parts.append(rec[off[m] : off[m + 1]].tobytes())
    return b"".join(parts)


def read_ponq(data: bytes) -> PoNQGrid:
    if len(data) < _HEADER.size:
        raise FormatError("PONQ payload truncated in header")
    magic, version, N, K, *rest = _HEADER.unpack_from(data)
    bounds, n_cells = rest[:6], rest[6]
    if magic != PONQ_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PONQ_MAGIC!r}")
    if version != PONQ_VERSION:
        raise FormatError(f"unsupported PONQ version {version}")
    pos = _HEADER.size
    cells = np.empty(n_cells, dtype=np.int64) if n_cells < len(data) else None
    if cells is None:
        raise FormatError("PONQ cell count exceeds payload size")
    counts = np.empty(n_cells, dtype=np.int64)
    chunks = []
    for m in range(n_cells):
        if pos + _CELL.size > len(data):
            raise FormatError(f"PONQ payload truncated at cell {m}")
        ci, c = _CELL.unpack_from(data, pos)
        pos += _CELL.size
        end = pos + c * _RECORD_LEN
        if end > len(data):
            raise FormatError(f"PONQ payload truncated in records of cell {m}")
        chunks.append(np.frombuffer(data, dtype=_RECORD, count=16 * c, offset=pos))
        cells[m], counts[m] = ci, c
        pos = end
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after PONQ payload")
    rec = np.concatenate(chunks).reshape(-1, 16) if chunks else np.zeros((0, 16))
    try:
        return PoNQGrid(N, K, tuple(bounds), cells, counts, rec[:, :3], rec[:, 3:6], rec[:, 6:])
    except ValueError as exc:
        raise FormatError(f"PONQ payload violates grid invariants: {exc}") from exc
