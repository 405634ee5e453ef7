"""Minimal Wavefront OBJ reader/writer (``v`` and ``f`` records only)."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import MeshStructureError, ObjParseError
from .mesh import TriangleMesh

log = logging.getLogger(__name__)


def _face_index(token: str, n_vertices: int, lineno: int) -> int:
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ObjParseError(f"bad face index {token!r}", lineno) from None
    if idx == 0:
        raise MeshStructureError(f"line {lineno}: face index 0 is invalid in OBJ")
    if idx < 0:
        idx = n_vertices + idx + 1
    return idx - 1


def load_obj(data: bytes | str) -> TriangleMesh:
    """Parse OBJ text into a mesh.

    Polygons are fan-triangulated around their first corner. Zero-area faces
    are dropped and counted in a log warning. Other record types are ignored.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(data.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ObjParseError("vertex record needs 3 coordinates", lineno)
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise ObjParseError(f"bad vertex coordinate in {line!r}", lineno) from None
        elif tag == "f":
            if len(parts) < 4:
                raise ObjParseError("face record needs at least 3 vertices", lineno)
            idx = [_face_index(t, len(verts), lineno) for t in parts[1:]]
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise MeshStructureError(
            f"face index out of range: {len(v)} vertices, max index {f.max() + 1}"
        )
    if len(f):
        t = v[f]
        area2 = np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)
        keep = area2 > 0
        if not keep.all():
            log.warning("dropped %d degenerate faces", int((~keep).sum()))
            f = f[keep]
    return TriangleMesh(v, f)


def _fmt(x: float, precision: int | None) -> str:
    if precision is None:
        return repr(float(x))
    return f"{x:.{precision}g}"


def save_obj(mesh: TriangleMesh, precision: int | None = None) -> bytes:
    """Serialize to OBJ text.

    With ``precision=None`` coordinates use the shortest round-trip decimal
    form, so ``load_obj(save_obj(m)) == m`` bit for bit.
    """
    lines = ["# ponq mesh", f"# vertices {mesh.n_vertices} faces {mesh.n_faces}"]
    for x, y, z in mesh.vertices.tolist():
        lines.append(f"v {_fmt(x, precision)} {_fmt(y, precision)} {_fmt(z, precision)}")
    for a, b, c in (mesh.faces + 1).tolist():
        lines.append(f"f {a} {b} {c}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_obj(path: str | Path) -> TriangleMesh:
    return load_obj(Path(path).read_bytes())


def write_obj(path: str | Path, mesh: TriangleMesh, precision: int | None = None) -> None:
    Path(path).write_bytes(save_obj(mesh, precision))
