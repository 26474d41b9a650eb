"""Wavefront OBJ reading and writing (vertices, optional normals, faces)."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..mesh import Mesh

log = logging.getLogger(__name__)


class ObjFormatError(ValueError):
    pass


def _index(token: str, n_vertices: int, lineno: int) -> int:
    head = token.split("/")[0]
    try:
        i = int(head)
    except ValueError:
        raise ObjFormatError(f"line {lineno}: bad face index {token!r}") from None
    i = i - 1 if i > 0 else n_vertices + i
    if not 0 <= i < n_vertices:
        raise ObjFormatError(f"line {lineno}: face index {token!r} out of range")
    return i


def read_obj(path) -> Mesh:
    verts: list = []
    faces: list = []
    fanned = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag, args = parts[0], parts[1:]
            if tag == "v":
                if len(args) < 3:
                    raise ObjFormatError(f"line {lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(a) for a in args[:3]])
                except ValueError:
                    raise ObjFormatError(f"line {lineno}: bad vertex coordinate") from None
            elif tag == "f":
                if len(args) < 3:
                    raise ObjFormatError(f"line {lineno}: face needs at least 3 vertices")
                idx = [_index(a, len(verts), lineno) for a in args]
                if len(idx) > 3:
                    fanned += 1
                for j in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
            elif tag in ("vn", "vt", "o", "g", "s", "usemtl", "mtllib", "l"):
                continue
            else:
                raise ObjFormatError(f"line {lineno}: unknown record {tag!r}")
    if fanned:
        log.warning("%s: %d non-triangle faces fan-triangulated", path, fanned)
    return Mesh(np.array(verts, dtype=float).reshape(-1, 3),
                np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(path, mesh: Mesh, normals: bool = False, overwrite: bool = False) -> Path:
    path = Path(path)
    if path.exists() and not overwrite:
        raise FileExistsError(f"{path} exists (use --force to overwrite)")
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    if normals and mesh.n_vertices:
        lines += [f"vn {x!r} {y!r} {z!r}" for x, y, z in mesh.vertex_normals().tolist()]
        lines += [f"f {a}//{a} {b}//{b} {c}//{c}" for a, b, c in (mesh.faces + 1).tolist()]
    else:
        lines += [f"f {a} {b} {c}" for a, b, c in (mesh.faces + 1).tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path
