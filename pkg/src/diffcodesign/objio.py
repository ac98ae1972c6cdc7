"""Minimal ASCII OBJ reader/writer for triangulated meshes."""

import numpy as np

from .errors import DiffCoDesignError


def read_obj(path):
    """Read vertices and triangular faces from an ASCII OBJ file."""
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) != 3:
                    raise DiffCoDesignError(
                        f"{path}: only triangulated OBJ files are supported "
                        f"(got a {len(idx)}-gon)")
                faces.append(idx)
    return np.asarray(verts, dtype=float), np.asarray(faces, dtype=int)


def write_obj(path, vertices, faces, comment=None):
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for v in np.asarray(vertices, dtype=float):
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in np.asarray(faces, dtype=int):
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
