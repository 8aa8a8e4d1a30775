"""File formats.

Binary containers (``.ph``, ``.vox``, ``.sdfnet``) are one line of compact JSON
terminated by ``\\n`` followed by a little-endian float64 blob. Complex arrays are
stored as interleaved (re, im) pairs in C order. The header records everything
needed to reshape the blob.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ArtifactError

LE_F8 = np.dtype("<f8")


def write_container(path, header, arrays):
    """Write ``header`` and a sequence of float64/complex128 ``arrays``."""
    header = dict(header)
    header["arrays"] = [
        {"shape": list(np.shape(a)), "complex": bool(np.iscomplexobj(a))} for a in arrays
    ]
    text = json.dumps(header, separators=(",", ":"), sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(text.encode() + b"\n")
        for a in arrays:
            a = np.ascontiguousarray(a)
            if np.iscomplexobj(a):
                a = a.astype(np.complex128).view(np.float64)
            fh.write(a.astype(LE_F8, copy=False).tobytes())


def read_container(path):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing file: {path}")
    with open(path, "rb") as fh:
        line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"corrupt header in {path}: {exc}") from None
    data = np.frombuffer(blob, dtype=LE_F8)
    arrays = []
    offset = 0
    for spec in header.get("arrays", []):
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) * (2 if spec["complex"] else 1)
        if offset + n > data.size:
            raise ArtifactError(f"truncated blob in {path}")
        chunk = data[offset:offset + n].astype(np.float64)
        offset += n
        a = chunk.view(np.complex128) if spec["complex"] else chunk
        arrays.append(a.reshape(shape))
    return header, arrays


def save_phase_history(path, ph):
    header = {
        "format": "sartomo.ph/1",
        "dims": list(ph.samples.shape),
        "order": "(i, j, e) row-major",
        "geometry": ph.geometry.to_dict(),
        "noise_sigma": ph.noise_sigma,
        "seed": ph.seed,
    }
    write_container(path, header, [ph.samples])


def load_phase_history(path):
    from .simulate import CollectionGeometry, PhaseHistory

    header, (samples,) = read_container(path)
    geom = CollectionGeometry.from_dict(header["geometry"])
    return PhaseHistory(samples, geom, header.get("noise_sigma", 0.0), header.get("seed"))


def save_volume(path, values, grid, **extra):
    header = {"format": "sartomo.vox/1", **grid.to_dict(), **extra}
    write_container(path, header, [values])


def load_volume(path):
    from .inversion import VoxelGrid

    header, (values,) = read_container(path)
    return values, VoxelGrid.from_dict(header), header


PLY_CLOUD_PROPS = ("x", "y", "z", "nx", "ny", "nz", "magnitude", "vx", "vy", "vz")


def write_ply_points(path, columns, names):
    data = np.column_stack(columns)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(data)}\n")
        for name in names:
            fh.write(f"property double {name}\n")
        fh.write("end_header\n")
        np.savetxt(fh, data, fmt="%.17g")


def read_ply(path):
    """Read an ASCII PLY. Returns ``(vertex_columns: dict, faces or None)``."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing file: {path}")
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ArtifactError(f"{path} is not a PLY file")
        names, n_vert, n_face, element = [], 0, 0, None
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "ascii":
                raise ArtifactError("only ASCII PLY is supported")
            if tok[0] == "element":
                element = tok[1]
                if element == "vertex":
                    n_vert = int(tok[2])
                elif element == "face":
                    n_face = int(tok[2])
            elif tok[0] == "property" and element == "vertex":
                names.append(tok[-1])
            elif tok[0] == "end_header":
                break
        rows = [fh.readline() for _ in range(n_vert)]
        verts = np.loadtxt(rows, ndmin=2) if n_vert else np.zeros((0, len(names)))
        faces = None
        if n_face:
            faces = np.array([[int(t) for t in fh.readline().split()[1:4]] for _ in range(n_face)])
    return {name: verts[:, i] for i, name in enumerate(names)}, faces


def write_mesh_ply(path, vertices, faces, normals=None):
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(vertices)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        if normals is not None:
            fh.write("property double nx\nproperty double ny\nproperty double nz\n")
        fh.write(f"element face {len(faces)}\nproperty list uchar int vertex_indices\nend_header\n")
        cols = vertices if normals is None else np.hstack([vertices, normals])
        np.savetxt(fh, cols, fmt="%.17g")
        np.savetxt(fh, np.column_stack([np.full(len(faces), 3), faces]), fmt="%d")


def write_obj(path, vertices, faces, normals=None):
    with open(path, "w") as fh:
        for v in vertices:
            fh.write("v %.17g %.17g %.17g\n" % tuple(v))
        if normals is not None:
            for n in normals:
                fh.write("vn %.17g %.17g %.17g\n" % tuple(n))
            for f in np.asarray(faces) + 1:
                fh.write("f {0}//{0} {1}//{1} {2}//{2}\n".format(*f))
        else:
            for f in np.asarray(faces) + 1:
                fh.write("f %d %d %d\n" % tuple(f))
