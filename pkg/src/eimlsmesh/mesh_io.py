"""Mesh readers and writers: native JSON (exact) and legacy ASCII VTK.

Native JSON document::

    {
      "format": "eimlsmesh", "version": 1, "dim": 2,
      "domain": {"lo": [...], "hi": [...]} | null,
      "nodes": [[x, y], ...],
      "elements": [[i, j, k], ...],
      "fields": {"alpha": [...], ...},
      "metric": [[[m00, m01], [m10, m11]], ...] | null
    }

Floats are written with ``repr`` precision, so a round trip is bit-exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .mesh import MeshError, SimplicialMesh

FORMATS = ("vtk-legacy-ascii", "native-json")
VTK_TRIANGLE = 5
VTK_TETRA = 10


def _detect(path, format):
    if format is not None:
        if format not in FORMATS:
            raise ValueError(f"unknown mesh format {format!r}; expected one of {FORMATS}")
        return format
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".vtk":
        return "vtk-legacy-ascii"
    if ext == ".json":
        return "native-json"
    raise ValueError(f"cannot infer mesh format from {path!r}")


def mesh_to_dict(mesh: SimplicialMesh) -> dict:
    return {
        "format": "eimlsmesh",
        "version": 1,
        "dim": mesh.dim,
        "domain": None if mesh.domain is None else {
            "lo": [float(v) for v in mesh.domain[0]],
            "hi": [float(v) for v in mesh.domain[1]],
        },
        "nodes": mesh.nodes.tolist(),
        "elements": mesh.elements.tolist(),
        "fields": {name: vals.tolist() for name, vals in sorted(mesh.fields.items())},
        "metric": None if mesh.metric is None else mesh.metric.tolist(),
    }


def mesh_from_dict(doc: dict) -> SimplicialMesh:
    if doc.get("format") != "eimlsmesh":
        raise MeshError("not an eimlsmesh JSON document")
    dim = int(doc["dim"])
    nodes = np.asarray(doc["nodes"], dtype=np.float64).reshape(-1, dim)
    elements = np.asarray(doc["elements"], dtype=np.intp).reshape(-1, dim + 1)
    domain = doc.get("domain")
    if domain is not None:
        domain = (np.asarray(domain["lo"], dtype=np.float64), np.asarray(domain["hi"], dtype=np.float64))
    return SimplicialMesh(nodes, elements, domain=domain, fields=doc.get("fields") or {},
                          metric=doc.get("metric"), repair_orientation=True)


def save_mesh(mesh: SimplicialMesh, path, format=None) -> None:
    """Write ``mesh`` with its nodal fields and metric."""
    format = _detect(path, format)
    if format == "native-json":
        with open(path, "w") as fh:
            json.dump(mesh_to_dict(mesh), fh, separators=(",", ":"))
            fh.write("\n")
    else:
        with open(path, "w") as fh:
            fh.write(vtk_unstructured_text(mesh))


def load_mesh(path, format=None) -> SimplicialMesh:
    format = _detect(path, format)
    if format == "native-json":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshError(f"{path}: invalid JSON ({exc})") from None
        return mesh_from_dict(doc)
    with open(path) as fh:
        return parse_vtk_unstructured(fh.read())


def _fmt(v):
    return repr(float(v))


def vtk_unstructured_text(mesh: SimplicialMesh, title="eimlsmesh") -> str:
    d = mesh.dim
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {mesh.n_nodes} double")
    for p in mesh.nodes:
        xyz = list(p) + [0.0] * (3 - d)
        out.append(" ".join(_fmt(v) for v in xyz))
    m = mesh.n_elements
    out.append(f"CELLS {m} {m * (d + 2)}")
    for e in mesh.elements:
        out.append(f"{d + 1} " + " ".join(str(int(i)) for i in e))
    out.append(f"CELL_TYPES {m}")
    ctype = VTK_TRIANGLE if d == 2 else VTK_TETRA
    out.extend([str(ctype)] * m)
    if mesh.fields or mesh.metric is not None:
        out.append(f"POINT_DATA {mesh.n_nodes}")
    for name, vals in sorted(mesh.fields.items()):
        out.append(f"SCALARS {name} double 1")
        out.append("LOOKUP_TABLE default")
        out.extend(_fmt(v) for v in vals)
    if mesh.metric is not None:
        out.append("TENSORS metric double")
        for M in mesh.metric:
            T = np.zeros((3, 3))
            T[:d, :d] = M
            for row in T:
                out.append(" ".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def parse_vtk_unstructured(text) -> SimplicialMesh:
    tokens = text.split("\n")
    if not tokens[0].startswith("# vtk DataFile"):
        raise MeshError("missing VTK header")
    if len(tokens) < 4 or tokens[2].strip() != "ASCII":
        raise MeshError("only ASCII legacy VTK is supported")
    if tokens[3].split() != ["DATASET", "UNSTRUCTURED_GRID"]:
        raise MeshError("expected DATASET UNSTRUCTURED_GRID")
    words = " ".join(tokens[4:]).split()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(words):
            raise MeshError("truncated VTK file")
        chunk = words[pos:pos + n]
        pos += n
        return chunk

    points = cells = types = None
    fields = {}
    metric = None
    n_point_data = None
    try:
        while pos < len(words):
            key = take(1)[0]
            if key == "POINTS":
                n, _ = take(2)
                points = np.array(take(3 * int(n)), dtype=np.float64).reshape(-1, 3)
            elif key == "CELLS":
                n, size = (int(v) for v in take(2))
                raw = np.array(take(size), dtype=np.intp)
                cells, k = [], 0
                for _ in range(n):
                    cnt = raw[k]
                    cells.append(raw[k + 1:k + 1 + cnt])
                    k += cnt + 1
            elif key == "CELL_TYPES":
                n = int(take(1)[0])
                types = np.array(take(n), dtype=int)
            elif key == "POINT_DATA":
                n_point_data = int(take(1)[0])
            elif key == "SCALARS":
                name, _dtype = take(2)
                if n_point_data is None:
                    raise MeshError("SCALARS before POINT_DATA")
                if words[pos] != "LOOKUP_TABLE":
                    take(1)  # optional component count
                take(2)
                fields[name] = np.array(take(n_point_data), dtype=np.float64)
            elif key == "TENSORS":
                take(2)
                metric = np.array(take(9 * n_point_data), dtype=np.float64).reshape(-1, 3, 3)
            else:
                raise MeshError(f"unsupported VTK keyword {key!r}")
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"malformed VTK data ({exc})") from None
    if points is None or cells is None or types is None:
        raise MeshError("VTK file lacks POINTS, CELLS or CELL_TYPES")
    if np.all(types == VTK_TRIANGLE):
        d = 2
    elif np.all(types == VTK_TETRA):
        d = 3
    else:
        raise MeshError("mixed or unsupported VTK cell types")
    elements = np.array(cells, dtype=np.intp).reshape(-1, d + 1)
    nodes = points[:, :d]
    if metric is not None:
        metric = metric[:, :d, :d]
    return SimplicialMesh(nodes, elements, fields=fields, metric=metric, repair_orientation=True)
