"""Oriented point clouds and their PLY / XYZ readers and writers.

2D clouds are stored on disk as 3D points with ``z = 0`` and a ``dim 2``
comment in the header, so ordinary viewers still open them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

NORMAL_TOL = 1e-9

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

FORMATS = ("ply-ascii", "ply-binary-le", "xyz")


class CloudFormatError(ValueError):
    """Raised when a point cloud file cannot be parsed."""


@dataclass(frozen=True, eq=False)
class OrientedPointCloud:
    """Point positions with optional unit normals and scanner origins.

    Parameters
    ----------
    points : ndarray of shape (n, d)
    normals : ndarray of shape (n, d) or None
    scan_origins : ndarray of shape (n, d) or (1, d) or None
        One origin per point, or a single global origin.
    oriented : bool
        False when normal signs are arbitrary (normals estimated without
        any scanner origin).
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    scan_origins: np.ndarray | None = None
    oriented: bool = True
    dim: int = field(default=0)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        dim = self.dim or (pts.shape[1] if pts.ndim == 2 else 3)
        if pts.size == 0:
            pts = pts.reshape(0, dim)
        if pts.ndim != 2 or pts.shape[1] != dim or dim not in (2, 3):
            raise ValueError(f"points must have shape (n, 2) or (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dim", dim)

        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, dim)
            if nrm.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"{nrm.shape[0]} normals for {pts.shape[0]} points"
                )
            if not np.all(np.isfinite(nrm)):
                raise ValueError("normals contain non-finite values")
            norms = np.linalg.norm(nrm, axis=1)
            if np.any(norms == 0):
                raise ValueError(f"zero normal at point {int(np.argmin(norms))}")
            if np.any(np.abs(norms - 1.0) > NORMAL_TOL):
                nrm = nrm / norms[:, None]
            object.__setattr__(self, "normals", nrm)

        if self.scan_origins is not None:
            org = np.asarray(self.scan_origins, dtype=np.float64).reshape(-1, dim)
            if org.shape[0] not in (1, pts.shape[0]):
                raise ValueError("scan_origins must be one global origin or one per point")
            if not np.all(np.isfinite(org)):
                raise ValueError("scan_origins contain non-finite values")
            object.__setattr__(self, "scan_origins", org)

    def __len__(self):
        return self.points.shape[0]

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    @property
    def is_empty(self) -> bool:
        return self.points.shape[0] == 0

    @property
    def bounding_box(self):
        """``(lo, hi)`` corners, or None for an empty cloud."""
        if self.is_empty:
            return None
        return self.points.min(axis=0), self.points.max(axis=0)

    def origins_per_point(self) -> np.ndarray:
        if self.scan_origins is None:
            raise ValueError("cloud has no scan origins")
        if self.scan_origins.shape[0] == 1:
            return np.broadcast_to(self.scan_origins, self.points.shape)
        return self.scan_origins

    def subset(self, mask_or_index) -> "OrientedPointCloud":
        """Return the cloud restricted to a boolean mask or index array."""
        idx = np.asarray(mask_or_index)
        normals = None if self.normals is None else self.normals[idx]
        origins = self.scan_origins
        if origins is not None and origins.shape[0] > 1:
            origins = origins[idx]
        return replace(self, points=self.points[idx], normals=normals, scan_origins=origins)

    def with_normals(self, normals, oriented=True) -> "OrientedPointCloud":
        return replace(self, normals=normals, oriented=oriented)

    def flipped(self) -> "OrientedPointCloud":
        if self.normals is None:
            raise ValueError("cloud has no normals")
        return replace(self, normals=-self.normals)


def _detect_format(path):
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".xyz", ".xyzn", ".txt", ".pts"):
        return "xyz"
    if ext == ".ply":
        with open(path, "rb") as fh:
            head = fh.read(512)
        if b"binary_little_endian" in head:
            return "ply-binary-le"
        return "ply-ascii"
    raise CloudFormatError(f"cannot infer point cloud format from {path!r}")


def load_cloud(path, format=None, dim=None) -> OrientedPointCloud:
    """Read an oriented point cloud from PLY (ascii / binary LE) or XYZ text.

    ``dim=2`` forces a 2D cloud (dropping z) even without a ``dim 2`` comment.
    Normals are populated iff the file carries ``nx ny nz``.
    """
    format = format or _detect_format(path)
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    if format == "xyz":
        pts, nrm, meta = _read_xyz(path)
    else:
        pts, nrm, meta = _read_ply(path, binary=(format == "ply-binary-le"))
    file_dim = meta.get("dim", 3)
    dim = dim or file_dim
    origin = meta.get("origin")
    if dim == 2:
        pts = pts[:, :2]
        if nrm is not None:
            nrm = nrm[:, :2]
        if origin is not None:
            origin = origin[:2]
    return OrientedPointCloud(points=pts, normals=nrm, scan_origins=origin, dim=dim)


def save_cloud(cloud: OrientedPointCloud, path, format=None) -> None:
    """Write ``cloud`` in one of :data:`FORMATS` (inferred from the suffix if omitted)."""
    if format is None:
        format = "xyz" if str(path).lower().endswith((".xyz", ".txt")) else "ply-binary-le"
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    pts = _pad3(cloud.points)
    nrm = None if cloud.normals is None else _pad3(cloud.normals)
    comments = []
    if cloud.dim == 2:
        comments.append("dim 2")
    if cloud.scan_origins is not None and cloud.scan_origins.shape[0] == 1:
        o = _pad3(cloud.scan_origins)[0]
        comments.append("scan_origin " + " ".join(repr(float(v)) for v in o))
    data = pts if nrm is None else np.hstack([pts, nrm])

    if format == "xyz":
        with open(path, "w") as fh:
            for c in comments:
                fh.write(f"# {c}\n")
            np.savetxt(fh, data, fmt="%.17g")
        return

    names = ["x", "y", "z"] + (["nx", "ny", "nz"] if nrm is not None else [])
    header = ["ply", "format ascii 1.0" if format == "ply-ascii" else "format binary_little_endian 1.0"]
    header += [f"comment {c}" for c in comments]
    header.append(f"element vertex {data.shape[0]}")
    header += [f"property double {n}" for n in names]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if format == "ply-ascii":
            np.savetxt(fh, data, fmt="%.17g")
        else:
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def _pad3(a):
    a = np.asarray(a, dtype=np.float64)
    if a.shape[1] == 3:
        return a
    return np.hstack([a, np.zeros((a.shape[0], 3 - a.shape[1]))])


def _parse_comment(text, meta):
    parts = text.split()
    if len(parts) == 2 and parts[0] == "dim" and parts[1] in ("2", "3"):
        meta["dim"] = int(parts[1])
    elif len(parts) == 4 and parts[0] == "scan_origin":
        try:
            meta["origin"] = np.array([float(v) for v in parts[1:]])
        except ValueError:
            raise CloudFormatError(f"malformed scan_origin comment: {text!r}") from None


def _read_xyz(path):
    meta = {}
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                _parse_comment(s[1:].strip(), meta)
                continue
            try:
                rows.append([float(v) for v in s.replace(",", " ").split()])
            except ValueError:
                raise CloudFormatError(f"{path}:{lineno}: non-numeric record") from None
    if not rows:
        return np.zeros((0, 3)), None, meta
    ncols = {len(r) for r in rows}
    if len(ncols) != 1:
        raise CloudFormatError(f"{path}: inconsistent column counts {sorted(ncols)}")
    ncol = ncols.pop()
    arr = np.array(rows, dtype=np.float64)
    zeros = np.zeros((len(arr), 1))
    if ncol == 2:
        meta.setdefault("dim", 2)
        arr, ncol = np.hstack([arr, zeros]), 3
    elif ncol == 4:
        meta.setdefault("dim", 2)
        arr, ncol = np.hstack([arr[:, :2], zeros, arr[:, 2:], zeros]), 6
    if ncol not in (3, 6):
        raise CloudFormatError(f"{path}: expected 3 or 6 columns, got {ncol}")
    if not np.all(np.isfinite(arr)):
        raise CloudFormatError(f"{path}: non-finite coordinate")
    return arr[:, :3], (arr[:, 3:6] if ncol == 6 else None), meta


def _read_ply(path, binary):
    meta = {}
    elements = []  # (name, count, [(prop, dtype)])
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise CloudFormatError(f"{path}: missing 'ply' magic")
        fmt = None
        while True:
            raw = fh.readline()
            if not raw:
                raise CloudFormatError(f"{path}: unterminated header")
            line = raw.decode("ascii", errors="replace").strip()
            if line == "end_header":
                break
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format":
                fmt = parts[1] if len(parts) > 1 else None
            elif parts[0] == "comment":
                _parse_comment(line[len("comment"):].strip(), meta)
            elif parts[0] == "element":
                if len(parts) != 3:
                    raise CloudFormatError(f"{path}: malformed element line {line!r}")
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                if not elements:
                    raise CloudFormatError(f"{path}: property before element")
                if parts[1] == "list":
                    elements[-1][2].append((parts[-1], None))
                else:
                    if parts[1] not in _PLY_TYPES:
                        raise CloudFormatError(f"{path}: unknown property type {parts[1]!r}")
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        expected = "binary_little_endian" if binary else "ascii"
        if fmt != expected:
            raise CloudFormatError(f"{path}: header format {fmt!r}, expected {expected!r}")

        vertex = None
        for name, count, props in elements:
            if name == "vertex":
                vertex = (count, props)
                break
            if binary:
                raise CloudFormatError(f"{path}: element {name!r} before vertex not supported in binary PLY")
            for _ in range(count):
                fh.readline()
        if vertex is None:
            raise CloudFormatError(f"{path}: no vertex element")
        count, props = vertex
        if any(dt is None for _, dt in props):
            raise CloudFormatError(f"{path}: list properties on vertices not supported")
        names = [p for p, _ in props]
        for req in ("x", "y", "z"):
            if req not in names:
                raise CloudFormatError(f"{path}: vertex property {req!r} missing")
        if binary:
            dtype = np.dtype([(p, "<" + dt) for p, dt in props])
            buf = fh.read(dtype.itemsize * count)
            if len(buf) != dtype.itemsize * count:
                raise CloudFormatError(f"{path}: truncated binary vertex data")
            rec = np.frombuffer(buf, dtype=dtype)
            cols = {p: rec[p].astype(np.float64) for p in names}
        else:
            rows = []
            for i in range(count):
                line = fh.readline()
                if not line:
                    raise CloudFormatError(f"{path}: expected {count} vertices, got {i}")
                vals = line.split()
                if len(vals) < len(names):
                    raise CloudFormatError(f"{path}: short vertex record {i}")
                try:
                    rows.append([float(v) for v in vals[: len(names)]])
                except ValueError:
                    raise CloudFormatError(f"{path}: malformed vertex record {i}") from None
            arr = np.array(rows, dtype=np.float64).reshape(count, len(names))
            cols = {p: arr[:, k] for k, p in enumerate(names)}

    pts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    nrm = None
    if all(n in cols for n in ("nx", "ny", "nz")):
        nrm = np.column_stack([cols["nx"], cols["ny"], cols["nz"]])
    if not np.all(np.isfinite(pts)):
        raise CloudFormatError(f"{path}: non-finite coordinate")
    if nrm is not None and not np.all(np.isfinite(nrm)):
        raise CloudFormatError(f"{path}: non-finite normal")
    if meta.get("dim") == 2 and np.any(pts[:, 2] != 0):
        raise CloudFormatError(f"{path}: 'dim 2' cloud with non-zero z")
    return pts, nrm, meta
