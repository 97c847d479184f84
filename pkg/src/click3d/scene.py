"""Point-cloud scenes: PLY loading, instance labels, voxel grids, k-NN graphs.

All containers are immutable after construction (arrays are set
non-writeable) so scenes can be shared freely across threads.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

SCENE_FORMAT_VERSION = 1

# PLY scalar type -> little-endian numpy dtype code
_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyParseError(ValueError):
    """Malformed or unsupported PLY input."""


class SceneFormatError(ValueError):
    """Corrupt or incompatible internal scene file."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PointCloud:
    """Positions in meters, optional colors in [0, 1]."""

    positions: np.ndarray          # (N, 3) float64
    colors: np.ndarray | None = None  # (N, 3) float32 in [0, 1]

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must be (N, 3) with N >= 1, got {pos.shape}")
        if not np.isfinite(pos).all():
            raise ValueError("positions contain non-finite values")
        object.__setattr__(self, "positions", _freeze(pos))
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.float32)
            if col.shape != pos.shape:
                raise ValueError(f"colors must match positions shape, got {col.shape}")
            if not np.isfinite(col).all() or col.min() < 0.0 or col.max() > 1.0:
                raise ValueError("colors must be finite and within [0, 1]")
            object.__setattr__(self, "colors", _freeze(col))

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    @property
    def n_channels(self) -> int:
        """Feature dimensionality: 3 for xyz, 6 with color."""
        return 3 + (3 if self.colors is not None else 0)


@dataclass(frozen=True)
class InstanceLabeling:
    """Per-point instance ids; 0 means background/unlabeled."""

    instance_ids: np.ndarray  # (N,) uint32

    def __post_init__(self):
        ids = np.asarray(self.instance_ids)
        if ids.ndim != 1:
            raise ValueError("instance_ids must be 1-D")
        if ids.min(initial=0) < 0:
            raise ValueError("instance_ids must be non-negative")
        object.__setattr__(self, "instance_ids", _freeze(ids.astype(np.uint32)))
        index: dict[int, np.ndarray] = {}
        for iid in np.unique(self.instance_ids):
            if iid == 0:
                continue
            index[int(iid)] = _freeze(np.flatnonzero(self.instance_ids == iid))
        object.__setattr__(self, "_index", index)

    @property
    def index(self) -> dict[int, np.ndarray]:
        """instance_id -> sorted point indices (nonzero ids only)."""
        return self._index

    def mask(self, instance_id: int) -> np.ndarray:
        """Binary foreground mask for one instance."""
        if instance_id not in self._index:
            raise KeyError(f"unknown instance id {instance_id}")
        return self.instance_ids == instance_id


@dataclass(frozen=True)
class Scene:
    cloud: PointCloud
    labels: InstanceLabeling | None = None
    scene_id: str = ""

    def __post_init__(self):
        if self.labels is not None and len(self.labels.instance_ids) != self.cloud.n_points:
            raise ValueError("labels length does not match point count")


@dataclass(frozen=True)
class VoxelGrid:
    """Sparse voxel grid: integer cell coordinate -> point indices.

    Cell of point p is floor((p - origin) / resolution), componentwise.
    """

    resolution: float
    origin: np.ndarray                     # (3,)
    point_voxels: np.ndarray               # (N, 3) int64, cell per point
    cells: dict[tuple[int, int, int], np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def n_occupied(self) -> int:
        return len(self.cells)


def voxelize(cloud: PointCloud, resolution: float = 0.05) -> VoxelGrid:
    """Bucket every point into a sparse grid anchored at the coordinate minimum."""
    if resolution <= 0:
        raise ValueError(f"resolution must be > 0, got {resolution}")
    origin = cloud.positions.min(axis=0)
    coords = np.floor((cloud.positions - origin) / resolution).astype(np.int64)
    cells: dict[tuple[int, int, int], np.ndarray] = {}
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
    sorted_coords = coords[order]
    # group consecutive runs of identical cells
    change = np.any(np.diff(sorted_coords, axis=0) != 0, axis=1)
    starts = np.concatenate(([0], np.flatnonzero(change) + 1, [len(order)]))
    for a, b in zip(starts[:-1], starts[1:]):
        key = tuple(int(v) for v in sorted_coords[a])
        cells[key] = _freeze(np.sort(order[a:b]))
    return VoxelGrid(resolution=float(resolution), origin=_freeze(origin.copy()),
                     point_voxels=_freeze(coords), cells=cells)


@dataclass(frozen=True)
class NeighborGraph:
    """Exact symmetrized k-NN graph over point positions.

    `neighbors[i]` holds the min(k, N-1) nearest indices of point i in
    ascending (distance, index) order; `matrix` is the symmetrized sparse
    adjacency with Euclidean edge lengths.
    """

    k: int
    neighbors: np.ndarray   # (N, min(k, N-1)) int64
    distances: np.ndarray   # (N, min(k, N-1)) float64
    matrix: sparse.csr_matrix = field(repr=False, default=None)


def build_knn_graph(cloud: PointCloud, k: int = 8) -> NeighborGraph:
    """Exact Euclidean k-NN with deterministic ascending-index tie-break."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = cloud.n_points
    if n < 2:
        raise ValueError("need at least 2 points to build a neighbor graph")
    need = min(k, n - 1)
    pos = cloud.positions
    tree = cKDTree(pos)
    kq = min(n, need + 2)  # one extra beyond self to detect boundary ties
    dist, idx = tree.query(pos, k=kq)

    neighbors = np.empty((n, need), dtype=np.int64)
    distances = np.empty((n, need), dtype=np.float64)
    for i in range(n):
        d, j = dist[i], idx[i]
        # drop exactly one self entry (duplicates keep the other copies)
        self_pos = np.flatnonzero(j == i)
        if self_pos.size:
            keep = np.ones(len(j), dtype=bool)
            keep[self_pos[0]] = False
            d, j = d[keep], j[keep]
        order = np.lexsort((j, d))
        d, j = d[order], j[order]
        if len(j) > need and d[need - 1] == d[need]:
            # tie straddles the cut: resolve exactly by brute force
            full = np.linalg.norm(pos - pos[i], axis=1)
            cand = np.arange(n) != i
            jj = np.flatnonzero(cand)
            dd = full[jj]
            order = np.lexsort((jj, dd))[:need]
            d, j = dd[order], jj[order]
        neighbors[i] = j[:need]
        distances[i] = d[:need]

    rows = np.repeat(np.arange(n), need)
    mat = sparse.coo_matrix((distances.ravel(), (rows, neighbors.ravel())), shape=(n, n)).tocsr()
    sym = mat.maximum(mat.T)  # equal weights both ways, so max == union
    return NeighborGraph(k=k, neighbors=_freeze(neighbors), distances=_freeze(distances), matrix=sym)


# ---------------------------------------------------------------------------
# PLY


def load_ply(path: str | Path) -> Scene:
    """Parse an ASCII or binary_little_endian PLY into a Scene.

    Recognized vertex properties: x/y/z (float32/float64), red/green/blue
    (uint8, rescaled to [0, 1]) and instance_id (int32 or uint16).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    header_end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or header_end < 0:
        raise PlyParseError(f"{path}: missing PLY header")
    header = data[:header_end].decode("ascii", errors="replace")
    body_offset = header_end + len(b"end_header\n")

    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []  # (name, count, [(prop, dtype)])
    for lineno, line in enumerate(header.splitlines(), start=1):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if tok[1] not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"{path}:{lineno}: unsupported encoding {tok[1]!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise PlyParseError(f"{path}:{lineno}: property before element")
            if tok[1] == "list":
                elements[-1][2].append((tok[-1], "list"))
            else:
                if tok[1] not in _PLY_DTYPES:
                    raise PlyParseError(f"{path}:{lineno}: unknown property type {tok[1]!r}")
                elements[-1][2].append((tok[2], _PLY_DTYPES[tok[1]]))
    if fmt is None:
        raise PlyParseError(f"{path}: header has no format line")

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise PlyParseError(f"{path}: no vertex element")
    prop_names = [p for p, _ in vertex[2]]
    for axis in ("x", "y", "z"):
        if axis not in prop_names:
            raise PlyParseError(f"{path}: vertex element lacks property {axis!r}")
    if any(dt == "list" for _, dt in vertex[2]):
        raise PlyParseError(f"{path}: list properties on vertex element are unsupported")

    if fmt == "binary_little_endian":
        rows = _read_binary_vertices(path, data, body_offset, elements, vertex)
    else:
        rows = _read_ascii_vertices(path, data, body_offset, elements, vertex)

    positions = np.column_stack([rows["x"], rows["y"], rows["z"]]).astype(np.float64)
    if not np.isfinite(positions).all():
        bad = int(np.flatnonzero(~np.isfinite(positions).all(axis=1))[0])
        raise PlyParseError(f"{path}: non-finite coordinate at vertex {bad}")
    colors = None
    if all(c in prop_names for c in ("red", "green", "blue")):
        colors = np.column_stack([rows["red"], rows["green"], rows["blue"]]).astype(np.float32) / 255.0
    labels = None
    if "instance_id" in prop_names:
        labels = InstanceLabeling(rows["instance_id"].astype(np.uint32))
    return Scene(cloud=PointCloud(positions, colors), labels=labels, scene_id=path.stem)


def _read_binary_vertices(path, data, offset, elements, vertex):
    for name, count, props in elements:
        dtype = np.dtype([(p, "<" + dt) for p, dt in props])
        if name == "vertex":
            nbytes = dtype.itemsize * count
            if len(data) - offset < nbytes:
                raise PlyParseError(
                    f"{path}: truncated vertex data at byte offset {len(data)} "
                    f"(need {offset + nbytes})")
            return np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        if any(dt == "list" for _, dt in props):
            raise PlyParseError(f"{path}: cannot skip element {name!r} with list properties")
        offset += dtype.itemsize * count
    raise PlyParseError(f"{path}: no vertex element")  # unreachable, checked above


def _read_ascii_vertices(path, data, offset, elements, vertex):
    lines = data[offset:].decode("ascii", errors="replace").splitlines()
    lines = [ln for ln in lines if ln.strip()]
    cursor = 0
    for name, count, props in elements:
        if name != "vertex":
            cursor += count
            continue
        if len(lines) - cursor < count:
            raise PlyParseError(
                f"{path}: header declares {count} vertices but body ends "
                f"at line {len(lines)}")
        dtype = np.dtype([(p, "<" + dt) for p, dt in props])
        out = np.empty(count, dtype=dtype)
        for i in range(count):
            fields = lines[cursor + i].split()
            if len(fields) != len(props):
                raise PlyParseError(f"{path}: bad vertex line {cursor + i + 1}")
            try:
                for (p, _), v in zip(props, fields):
                    out[p][i] = float(v)
            except ValueError as exc:
                raise PlyParseError(f"{path}: bad vertex line {cursor + i + 1}: {exc}") from exc
        return out
    raise PlyParseError(f"{path}: no vertex element")


def save_ply(scene: Scene, path: str | Path, binary: bool = False) -> None:
    """Write a Scene as PLY (fixture/export helper)."""
    path = Path(path)
    cloud = scene.cloud
    props = [("x", "<f8", "double x"), ("y", "<f8", "double y"), ("z", "<f8", "double z")]
    if cloud.colors is not None:
        props += [("red", "<u1", "uchar red"), ("green", "<u1", "uchar green"),
                  ("blue", "<u1", "uchar blue")]
    if scene.labels is not None:
        props += [("instance_id", "<i4", "int32 instance_id")]
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {cloud.n_points}"]
    header += [f"property {decl}" for _, _, decl in props]
    header += ["end_header"]
    rec = np.empty(cloud.n_points, dtype=[(n, d) for n, d, _ in props])
    rec["x"], rec["y"], rec["z"] = cloud.positions.T
    if cloud.colors is not None:
        rgb = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
        rec["red"], rec["green"], rec["blue"] = rgb.T
    if scene.labels is not None:
        rec["instance_id"] = scene.labels.instance_ids.astype(np.int32)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(rec.tobytes())
        else:
            for row in rec:
                fh.write((" ".join(repr(float(row[n])) if d.startswith("<f") else str(int(row[n]))
                                   for n, d, _ in props) + "\n").encode("ascii"))


# ---------------------------------------------------------------------------
# Internal scene format: <base>.json manifest + <base>.bin blob


def _scene_base(path: str | Path) -> Path:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        return path.with_suffix("")
    return path


def save_scene(scene: Scene, path: str | Path) -> Path:
    """Persist a scene as a manifest/blob pair; returns the manifest path.

    Blob layout (little-endian): positions float64[N*3], then colors
    float32[N*3] if present, then instance ids uint32[N] if present.
    """
    base = _scene_base(path)
    cloud = scene.cloud
    parts = [cloud.positions.astype("<f8").tobytes()]
    if cloud.colors is not None:
        parts.append(cloud.colors.astype("<f4").tobytes())
    if scene.labels is not None:
        parts.append(scene.labels.instance_ids.astype("<u4").tobytes())
    blob = b"".join(parts)
    manifest = {
        "version": SCENE_FORMAT_VERSION,
        "scene_id": scene.scene_id,
        "n_points": cloud.n_points,
        "has_color": cloud.colors is not None,
        "has_labels": scene.labels is not None,
        "checksum": zlib.crc32(blob),
    }
    base.with_suffix(".bin").write_bytes(blob)
    manifest_path = base.with_suffix(".json")
    manifest_path.write_text(json.dumps(manifest, sort_keys=True) + "\n")
    return manifest_path


def load_scene(path: str | Path) -> Scene:
    """Load a scene saved by save_scene; verifies version and checksum."""
    base = _scene_base(path)
    manifest_path = base.with_suffix(".json")
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneFormatError(f"{manifest_path}: unreadable manifest: {exc}") from exc
    if manifest.get("version") != SCENE_FORMAT_VERSION:
        raise SceneFormatError(
            f"{manifest_path}: version {manifest.get('version')} != {SCENE_FORMAT_VERSION}")
    blob = base.with_suffix(".bin").read_bytes()
    if zlib.crc32(blob) != manifest["checksum"]:
        raise SceneFormatError(f"{base}.bin: checksum mismatch")
    return scene_from_blob(manifest, blob)


def scene_from_blob(manifest: dict, blob: bytes) -> Scene:
    """Reconstruct a Scene from a parsed manifest and its binary blob."""
    n = int(manifest["n_points"])
    expect = n * 24 + (n * 12 if manifest["has_color"] else 0) + (n * 4 if manifest["has_labels"] else 0)
    if len(blob) != expect:
        raise SceneFormatError(f"blob is {len(blob)} bytes, expected {expect}")
    off = 0
    positions = np.frombuffer(blob, dtype="<f8", count=n * 3, offset=off).reshape(n, 3)
    off += n * 24
    colors = None
    if manifest["has_color"]:
        colors = np.frombuffer(blob, dtype="<f4", count=n * 3, offset=off).reshape(n, 3)
        off += n * 12
    labels = None
    if manifest["has_labels"]:
        labels = InstanceLabeling(np.frombuffer(blob, dtype="<u4", count=n, offset=off))
    return Scene(cloud=PointCloud(positions, colors), labels=labels,
                 scene_id=manifest.get("scene_id", ""))
