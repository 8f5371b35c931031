"""Domain types for trajectories, road meshes, cameras, frames and Lidar.

The road surface is a regular equilateral-triangle lattice swept along the
vehicle trajectory. Vertices carry immutable geometry (x, y, initial
elevation z0) plus the learnable per-vertex attributes (semantic logits and
an implicit color code) that the trainer owns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .transforms import RigidTransform

# Semantic label space. Classes 0..3 are road surface, 4 is background and
# anything >= DYNAMIC_LABEL_START marks a dynamic object to be masked out.
CLASS_NAMES = ("lane_marking", "curb", "manhole", "road", "background")
NUM_CLASSES = 5
ROAD_CLASSES = (0, 1, 2, 3)
BACKGROUND_CLASS = 4
DYNAMIC_LABEL_START = 5

# Fixed palette: one RGB triple per class, plus magenta shades for dynamic
# object codes 5..15. Exports rely on these values bit-exactly.
PALETTE = {
    0: (255, 255, 255),
    1: (210, 134, 60),
    2: (128, 0, 128),
    3: (105, 105, 105),
    4: (34, 139, 34),
}
for _code in range(DYNAMIC_LABEL_START, 16):
    PALETTE[_code] = (255, 0, 255 - 16 * (_code - DYNAMIC_LABEL_START))

COLOR_CODE_DIM = 32
SEM_LOGIT_INIT = 0.01
COLOR_CODE_INIT = 0.1

IDW_NEIGHBORS = 4
IDW_EPS = 1e-6


class MeshConstructionError(ValueError):
    """Raised when a road mesh cannot be built from the given trajectory."""


@dataclass
class Pose:
    """Timestamped vehicle pose: position in meters, unit quaternion."""

    t: float
    position: np.ndarray
    orientation: np.ndarray  # (qw, qx, qy, qz)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(self.orientation)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n:.8f} deviates from 1 by more than 1e-6")

    def world_from_vehicle(self):
        return RigidTransform.from_quat_pos(self.orientation, self.position)


class Trajectory:
    """Ordered vehicle poses with strictly increasing timestamps."""

    def __init__(self, poses):
        poses = list(poses)
        if not poses:
            raise ValueError("trajectory needs at least one pose")
        times = np.array([p.t for p in poses])
        if np.any(np.diff(times) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        self.poses = poses
        self.positions = np.stack([p.position for p in poses])
        self._tree = None

    def __len__(self):
        return len(self.poses)

    @property
    def xy(self):
        return self.positions[:, :2]

    @property
    def z(self):
        return self.positions[:, 2]

    def kdtree(self):
        if self._tree is None:
            self._tree = cKDTree(self.xy)
        return self._tree

    def arc_lengths(self):
        """Cumulative arc length (in the xy plane) at each pose."""
        seg = np.linalg.norm(np.diff(self.xy, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])


@dataclass
class Vertex:
    """Single-vertex view: geometry plus learnable attributes."""

    x: float
    y: float
    z0: float
    sem_logits: np.ndarray
    color_code: np.ndarray


@dataclass
class Camera:
    """Pinhole camera intrinsics (zero skew)."""

    id: int
    K: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        fx, fy = self.K[0, 0], self.K[1, 1]
        cx, cy = self.K[0, 2], self.K[1, 2]
        if fx <= 0 or fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < cx < self.width and 0 < cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_params(cls, cam_id, fx, fy, cx, cy, width, height):
        K = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])
        return cls(cam_id, K, int(width), int(height))


@dataclass
class Frame:
    """One captured image: pose, RGB in [0,1], semantic labels."""

    camera_id: int
    world_from_camera: RigidTransform
    rgb: np.ndarray  # (H, W, 3) float in [0, 1]
    sem_labels: np.ndarray  # (H, W) int class/dynamic codes
    traj_index: int

    def validate_against(self, camera):
        h, w = self.sem_labels.shape
        if self.rgb.shape != (camera.height, camera.width, 3) or (h, w) != (
            camera.height,
            camera.width,
        ):
            raise ValueError("frame image dimensions do not match camera")


class LidarCloud:
    """Ground-labeled Lidar points, (N, 3) meters."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("lidar points must be finite")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


class RoadMesh:
    """Equilateral-triangle road lattice with per-vertex learnable state.

    Geometry (xy, z0, faces, adjacency) is immutable once built; sem_logits
    and color_codes are the mutable learnable fields owned by the trainer.
    """

    def __init__(self, xy, z0, faces, edge_length, sem_logits, color_codes, lattice=None):
        self.xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        self.z0 = np.asarray(z0, dtype=np.float64).reshape(-1)
        self.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        self.edge_length = float(edge_length)
        self.sem_logits = sem_logits
        self.color_codes = color_codes
        self._lattice = lattice
        n = self.xy.shape[0]
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise MeshConstructionError("face index out of range")
        self._check_edge_lengths()
        self.adj_indptr, self.adj_indices = _adjacency_from_faces(n, self.faces)
        self.edges = _unique_edges(self.faces)
        self.bbox = (
            float(self.xy[:, 0].min()),
            float(self.xy[:, 1].min()),
            float(self.xy[:, 0].max()),
            float(self.xy[:, 1].max()),
        )

    def _check_edge_lengths(self):
        if not self.faces.size:
            return
        a = self.edge_length
        for s in range(3):
            p = self.xy[self.faces[:, s]]
            q = self.xy[self.faces[:, (s + 1) % 3]]
            lengths = np.linalg.norm(p - q, axis=1)
            if np.any(np.abs(lengths - a) > 0.01 * a):
                raise MeshConstructionError("face edge deviates more than 1% from edge_length")

    @property
    def num_vertices(self):
        return self.xy.shape[0]

    @property
    def num_faces(self):
        return self.faces.shape[0]

    def vertex(self, i):
        i = _check_index(i, self.num_vertices)
        return Vertex(
            x=float(self.xy[i, 0]),
            y=float(self.xy[i, 1]),
            z0=float(self.z0[i]),
            sem_logits=self.sem_logits[i],
            color_code=self.color_codes[i],
        )

    def area(self):
        p0 = self.xy[self.faces[:, 0]]
        p1 = self.xy[self.faces[:, 1]]
        p2 = self.xy[self.faces[:, 2]]
        cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (
            p2[:, 0] - p0[:, 0]
        )
        return float(0.5 * np.abs(cross).sum())

    def locate_faces(self, xy):
        """Face index containing each (x, y) query, or -1 outside the mesh."""
        if self._lattice is None:
            raise ValueError("mesh lacks lattice metadata for face lookup")
        q = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return self._lattice.locate(q, self.faces, self.xy)


def _check_index(i, n):
    i = int(i)
    if not 0 <= i < n:
        raise IndexError(f"vertex index {i} out of range [0, {n})")
    return i


def _adjacency_from_faces(num_vertices, faces):
    """Symmetric adjacency in CSR form (indptr, sorted indices)."""
    if not faces.size:
        return np.zeros(num_vertices + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    i = faces[:, [0, 1, 1, 2, 2, 0]].ravel()
    j = faces[:, [1, 0, 2, 1, 0, 2]].ravel()
    pair = i * num_vertices + j
    pair = np.unique(pair)
    i = pair // num_vertices
    j = pair % num_vertices
    counts = np.bincount(i, minlength=num_vertices)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return indptr.astype(np.int64), j.astype(np.int64)


def _unique_edges(faces):
    """Undirected unique edges (E, 2) with e0 < e1."""
    if not faces.size:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def vertex_neighbors(mesh, i):
    """Indices of all vertices sharing an edge with vertex i."""
    i = _check_index(i, mesh.num_vertices)
    return mesh.adj_indices[mesh.adj_indptr[i] : mesh.adj_indptr[i + 1]].copy()


def interpolate_elevation(traj, x, y):
    """Inverse-distance-weighted elevation of the nearest trajectory poses.

    Uses the 4 nearest poses in the (x, y) plane with weights 1/(d + 1e-6);
    a query exactly on a pose returns that pose's elevation.
    """
    z = _interpolate_elevation_many(traj, np.array([[x, y]], dtype=np.float64))
    return float(z[0])


def _interpolate_elevation_many(traj, xy):
    k = min(IDW_NEIGHBORS, len(traj))
    d, idx = traj.kdtree().query(xy, k=k)
    if k == 1:
        d = d[:, None]
        idx = idx[:, None]
    w = 1.0 / (d + IDW_EPS)
    z = (w * traj.z[idx]).sum(axis=1) / w.sum(axis=1)
    exact = d[:, 0] == 0.0
    if np.any(exact):
        z[exact] = traj.z[idx[exact, 0]]
    return z


def resample_polyline(xy, spacing):
    """Points and unit tangents at `spacing` arc-length steps along a polyline."""
    xy = np.asarray(xy, dtype=np.float64)
    seg = np.diff(xy, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    keep = seg_len > 1e-12
    if not np.any(keep):
        raise MeshConstructionError("trajectory has zero horizontal extent")
    starts = xy[:-1][keep]
    seg = seg[keep]
    seg_len = seg_len[keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    s = np.arange(0.0, total, spacing)
    if total - s[-1] > 1e-9:
        s = np.concatenate([s, [total]])
    si = np.minimum(np.searchsorted(cum, s, side="right") - 1, len(seg_len) - 1)
    frac = (s - cum[si]) / seg_len[si]
    pts = starts[si] + seg[si] * frac[:, None]
    tangents = seg[si] / seg_len[si][:, None]
    return pts, tangents, s


def build_mesh_from_trajectory(traj, edge_length, half_width, seed=0):
    """Sweep an equilateral lattice along the trajectory and initialize it.

    Lattice rows are spaced edge_length * sqrt(3)/2 apart with every other
    row shifted by edge_length/2. A lattice vertex is kept when it lies
    within half_width laterally of the resampled centerline; faces survive
    when all three corners are kept. z0 comes from trajectory interpolation
    and the learnable per-vertex attributes are seeded uniform noise.
    """
    if len(traj) < 2:
        raise MeshConstructionError("mesh construction needs at least 2 poses")
    if edge_length <= 0 or half_width <= 0:
        raise MeshConstructionError("edge_length and half_width must be positive")

    a = float(edge_length)
    pitch = a * np.sqrt(3.0) / 2.0
    samples, tangents, _ = resample_polyline(traj.xy, a)
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)

    margin = half_width + 2 * a
    x0 = samples[:, 0].min() - margin
    y0 = samples[:, 1].min() - margin
    ncols = int(np.ceil((samples[:, 0].max() + margin - x0) / a)) + 1
    nrows = int(np.ceil((samples[:, 1].max() + margin - y0) / pitch)) + 1

    rows = np.arange(nrows)
    cols = np.arange(ncols)
    gx = x0 + cols[None, :] * a + (rows[:, None] % 2) * (a / 2.0)
    gy = y0 + rows[:, None] * pitch + np.zeros_like(cols[None, :], dtype=np.float64)
    grid_xy = np.stack([gx.ravel(), gy.ravel()], axis=1)

    _, nearest = cKDTree(samples).query(grid_xy)
    rel = grid_xy - samples[nearest]
    d_lat = np.abs(np.einsum("ij,ij->i", rel, normals[nearest]))
    d_lon = np.abs(np.einsum("ij,ij->i", rel, tangents[nearest]))
    # samples sit edge_length apart along the arc, so interior points lie
    # within a/2 of one; the bound keeps the sweep from overshooting the ends
    occupied = ((d_lat <= half_width + 1e-9) & (d_lon <= a / 2 + 1e-9)).reshape(nrows, ncols)

    lattice = _TriLattice(x0, y0, a, pitch, nrows, ncols)
    faces_rc, face_cells = lattice.faces_over(occupied)
    if faces_rc.shape[0] == 0:
        raise MeshConstructionError("trajectory sweep produced no faces")

    used = np.zeros(nrows * ncols, dtype=bool)
    used[faces_rc.ravel()] = True
    new_id = -np.ones(nrows * ncols, dtype=np.int64)
    new_id[used] = np.arange(used.sum())
    faces = new_id[faces_rc]
    xy = grid_xy[used]
    lattice.finalize(new_id.reshape(nrows, ncols), face_cells)

    z0 = _interpolate_elevation_many(traj, xy)

    rng = np.random.default_rng(seed)
    n = xy.shape[0]
    sem_logits = rng.uniform(-SEM_LOGIT_INIT, SEM_LOGIT_INIT, size=(n, NUM_CLASSES))
    color_codes = rng.uniform(-COLOR_CODE_INIT, COLOR_CODE_INIT, size=(n, COLOR_CODE_DIM))
    return RoadMesh(xy, z0, faces, a, sem_logits, color_codes, lattice=lattice)


class _TriLattice:
    """Lattice bookkeeping: vertex ids on the (row, col) grid and the two
    candidate faces of each cell, for constant-time point-to-face lookup."""

    def __init__(self, x0, y0, a, pitch, nrows, ncols):
        self.x0 = x0
        self.y0 = y0
        self.a = a
        self.pitch = pitch
        self.nrows = nrows
        self.ncols = ncols
        self.vid_grid = None
        self.face_grid = None

    def faces_over(self, occupied):
        """All retained faces as flat grid-vertex ids, plus their cells."""
        nrows, ncols = self.nrows, self.ncols
        occ = occupied.ravel()
        faces = []
        cells = []
        flat = np.arange(nrows * ncols).reshape(nrows, ncols)
        for r in range(nrows - 1):
            for which, tri in enumerate(self._cell_triangles(r, flat)):
                keep = occ[tri[:, 0]] & occ[tri[:, 1]] & occ[tri[:, 2]]
                idx = np.nonzero(keep)[0]
                faces.append(tri[idx])
                cells.append(
                    np.stack([np.full(idx.shape, r), idx, np.full(idx.shape, which)], axis=1)
                )
        return np.concatenate(faces, axis=0), np.concatenate(cells, axis=0)

    def _cell_triangles(self, r, flat):
        """The two triangles of every column cell between rows r and r+1."""
        c = np.arange(self.ncols - 1)
        lo, hi = flat[r], flat[r + 1]
        if r % 2 == 0:
            tri_a = np.stack([lo[c], lo[c + 1], hi[c]], axis=1)
            tri_b = np.stack([lo[c + 1], hi[c + 1], hi[c]], axis=1)
        else:
            tri_a = np.stack([lo[c], lo[c + 1], hi[c + 1]], axis=1)
            tri_b = np.stack([lo[c], hi[c + 1], hi[c]], axis=1)
        return tri_a, tri_b

    def finalize(self, vid_grid, face_cells):
        self.vid_grid = vid_grid
        self.face_grid = -np.ones((self.nrows - 1, self.ncols - 1, 2), dtype=np.int64)
        self.face_grid[face_cells[:, 0], face_cells[:, 1], face_cells[:, 2]] = np.arange(
            face_cells.shape[0]
        )

    def locate(self, q, faces, vert_xy):
        """Containing face per query point, -1 when outside the mesh."""
        r = np.floor((q[:, 1] - self.y0) / self.pitch).astype(np.int64)
        c_base = np.floor((q[:, 0] - self.x0) / self.a).astype(np.int64)
        out = -np.ones(q.shape[0], dtype=np.int64)
        valid = (r >= 0) & (r < self.nrows - 1)
        for dc in (-1, 0, 1):
            c = c_base + dc
            cand_ok = valid & (c >= 0) & (c < self.ncols - 1)
            for which in (0, 1):
                need = cand_ok & (out < 0)
                if not np.any(need):
                    continue
                fid = self.face_grid[r[need], c[need], which]
                has = fid >= 0
                if not np.any(has):
                    continue
                sel = np.nonzero(need)[0][has]
                tri = vert_xy[faces[fid[has]]]
                _, inside = barycentric_weights(tri, q[sel])
                out[sel[inside]] = fid[has][inside]
        return out


def barycentric_weights(tri_xy, pts):
    """Barycentric weights of pts (N,2) in triangles (N,3,2); returns
    (weights (N,3), inside (N,) with 1e-9 tolerance)."""
    p0 = tri_xy[:, 0]
    v1 = tri_xy[:, 1] - p0
    v2 = tri_xy[:, 2] - p0
    vp = pts - p0
    det = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    w1 = (vp[:, 0] * v2[:, 1] - vp[:, 1] * v2[:, 0]) / det
    w2 = (v1[:, 0] * vp[:, 1] - v1[:, 1] * vp[:, 0]) / det
    w0 = 1.0 - w1 - w2
    w = np.stack([w0, w1, w2], axis=1)
    inside = (w >= -1e-9).all(axis=1)
    return w, inside
