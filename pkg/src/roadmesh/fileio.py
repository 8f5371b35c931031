"""Readers and writers for the on-disk formats.

All text formats are UTF-8 with '.' decimal points; floats are written with
repr so values round-trip exactly. PNG export goes through Pillow; semantic
label images are paletted with the fixed class palette.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import PALETTE, LidarCloud, Pose, Trajectory
from .transforms import RigidTransform

TRAJECTORY_HEADER = ["t", "x", "y", "z", "qw", "qx", "qy", "qz"]


def _fmt(v):
    return repr(float(v))


def write_trajectory_csv(path, traj):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRAJECTORY_HEADER)
        for p in traj.poses:
            writer.writerow(
                [_fmt(p.t)]
                + [_fmt(c) for c in p.position]
                + [_fmt(c) for c in p.orientation]
            )


def read_trajectory_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != TRAJECTORY_HEADER:
            raise ValueError(f"bad trajectory header {header!r}")
        poses = []
        for row in reader:
            if not row:
                continue
            vals = [float(c) for c in row]
            poses.append(Pose(vals[0], vals[1:4], vals[4:8]))
    return Trajectory(poses)


def write_cameras_txt(path, cameras, mounts, gains, gammas):
    """One camera per line: id fx fy cx cy w h g gamma + row-major 3x4 mount."""
    lines = []
    for cam in cameras:
        mount = mounts[cam.id]
        vals = [
            str(cam.id),
            _fmt(cam.K[0, 0]),
            _fmt(cam.K[1, 1]),
            _fmt(cam.K[0, 2]),
            _fmt(cam.K[1, 2]),
            str(cam.width),
            str(cam.height),
            _fmt(gains[cam.id]),
            _fmt(gammas[cam.id]),
        ] + [_fmt(v) for v in mount.matrix3x4().ravel()]
        lines.append(" ".join(vals))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_cameras_txt(path):
    """Returns (cameras, mounts, gains, gammas) keyed consistently by id."""
    from .scene import Camera

    cameras, mounts, gains, gammas = [], {}, {}, {}
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        if len(parts) != 9 + 12:
            raise ValueError(f"camera line needs 21 fields, got {len(parts)}")
        cam_id = int(parts[0])
        fx, fy, cx, cy = (float(v) for v in parts[1:5])
        w, h = int(parts[5]), int(parts[6])
        cameras.append(Camera.from_params(cam_id, fx, fy, cx, cy, w, h))
        gains[cam_id] = float(parts[7])
        gammas[cam_id] = float(parts[8])
        mounts[cam_id] = RigidTransform.from_matrix3x4([float(v) for v in parts[9:]])
    return cameras, mounts, gains, gammas


def save_rgb_png(path, rgb):
    """rgb float array in [0,1], shape (H, W, 3), quantized to 8 bits."""
    arr = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    img = Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="RGB")
    img.save(path)


def load_rgb_png(path):
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def _palette_bytes():
    pal = [0] * 768
    for code, (r, g, b) in PALETTE.items():
        pal[3 * code : 3 * code + 3] = [r, g, b]
    return pal


def save_label_png(path, labels):
    """Paletted PNG of integer class/dynamic codes (0..255)."""
    arr = np.asarray(labels)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("label codes must fit in one byte")
    img = Image.fromarray(arr.astype(np.uint8), mode="P")
    img.putpalette(_palette_bytes())
    img.save(path)


def load_label_png(path):
    img = Image.open(path)
    if img.mode != "P":
        raise ValueError(f"{path} is not a paletted label image")
    return np.asarray(img, dtype=np.int32)


def write_lidar_ply(path, cloud):
    """ASCII PLY point cloud, double precision coordinates."""
    pts = cloud.points
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    body = "\n".join(" ".join(_fmt(c) for c in p) for p in pts)
    text = "\n".join(lines) + ("\n" + body if pts.shape[0] else "") + "\n"
    Path(path).write_text(text, encoding="utf-8")


def read_lidar_ply(path):
    with open(path, encoding="utf-8") as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError("not a PLY file")
        n = None
        while True:
            line = f.readline()
            if not line:
                raise ValueError("unterminated PLY header")
            line = line.strip()
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            if line == "end_header":
                break
        if n is None:
            raise ValueError("PLY header lacks a vertex element")
        pts = np.loadtxt(f, dtype=np.float64, max_rows=n) if n else np.zeros((0, 3))
    return LidarCloud(pts.reshape(-1, 3))


def write_mesh_ply(path, mesh, z_f, vertex_rgb, vertex_class):
    """ASCII PLY: positions, per-vertex uchar RGB, uchar class scalar, faces."""
    n = mesh.num_vertices
    rgb8 = (np.clip(vertex_rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property double x",
        "property double y",
        "property double z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "property uchar class",
        f"element face {mesh.num_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
        for i in range(n):
            f.write(
                f"{_fmt(mesh.xy[i, 0])} {_fmt(mesh.xy[i, 1])} {_fmt(z_f[i])} "
                f"{rgb8[i, 0]} {rgb8[i, 1]} {rgb8[i, 2]} {int(vertex_class[i])}\n"
            )
        for face in mesh.faces:
            f.write(f"3 {face[0]} {face[1]} {face[2]}\n")


def write_mesh_obj(path, mesh, z_f):
    """OBJ with positions and faces only (1-indexed)."""
    with open(path, "w", encoding="utf-8") as f:
        for i in range(mesh.num_vertices):
            f.write(f"v {_fmt(mesh.xy[i, 0])} {_fmt(mesh.xy[i, 1])} {_fmt(z_f[i])}\n")
        for face in mesh.faces:
            f.write(f"f {face[0] + 1} {face[1] + 1} {face[2] + 1}\n")
