"""Direct projection rendering: vertex splatting with a z-buffer.

Vertices are projected through the pinhole model, rounded to the nearest
pixel, and the minimum-depth vertex wins each pixel. The vertex-to-pixel
assignment is discrete and carries no gradient; losses differentiate only
through the winning vertices' attributes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import ROAD_CLASSES

NEAR_PLANE = 0.1


@dataclass
class RenderedView:
    """Splat result. Uncovered pixels hold rgb 0, sem -1, vertex -1, depth 0."""

    rgb: np.ndarray  # (H, W, 3) float in [0, 1]
    sem: np.ndarray  # (H, W) int, -1 where uncovered
    coverage: np.ndarray  # (H, W) bool
    vertex_of_pixel: np.ndarray  # (H, W) int, -1 where uncovered
    depth: np.ndarray  # (H, W) float, 0 where uncovered


@dataclass
class RoadMask:
    """Boolean road-surface mask; true where the label is a road class."""

    mask: np.ndarray

    @property
    def count(self):
        return int(self.mask.sum())


def project(camera, camera_from_world, point):
    """Project one world point; returns (u, v, depth) or None when rejected.

    Rejection happens when the camera-frame depth is at or below the near
    plane or the rounded pixel falls outside the image.
    """
    u, v, depth, valid = project_points(
        camera, camera_from_world, np.asarray(point, dtype=np.float64).reshape(1, 3)
    )
    if not valid[0]:
        return None
    return float(u[0]), float(v[0]), float(depth[0])


def project_points(camera, camera_from_world, points):
    """Vectorized pinhole projection.

    Returns (u, v, depth, valid): continuous pixel coordinates, camera-frame
    depth, and whether each point survives the near-plane and bounds checks
    (bounds are evaluated on the round-half-up pixel).
    """
    p_cam = camera_from_world.apply(points)
    depth = p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = np.where(depth > NEAR_PLANE, 1.0 / depth, 0.0)
    K = camera.K
    u = K[0, 0] * p_cam[:, 0] * inv_z + K[0, 2]
    v = K[1, 1] * p_cam[:, 1] * inv_z + K[1, 2]
    ui = np.floor(u + 0.5)
    vi = np.floor(v + 0.5)
    valid = (
        (depth > NEAR_PLANE)
        & (ui >= 0)
        & (ui < camera.width)
        & (vi >= 0)
        & (vi < camera.height)
    )
    return u, v, depth, valid


def pixel_indices(u, v):
    """Round-half-up pixel indices for continuous projections."""
    return np.floor(u + 0.5).astype(np.int64), np.floor(v + 0.5).astype(np.int64)


def splat_view(xy, z_f, vertex_rgb, vertex_sem, camera, world_from_camera):
    """Render per-vertex attributes into the camera; see RenderedView."""
    n = xy.shape[0]
    pts = np.column_stack([xy, z_f])
    cam_from_world = world_from_camera.inverse()
    u, v, depth, valid = project_points(camera, cam_from_world, pts)

    H, W = camera.height, camera.width
    view = RenderedView(
        rgb=np.zeros((H, W, 3), dtype=vertex_rgb.dtype),
        sem=np.full((H, W), -1, dtype=np.int32),
        coverage=np.zeros((H, W), dtype=bool),
        vertex_of_pixel=np.full((H, W), -1, dtype=np.int64),
        depth=np.zeros((H, W), dtype=np.float64),
    )
    vidx = np.nonzero(valid)[0]
    if vidx.size == 0:
        return view
    ui, vi = pixel_indices(u[vidx], v[vidx])
    pix = vi * W + ui
    d = depth[vidx]
    # stable sort by (pixel, depth): first hit per pixel is the z-buffer
    # winner; depth ties resolve to the lowest vertex index
    order = np.lexsort((d, pix))
    pix_sorted = pix[order]
    first = np.ones(pix_sorted.shape[0], dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    winners = vidx[order][first]
    win_pix = pix_sorted[first]

    rows, cols = win_pix // W, win_pix % W
    view.rgb[rows, cols] = vertex_rgb[winners]
    view.sem[rows, cols] = vertex_sem[winners]
    view.coverage[rows, cols] = True
    view.vertex_of_pixel[rows, cols] = winners
    view.depth[rows, cols] = depth[winners]
    return view


def render_view(mesh, z_f, vertex_rgb, camera, world_from_camera):
    """Splat a full mesh: semantics come from the per-vertex logit argmax."""
    vertex_sem = np.argmax(mesh.sem_logits, axis=1).astype(np.int32)
    return splat_view(mesh.xy, z_f, vertex_rgb, vertex_sem, camera, world_from_camera)


def build_road_mask(frame_sem_labels):
    """Mask of road-surface classes; background, dynamic and unknown codes
    all count as non-road."""
    return RoadMask(mask=np.isin(frame_sem_labels, ROAD_CLASSES))
