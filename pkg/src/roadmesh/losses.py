"""The four training losses and their exact gradients.

Image-space terms (photometric L1, semantic cross-entropy) average over
road-masked covered pixels; the elevation term averages |z_f - z_gt| over
Lidar-supervised vertices; the smoothness term is the Laplacian double sum
over adjacent vertex pairs, each undirected edge counted in both directions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .neural import softmax_cross_entropy_batch

log = logging.getLogger(__name__)

LOSS_CSV_HEADER = "iter,L_rgb,L_sem,L_z,L_smooth,L_total"


@dataclass
class LossWeights:
    rgb: float = 1.0
    sem: float = 1.0
    z: float = 1.0
    smooth: float = 1.0

    def __post_init__(self):
        for name in ("rgb", "sem", "z", "smooth"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


@dataclass
class LossReport:
    """Per-iteration loss record; total is the weighted sum of the terms."""

    iteration: int
    rgb: float
    sem: float
    z: float
    smooth: float
    total: float
    mask_pixels: int = 0
    supervised_vertices: int = 0
    warnings: tuple = ()

    def csv_row(self):
        return (
            f"{self.iteration},{self.rgb!r},{self.sem!r},{self.z!r},"
            f"{self.smooth!r},{self.total!r}"
        )


def effective_mask(view, mask):
    return mask.mask & view.coverage


def rgb_loss(view, frame_rgb, mask):
    """Masked mean absolute color error and its gradient w.r.t. rendered rgb.

    Normalized by masked-covered pixel count and by the 3 channels, so the
    value is a mean absolute error in [0, 1].
    """
    eff = effective_mask(view, mask)
    n = int(eff.sum())
    grad = np.zeros_like(view.rgb)
    if n == 0:
        log.warning("rgb_loss: empty effective mask")
        return 0.0, grad
    diff = view.rgb[eff] - frame_rgb[eff]
    value = float(np.abs(diff).sum() / (3.0 * n))
    grad[eff] = np.sign(diff) / (3.0 * n)
    return value, grad


def sem_loss(view, frame_sem_labels, mask, vertex_logits):
    """Masked mean cross-entropy of winning-vertex logits vs frame labels.

    The gradient is scatter-added onto the winning vertices, shape matching
    vertex_logits.
    """
    eff = effective_mask(view, mask)
    grad = np.zeros_like(vertex_logits)
    n = int(eff.sum())
    if n == 0:
        log.warning("sem_loss: empty effective mask")
        return 0.0, grad
    verts = view.vertex_of_pixel[eff]
    targets = frame_sem_labels[eff]
    losses, pixel_grads = softmax_cross_entropy_batch(
        vertex_logits[verts].astype(np.float64), targets
    )
    value = float(losses.mean())
    np.add.at(grad, verts, (pixel_grads / n).astype(grad.dtype))
    return value, grad


def lidar_vertex_targets(mesh, lidar, neighborhood_radius):
    """Per-vertex elevation targets from nearby Lidar points.

    Returns (supervised vertex indices, mean lidar z per supervised vertex).
    A vertex is supervised when at least one point lies within the radius
    in the (x, y) plane.
    """
    if neighborhood_radius <= 0:
        raise ValueError("neighborhood radius must be positive")
    n = mesh.num_vertices
    if len(lidar) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    tree = cKDTree(mesh.xy)
    neighbor_lists = tree.query_ball_point(lidar.points[:, :2], r=neighborhood_radius)
    counts = np.fromiter((len(lst) for lst in neighbor_lists), dtype=np.int64, count=len(lidar))
    if counts.sum() == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    flat_verts = np.concatenate([np.asarray(lst, dtype=np.int64) for lst in neighbor_lists if lst])
    flat_z = np.repeat(lidar.points[:, 2], counts)
    z_sum = np.bincount(flat_verts, weights=flat_z, minlength=n)
    z_cnt = np.bincount(flat_verts, minlength=n)
    sup = np.nonzero(z_cnt)[0]
    return sup, z_sum[sup] / z_cnt[sup]


def elev_loss(mesh, z_f, lidar, neighborhood_radius):
    """Mean |z_f - z_gt| over Lidar-supervised vertices, gradient w.r.t. z_f."""
    sup, z_gt = lidar_vertex_targets(mesh, lidar, neighborhood_radius)
    return elev_loss_from_targets(z_f, sup, z_gt)


def elev_loss_from_targets(z_f, supported_idx, z_gt):
    grad = np.zeros_like(z_f)
    if supported_idx.size == 0:
        log.warning("elev_loss: no supervised vertices")
        return 0.0, grad
    diff = z_f[supported_idx] - z_gt.astype(z_f.dtype)
    value = float(np.abs(diff).mean())
    grad[supported_idx] = np.sign(diff) / supported_idx.size
    return value, grad


def smooth_loss(mesh, z_f):
    """Laplacian double sum: sum_i sum_{j in N(i)} (z_i - z_j)^2."""
    return smooth_loss_edges(mesh.edges, z_f)


def smooth_loss_edges(edges, z_f):
    """Same as smooth_loss on an explicit undirected unique edge list."""
    grad = np.zeros_like(z_f)
    if edges.shape[0] == 0:
        return 0.0, grad
    dz = z_f[edges[:, 0]] - z_f[edges[:, 1]]
    value = float(2.0 * (dz * dz).sum())
    contrib = 4.0 * dz
    np.add.at(grad, edges[:, 0], contrib)
    np.add.at(grad, edges[:, 1], -contrib)
    return value, grad


def total_loss(terms, weights, iteration=0, mask_pixels=0, supervised_vertices=0, warnings=()):
    """Weighted combination of the four terms as a LossReport."""
    total = (
        weights.rgb * terms["rgb"]
        + weights.sem * terms["sem"]
        + weights.z * terms["z"]
        + weights.smooth * terms["smooth"]
    )
    return LossReport(
        iteration=iteration,
        rgb=float(terms["rgb"]),
        sem=float(terms["sem"]),
        z=float(terms["z"]),
        smooth=float(terms["smooth"]),
        total=float(total),
        mask_pixels=int(mask_pixels),
        supervised_vertices=int(supervised_vertices),
        warnings=tuple(warnings),
    )
