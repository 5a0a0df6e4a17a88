"""Software splat rasterizer: EWA-style projection and front-to-back compositing.

Per pixel, contributing Gaussians are depth-sorted (ties broken by index)
and blended as  w_i = a_i * prod_{j<i}(1 - a_j)  with a_i the opacity
times the 2D kernel value.  Color, mask label, and accumulated opacity
share the same weights.  The frame keeps per-record state so gradients
with respect to color, opacity, and mask label can be pushed back through
the exact compositing arithmetic; geometry (positions, covariances,
cameras) is frozen and receives no gradient.

Compositing runs in "rank passes": records are sorted by (depth rank,
pixel), so pass r updates every pixel's r-th contributor in one
vectorized step.  Each pixel sees the same operation sequence as a scalar
front-to-back loop, making results independent of how work is batched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MissingTapeError
from .scene import Camera, GaussianArrays, GaussianPrimitive, covariance

NEAR_PLANE = 1e-3
COV2D_FLOOR = 0.3          # px^2 added to the diagonal (anti-aliasing floor)
FOOTPRINT_CUTOFF = 1.0 / 255.0


def project(g: GaussianPrimitive, cam: Camera, cov_floor: float = COV2D_FLOOR):
    """Project one primitive; returns (mean2d, cov2d, depth) or None if behind the camera."""
    p_cam = cam.rot @ (g.mu - cam.origin)
    z = p_cam[2]
    if z <= NEAR_PLANE:
        return None
    mean2d = np.array([cam.fx * p_cam[0] / z + cam.cx,
                       cam.fy * p_cam[1] / z + cam.cy])
    jac = np.array([
        [cam.fx / z, 0.0, -cam.fx * p_cam[0] / (z * z)],
        [0.0, cam.fy / z, -cam.fy * p_cam[1] / (z * z)],
    ])
    jw = jac @ cam.rot
    cov2d = jw @ covariance(g) @ jw.T + cov_floor * np.eye(2)
    return mean2d, cov2d, z


def project_arrays(g: GaussianArrays, cam: Camera, cov_floor: float = COV2D_FLOOR):
    """Vectorized projection of a packed Gaussian set.

    Returns (mean2d (N,2), cov2d (N,2,2), depth (N,), visible (N,) bool);
    rows for invisible Gaussians are left as zeros.
    """
    n = len(g)
    p_cam = (g.mu - cam.origin) @ cam.rot.T
    z = p_cam[:, 2]
    visible = z > NEAR_PLANE
    mean2d = np.zeros((n, 2))
    cov2d = np.zeros((n, 2, 2))
    depth = np.where(visible, z, 0.0)
    if visible.any():
        x, y, zv = p_cam[visible, 0], p_cam[visible, 1], z[visible]
        mean2d[visible, 0] = cam.fx * x / zv + cam.cx
        mean2d[visible, 1] = cam.fy * y / zv + cam.cy
        jac = np.zeros((int(visible.sum()), 2, 3))
        jac[:, 0, 0] = cam.fx / zv
        jac[:, 0, 2] = -cam.fx * x / (zv * zv)
        jac[:, 1, 1] = cam.fy / zv
        jac[:, 1, 2] = -cam.fy * y / (zv * zv)
        jw = jac @ cam.rot
        cov2d[visible] = jw @ g.cov[visible] @ np.transpose(jw, (0, 2, 1))
        cov2d[visible, 0, 0] += cov_floor
        cov2d[visible, 1, 1] += cov_floor
    return mean2d, cov2d, depth, visible


@dataclass
class FrameGeometry:
    """Camera-dependent, parameter-independent rasterization state (cacheable)."""

    width: int
    height: int
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: np.ndarray
    visible: np.ndarray
    # flat records sorted by (rank, pixel); rank = position in the pixel's depth order
    rec_pixel: np.ndarray
    rec_gauss: np.ndarray
    rec_kernel: np.ndarray
    rec_rank: np.ndarray
    rank_bounds: np.ndarray   # block r occupies [rank_bounds[r], rank_bounds[r+1])

    @property
    def n_records(self) -> int:
        return self.rec_pixel.shape[0]


def build_geometry(g: GaussianArrays, cam: Camera, cov_floor: float = COV2D_FLOOR,
                   cutoff: float = FOOTPRINT_CUTOFF) -> FrameGeometry:
    """Project all Gaussians and collect per-pixel contributor records."""
    mean2d, cov2d, depth, visible = project_arrays(g, cam, cov_floor)
    w, h = cam.width, cam.height
    qmax = -2.0 * np.log(cutoff)   # kernel >= cutoff  <=>  mahalanobis^2 <= qmax

    pix_parts, gauss_parts, kern_parts = [], [], []
    for i in np.flatnonzero(visible):
        c = cov2d[i]
        det = c[0, 0] * c[1, 1] - c[0, 1] * c[1, 0]
        if det <= 0:
            continue
        mx, my = mean2d[i]
        rx = np.sqrt(qmax * c[0, 0])
        ry = np.sqrt(qmax * c[1, 1])
        x0, x1 = max(int(np.ceil(mx - rx)), 0), min(int(np.floor(mx + rx)), w - 1)
        y0, y1 = max(int(np.ceil(my - ry)), 0), min(int(np.floor(my + ry)), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        dx = np.broadcast_to(np.arange(x0, x1 + 1) - mx, (y1 - y0 + 1, x1 - x0 + 1))
        dy = np.broadcast_to((np.arange(y0, y1 + 1) - my)[:, None], dx.shape)
        inv00, inv01, inv11 = c[1, 1] / det, -c[0, 1] / det, c[0, 0] / det
        q = inv00 * dx * dx + 2.0 * inv01 * dx * dy + inv11 * dy * dy
        kern = np.exp(-0.5 * q)
        keep = kern >= cutoff
        if not keep.any():
            continue
        yy, xx = np.nonzero(keep)
        pix_parts.append((yy + y0) * w + (xx + x0))
        gauss_parts.append(np.full(yy.size, i, dtype=np.int64))
        kern_parts.append(kern[keep])

    if pix_parts:
        rec_pixel = np.concatenate(pix_parts)
        rec_gauss = np.concatenate(gauss_parts)
        rec_kernel = np.concatenate(kern_parts)
    else:
        rec_pixel = np.zeros(0, dtype=np.int64)
        rec_gauss = np.zeros(0, dtype=np.int64)
        rec_kernel = np.zeros(0)

    # depth order within each pixel, ties broken by primitive index
    order = np.lexsort((rec_gauss, depth[rec_gauss], rec_pixel))
    rec_pixel, rec_gauss, rec_kernel = rec_pixel[order], rec_gauss[order], rec_kernel[order]
    if rec_pixel.size:
        first = np.ones(rec_pixel.size, dtype=bool)
        first[1:] = rec_pixel[1:] != rec_pixel[:-1]
        starts = np.flatnonzero(first)
        counts = np.diff(np.append(starts, rec_pixel.size))
        rank = np.arange(rec_pixel.size) - np.repeat(starts, counts)
    else:
        rank = np.zeros(0, dtype=np.int64)

    order2 = np.lexsort((rec_pixel, rank))
    rec_pixel, rec_gauss, rec_kernel, rank = (
        rec_pixel[order2], rec_gauss[order2], rec_kernel[order2], rank[order2])
    n_ranks = int(rank[-1]) + 1 if rank.size else 0
    rank_bounds = np.searchsorted(rank, np.arange(n_ranks + 1))

    return FrameGeometry(width=w, height=h, mean2d=mean2d, cov2d=cov2d, depth=depth,
                         visible=visible, rec_pixel=rec_pixel, rec_gauss=rec_gauss,
                         rec_kernel=rec_kernel, rec_rank=rank, rank_bounds=rank_bounds)


@dataclass
class SplatFrame:
    color: np.ndarray          # (H, W, 3)
    mask: np.ndarray           # (H, W)
    alpha: np.ndarray          # (H, W), sum of blend weights per pixel
    geometry: FrameGeometry
    params: GaussianArrays | None = None   # inputs the frame was rendered from
    rec_a: np.ndarray | None = None        # per-record opacity*kernel
    rec_t: np.ndarray | None = None        # transmittance in front of the record
    rec_w: np.ndarray | None = None        # blend weight

    @property
    def n_contributors(self) -> int:
        return self.geometry.n_records

    def per_pixel_lists(self):
        """Ordered contributor records per pixel: {flat_pixel: [(index, mean2d, cov2d, weight)]}."""
        if self.rec_w is None:
            raise MissingTapeError("frame was rendered without contributor records")
        geo = self.geometry
        order = np.lexsort((geo.rec_rank, geo.rec_pixel))
        out: dict[int, list] = {}
        for r in order:
            gi = int(geo.rec_gauss[r])
            out.setdefault(int(geo.rec_pixel[r]), []).append(
                (gi, geo.mean2d[gi], geo.cov2d[gi], float(self.rec_w[r])))
        return out


def render(g: GaussianArrays, cam: Camera, channel: str = "both",
           store_records: bool = True, geometry: FrameGeometry | None = None,
           cov_floor: float = COV2D_FLOOR, cutoff: float = FOOTPRINT_CUTOFF) -> SplatFrame:
    """Composite a packed Gaussian set into a SplatFrame.

    `channel` selects which images are filled ("color", "mask", or "both");
    alpha is always accumulated.  Pass a cached FrameGeometry to skip
    re-projection when only colors/opacities/labels changed.
    """
    if channel not in ("color", "mask", "both"):
        raise ValueError(f"unknown channel {channel!r}")
    geo = geometry if geometry is not None else build_geometry(g, cam, cov_floor, cutoff)
    n_px = geo.width * geo.height
    want_color = channel in ("color", "both")
    want_mask = channel in ("mask", "both")

    color_flat = np.zeros((n_px, 3))
    mask_flat = np.zeros(n_px)
    alpha_flat = np.zeros(n_px)
    transmit = np.ones(n_px)

    rec_a = g.opacity[geo.rec_gauss] * geo.rec_kernel
    rec_t = np.empty(geo.n_records)
    rec_w = np.empty(geo.n_records)

    for r in range(len(geo.rank_bounds) - 1):
        s, e = geo.rank_bounds[r], geo.rank_bounds[r + 1]
        px = geo.rec_pixel[s:e]
        a = rec_a[s:e]
        t = transmit[px]
        w = a * t
        rec_t[s:e] = t
        rec_w[s:e] = w
        alpha_flat[px] += w
        if want_color:
            color_flat[px] += w[:, None] * g.color[geo.rec_gauss[s:e]]
        if want_mask:
            mask_flat[px] += w * g.mask_label[geo.rec_gauss[s:e]]
        transmit[px] = t * (1.0 - a)

    return SplatFrame(
        color=color_flat.reshape(geo.height, geo.width, 3),
        mask=mask_flat.reshape(geo.height, geo.width),
        alpha=alpha_flat.reshape(geo.height, geo.width),
        geometry=geo,
        params=g if store_records else None,
        rec_a=rec_a if store_records else None,
        rec_t=rec_t if store_records else None,
        rec_w=rec_w if store_records else None,
    )


def backprop_render(frame: SplatFrame, d_color=None, d_mask=None, d_alpha=None):
    """Gradients of a scalar loss w.r.t. per-Gaussian color, opacity, and mask label.

    Seeds are image-shaped adjoints of the frame's color/mask/alpha
    outputs (None means zero).  Geometry is frozen and receives no
    gradient.  Returns (d_colors (N,3), d_opacities (N,), d_labels (N,)).

    Derivation per pixel, with a_i = opacity_i * kernel_i and
    T_i = prod_{j<i}(1 - a_j):

        dC/dc_i     = w_i
        dC/da_i     = T_i * (c_i - B_i),   B_i = sum_{k>i} a_k c_k prod_{i<j<k}(1-a_j)
        dalpha/da_i = T_i * prod_{j>i}(1 - a_j)

    B and the survival product are accumulated back-to-front, which avoids
    dividing by (1 - a_i) and stays finite at full opacity.
    """
    if frame.rec_w is None or frame.params is None:
        raise MissingTapeError("frame was rendered without contributor records")
    geo = frame.geometry
    g = frame.params
    n = len(g)
    n_px = geo.width * geo.height

    gc = None if d_color is None else np.asarray(d_color, dtype=np.float64).reshape(n_px, 3)
    gm = None if d_mask is None else np.asarray(d_mask, dtype=np.float64).reshape(n_px)
    ga = None if d_alpha is None else np.asarray(d_alpha, dtype=np.float64).reshape(n_px)

    d_colors = np.zeros((n, 3))
    d_opacities = np.zeros(n)
    d_labels = np.zeros(n)

    bc = np.zeros((n_px, 3))   # color behind the current rank
    bm = np.zeros(n_px)        # mask label behind the current rank
    surv = np.ones(n_px)       # prod of (1 - a) behind the current rank

    for r in range(len(geo.rank_bounds) - 2, -1, -1):
        s, e = geo.rank_bounds[r], geo.rank_bounds[r + 1]
        px = geo.rec_pixel[s:e]
        gi = geo.rec_gauss[s:e]
        a = frame.rec_a[s:e]
        t = frame.rec_t[s:e]
        w = frame.rec_w[s:e]

        da = np.zeros(e - s)
        if gc is not None:
            ci = g.color[gi]
            np.add.at(d_colors, gi, gc[px] * w[:, None])
            da += np.einsum("ij,ij->i", gc[px], ci - bc[px])
            bc[px] = a[:, None] * ci + (1.0 - a)[:, None] * bc[px]
        if gm is not None:
            mi = g.mask_label[gi]
            np.add.at(d_labels, gi, gm[px] * w)
            da += gm[px] * (mi - bm[px])
            bm[px] = a * mi + (1.0 - a) * bm[px]
        if ga is not None:
            da += ga[px] * surv[px]
        surv[px] = surv[px] * (1.0 - a)

        np.add.at(d_opacities, gi, t * da * geo.rec_kernel[s:e])

    return d_colors, d_opacities, d_labels
