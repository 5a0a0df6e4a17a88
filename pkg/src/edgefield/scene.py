"""Scene model: Gaussian primitives, pinhole cameras, synthetic scene generation.

Synthetic scenes replace externally-segmented real imagery: object
membership is known per Gaussian, ground-truth masks are rendered by
accumulating opacity per object and thresholding at 0.5, and a seeded
noise model corrupts those masks the way an imperfect 2D segmenter would
(flips concentrated in a band around the mask boundary, plus an optional
uniform flip floor).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage

from .errors import DegenerateSceneError, InvalidPrimitiveError
from . import images

QUAT_TOL = 1e-9
ROT_TOL = 1e-9


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic splat: geometry factors, appearance, and a trainable mask label."""

    mu: np.ndarray            # world position, shape (3,)
    scale: np.ndarray         # positive per-axis extents, shape (3,)
    rotation: np.ndarray      # unit quaternion (w, x, y, z)
    opacity: float
    color: np.ndarray         # base RGB in [0, 1]^3
    mask_label: float         # foreground probability, strictly in (0, 1)
    feature: np.ndarray       # trainable feature vector, initialized from color
    object_id: int = 0        # 0 = background

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64))
        object.__setattr__(self, "feature", np.asarray(self.feature, dtype=np.float64))
        for name in ("mu", "scale", "rotation", "color", "feature"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidPrimitiveError(f"non-finite {name}")
        if not (np.isfinite(self.opacity) and np.isfinite(self.mask_label)):
            raise InvalidPrimitiveError("non-finite scalar field")
        if np.any(self.scale <= 0):
            raise InvalidPrimitiveError("scale components must be positive")
        if abs(np.linalg.norm(self.rotation) - 1.0) > QUAT_TOL:
            raise InvalidPrimitiveError("rotation quaternion must be unit norm")
        if not (0.0 <= self.opacity <= 1.0):
            raise InvalidPrimitiveError("opacity outside [0, 1]")
        if not (0.0 < self.mask_label < 1.0):
            raise InvalidPrimitiveError("mask_label must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; `rot` maps world to camera coordinates, `origin` is the camera center."""

    fx: float
    fy: float
    cx: float
    cy: float
    rot: np.ndarray       # 3×3, world → camera, det +1
    origin: np.ndarray    # camera center in world coordinates
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "rot", np.asarray(self.rot, dtype=np.float64))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        r = self.rot
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-8 or abs(np.linalg.det(r) - 1.0) > ROT_TOL:
            raise InvalidPrimitiveError("camera rotation must be orthonormal with det +1")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidPrimitiveError("focal lengths must be positive")
        if self.width < 8 or self.height < 8:
            raise InvalidPrimitiveError("image must be at least 8×8")


@dataclass(frozen=True)
class NoiseSpec:
    """Mask corruption: flips inside a band around the true boundary, plus a uniform floor."""

    jitter_px: float = 0.0
    band_flip_prob: float = 0.0
    uniform_flip_prob: float = 0.0

    def __post_init__(self):
        if self.jitter_px < 0:
            raise ValueError("jitter_px must be >= 0")
        for p in (self.band_flip_prob, self.uniform_flip_prob):
            if not (0.0 <= p <= 1.0):
                raise ValueError("flip probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class ObjectSpec:
    kind: str                 # "sphere" or "box"
    center: tuple
    size: float | tuple       # sphere radius, or box half-extents
    count: int
    color: tuple
    splat_scale: float        # per-Gaussian isotropic extent
    opacity: float = 0.95


@dataclass(frozen=True)
class SceneSpec:
    """Descriptor consumed by generate_scene."""

    objects: tuple            # ObjectSpec, 1-indexed object ids in listed order
    n_cameras: int
    cam_radius: float
    image_size: tuple         # (width, height)
    focal: float
    seed: int
    noise: NoiseSpec = NoiseSpec()
    look_at: tuple = (0.0, 0.0, 0.0)
    cam_height: float = 0.0


@dataclass
class SyntheticScene:
    gaussians: list
    cameras: list
    objects: tuple            # the ObjectSpec tuple that produced the Gaussians
    noise: NoiseSpec
    gt_masks: list = field(default_factory=list)   # gt_masks[view][object_index] binary HxW
    seed: int = 0

    @property
    def n_objects(self) -> int:
        return len(self.objects)


def covariance(g: GaussianPrimitive) -> np.ndarray:
    """World-space covariance of a primitive, built from its rotation and scale factors."""
    r = quat_to_rot(g.rotation)
    m = r * g.scale[np.newaxis, :]   # R @ diag(scale)
    return m @ m.T


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def look_at_rotation(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World→camera rotation for a camera at `position` looking at `target`.

    Image x runs right, image y runs down, camera z points forward; the
    returned matrix has det +1.
    """
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd = fwd / np.linalg.norm(fwd)
    down = -np.asarray(up, dtype=np.float64)
    down = down - np.dot(down, fwd) * fwd
    n = np.linalg.norm(down)
    if n < 1e-9:
        # looking straight along `up`: pick an arbitrary perpendicular
        down = np.array([0.0, 1.0, 0.0]) - fwd[1] * fwd
        n = np.linalg.norm(down)
    down = down / n
    right = np.cross(down, fwd)
    return np.stack([right, down, fwd])


# ---------------------------------------------------------------------------
# packed array views (renderer-facing)

@dataclass
class GaussianArrays:
    """Struct-of-arrays view of a Gaussian list for vectorized pipelines."""

    mu: np.ndarray           # (N, 3)
    cov: np.ndarray          # (N, 3, 3)
    opacity: np.ndarray      # (N,)
    color: np.ndarray        # (N, 3)
    mask_label: np.ndarray   # (N,)
    feature: np.ndarray      # (N, F)
    object_id: np.ndarray    # (N,)

    def __len__(self) -> int:
        return self.mu.shape[0]


def pack_gaussians(gaussians) -> GaussianArrays:
    return GaussianArrays(
        mu=np.array([g.mu for g in gaussians]),
        cov=np.array([covariance(g) for g in gaussians]),
        opacity=np.array([g.opacity for g in gaussians]),
        color=np.array([g.color for g in gaussians]),
        mask_label=np.array([g.mask_label for g in gaussians]),
        feature=np.array([g.feature for g in gaussians]),
        object_id=np.array([g.object_id for g in gaussians], dtype=np.int64),
    )


def with_updated_params(gaussians, opacity=None, color=None, mask_label=None, feature=None):
    """Copy of a Gaussian list with some parameter arrays replaced (geometry untouched)."""
    out = []
    for i, g in enumerate(gaussians):
        out.append(GaussianPrimitive(
            mu=g.mu, scale=g.scale, rotation=g.rotation,
            opacity=float(opacity[i]) if opacity is not None else g.opacity,
            color=color[i] if color is not None else g.color,
            mask_label=float(mask_label[i]) if mask_label is not None else g.mask_label,
            feature=feature[i] if feature is not None else g.feature,
            object_id=g.object_id,
        ))
    return out


# ---------------------------------------------------------------------------
# generation

def _sample_sphere(rng, spec: ObjectSpec) -> np.ndarray:
    center = np.asarray(spec.center, dtype=np.float64)
    radius = float(spec.size)
    dirs = rng.normal(size=(spec.count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # slight inward jitter keeps the shell from being a perfect sphere
    radii = radius * (1.0 - 0.08 * rng.random(spec.count))
    return center + dirs * radii[:, np.newaxis]


def _sample_box(rng, spec: ObjectSpec) -> np.ndarray:
    center = np.asarray(spec.center, dtype=np.float64)
    half = np.asarray(spec.size, dtype=np.float64) * np.ones(3)
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    areas = np.repeat(areas, 2)
    face = rng.choice(6, size=spec.count, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(spec.count, 3)) * half
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts[np.arange(spec.count), axis] = sign * half[axis]
    return center + pts


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Build a deterministic synthetic scene with per-object ground-truth masks."""
    if len(spec.objects) == 0:
        raise DegenerateSceneError("scene descriptor names no objects")
    if spec.n_cameras < 2:
        raise DegenerateSceneError("need at least 2 cameras")

    rng = np.random.default_rng(spec.seed)
    gaussians = []
    for obj_idx, obj in enumerate(spec.objects):
        if obj.count < 1:
            raise DegenerateSceneError(f"object {obj_idx + 1} contributes no Gaussians")
        if obj.kind == "sphere":
            centers = _sample_sphere(rng, obj)
        elif obj.kind == "box":
            centers = _sample_box(rng, obj)
        else:
            raise DegenerateSceneError(f"unknown object kind {obj.kind!r}")
        quats = rng.normal(size=(obj.count, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        for mu, q in zip(centers, quats):
            gaussians.append(GaussianPrimitive(
                mu=mu,
                scale=np.full(3, obj.splat_scale),
                rotation=q,
                opacity=obj.opacity,
                color=np.asarray(obj.color, dtype=np.float64),
                mask_label=0.5,   # maximum-uncertainty prior before refinement
                feature=np.asarray(obj.color, dtype=np.float64),
                object_id=obj_idx + 1,
            ))

    look_at = np.asarray(spec.look_at, dtype=np.float64)
    width, height = spec.image_size
    cameras = []
    for i in range(spec.n_cameras):
        theta = 2.0 * np.pi * i / spec.n_cameras
        pos = look_at + np.array([
            spec.cam_radius * np.cos(theta),
            spec.cam_radius * np.sin(theta),
            spec.cam_height,
        ])
        cameras.append(Camera(
            fx=spec.focal, fy=spec.focal,
            cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
            rot=look_at_rotation(pos, look_at),
            origin=pos, width=width, height=height,
        ))

    scene = SyntheticScene(gaussians=gaussians, cameras=cameras,
                           objects=tuple(spec.objects), noise=spec.noise, seed=spec.seed)
    scene.gt_masks = _render_gt_masks(scene)
    return scene


def _render_gt_masks(scene: SyntheticScene):
    # local import: splat depends on this module's types
    from . import splat

    packed = pack_gaussians(scene.gaussians)
    masks = []
    for cam in scene.cameras:
        per_object = []
        any_visible = False
        for obj_idx in range(scene.n_objects):
            sel = packed.object_id == obj_idx + 1
            sub = GaussianArrays(
                mu=packed.mu[sel], cov=packed.cov[sel], opacity=packed.opacity[sel],
                color=packed.color[sel], mask_label=packed.mask_label[sel],
                feature=packed.feature[sel], object_id=packed.object_id[sel],
            )
            frame = splat.render(sub, cam, channel="mask", store_records=False)
            any_visible = any_visible or frame.n_contributors > 0
            per_object.append(frame.alpha >= 0.5)
        if not any_visible:
            raise DegenerateSceneError("a camera sees no Gaussian")
        masks.append(per_object)
    return masks


# ---------------------------------------------------------------------------
# mask corruption

def _boundary_band(mask: np.ndarray, radius: float) -> np.ndarray:
    """Pixels within `radius` (Euclidean) of the mask's fg/bg boundary."""
    fg = mask.astype(bool)
    if not fg.any() or fg.all():
        return np.zeros_like(fg)
    # distance from every pixel to the nearest pixel of the opposite class;
    # a boundary-adjacent pixel is at distance 1
    d_to_bg = ndimage.distance_transform_edt(fg)
    d_to_fg = ndimage.distance_transform_edt(~fg)
    dist = np.where(fg, d_to_bg, d_to_fg)
    return dist <= radius + 0.5


def corrupt_masks(scene: SyntheticScene, seed: int):
    """Noisy copies of gt_masks: corrupted[view][object] with the scene's NoiseSpec applied."""
    spec = scene.noise
    rng = np.random.default_rng(seed)
    corrupted = []
    for view_masks in scene.gt_masks:
        per_object = []
        for gt in view_masks:
            noisy = gt.copy()
            if spec.band_flip_prob > 0 and spec.jitter_px > 0:
                band = _boundary_band(gt, spec.jitter_px)
                flips = band & (rng.random(gt.shape) < spec.band_flip_prob)
                noisy = noisy ^ flips
            if spec.uniform_flip_prob > 0:
                flips = rng.random(gt.shape) < spec.uniform_flip_prob
                noisy = noisy ^ flips
            per_object.append(noisy)
        corrupted.append(per_object)
    return corrupted


# ---------------------------------------------------------------------------
# scene file I/O

def _camera_to_dict(c: Camera) -> dict:
    return {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
            "rot": c.rot.tolist(), "origin": c.origin.tolist(),
            "width": c.width, "height": c.height}


def _gaussian_to_dict(g: GaussianPrimitive) -> dict:
    return {"mu": g.mu.tolist(), "scale": g.scale.tolist(),
            "rotation": g.rotation.tolist(), "opacity": g.opacity,
            "color": g.color.tolist(), "mask_label": g.mask_label,
            "feature": g.feature.tolist(), "object_id": int(g.object_id)}


def save_scene(scene: SyntheticScene, path) -> None:
    """Write the scene as UTF-8 JSON (full float precision via repr round-trip)."""
    doc = {
        "gaussians": [_gaussian_to_dict(g) for g in scene.gaussians],
        "cameras": [_camera_to_dict(c) for c in scene.cameras],
        "objects": [dict(asdict(o), id=i + 1) for i, o in enumerate(scene.objects)],
        "noise": asdict(scene.noise),
        "seed": scene.seed,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_scene(path) -> SyntheticScene:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    gaussians = [GaussianPrimitive(
        mu=d["mu"], scale=d["scale"], rotation=d["rotation"], opacity=d["opacity"],
        color=d["color"], mask_label=d["mask_label"], feature=d["feature"],
        object_id=d["object_id"]) for d in doc["gaussians"]]
    cameras = [Camera(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"], rot=d["rot"],
                      origin=d["origin"], width=d["width"], height=d["height"])
               for d in doc["cameras"]]
    objects = tuple(ObjectSpec(
        kind=d["kind"], center=tuple(d["center"]),
        size=tuple(d["size"]) if isinstance(d["size"], list) else d["size"],
        count=d["count"], color=tuple(d["color"]), splat_scale=d["splat_scale"],
        opacity=d["opacity"]) for d in doc["objects"])
    noise = NoiseSpec(**doc["noise"])
    scene = SyntheticScene(gaussians=gaussians, cameras=cameras, objects=objects,
                           noise=noise, seed=doc.get("seed", 0))
    scene.gt_masks = _render_gt_masks(scene)
    return scene


def save_masks(masks, outdir, prefix="gt") -> list:
    """Write masks[view][object] as PGM files; returns the written paths."""
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for v, per_object in enumerate(masks):
        for o, mask in enumerate(per_object):
            p = outdir / f"{prefix}_view{v}_obj{o + 1}.pgm"
            images.write_pgm(p, mask.astype(np.float64))
            paths.append(p)
    return paths
