"""Procedural lunar-like scene generator and on-disk scene format.

Scenes contain two object classes: Meteor (ellipsoid, class 0) and
Platform (box, class 1) resting on a sinusoid-plus-crater heightfield.
LiDAR and cameras share one analytic ray caster, so ground-truth depth,
point clouds and boxes are exactly consistent by construction.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Box3D, CameraModel, PointCloud, look_at_extrinsic

FORMAT_VERSION = 1
CLASS_METEOR = 0
CLASS_PLATFORM = 1
CLASS_NAMES = ("meteor", "platform")

TERRAIN_ALBEDO = 0.5
PLATFORM_ALBEDO = 0.82
SKY_VALUE = 0.04
AMBIENT = 0.15
LIGHTING_GAIN = {"bright": 1.0, "dim": 0.4}
IMAGE_NOISE_SIGMA = 0.01
SUN_DIRECTION = np.array([0.35, 0.2, 1.0]) / np.linalg.norm([0.35, 0.2, 1.0])

LIDAR_HEIGHT = 1.9
CAMERA_HEIGHT = 1.55
CAMERA_ELEVATION_MIN = math.radians(-40.0)
CAMERA_ELEVATION_MAX = math.radians(4.0)
MIN_PLACEMENT_RADIUS = 2.5
PLACEMENT_MARGIN = 1.0  # extra BEV clearance between objects, meters

MAX_PLACEMENT_ATTEMPTS = 100
MAX_SCENE_ATTEMPTS = 25
MIN_PIXEL_SUPPORT = 16


class SceneIOError(RuntimeError):
    """Raised when a scene directory is missing, corrupt or version-mismatched."""


@dataclass(frozen=True)
class LidarSpec:
    n_channels: int = 24
    h_resolution: int = 180
    max_range: float = 20.0

    def __post_init__(self):
        if self.n_channels < 1 or self.h_resolution < 1:
            raise ValueError("lidar lattice dimensions must be positive")
        if self.max_range <= 0:
            raise ValueError("lidar max range must be positive")


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_meteors: int = 3
    n_platforms: int = 1
    terrain_extent: float = 28.0
    meteor_size: tuple[float, float] = (0.9, 2.0)  # BEV diameter, meters
    platform_size: tuple[float, float] = (1.8, 3.4)  # length, meters
    n_cameras: int = 1
    lidar: LidarSpec = field(default_factory=LidarSpec)
    lighting: str = "bright"
    image_size: tuple[int, int] = (48, 72)  # (height, width)
    placement_radius: float = 10.0

    def __post_init__(self):
        if self.n_meteors < 0 or self.n_platforms < 0:
            raise ValueError("object counts must be non-negative")
        for lo, hi in (self.meteor_size, self.platform_size):
            if lo <= 0 or hi < lo:
                raise ValueError("size ranges must be positive with min <= max")
        if self.n_cameras not in (1, 2):
            raise ValueError("n_cameras must be 1 or 2")
        if self.lighting not in LIGHTING_GAIN:
            raise ValueError(f"lighting must be one of {sorted(LIGHTING_GAIN)}")
        if self.terrain_extent <= 0:
            raise ValueError("terrain extent must be positive")


@dataclass
class Scene:
    cloud: PointCloud
    cameras: list  # (CameraModel, rgb HxWx3 float32 in [0,1], gt_depth HxW float32)
    boxes: list  # list[Box3D]
    scene_id: str


# ---------------------------------------------------------------------------
# analytic geometry


@dataclass
class Terrain:
    """Heightfield: sum of low-frequency sinusoids plus cosine-profile craters."""

    amplitudes: np.ndarray  # (K,)
    freq_x: np.ndarray
    freq_y: np.ndarray
    phase_x: np.ndarray
    phase_y: np.ndarray
    craters: np.ndarray  # (M, 4): cx, cy, radius, depth
    albedo: float = TERRAIN_ALBEDO

    def height(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        h = np.zeros(np.broadcast(x, y).shape, dtype=np.float64)
        for a, fx, fy, px, py in zip(
            self.amplitudes, self.freq_x, self.freq_y, self.phase_x, self.phase_y
        ):
            h += a * np.sin(fx * x + px) * np.sin(fy * y + py)
        for cx, cy, rad, depth in self.craters:
            r = np.hypot(x - cx, y - cy)
            inside = r < rad
            h = np.where(inside, h - depth * 0.5 * (1.0 + np.cos(np.pi * r / rad)), h)
        return h

    def gradient(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        gx = np.zeros(np.broadcast(x, y).shape, dtype=np.float64)
        gy = np.zeros_like(gx)
        for a, fx, fy, px, py in zip(
            self.amplitudes, self.freq_x, self.freq_y, self.phase_x, self.phase_y
        ):
            gx += a * fx * np.cos(fx * x + px) * np.sin(fy * y + py)
            gy += a * fy * np.sin(fx * x + px) * np.cos(fy * y + py)
        for cx, cy, rad, depth in self.craters:
            dx, dy = x - cx, y - cy
            r = np.hypot(dx, dy)
            inside = (r < rad) & (r > 1e-12)
            # d/dr of -depth/2*(1+cos(pi r/R)) = depth*pi/(2R)*sin(pi r/R)
            mag = np.where(inside, depth * np.pi / (2.0 * rad) * np.sin(np.pi * r / rad), 0.0)
            with np.errstate(invalid="ignore", divide="ignore"):
                gx += np.where(inside, mag * dx / np.where(r > 0, r, 1.0), 0.0)
                gy += np.where(inside, mag * dy / np.where(r > 0, r, 1.0), 0.0)
        return gx, gy

    def max_height(self) -> float:
        return float(np.sum(np.abs(self.amplitudes)))

    def normal(self, x, y):
        gx, gy = self.gradient(x, y)
        n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


@dataclass
class Ellipsoid:
    """Meteor body: yawed ellipsoid with semi-axes (a, b, c)."""

    center: np.ndarray
    semi_axes: np.ndarray
    yaw: float
    albedo: float
    class_id: int = CLASS_METEOR

    def to_box(self) -> Box3D:
        return Box3D(self.center, 2.0 * self.semi_axes, self.yaw, self.class_id)

    def bev_radius(self) -> float:
        return float(max(self.semi_axes[0], self.semi_axes[1]))

    def intersect(self, origins, dirs):
        """First positive ray parameter per ray, +inf on miss; world normals."""
        c, s = math.cos(-self.yaw), math.sin(-self.yaw)
        rel = origins - self.center
        ox = c * rel[:, 0] - s * rel[:, 1]
        oy = s * rel[:, 0] + c * rel[:, 1]
        oz = rel[:, 2]
        dx = c * dirs[:, 0] - s * dirs[:, 1]
        dy = s * dirs[:, 0] + c * dirs[:, 1]
        dz = dirs[:, 2]
        ax, ay, az = self.semi_axes
        o = np.stack([ox / ax, oy / ay, oz / az], axis=1)
        d = np.stack([dx / ax, dy / ay, dz / az], axis=1)
        a = np.sum(d * d, axis=1)
        b = 2.0 * np.sum(o * d, axis=1)
        cq = np.sum(o * o, axis=1) - 1.0
        disc = b * b - 4.0 * a * cq
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = (-b - sq) / (2.0 * a)
        t1 = (-b + sq) / (2.0 * a)
        t = np.where(t0 > 1e-6, t0, t1)
        t = np.where(hit & (t > 1e-6), t, np.inf)
        # normal: gradient of the scaled implicit surface, rotated back to world
        px = ox + t * dx
        py = oy + t * dy
        pz = oz + t * dz
        nx = px / ax**2
        ny = py / ay**2
        nz = pz / az**2
        cw, sw = math.cos(self.yaw), math.sin(self.yaw)
        n = np.stack([cw * nx - sw * ny, sw * nx + cw * ny, nz], axis=1)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        n = np.where(np.isfinite(t)[:, None], n / np.where(norm > 0, norm, 1.0), 0.0)
        return t, n


@dataclass
class BoxObstacle:
    """Platform body: yawed axis-aligned box of size (l, w, h)."""

    center: np.ndarray
    size: np.ndarray
    yaw: float
    albedo: float
    class_id: int = CLASS_PLATFORM

    def to_box(self) -> Box3D:
        return Box3D(self.center, self.size, self.yaw, self.class_id)

    def bev_radius(self) -> float:
        return float(math.hypot(self.size[0], self.size[1]) / 2.0)

    def intersect(self, origins, dirs):
        c, s = math.cos(-self.yaw), math.sin(-self.yaw)
        rel = origins - self.center
        o = np.stack(
            [c * rel[:, 0] - s * rel[:, 1], s * rel[:, 0] + c * rel[:, 1], rel[:, 2]], axis=1
        )
        d = np.stack(
            [c * dirs[:, 0] - s * dirs[:, 1], s * dirs[:, 0] + c * dirs[:, 1], dirs[:, 2]], axis=1
        )
        half = self.size / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
        t_lo = (-half - o) * inv
        t_hi = (half - o) * inv
        # handle rays parallel to a slab
        parallel = np.abs(d) < 1e-12
        outside = np.abs(o) > half
        t1 = np.where(parallel, -np.inf, np.minimum(t_lo, t_hi))
        t2 = np.where(parallel, np.inf, np.maximum(t_lo, t_hi))
        t1 = np.where(parallel & outside, np.inf, t1)
        t_near = np.max(t1, axis=1)
        t_far = np.min(t2, axis=1)
        axis = np.argmax(t1, axis=1)
        ok = (t_near <= t_far) & (t_far > 1e-6)
        t = np.where(t_near > 1e-6, t_near, np.inf)  # ignore rays starting inside
        t = np.where(ok, t, np.inf)
        sign = np.sign(np.take_along_axis(-d, axis[:, None], axis=1))[:, 0]
        n_local = np.zeros_like(o)
        rows = np.arange(o.shape[0])
        n_local[rows, axis] = sign
        cw, sw = math.cos(self.yaw), math.sin(self.yaw)
        n = np.stack(
            [
                cw * n_local[:, 0] - sw * n_local[:, 1],
                sw * n_local[:, 0] + cw * n_local[:, 1],
                n_local[:, 2],
            ],
            axis=1,
        )
        n = np.where(np.isfinite(t)[:, None], n, 0.0)
        return t, n


@dataclass
class SceneGeometry:
    terrain: Terrain
    objects: list  # Ellipsoid | BoxObstacle


TERRAIN_MARCH_STEP = 0.08
TERRAIN_BISECTIONS = 45


def _march_terrain(terrain: Terrain, origins, dirs, t_max):
    """Ray-heightfield intersection: fixed-step march plus bisection refinement."""
    n = origins.shape[0]
    t_hit = np.full(n, np.inf)
    f_prev = origins[:, 2] - terrain.height(origins[:, 0], origins[:, 1])
    lo = np.zeros(n)
    hi = np.zeros(n)
    bracketed = np.zeros(n, dtype=bool)
    # rays that start below the surface are treated as immediate misses
    alive = f_prev > 0
    h_max = terrain.max_height()
    t = TERRAIN_MARCH_STEP
    while t <= t_max + TERRAIN_MARCH_STEP and np.any(alive):
        p = origins + t * dirs
        # a ray above the highest possible terrain and heading up can never hit
        hopeless = alive & (p[:, 2] > h_max) & (dirs[:, 2] >= 0)
        alive &= ~hopeless
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        f = p[idx, 2] - terrain.height(p[idx, 0], p[idx, 1])
        crossed = f <= 0
        c_idx = idx[crossed]
        lo[c_idx] = t - TERRAIN_MARCH_STEP
        hi[c_idx] = t
        bracketed[c_idx] = True
        alive[c_idx] = False
        f_prev[idx] = f
        t += TERRAIN_MARCH_STEP
    idx = np.nonzero(bracketed)[0]
    if idx.size:
        a = lo[idx].copy()
        b = hi[idx].copy()
        o = origins[idx]
        d = dirs[idx]
        for _ in range(TERRAIN_BISECTIONS):
            m = 0.5 * (a + b)
            p = o + m[:, None] * d
            f = p[:, 2] - terrain.height(p[:, 0], p[:, 1])
            below = f <= 0
            b = np.where(below, m, b)
            a = np.where(below, a, m)
        t_hit[idx] = 0.5 * (a + b)
    t_hit = np.where(t_hit <= t_max, t_hit, np.inf)
    return t_hit


def cast_rays(geom: SceneGeometry, origins, dirs, t_max: float):
    """First-hit ray cast against terrain and all objects.

    Returns (t, normals, albedo, hit_object): t is +inf on miss, hit_object is
    -1 for terrain and the object's list index otherwise (-2 for miss).
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    t_best = _march_terrain(geom.terrain, origins, dirs, t_max)
    hit_obj = np.where(np.isfinite(t_best), -1, -2)
    for k, obj in enumerate(geom.objects):
        t_k, _ = obj.intersect(origins, dirs)
        closer = t_k < t_best
        t_best = np.where(closer, t_k, t_best)
        hit_obj = np.where(closer, k, hit_obj)
    t_best = np.where(t_best <= t_max, t_best, np.inf)
    hit_obj = np.where(np.isfinite(t_best), hit_obj, -2)

    normals = np.zeros((n, 3))
    albedo = np.zeros(n)
    terr = hit_obj == -1
    if np.any(terr):
        p = origins[terr] + t_best[terr, None] * dirs[terr]
        normals[terr] = geom.terrain.normal(p[:, 0], p[:, 1])
        albedo[terr] = geom.terrain.albedo
    for k, obj in enumerate(geom.objects):
        sel = hit_obj == k
        if np.any(sel):
            _, n_k = obj.intersect(origins[sel], dirs[sel])
            normals[sel] = n_k
            albedo[sel] = obj.albedo
    return t_best, normals, albedo, hit_obj


# ---------------------------------------------------------------------------
# sensors


def lidar_directions(spec: LidarSpec) -> np.ndarray:
    """Unit ray directions on the regular azimuth x elevation lattice."""
    az = 2.0 * np.pi * (np.arange(spec.h_resolution) + 0.5) / spec.h_resolution
    el = np.linspace(CAMERA_ELEVATION_MIN, CAMERA_ELEVATION_MAX, spec.n_channels)
    azg, elg = np.meshgrid(az, el)
    d = np.stack(
        [np.cos(elg) * np.cos(azg), np.cos(elg) * np.sin(azg), np.sin(elg)], axis=-1
    )
    return d.reshape(-1, 3)


def sample_lidar(geom: SceneGeometry, spec: LidarSpec, origin=None) -> PointCloud:
    """Cast the LiDAR lattice and return first-hit points with albedo intensity."""
    if origin is None:
        origin = np.array([0.0, 0.0, LIDAR_HEIGHT])
    dirs = lidar_directions(spec)
    origins = np.broadcast_to(origin, dirs.shape).copy()
    t, _, albedo, _ = cast_rays(geom, origins, dirs, spec.max_range)
    hit = np.isfinite(t)
    pts = origins[hit] + t[hit, None] * dirs[hit]
    intensity = albedo[hit]
    return PointCloud(np.column_stack([pts, intensity]).astype(np.float32))


def camera_rays(cam: CameraModel):
    """World-frame origins/directions for every pixel center, row-major."""
    h, w = cam.image_size
    fx, fy = cam.intrinsics[0, 0], cam.intrinsics[1, 1]
    cx, cy = cam.intrinsics[0, 2], cam.intrinsics[1, 2]
    u = np.arange(w) + 0.5
    v = np.arange(h) + 0.5
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([(uu - cx) / fx, (vv - cy) / fy, np.ones_like(uu)], axis=-1)
    d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
    d_world = d_cam.reshape(-1, 3) @ cam.rotation
    origin = cam.position
    origins = np.broadcast_to(origin, d_world.shape).copy()
    return origins, d_world, d_cam.reshape(-1, 3)[:, 2]


def render_camera(geom: SceneGeometry, cam: CameraModel, lighting: str, rng=None):
    """Ray-cast RGB and ground-truth depth for one camera.

    RGB is albedo x Lambert shading x lighting gain plus Gaussian pixel noise,
    quantized to 8-bit levels so the PPM round trip is exact. Depth is the
    camera-frame z of the first hit, 0 on miss.
    """
    gain = LIGHTING_GAIN[lighting]
    origins, dirs, dz_cam = camera_rays(cam)
    # reuse the LiDAR range cap so both sensors agree on visibility
    t, normals, albedo, _ = cast_rays(geom, origins, dirs, _render_range(cam))
    hit = np.isfinite(t)
    shade = AMBIENT + (1.0 - AMBIENT) * np.clip(normals @ SUN_DIRECTION, 0.0, None)
    value = np.where(hit, albedo * shade * gain, SKY_VALUE * gain)
    h, w = cam.image_size
    rgb = np.repeat(value[:, None], 3, axis=1).reshape(h, w, 3)
    if rng is not None:
        rgb = rgb + rng.normal(0.0, IMAGE_NOISE_SIGMA, size=rgb.shape)
    rgb = np.clip(rgb, 0.0, 1.0)
    rgb = np.round(rgb * 255.0) / 255.0
    depth = np.where(hit, t * dz_cam, 0.0).reshape(h, w)
    return rgb.astype(np.float32), depth.astype(np.float32)


_RENDER_RANGE = {}


def _render_range(cam: CameraModel) -> float:
    return _RENDER_RANGE.get(id(cam), 20.0)


def make_camera(position, target, image_size, hfov_deg: float = 78.0) -> CameraModel:
    h, w = image_size
    fx = (w / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
    intr = np.array([[fx, 0.0, w / 2.0], [0.0, fx, h / 2.0], [0.0, 0.0, 1.0]])
    rot, tr = look_at_extrinsic(position, target)
    return CameraModel(intr, rot, tr, (h, w))


# ---------------------------------------------------------------------------
# scene generation


def _make_terrain(rng: np.random.Generator, extent: float) -> Terrain:
    k = 4
    amplitudes = rng.uniform(0.04, 0.16, size=k)
    wavelengths = rng.uniform(8.0, 24.0, size=(k, 2))
    freqs = 2.0 * np.pi / wavelengths
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(k, 2))
    n_craters = rng.integers(2, 5)
    craters = np.column_stack(
        [
            rng.uniform(-0.35 * extent, 0.35 * extent, size=n_craters),
            rng.uniform(-0.35 * extent, 0.35 * extent, size=n_craters),
            rng.uniform(1.5, 3.5, size=n_craters),
            rng.uniform(0.15, 0.45, size=n_craters),
        ]
    )
    return Terrain(
        amplitudes=amplitudes,
        freq_x=freqs[:, 0],
        freq_y=freqs[:, 1],
        phase_x=phases[:, 0],
        phase_y=phases[:, 1],
        craters=craters,
    )


def _place_objects(rng: np.random.Generator, cfg: SceneConfig, terrain: Terrain) -> list:
    objects = []
    r_max = min(cfg.placement_radius, 0.45 * cfg.terrain_extent)
    specs = [CLASS_METEOR] * cfg.n_meteors + [CLASS_PLATFORM] * cfg.n_platforms
    for class_id in specs:
        placed = False
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            radius = rng.uniform(MIN_PLACEMENT_RADIUS, r_max)
            angle = rng.uniform(0.0, 2.0 * np.pi)
            x, y = radius * math.cos(angle), radius * math.sin(angle)
            yaw = rng.uniform(-np.pi, np.pi)
            if class_id == CLASS_METEOR:
                diameter = rng.uniform(*cfg.meteor_size)
                semi = np.array(
                    [
                        diameter / 2.0,
                        diameter / 2.0 * rng.uniform(0.7, 1.0),
                        diameter / 2.0 * rng.uniform(0.55, 0.85),
                    ]
                )
                z = terrain.height(x, y) + semi[2] * 0.9
                albedo = rng.uniform(0.45, 0.55)
                cand = Ellipsoid(np.array([x, y, z]), semi, yaw, albedo)
            else:
                length = rng.uniform(*cfg.platform_size)
                width = length * rng.uniform(0.55, 0.8)
                height = rng.uniform(0.7, 1.3)
                z = terrain.height(x, y) + height / 2.0
                cand = BoxObstacle(
                    np.array([x, y, z]), np.array([length, width, height]), yaw, PLATFORM_ALBEDO
                )
            ok = True
            for other in objects:
                min_sep = cand.bev_radius() + other.bev_radius() + PLACEMENT_MARGIN
                if math.hypot(cand.center[0] - other.center[0], cand.center[1] - other.center[1]) < min_sep:
                    ok = False
                    break
            if ok:
                objects.append(cand)
                placed = True
                break
        if not placed:
            raise RuntimeError(
                f"could not place object after {MAX_PLACEMENT_ATTEMPTS} attempts; "
                "scene config too dense"
            )
    return objects


def _make_cameras(cfg: SceneConfig) -> list:
    cams = []
    look = [(8.0, 0.0, 0.0), (-8.0, 0.0, 0.0)]
    pos = [(0.25, 0.0, CAMERA_HEIGHT), (-0.25, 0.0, CAMERA_HEIGHT)]
    for k in range(cfg.n_cameras):
        cam = make_camera(pos[k], look[k], cfg.image_size)
        _RENDER_RANGE[id(cam)] = cfg.lidar.max_range
        cams.append(cam)
    return cams


def _pixel_support(hit_obj: np.ndarray, n_objects: int) -> np.ndarray:
    counts = np.zeros(n_objects, dtype=np.int64)
    for k in range(n_objects):
        counts[k] = int(np.sum(hit_obj == k))
    return counts


def generate_scene(cfg: SceneConfig) -> Scene:
    """Generate one deterministic scene; re-samples until every box is supported.

    Every annotated box must contain at least one LiDAR point or at least
    16 pixels of image support.
    """
    for attempt in range(MAX_SCENE_ATTEMPTS):
        rng = np.random.default_rng([cfg.seed, attempt])
        terrain = _make_terrain(rng, cfg.terrain_extent)
        objects = _place_objects(rng, cfg, terrain)
        geom = SceneGeometry(terrain, objects)
        cloud = sample_lidar(geom, cfg.lidar)
        cameras = _make_cameras(cfg)
        pixel_counts = np.zeros(len(objects), dtype=np.int64)
        rendered = []
        for cam in cameras:
            origins, dirs, _ = camera_rays(cam)
            _, _, _, hit_obj = cast_rays(geom, origins, dirs, cfg.lidar.max_range)
            pixel_counts += _pixel_support(hit_obj, len(objects))
            rgb, depth = render_camera(geom, cam, cfg.lighting, rng)
            rendered.append((cam, rgb, depth))
        boxes = [obj.to_box() for obj in objects]
        supported = True
        for k, box in enumerate(boxes):
            n_pts = int(np.sum(box.contains_points(cloud.xyz, margin=1e-6)))
            if n_pts < 1 and pixel_counts[k] < MIN_PIXEL_SUPPORT:
                supported = False
                break
        if supported:
            return Scene(cloud, rendered, boxes, scene_id=f"{cfg.seed:06d}")
    raise RuntimeError(
        f"could not generate a supported scene for seed {cfg.seed} "
        f"after {MAX_SCENE_ATTEMPTS} attempts"
    )


# ---------------------------------------------------------------------------
# on-disk format


def _write_ppm(path: Path, rgb: np.ndarray) -> None:
    h, w = rgb.shape[:2]
    data = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _read_ppm(path: Path) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise SceneIOError(f"missing image file: {path}") from None
    try:
        if not raw.startswith(b"P6"):
            raise ValueError("not a binary PPM")
        # header: magic, width, height, maxval, single whitespace, then pixels
        fields = []
        pos = 2
        while len(fields) < 3:
            while pos < len(raw) and raw[pos : pos + 1].isspace():
                pos += 1
            if raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
                continue
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            fields.append(int(raw[start:pos]))
        pos += 1  # single whitespace after maxval
        w, h, maxval = fields
        if maxval != 255:
            raise ValueError("maxval must be 255")
        pixels = raw[pos:]
        if len(pixels) != w * h * 3:
            raise ValueError("pixel payload has wrong size")
    except (ValueError, IndexError) as e:
        raise SceneIOError(f"corrupt image file: {path} ({e})") from None
    data = np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)
    return (data.astype(np.float32) / 255.0).astype(np.float32)


def _camera_to_json(cam: CameraModel) -> dict:
    extr = np.hstack([cam.rotation, cam.translation[:, None]])
    return {
        "intrinsics": [float(v) for v in cam.intrinsics.reshape(-1)],
        "extrinsic": [float(v) for v in extr.reshape(-1)],
        "height": cam.image_size[0],
        "width": cam.image_size[1],
    }


def _camera_from_json(d: dict) -> CameraModel:
    intr = np.array(d["intrinsics"], dtype=np.float64).reshape(3, 3)
    extr = np.array(d["extrinsic"], dtype=np.float64).reshape(3, 4)
    return CameraModel(intr, extr[:, :3], extr[:, 3], (int(d["height"]), int(d["width"])))


def _box_to_json(box: Box3D) -> dict:
    return {
        "center": [float(v) for v in box.center],
        "size": [float(v) for v in box.size],
        "yaw": float(box.yaw),
        "class_id": int(box.class_id),
        "score": float(box.score),
    }


def _box_from_json(d: dict) -> Box3D:
    return Box3D(
        np.array(d["center"]), np.array(d["size"]), d["yaw"], d["class_id"], d["score"]
    )


def write_scene(scene: Scene, directory) -> None:
    """Write a scene directory: meta.json, points.f32, image_k.ppm, depth_k.f32."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "boxes": [_box_to_json(b) for b in scene.boxes],
        "cameras": [_camera_to_json(cam) for cam, _, _ in scene.cameras],
        "lighting": _scene_lighting(scene),
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2))
    (directory / "points.f32").write_bytes(
        np.ascontiguousarray(scene.cloud.points, dtype="<f4").tobytes()
    )
    for k, (cam, rgb, depth) in enumerate(scene.cameras):
        _write_ppm(directory / f"image_{k}.ppm", rgb)
        (directory / f"depth_{k}.f32").write_bytes(
            np.ascontiguousarray(depth, dtype="<f4").tobytes()
        )


def _scene_lighting(scene: Scene) -> str:
    return getattr(scene, "_lighting", "bright")


def read_scene(directory) -> Scene:
    """Read a scene directory written by write_scene; scene_id is the dir name."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise SceneIOError(f"missing metadata file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise SceneIOError(f"corrupt metadata file: {meta_path} ({e})") from None
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise SceneIOError(
            f"unsupported format_version {version!r} in {meta_path} "
            f"(expected {FORMAT_VERSION})"
        )
    points_path = directory / "points.f32"
    if not points_path.exists():
        raise SceneIOError(f"missing point file: {points_path}")
    raw = points_path.read_bytes()
    if len(raw) % 16 != 0:
        raise SceneIOError(
            f"corrupt point file: {points_path} (length {len(raw)} not a multiple of 16)"
        )
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    cloud = PointCloud(pts.copy())
    cameras = []
    for k, cam_json in enumerate(meta["cameras"]):
        cam = _camera_from_json(cam_json)
        rgb = _read_ppm(directory / f"image_{k}.ppm")
        depth_path = directory / f"depth_{k}.f32"
        if not depth_path.exists():
            raise SceneIOError(f"missing depth file: {depth_path}")
        draw = depth_path.read_bytes()
        h, w = cam.image_size
        if len(draw) != h * w * 4:
            raise SceneIOError(
                f"corrupt depth file: {depth_path} (expected {h * w * 4} bytes, got {len(draw)})"
            )
        depth = np.frombuffer(draw, dtype="<f4").reshape(h, w).copy()
        cameras.append((cam, rgb, depth))
    boxes = [_box_from_json(b) for b in meta["boxes"]]
    scene = Scene(cloud, cameras, boxes, scene_id=directory.name)
    scene._lighting = meta.get("lighting", "bright")
    return scene
