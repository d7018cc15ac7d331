"""Configuration-driven runs along camera flight paths.

A run renders every frame of a flight path with each requested technique,
writes the images, and appends one CSV row per (frame, technique) with
timings, fragment counts, quality against a reference technique and two
technique-specific counters.
"""

from __future__ import annotations

import configparser
import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import Camera
from .exact import Framebuffer, _as_rgba, depth_peel, render_fragment_lists
from .geometry import load_lineset, generate_tube_mesh
from .imageio import write_pfm, write_ppm
from .metrics import psnr, ssim
from .mboit import mboit_render
from .mlab import mlab_render, mlabdb_render
from .rasterizer import depth_complexity, rasterize
from .raytracer import build_bvh, build_tube_bvh, raytrace_image
from .scenes import REGIMES, Scene, regime_tf, synthetic_scene
from .vrc import voxelize_lines, vrc_render

__all__ = [
    "TECHNIQUES",
    "CSV_HEADER",
    "ConfigError",
    "FlightPath",
    "RunConfig",
    "interpolate_path",
    "default_path",
    "parse_keyframes",
    "load_config",
    "parse_config",
    "run",
]

TECHNIQUES = ("dp", "ll-insertion", "ll-shell", "ll-heap", "mlab", "mlabdb", "mboit", "vrc", "rt",
              "rt-analytic")
CSV_HEADER = ["frame", "technique", "wall_ms", "fragments", "psnr_db", "ssim", "aux_counter_1",
              "aux_counter_2"]

# accepted keys per section with their parsers
_KEYS = {
    "run": {"techniques": str, "regime": str, "reference": str, "seed": int, "background": str},
    "scene": {"kind": str, "path": str, "seed": int, "lines": int, "verts": int, "radius": float},
    "viewport": {"width": int, "height": int, "fov": float},
    "path": {"keyframes": str, "frames_per_segment": int},
    "output": {"dir": str, "pfm": bool, "depth_maps": bool},
    "dp": {"max_passes": int},
    "ll": {"packed": bool},
    "mlab": {"k": int, "policy": str},
    "mlabdb": {"tau_alpha": float, "tau_o": float, "front_layers": int, "back_layers": int,
               "policy": str},
    "mboit": {"beta": float, "bias": float},
    "vrc": {"res": int, "quant": int, "skip_empty": bool},
    "rt": {"epsilon": float, "leaf_size": int, "max_iterations": int},
}


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


# --------------------------------------------------------------------------
# flight paths


@dataclass(frozen=True)
class FlightPath:
    """Camera keyframes (eye, look_at, up) visited with linear interpolation."""

    keyframes: tuple
    frames_per_segment: int = 4
    fov: float = float(np.radians(40.0))
    bounds: tuple | None = None

    def __post_init__(self):
        if len(self.keyframes) < 2:
            raise ValueError("a flight path needs at least 2 keyframes")
        if self.frames_per_segment < 1:
            raise ValueError("frames_per_segment must be at least 1")

    @property
    def n_frames(self) -> int:
        return (len(self.keyframes) - 1) * self.frames_per_segment + 1


def _clip_range(eye, forward, bounds):
    """Near/far planes enclosing the padded box ``bounds`` along ``forward``."""
    if bounds is None:
        return 0.01, 100.0
    lo, hi = (np.asarray(b, np.float64) for b in bounds)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
                        for z in (lo[2], hi[2])])
    z = (corners - eye) @ forward
    size = float(np.linalg.norm(hi - lo))
    far = max(float(z.max()), 0.0) + 0.02 * size
    near = max(float(z.min()) - 0.02 * size, 1e-3 * size)
    return near, max(far, 2.0 * near)


def interpolate_path(path: FlightPath, frame: int, width: int, height: int) -> Camera:
    """Camera at ``frame``; eye, look-at and up are interpolated linearly.

    The interpolated up vector is re-orthonormalized against the view
    direction.  Keyframes are reproduced exactly.
    """
    if not 0 <= frame < path.n_frames:
        raise IndexError(f"frame {frame} outside [0, {path.n_frames})")
    seg = min(frame // path.frames_per_segment, len(path.keyframes) - 2)
    u = (frame - seg * path.frames_per_segment) / path.frames_per_segment
    a = [np.asarray(v, np.float64) for v in path.keyframes[seg]]
    b = [np.asarray(v, np.float64) for v in path.keyframes[seg + 1]]
    eye, look, up = ((1.0 - u) * p + u * q for p, q in zip(a, b))
    fwd = look - eye
    fwd /= np.linalg.norm(fwd)
    up = up - np.dot(up, fwd) * fwd
    up /= np.linalg.norm(up)
    near, far = _clip_range(eye, fwd, path.bounds)
    return Camera(tuple(eye), tuple(look), tuple(up), path.fov, near, far, int(width), int(height))


def default_path(bounds, frames_per_segment: int = 2, fov: float = float(np.radians(40.0))) -> FlightPath:
    """Orbit around the box with two zoom-ins on off-center targets."""
    lo, hi = (np.asarray(b, np.float64) for b in bounds)
    c = 0.5 * (lo + hi)
    ext = hi - lo
    radius = 0.5 * float(np.linalg.norm(ext))
    dist = radius / np.sin(0.5 * fov)
    up = np.array([0.0, 0.0, 1.0])

    def view(angle, target, scale):
        d = np.array([np.sin(angle), -np.cos(angle), 0.45])
        d /= np.linalg.norm(d)
        return (tuple(target - d * dist * scale), tuple(target), tuple(up))

    a = c + np.array([0.2, -0.1, 0.15]) * ext
    b = c + np.array([-0.15, 0.2, -0.1]) * ext
    keys = (view(0.3, c, 1.0), view(0.6, a, 0.45), view(1.6, c, 1.0), view(2.2, b, 0.5),
            view(3.0, c, 1.0))
    return FlightPath(keys, frames_per_segment, fov, (tuple(lo), tuple(hi)))


def _vec(text: str, key: str):
    try:
        v = [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse vector {text!r}") from None
    if len(v) != 3:
        raise ConfigError(f"{key}: expected 3 comma-separated numbers, got {text!r}")
    return tuple(v)


def parse_keyframes(text: str) -> tuple:
    """Keyframes as ``eye;lookat;up`` triples separated by ``|`` or newlines.

    Each vector is three comma-separated numbers.
    """
    keys = []
    for chunk in text.replace("\n", "|").split("|"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(";")
        if len(parts) != 3:
            raise ConfigError(f"path.keyframes: expected 'eye;lookat;up', got {chunk!r}")
        keys.append(tuple(_vec(p, "path.keyframes") for p in parts))
    return tuple(keys)


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    techniques: list = field(default_factory=lambda: ["dp"])
    regime: str = "semi"
    reference: str = "dp"
    scene_kind: str | None = "helix-bundle"
    scene_path: str | None = None
    scene_seed: int = 0
    n_lines: int | None = None
    n_verts: int = 64
    radius: float = 0.02
    width: int = 160
    height: int = 90
    fov: float = 40.0
    keyframes: tuple | None = None
    frames_per_segment: int = 2
    output_dir: str = "out"
    background: tuple = (1.0, 1.0, 1.0)
    write_pfm: bool = True
    depth_maps: bool = False
    params: dict = field(default_factory=dict)

    def validate(self):
        if not self.techniques:
            raise ConfigError("run.techniques: at least one technique is required")
        for t in [*self.techniques, self.reference]:
            if t not in TECHNIQUES:
                raise ConfigError(f"run.techniques: unknown technique {t!r}; expected {TECHNIQUES}")
        if self.regime not in REGIMES:
            raise ConfigError(f"run.regime: unknown regime {self.regime!r}; expected {REGIMES}")
        if self.width < 16 or self.height < 16:
            raise ConfigError("viewport.width/height: viewport must be at least 16x16")
        if self.scene_path is None and self.scene_kind is None:
            raise ConfigError("scene.kind or scene.path must be given")
        if self.frames_per_segment < 1:
            raise ConfigError("path.frames_per_segment: must be at least 1")
        if self.keyframes is not None and len(self.keyframes) < 2:
            raise ConfigError("path.keyframes: at least 2 keyframes are required")
        if not self.radius > 0:
            raise ConfigError("scene.radius: must be positive")
        return self

    def param(self, section: str, key: str, default):
        return self.params.get(section, {}).get(key, default)


def _convert(section, key, raw):
    kind = _KEYS[section][key]
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines grouped by ``[section]`` headers.

    Keys before the first header, or dotted keys such as ``mlab.k``, are
    accepted as well.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), strict=False)
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    values = {}
    for section in cp.sections():
        for key, raw in cp.items(section, raw=True):
            sec, k = section, key
            if "." in key:
                sec, k = key.split(".", 1)
            if sec not in _KEYS or k not in _KEYS[sec]:
                raise ConfigError(f"{sec}.{k}: unknown configuration key")
            values.setdefault(sec, {})[k] = _convert(sec, k, raw)

    cfg = RunConfig()
    run_ = values.pop("run", {})
    if "techniques" in run_:
        cfg.techniques = [t.strip() for t in run_["techniques"].split(",") if t.strip()]
    cfg.regime = run_.get("regime", cfg.regime)
    cfg.reference = run_.get("reference", cfg.reference)
    if "background" in run_:
        cfg.background = _vec(run_["background"], "run.background")
    scene = values.pop("scene", {})
    cfg.scene_path = scene.get("path")
    cfg.scene_kind = scene.get("kind", None if cfg.scene_path else cfg.scene_kind)
    cfg.scene_seed = scene.get("seed", run_.get("seed", 0))
    cfg.n_lines = scene.get("lines")
    cfg.n_verts = scene.get("verts", cfg.n_verts)
    cfg.radius = scene.get("radius", cfg.radius)
    vp = values.pop("viewport", {})
    cfg.width = vp.get("width", cfg.width)
    cfg.height = vp.get("height", cfg.height)
    cfg.fov = vp.get("fov", cfg.fov)
    path = values.pop("path", {})
    if "keyframes" in path:
        cfg.keyframes = parse_keyframes(path["keyframes"])
    cfg.frames_per_segment = path.get("frames_per_segment", cfg.frames_per_segment)
    out = values.pop("output", {})
    cfg.output_dir = out.get("dir", cfg.output_dir)
    cfg.write_pfm = out.get("pfm", cfg.write_pfm)
    cfg.depth_maps = out.get("depth_maps", cfg.depth_maps)
    cfg.params = values
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# --------------------------------------------------------------------------
# rendering


def build_scene(cfg: RunConfig) -> Scene:
    if cfg.scene_path:
        ls = load_lineset(cfg.scene_path)
        return Scene(ls, cfg.radius, generate_tube_mesh(ls, cfg.radius), regime_tf(cfg.regime))
    return synthetic_scene(cfg.scene_kind, cfg.scene_seed, cfg.n_lines, cfg.n_verts, cfg.radius,
                           cfg.regime)


class _Renderer:
    """Per-run state: the scene and lazily built acceleration structures."""

    def __init__(self, cfg: RunConfig, scene: Scene):
        self.cfg = cfg
        self.scene = scene
        self.tf = scene.tf
        self.bg = _as_rgba(cfg.background)
        self._cache = {}

    def _cached(self, name, build):
        if name not in self._cache:
            self._cache[name] = build()
        return self._cache[name]

    def _background(self, camera):
        flat = np.tile(self.bg, (camera.width * camera.height, 1))
        flat[:, 3] = 0.0
        return Framebuffer.from_flat(flat, camera.width, camera.height, self.bg)

    def render(self, tech: str, camera: Camera):
        """Returns (framebuffer, fragments, aux1, aux2)."""
        cfg = self.cfg
        empty = self.scene.mesh.n_triangles == 0
        if tech == "dp":
            img = depth_peel(self.scene.mesh, camera, self.tf, self.bg,
                             max_passes=cfg.param("dp", "max_passes", None))
            return img, img.counters["fragments"], img.counters["passes"], 0
        if tech in ("rt", "rt-analytic", "vrc") and empty:
            return self._background(camera), 0, 0, 0
        if tech in ("rt", "rt-analytic"):
            leaf = cfg.param("rt", "leaf_size", 4)
            if tech == "rt":
                bvh = self._cached("bvh", lambda: build_bvh(self.scene.mesh, leaf))
            else:
                bvh = self._cached("tube-bvh", lambda: build_tube_bvh(self.scene.lineset,
                                                                       self.scene.radius, leaf))
            img = raytrace_image(bvh, camera, self.tf, self.bg, cfg.param("rt", "epsilon", None),
                                 cfg.param("rt", "max_iterations", None))
            c = img.counters
            return img, c["iterations"], c["iterations"], c["max_iterations"]
        if tech == "vrc":
            grid = self._cached("grid", lambda: voxelize_lines(
                self.scene.lineset, cfg.param("vrc", "res", 64), cfg.param("vrc", "quant", 16),
                self.scene.radius))
            img = vrc_render(grid, camera, self.tf, self.bg,
                             skip_empty=cfg.param("vrc", "skip_empty", True))
            return img, int(img.counters["hits"].sum()), img.counters["tube_tests"], grid.n_segments

        fb = rasterize(self.scene.mesh, camera, self.tf)
        if tech.startswith("ll-"):
            img = render_fragment_lists(fb, self.bg, tech[3:], cfg.param("ll", "packed", False))
            return img, fb.count, img.counters["comparisons"], int(fb.lengths().max(initial=0))
        if tech == "mlab":
            img = mlab_render(fb, self.bg, cfg.param("mlab", "k", 8),
                              cfg.param("mlab", "policy", "deepest"))
            return img, fb.count, img.counters["merges"], 0
        if tech == "mlabdb":
            img = mlabdb_render(fb, self.bg, cfg.param("mlabdb", "tau_alpha", 0.2),
                                cfg.param("mlabdb", "tau_o", 0.98),
                                cfg.param("mlabdb", "front_layers", 2),
                                cfg.param("mlabdb", "back_layers", 4),
                                policy=cfg.param("mlabdb", "policy", "deepest"))
            return img, fb.count, img.counters["discarded"], 0
        if tech == "mboit":
            img = mboit_render(fb, self.bg, cfg.param("mboit", "beta", 0.1),
                               cfg.param("mboit", "bias", 6e-5), camera.near, camera.far)
            return img, fb.count, img.counters["fallbacks"], img.counters["clamped"]
        raise ConfigError(f"run.techniques: unknown technique {tech!r}")


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def run(config) -> int:
    """Execute a run; ``config`` is a RunConfig or a path to a config file.

    Writes ``frame_XXXX_<technique>.ppm`` (and ``.pfm``), optional
    ``frame_XXXX_depth.pfm`` depth-complexity maps and ``metrics.csv`` into
    the output directory.  Returns 0 on success.
    """
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    cfg.validate()
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output.dir: cannot create {out}: {exc}") from None
    scene = build_scene(cfg)
    fov = float(np.radians(cfg.fov))
    if cfg.keyframes is None:
        path = default_path(scene.bounds(), cfg.frames_per_segment, fov)
    else:
        path = FlightPath(cfg.keyframes, cfg.frames_per_segment, fov, scene.bounds())
    renderer = _Renderer(cfg, scene)

    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for frame in range(path.n_frames):
            camera = interpolate_path(path, frame, cfg.width, cfg.height)
            results = {}
            for tech in dict.fromkeys([cfg.reference, *cfg.techniques]):
                t0 = time.perf_counter()
                results[tech] = (*renderer.render(tech, camera), 1e3 * (time.perf_counter() - t0))
            ref = results[cfg.reference][0].rgb
            for tech in cfg.techniques:
                img, frags, aux1, aux2, ms = results[tech]
                stem = out / f"frame_{frame:04d}_{tech}"
                write_ppm(stem.with_suffix(".ppm"), img.rgb)
                if cfg.write_pfm:
                    write_pfm(stem.with_suffix(".pfm"), img.rgb)
                writer.writerow([frame, tech, f"{ms:.3f}", int(frags), _fmt(psnr(img.rgb, ref)),
                                 _fmt(ssim(img.rgb, ref)[0]), int(aux1), int(aux2)])
            if cfg.depth_maps:
                counts, _ = depth_complexity(rasterize(scene.mesh, camera, renderer.tf))
                write_pfm(out / f"frame_{frame:04d}_depth.pfm", counts.astype(np.float64))
            fh.flush()
    return 0
