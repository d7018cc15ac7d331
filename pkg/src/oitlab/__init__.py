"""Order-independent transparency techniques for tube-rendered line sets.

The package renders polyline data sets as tubes with exact and
approximate transparency methods and measures their quality:

* ``rasterizer`` produces per-pixel fragment streams,
* ``exact`` sorts fragment lists or peels depth layers,
* ``mlab`` and ``mboit`` are the single- and two-pass approximations,
* ``raytracer`` and ``vrc`` are image-order renderers,
* ``metrics`` and ``harness`` drive experiments.
"""

from .camera import Camera, Ray, fit_camera
from .exact import Framebuffer, SortKey, composite_front_to_back, depth_peel, render_fragment_lists
from .geometry import (GeometryError, LineSet, TransferFunction, TriMesh, generate_tube_mesh,
                       load_lineset, save_lineset, synth_lineset)
from .harness import FlightPath, RunConfig, interpolate_path, load_config, parse_config, run
from .mboit import mboit_render
from .metrics import abs_error_image, psnr, ssim
from .mlab import mlab_render, mlabdb_render
from .rasterizer import Fragment, FragmentBuffer, rasterize
from .raytracer import build_bvh, closest_hit, intersect_ray_tube, raytrace_image, trace_blend
from .scenes import adversarial_scene, regime_tf, synthetic_scene
from .vrc import VoxelGrid, dda_traverse, voxelize_lines, vrc_render

__version__ = "0.1.0"
