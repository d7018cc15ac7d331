"""Render one scene with every technique and compare against depth peeling.

Writes ``<technique>.ppm`` and ``<technique>_error.ppm`` into the output
directory (default ``demo_out``) and prints PSNR / SSIM per technique.

    python demos/compare_techniques.py [out_dir]
"""

import sys
import time
from pathlib import Path

from oitlab.camera import fit_camera
from oitlab.exact import depth_peel, render_fragment_lists
from oitlab.imageio import write_ppm
from oitlab.metrics import abs_error_image, psnr, ssim
from oitlab.mboit import mboit_render
from oitlab.mlab import mlab_render, mlabdb_render
from oitlab.rasterizer import depth_complexity, rasterize
from oitlab.raytracer import raytrace_image
from oitlab.scenes import synthetic_scene
from oitlab.vrc import voxelize_lines, vrc_render

BG = (1.0, 1.0, 1.0)


def main(out_dir="demo_out"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = synthetic_scene("vortex-streamlines", seed=0, regime="semi")
    cam = fit_camera(*scene.bounds(), 320, 180)
    fb = rasterize(scene.mesh, cam, scene.tf)
    counts, total = depth_complexity(fb)
    print(f"{total} fragments, max depth complexity {counts.max()}")

    renders = {
        "dp": lambda: depth_peel(scene.mesh, cam, scene.tf, BG),
        "ll-heap": lambda: render_fragment_lists(fb, BG, "heap"),
        "mlab": lambda: mlab_render(fb, BG, k=8),
        "mlabdb": lambda: mlabdb_render(fb, BG),
        "mboit": lambda: mboit_render(fb, BG, near=cam.near, far=cam.far),
        "vrc": lambda: vrc_render(voxelize_lines(scene.lineset, 64, 16, scene.radius), cam,
                                  scene.tf, BG),
        "rt": lambda: raytrace_image(scene.mesh, cam, scene.tf, BG),
    }
    ref = None
    for name, render in renders.items():
        t0 = time.perf_counter()
        img = render().rgb
        ms = 1e3 * (time.perf_counter() - t0)
        ref = img if ref is None else ref
        write_ppm(out / f"{name}.ppm", img)
        write_ppm(out / f"{name}_error.ppm", abs_error_image(img, ref))
        print(f"{name:8s} {ms:9.1f} ms  PSNR {psnr(img, ref):6.2f} dB  SSIM {ssim(img, ref)[0]:.4f}")


if __name__ == "__main__":
    main(*sys.argv[1:])
