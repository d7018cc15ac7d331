"""Voxel ray casting error against analytic tubes for several grids.

Finer grids shorten the chords between face crossings and finer face
subdivisions move the crossings less, so PSNR grows along both axes.

    python demos/vrc_convergence.py
"""

from oitlab.camera import fit_camera
from oitlab.geometry import TransferFunction
from oitlab.metrics import psnr
from oitlab.raytracer import build_tube_bvh, raytrace_image
from oitlab.scenes import synthetic_scene
from oitlab.vrc import voxelize_lines, vrc_render

BG = (1.0, 1.0, 1.0)
QUANT = (4, 8, 16, 32)


def main():
    scene = synthetic_scene("helix-bundle", 1, n_lines=200, radius=0.01)
    tf = TransferFunction([0, 1], [[0.2, 0.4, 1.0, 0.2], [1.0, 0.3, 0.1, 0.6]])
    cam = fit_camera(*scene.bounds(), 160, 90)
    ref = raytrace_image(build_tube_bvh(scene.lineset, scene.radius), cam, tf, BG).rgb
    print("res  " + "".join(f"   Q={q:<4d}" for q in QUANT))
    for res in (16, 32, 64):
        row = []
        for q in QUANT:
            grid = voxelize_lines(scene.lineset, res, q, scene.radius)
            row.append(psnr(vrc_render(grid, cam, tf, BG).rgb, ref))
        print(f"{res:3d}  " + "".join(f"{v:9.2f}" for v in row))


if __name__ == "__main__":
    main()
