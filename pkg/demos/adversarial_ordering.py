"""Why blending order matters for a fixed-size blending array.

Interior lines are submitted first and an opaque wall in front of them
last, so plain MLAB has already merged the interior layers before the
wall arrives and lets them shine through.  Depth buckets derived from a
first opacity pass discard everything behind the wall.

    python demos/adversarial_ordering.py
"""

from oitlab.exact import depth_peel
from oitlab.metrics import psnr
from oitlab.mboit import mboit_render
from oitlab.mlab import mlab_render, mlabdb_render
from oitlab.rasterizer import depth_complexity, rasterize
from oitlab.scenes import adversarial_scene

BG = (1.0, 1.0, 1.0)


def main():
    s = adversarial_scene()
    fb = rasterize(s.mesh, s.camera, s.tf)
    counts, _ = depth_complexity(fb)
    ref = depth_peel(s.mesh, s.camera, s.tf, BG).rgb
    print(f"max depth complexity {counts.max()}")
    for k in (4, 8, 16):
        img = mlab_render(fb, BG, k=k)
        print(f"mlab k={k:<3d} PSNR {psnr(img.rgb, ref):6.2f} dB  merges {img.counters['merges']}")
    db = mlabdb_render(fb, BG)
    print(f"mlabdb     PSNR {psnr(db.rgb, ref):6.2f} dB  discarded {db.counters['discarded']}")
    mb = mboit_render(fb, BG, near=s.camera.near, far=s.camera.far)
    print(f"mboit      PSNR {psnr(mb.rgb, ref):6.2f} dB")


if __name__ == "__main__":
    main()
