"""Command line entry point: ``render``, ``metrics`` and ``synth``."""

from __future__ import annotations

import argparse
import sys

from .geometry import SYNTH_KINDS, save_lineset, synth_lineset
from .harness import ConfigError, run
from .imageio import read_image, write_ppm
from .metrics import abs_error_image, psnr, ssim
from .scenes import DEFAULT_LINES


def _render(args) -> int:
    return run(args.config)


def _metrics(args) -> int:
    ref = read_image(args.ref)
    test = read_image(args.test)
    print(f"psnr_db {psnr(test, ref):.6f}")
    print(f"ssim {ssim(test, ref)[0]:.6f}")
    if args.error_out:
        write_ppm(args.error_out, abs_error_image(test, ref))
    return 0


def _synth(args) -> int:
    n = args.lines if args.lines is not None else DEFAULT_LINES[args.kind]
    save_lineset(synth_lineset(args.kind, args.seed, n, args.verts), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oitlab", description="Transparent line rendering lab.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="run a configured experiment")
    r.add_argument("--config", required=True)
    r.set_defaults(func=_render)

    m = sub.add_parser("metrics", help="compare two images (PPM or PFM)")
    m.add_argument("--ref", required=True)
    m.add_argument("--test", required=True)
    m.add_argument("--error-out", help="write the inverted absolute-error image here")
    m.set_defaults(func=_metrics)

    s = sub.add_parser("synth", help="write a synthetic line set")
    s.add_argument("--kind", required=True, choices=SYNTH_KINDS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--lines", type=int)
    s.add_argument("--verts", type=int, default=64)
    s.set_defaults(func=_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
