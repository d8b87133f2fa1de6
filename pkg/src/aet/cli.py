"""Command line entry point ``aet``.

    aet run CONFIG
    aet mesh --radius R --h H -o FILE
    aet phantom [--spec CONFIG] [--h H] -o FILE.vtk [--pgm FILE.pgm]
    aet compare CONFIG_A CONFIG_B

``AET_THREADS`` caps BLAS threads and the number of noise levels run in
parallel.
"""
from __future__ import annotations

import os

_threads = os.environ.get("AET_THREADS", "").strip()
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402

import numpy as np  # noqa: E402

from .experiment import (  # noqa: E402
    EXIT_CONFIG,
    EXIT_OK,
    ConfigError,
    compare,
    load_config,
    parse_config,
    run_experiment,
)
from .io import write_pgm, write_vtk  # noqa: E402
from .mesh import generate_disk_mesh, save_mesh  # noqa: E402
from .phantom import geometric_phantom, rasterize  # noqa: E402

log = logging.getLogger("aet")


def _workers():
    try:
        return max(1, int(_threads)) if _threads else 1
    except ValueError:
        log.warning("ignoring non-integer AET_THREADS=%r", _threads)
        return 1


def _cmd_run(args):
    return run_experiment(args.config, workers=_workers())


def _cmd_mesh(args):
    try:
        mesh = generate_disk_mesh(args.radius, args.h)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if args.output.endswith(".vtk"):
        write_vtk(args.output, mesh, title=f"disk mesh R={args.radius:g} h={args.h:g}")
    else:
        save_mesh(mesh, args.output)
    print(f"{mesh.n_nodes} nodes, {mesh.n_triangles} triangles -> {args.output}")
    return EXIT_OK


def _cmd_phantom(args):
    try:
        cfg = load_config(args.spec) if args.spec else parse_config("")
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if cfg.phantom_kind != "geometry":
        log.error("aet phantom renders geometry phantoms only")
        return EXIT_CONFIG
    try:
        mesh = generate_disk_mesh(cfg.radius, args.h or cfg.coarse_h)
        sigma = geometric_phantom(mesh, cfg.geometry)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    write_vtk(args.output, mesh, point_data={"sigma_true": sigma})
    if args.pgm:
        img = rasterize(mesh, sigma, (args.size, args.size), fill=0.0)
        write_pgm(args.pgm, np.rint(255 * img / max(img.max(), 1e-300)), maxval=255)
    print(f"phantom on {mesh.n_nodes} nodes, values {sorted(set(np.round(sigma, 12)))} -> {args.output}")
    return EXIT_OK


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _cmd_compare(args):
    code, rows = compare(args.config_a, args.config_b, workers=_workers())
    if not rows:
        return code
    keys = ("n_delta", "converged", "e_L1", "e_TV", "PSNR")
    print("delta_e  " + "  ".join(f"{k}(A) {k}(B)" for k in keys))
    for level, a, b in rows:
        cells = [f"{_fmt(a[k])} {_fmt(b[k]) if b else '-'}" for k in keys]
        print(f"{level:<8g} " + "  ".join(cells))
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="aet", description="Acousto-electric tomography reconstructions.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every sweep")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.set_defaults(func=_cmd_run)

    m = sub.add_parser("mesh", help="generate a disk mesh")
    m.add_argument("--radius", type=float, default=0.5)
    m.add_argument("--h", type=float, required=True, help="target edge length")
    m.add_argument("-o", "--output", required=True, help="aetmesh file, or .vtk")
    m.set_defaults(func=_cmd_mesh)

    ph = sub.add_parser("phantom", help="render the geometry phantom of a config")
    ph.add_argument("--spec", help="experiment config holding the phantom (defaults if omitted)")
    ph.add_argument("--h", type=float, help="mesh size (default: the config's coarse_h)")
    ph.add_argument("-o", "--output", required=True, help="VTK file")
    ph.add_argument("--pgm", help="also write a raster as ASCII PGM")
    ph.add_argument("--size", type=int, default=128, help="raster size in pixels")
    ph.set_defaults(func=_cmd_phantom)

    c = sub.add_parser("compare", help="run two configs and tabulate them")
    c.add_argument("config_a")
    c.add_argument("config_b")
    c.set_defaults(func=_cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        logging.getLogger("aet.experiment").setLevel(logging.INFO)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
