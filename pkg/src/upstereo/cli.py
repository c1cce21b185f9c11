"""Command-line pipeline: render, init, reconstruct, evaluate, serve."""

import argparse
import glob
import json
import logging
import os
import sys
import time

import numpy as np

from upstereo import evaluation, render, scene, shapes, solver
from upstereo.balloon import init_depth_balloon, init_depth_hemisphere
from upstereo.geometry import build_gradient_operator, normalize_field, unnormalized_normal
from upstereo.pfm import read_pfm, write_pfm
from upstereo.scene import (
    AlbedoMaps,
    CameraIntrinsics,
    DepthMap,
    LightingSet,
    PixelDomain,
    load_scene,
    save_normals,
    save_outputs,
)

logger = logging.getLogger(__name__)


def _default_intrinsics(size):
    return CameraIntrinsics(f_u=4.0 * size, f_v=4.0 * size, u_0=(size - 1) / 2.0, v_0=(size - 1) / 2.0)


def cmd_render(args):
    rng = np.random.default_rng(args.seed)
    domain = shapes.make_domain(args.size, "disk")
    intrinsics = _default_intrinsics(args.size)
    depth = shapes.SHAPES[args.shape](domain)
    albedo = AlbedoMaps(values=shapes.albedo_pattern(args.albedo, domain, channels=args.channels))
    normals = render.perspective_normals(depth, intrinsics, domain)
    h = render.harmonic_images(normals)
    if args.lighting == "sh":
        vectors = shapes.random_lighting(args.images, args.channels, rng)
        vectors = shapes.ensure_positive_shading(vectors, h)
        lighting = LightingSet(values=vectors)
        stack, normals = render.make_synthetic_dataset(depth, albedo, lighting, intrinsics, domain)
    else:
        envs = [render.random_environment(rng, channels=args.channels) for _ in range(args.images)]
        stack, normals = render.make_synthetic_dataset(depth, albedo, envs, intrinsics, domain)
        lighting = None
    os.makedirs(args.out, exist_ok=True)
    for i in range(stack.num_images):
        grid = domain.to_grid(stack.values[i].T)  # (H, W, C)
        scene.write_image(os.path.join(args.out, f"image_{i:03d}.png"), grid.squeeze(-1) if args.channels == 1 else grid)
    scene.write_mask(os.path.join(args.out, "mask.png"), domain.mask)
    intrinsics.to_json(os.path.join(args.out, "intrinsics.json"))

    write_pfm(os.path.join(args.out, "gt_depth.pfm"), domain.to_grid(depth.values.astype(np.float32)))
    save_normals(os.path.join(args.out, "gt_normals.pfm"), normals.n, domain)
    if lighting is not None:
        lighting.to_json(os.path.join(args.out, "gt_lighting.json"))
    print(f"wrote {stack.num_images} images to {args.out}")
    return 0


def _load_domain_intrinsics(args):
    mask = scene.read_mask(args.mask)
    domain = PixelDomain(mask)
    intrinsics = CameraIntrinsics.from_json(args.intrinsics)
    return domain, intrinsics


def cmd_init(args):
    domain, intrinsics = _load_domain_intrinsics(args)
    if args.init == "balloon":
        depth, _ = init_depth_balloon(
            domain, intrinsics, args.kappa, max_iters=args.balloon_iters
        )
    else:
        depth = init_depth_hemisphere(domain, intrinsics, radius_scale=args.radius_scale)

    write_pfm(args.out, domain.to_grid(depth.values.astype(np.float32)))
    print(f"wrote init depth ({args.init}) to {args.out}, mean={depth.values.mean():.6g}")
    return 0


def _gather_images(path):
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.png")))
        files = [f for f in files if os.path.basename(f) != "mask.png"]
        if not files:
            raise FileNotFoundError(f"no PNG images found in {path}")
        return files
    return sorted(glob.glob(path))


def cmd_reconstruct(args):
    t0 = time.perf_counter()
    images, domain, intrinsics = load_scene(_gather_images(args.images), args.mask, args.intrinsics)
    if args.init == "file" and args.init_depth is None:
        raise ValueError("--init file requires --init-depth")
    if args.init_depth is not None:
        grid = read_pfm(args.init_depth)
        init_depth = DepthMap(projection="perspective", values=domain.from_grid(grid.astype(np.float64)))
    elif args.init == "hemisphere":
        init_depth = init_depth_hemisphere(domain, intrinsics)
    else:
        init_depth, _ = init_depth_balloon(
            domain, intrinsics, args.kappa, max_iters=args.balloon_iters
        )
    config = solver.SolverConfig(
        cauchy_scale=args.cauchy_scale,
        huber_threshold=args.huber_threshold,
        tv_weight=args.mu,
        warmup_iters=args.warmup_iters,
        max_outer_iters=args.max_iters,
        outer_tol=args.outer_tol,
        cg_tol=args.cg_tol,
    )
    state = solver.solve(images, domain, intrinsics, init_depth, config)
    os.makedirs(args.out, exist_ok=True)
    save_outputs(
        DepthMap(projection="perspective", values=state.z),
        AlbedoMaps(values=np.clip(state.rho, 0.0, None)),
        LightingSet(values=state.lighting),
        domain,
        intrinsics,
        args.out,
    )
    normals = normalize_field(
        unnormalized_normal(state.z, intrinsics, build_gradient_operator(domain))
    )
    save_normals(os.path.join(args.out, "normals.pfm"), normals.n, domain)
    mae = None
    if args.gt_normals is not None:
        gt = scene.load_normals(args.gt_normals, domain)
        mae = evaluation.mean_angular_error(normals.n, gt, domain)
        print(f"MAE: {mae:.2f} degrees")
    summary = evaluation.report(state, mae_degrees=mae, timing_seconds=time.perf_counter() - t0, config=config)
    evaluation.write_report(summary, os.path.join(args.out, "report.json"))
    evaluation.write_energy_csv(state.energy_history, os.path.join(args.out, "energy.csv"))
    print(f"final energy {state.energy_history[-1][1]:.6g} after {state.energy_history[-1][0]} iterations")
    return 0


def cmd_evaluate(args):
    domain = PixelDomain(scene.read_mask(args.mask))
    intrinsics = CameraIntrinsics.from_json(args.intrinsics)

    def load_field(path):
        grid = read_pfm(path)
        if grid.ndim == 3:
            return domain.from_grid(grid.astype(np.float64))
        depth = DepthMap(projection="perspective", values=domain.from_grid(grid.astype(np.float64)))
        return render.perspective_normals(depth, intrinsics, domain).n

    est = load_field(args.est)
    gt = load_field(args.gt)
    mae = evaluation.mean_angular_error(est, gt, domain)
    print(f"MAE: {mae:.2f} degrees")
    if args.report is not None:
        evaluation.write_report({"mae_degrees": mae}, args.report)
    return 0


def cmd_serve(args):
    from upstereo.server import run_server

    domain, intrinsics = _load_domain_intrinsics(args)
    assets = args.assets if args.assets and os.path.isdir(args.assets) else None
    run_server(
        domain,
        intrinsics,
        args.port,
        accept_path=args.accept_file,
        assets_dir=assets,
        balloon_iters=args.balloon_iters,
    )
    return 0


def _positive_float(text):
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="upstereo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-iteration diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--shape", choices=sorted(shapes.SHAPES), default="gaussian-bump")
    p.add_argument("--albedo", choices=shapes.ALBEDO_PATTERNS, default="constant")
    p.add_argument("--images", type=int, default=20, help="number of lightings (default 20)")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--channels", type=int, default=1, choices=(1, 3))
    p.add_argument("--lighting", choices=("sh", "env"), default="sh")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("init", help="compute an initial perspective depth")
    p.add_argument("--mask", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--kappa", type=_positive_float, default=2.0, help="volume per pixel")
    p.add_argument("--init", choices=("balloon", "hemisphere"), default="balloon")
    p.add_argument("--radius-scale", type=_positive_float, default=1.0)
    p.add_argument("--balloon-iters", type=int, default=2000)
    p.add_argument("--out", default="init_depth.pfm")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("reconstruct", help="run the full reconstruction")
    p.add_argument("--images", required=True, help="directory or glob of input PNGs")
    p.add_argument("--mask", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kappa", type=_positive_float, default=2.0)
    p.add_argument("--init", choices=("balloon", "hemisphere", "file"), default="balloon")
    p.add_argument("--init-depth", default=None, help="PFM depth for --init file")
    p.add_argument("--balloon-iters", type=int, default=2000)
    p.add_argument("--mu", type=float, default=2e-6, help="albedo smoothness weight")
    p.add_argument("--lambda", dest="cauchy_scale", type=_positive_float, default=0.15)
    p.add_argument("--gamma", dest="huber_threshold", type=_positive_float, default=0.1)
    p.add_argument("--warmup-iters", type=int, default=8)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--outer-tol", type=float, default=1e-6)
    p.add_argument("--cg-tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gt-normals", default=None, help="optional PFM normals for MAE")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="mean angular error against ground truth")
    p.add_argument("--est", required=True, help="estimated normals (PF) or depth (Pf) PFM")
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="launch the balloon tuning service")
    p.add_argument("--mask", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--accept-file", default="kappa.json")
    p.add_argument("--assets", default="frontend", help="directory with the tuner UI")
    p.add_argument("--balloon-iters", type=int, default=400)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, IOError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
