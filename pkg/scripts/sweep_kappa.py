#!/usr/bin/env python3
"""Sweep the balloon volume ratio and plot final normal error against it.

The optimal ratio is scene-dependent, which is why the tuner exists; this
script reproduces that behaviour on a synthetic scene.
"""

import argparse
import json
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from upstereo.balloon import init_depth_balloon
from upstereo.evaluation import mean_angular_error
from upstereo.geometry import harmonic_images
from upstereo.render import make_synthetic_dataset, perspective_normals
from upstereo.scene import AlbedoMaps, CameraIntrinsics, DepthMap, LightingSet, PixelDomain
from upstereo.shapes import SHAPES, albedo_pattern, disk_mask, ensure_positive_shading, random_lighting
from upstereo.solver import SolverConfig, solve


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/kappa_sweep")
    parser.add_argument("--shape", choices=sorted(SHAPES), default="gaussian-bump")
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--kappa-min", type=float, default=1.0)
    parser.add_argument("--kappa-max", type=float, default=40.0)
    parser.add_argument("--steps", type=int, default=8)
    parser.add_argument("--max-iters", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    domain = PixelDomain(disk_mask(args.size, radius=0.42 * args.size))
    intrinsics = CameraIntrinsics(
        f_u=2.0 * args.size, f_v=2.0 * args.size,
        u_0=(args.size - 1) / 2, v_0=(args.size - 1) / 2,
    )
    depth = SHAPES[args.shape](domain, base=1.0, amplitude=0.15)
    albedo = AlbedoMaps(values=albedo_pattern("constant", domain, channels=1))
    gt_field = perspective_normals(depth, intrinsics, domain)
    vectors = ensure_positive_shading(random_lighting(20, 1, rng), harmonic_images(gt_field))
    images, gt_normals = make_synthetic_dataset(
        depth, albedo, LightingSet(values=vectors), intrinsics, domain
    )

    kappas = np.geomspace(args.kappa_min, args.kappa_max, args.steps)
    rows = []
    for kappa in kappas:
        init, _ = init_depth_balloon(domain, intrinsics, float(kappa), max_iters=20000)
        init_mae = mean_angular_error(perspective_normals(init, intrinsics, domain).n, gt_normals.n)
        state = solve(images, domain, intrinsics, init, SolverConfig(max_outer_iters=args.max_iters))
        final_mae = mean_angular_error(
            perspective_normals(DepthMap(projection="perspective", values=state.z), intrinsics, domain).n,
            gt_normals.n,
        )
        rows.append({"kappa": float(kappa), "init_mae": init_mae, "final_mae": final_mae})
        print(f"kappa={kappa:7.2f}: init {init_mae:6.2f} -> final {final_mae:6.2f} deg")

    with open(os.path.join(args.out, "sweep.json"), "w") as fh:
        json.dump(rows, fh, indent=2)

    plt.figure(figsize=(5, 3.2))
    plt.semilogx([r["kappa"] for r in rows], [r["final_mae"] for r in rows], "o-", label="final")
    plt.semilogx([r["kappa"] for r in rows], [r["init_mae"] for r in rows], "s--", label="init")
    plt.xlabel("volume ratio")
    plt.ylabel("mean angular error (deg)")
    plt.legend()
    plt.grid(alpha=0.3)
    plt.tight_layout()
    plt.savefig(os.path.join(args.out, "sweep.png"), dpi=160)
    print(f"sweep written to {args.out}")


if __name__ == "__main__":
    main()
