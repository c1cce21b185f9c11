"""Quantitative metrics and run reports."""

import csv
import json
from dataclasses import asdict

import numpy as np


def _toward_camera(n):
    """Unit-normalize and flip normals so the third component is non-positive."""
    n = np.asarray(n, dtype=np.float64)
    n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    sign = np.where(n[:, 2] > 0, -1.0, 1.0)
    return n * sign[:, None]


def mean_angular_error(n_est, n_gt, domain=None):
    """Mean angular error in degrees between two unit normal fields.

    Both fields are sign-normalized to the toward-camera convention before
    comparison.
    """
    a = _toward_camera(n_est.n if hasattr(n_est, "n") else n_est)
    b = _toward_camera(n_gt.n if hasattr(n_gt, "n") else n_gt)
    if a.shape != b.shape:
        raise ValueError("normal fields do not share a domain")
    if domain is not None and a.shape[0] != domain.num_pixels:
        raise ValueError("normal fields do not match the given domain")
    dots = np.clip(np.sum(a * b, axis=1), -1.0, 1.0)
    return float(np.degrees(np.arccos(dots)).mean())


def report(state, mae_degrees=None, timing_seconds=None, config=None):
    """Structured run summary; omits the MAE field when no ground truth is given."""
    history = list(state.energy_history)
    summary = {
        "final_energy": history[-1][1] if history else None,
        "iterations": history[-1][0] if history else 0,
        "energy_history": [[int(k), float(e)] for k, e in history],
    }
    if mae_degrees is not None:
        summary["mae_degrees"] = float(mae_degrees)
    if timing_seconds is not None:
        summary["timing_seconds"] = float(timing_seconds)
    if config is not None:
        summary["config"] = asdict(config)
    return summary


def write_report(summary, path):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)


def read_report(path):
    with open(path) as fh:
        return json.load(fh)


def write_energy_csv(energy_history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "energy"])
        for k, e in energy_history:
            writer.writerow([int(k), float(e)])
