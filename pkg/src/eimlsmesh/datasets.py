"""Deterministic synthetic oriented clouds used by tests, benchmarks and the CLI."""

from __future__ import annotations

import numpy as np

from .pointcloud import OrientedPointCloud


def circle_cloud(n=512, radius=0.5, center=(0.0, 0.0), radial_noise=0.0,
                 gap_fraction=0.0, seed=0) -> OrientedPointCloud:
    """Points on a circle with exact outward normals.

    ``radial_noise`` is the relative standard deviation of the radius;
    ``gap_fraction`` removes that fraction of the arc (centred on angle 0).
    """
    rng = np.random.default_rng(seed)
    theta = 2.0 * np.pi * np.arange(n) / n
    if gap_fraction > 0:
        half = np.pi * gap_fraction
        wrapped = np.angle(np.exp(1j * theta))
        theta = theta[np.abs(wrapped) > half]
    r = radius * (1.0 + radial_noise * rng.standard_normal(theta.shape[0]))
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    points = np.asarray(center, dtype=float) + r[:, None] * dirs
    return OrientedPointCloud(points, normals=dirs)


def sphere_cloud(n=2000, radius=0.5, center=(0.0, 0.0, 0.0)) -> OrientedPointCloud:
    """Fibonacci-lattice sampling of a sphere with outward normals."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    rho = np.sqrt(1.0 - z * z)
    dirs = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    return OrientedPointCloud(np.asarray(center, dtype=float) + radius * dirs, normals=dirs)


def _bunny_radius(theta):
    # body ellipse plus head, two ears and a tail as angular bumps
    a, b = 0.075, 0.055
    r = a * b / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)
    bumps = [
        (0.028, 0.75, 0.35),   # head
        (0.085, 1.28, 0.075),  # front ear
        (0.070, 1.62, 0.070),  # back ear
        (0.012, 3.05, 0.18),   # tail
        (-0.010, 4.70, 0.45),  # belly dip
    ]
    for amp, centre, width in bumps:
        d = np.angle(np.exp(1j * (theta - centre)))
        r = r + amp * np.exp(-(d / width) ** 2)
    return r


def bunny_slice(n=557, noise=1.5e-4, normal_noise=0.05, seed=7) -> OrientedPointCloud:
    """A 2D bunny-like silhouette about 0.2 m tall, sampled with ``n`` oriented points.

    Stand-in for a planar slice of a scanned bunny: a closed, non-convex
    outline with thin protrusions (ears), uniform arc-length sampling, small
    positional noise and slightly perturbed normals.
    """
    rng = np.random.default_rng(seed)
    theta = np.linspace(0.0, 2.0 * np.pi, 40001)[:-1]
    r = _bunny_radius(theta)
    curve = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    seg = np.linalg.norm(np.diff(np.vstack([curve, curve[:1]]), axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(n) * s[-1] / n
    t = np.interp(targets, s, np.append(theta, 2.0 * np.pi))

    dt = 1e-6
    r0 = _bunny_radius(t)
    dr = (_bunny_radius(t + dt) - _bunny_radius(t - dt)) / (2 * dt)
    points = np.column_stack([r0 * np.cos(t), r0 * np.sin(t)])
    tangent = np.column_stack([dr * np.cos(t) - r0 * np.sin(t), dr * np.sin(t) + r0 * np.cos(t)])
    normals = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    points = points + noise * rng.standard_normal(points.shape)
    normals = normals + normal_noise * rng.standard_normal(normals.shape)
    return OrientedPointCloud(points, normals=normals)
