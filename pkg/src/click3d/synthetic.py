"""Deterministic synthetic scenes for regression and latency testing.

Each scene holds a handful of compact, well-separated point clusters
(one instance each) so the geodesic reference segmenter can isolate
every object within a couple of clicks.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .scene import InstanceLabeling, PointCloud, Scene, save_scene


def make_cluster_scene(scene_id: str, seed: int, n_objects: int = 3,
                       points_per_object: int = 150,
                       cluster_radius: float = 0.2,
                       spacing: float = 2.0,
                       with_color: bool = True) -> Scene:
    """Scene of n_objects separable blobs; instance ids 1..n_objects."""
    rng = np.random.default_rng(seed)
    positions = []
    labels = []
    for i in range(n_objects):
        center = np.array([i * spacing, 0.0, 0.0]) + rng.uniform(-0.2, 0.2, 3)
        pts = center + rng.uniform(-cluster_radius, cluster_radius,
                                   (points_per_object, 3))
        positions.append(pts)
        labels.append(np.full(points_per_object, i + 1, dtype=np.uint32))
    positions = np.vstack(positions)
    labels = np.concatenate(labels)
    colors = None
    if with_color:
        palette = rng.uniform(0.1, 0.9, (n_objects, 3))
        colors = palette[labels - 1] + rng.uniform(-0.05, 0.05, positions.shape)
        colors = np.clip(colors, 0.0, 1.0).astype(np.float32)
    return Scene(cloud=PointCloud(positions, colors),
                 labels=InstanceLabeling(labels), scene_id=scene_id)


def two_cluster_scene(seed: int = 7, n: int = 100) -> Scene:
    """Two 100-point clusters 2 m apart; the segmenter fixture."""
    return make_cluster_scene("two-cluster", seed=seed, n_objects=2,
                              points_per_object=n, cluster_radius=0.15,
                              spacing=2.0, with_color=False)


def rod_scene(n: int = 200, length: float = 1.0) -> Scene:
    """A 1 m connected rod of evenly spaced points, single instance."""
    x = np.linspace(0.0, length, n)
    positions = np.column_stack([x, np.zeros(n), np.zeros(n)])
    return Scene(cloud=PointCloud(positions),
                 labels=InstanceLabeling(np.ones(n, dtype=np.uint32)),
                 scene_id="rod")


def random_scene(seed: int, n: int, with_color: bool = False,
                 extent: float = 2.0) -> Scene:
    """Uniform random cloud, no labels; for oracle-style property tests."""
    rng = np.random.default_rng(seed)
    positions = rng.uniform(0.0, extent, (n, 3))
    colors = rng.uniform(0.0, 1.0, (n, 3)).astype(np.float32) if with_color else None
    return Scene(cloud=PointCloud(positions, colors), scene_id=f"random-{seed}")


def generate_suite(out_dir: str | Path, n_scenes: int = 10, seed: int = 1234) -> list[Path]:
    """Write the bundled regression suite: n_scenes x 3 separable objects."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_scenes):
        scene = make_cluster_scene(f"synth-{i:03d}", seed=seed + i)
        paths.append(save_scene(scene, out_dir / scene.scene_id))
    return paths
