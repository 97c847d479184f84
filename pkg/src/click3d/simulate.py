"""Simulated annotators: random training clicks and the largest-error-region
test policy, plus the interactive session loop they drive."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .clicks import (DEFAULT_EPSILON, NEGATIVE, POSITIVE, Click, ClickChannels,
                     encode_clicks)
from .metrics import iou
from .scene import PointCloud, Scene, VoxelGrid, voxelize

TRACE_VERSION = 1
FALSE_NEGATIVE = "fn"
FALSE_POSITIVE = "fp"

_STRUCTURE_26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class ErrorRegion:
    """One 26-connected component of misclassified voxels, single kind."""

    kind: str                   # "fn" | "fp"
    voxels: frozenset[tuple[int, int, int]]
    point_indices: np.ndarray   # misclassified points inside the region
    size: int                   # voxel count

    @property
    def min_voxel(self) -> tuple[int, int, int]:
        return min(self.voxels)


def sample_train_clicks(scene: Scene, instance_id: int, n_pos: int, n_neg: int,
                        seed: int) -> tuple[list[Click], bool]:
    """Random training clicks for one instance.

    Positives are uniform over the instance's points (without replacement,
    falling back to replacement when n_pos exceeds the instance). Negatives
    are uniform over off-instance points inside the instance's bounding box
    scaled about its center by a factor drawn uniformly from [1.0, 1.4].
    Returns (clicks, shortfall): shortfall is True when fewer negatives
    than requested were available.
    """
    if scene.labels is None or instance_id not in scene.labels.index:
        raise ValueError(f"unknown instance id {instance_id}")
    rng = np.random.default_rng(np.uint64(seed))
    pos = scene.cloud.positions
    inst = scene.labels.index[instance_id]

    replace = n_pos > len(inst)
    pos_idx = rng.choice(inst, size=n_pos, replace=replace)

    lo, hi = pos[inst].min(axis=0), pos[inst].max(axis=0)
    center = (lo + hi) / 2.0
    scale = rng.uniform(1.0, 1.4)
    half = (hi - lo) / 2.0 * scale
    inside = np.all(np.abs(pos - center) <= half, axis=1)
    off_instance = scene.labels.instance_ids != instance_id
    candidates = np.flatnonzero(inside & off_instance)
    n_take = min(n_neg, len(candidates))
    neg_idx = rng.choice(candidates, size=n_take, replace=False) if n_take else np.empty(0, int)

    def mk(idx: int, polarity: str, ordinal: int) -> Click:
        p = pos[idx]
        return Click(position=(float(p[0]), float(p[1]), float(p[2])),
                     polarity=polarity, ordinal=ordinal, snapped_index=int(idx))

    clicks: list[Click] = []
    pi, ni = 0, 0
    while pi < len(pos_idx) or ni < len(neg_idx):
        if pi < len(pos_idx):
            clicks.append(mk(int(pos_idx[pi]), POSITIVE, len(clicks) + 1))
            pi += 1
        if ni < len(neg_idx):
            clicks.append(mk(int(neg_idx[ni]), NEGATIVE, len(clicks) + 1))
            ni += 1
    return clicks, n_take < n_neg


def _label_components(voxels: np.ndarray) -> np.ndarray:
    """26-connected component id per voxel row (deterministic)."""
    lo = voxels.min(axis=0)
    shape = voxels.max(axis=0) - lo + 1
    dense = np.zeros(shape, dtype=bool)
    local = voxels - lo
    dense[tuple(local.T)] = True
    labeled, _ = ndimage.label(dense, structure=_STRUCTURE_26)
    return labeled[tuple(local.T)]


def extract_error_regions(gt_mask: np.ndarray, pred_mask: np.ndarray,
                          grid: VoxelGrid) -> list[ErrorRegion]:
    """Connected error components on the voxel grid, largest first.

    False negatives and false positives are componentized separately so a
    region maps to a single correction polarity. Ties in size break FN
    before FP, then by lexicographically smallest voxel coordinate.
    """
    gt = np.asarray(gt_mask, dtype=bool)
    pred = np.asarray(pred_mask, dtype=bool)
    if gt.shape != pred.shape or gt.shape[0] != grid.point_voxels.shape[0]:
        raise ValueError("mask length does not match grid point count")

    regions: list[ErrorRegion] = []
    for kind, sel in ((FALSE_NEGATIVE, gt & ~pred), (FALSE_POSITIVE, ~gt & pred)):
        pts = np.flatnonzero(sel)
        if pts.size == 0:
            continue
        vox = grid.point_voxels[pts]
        uniq, inverse = np.unique(vox, axis=0, return_inverse=True)
        comp = _label_components(uniq)
        for cid in np.unique(comp):
            in_comp = comp == cid
            members = pts[in_comp[inverse]]
            cells = frozenset(map(tuple, uniq[in_comp].tolist()))
            regions.append(ErrorRegion(kind=kind, voxels=cells,
                                       point_indices=members, size=len(cells)))
    kind_rank = {FALSE_NEGATIVE: 0, FALSE_POSITIVE: 1}
    regions.sort(key=lambda r: (-r.size, kind_rank[r.kind], r.min_voxel))
    return regions


def _interior_depths(region: ErrorRegion) -> dict[tuple[int, int, int], int]:
    """Chebyshev distance from each region voxel to the nearest outside voxel."""
    vox = np.array(sorted(region.voxels), dtype=np.int64)
    lo = vox.min(axis=0)
    shape = vox.max(axis=0) - lo + 3  # pad so the bbox border counts as outside
    dense = np.zeros(shape, dtype=bool)
    local = vox - lo + 1
    dense[tuple(local.T)] = True
    depth = ndimage.distance_transform_cdt(dense, metric="chessboard")
    return {tuple((v + lo - 1).tolist()): int(d)
            for v, d in zip(local, depth[tuple(local.T)])}


def next_test_click(gt_mask: np.ndarray, pred_mask: np.ndarray,
                    grid: VoxelGrid, cloud: PointCloud) -> Click | None:
    """Deterministic test-time click at the center of the largest error region.

    Among the region's misclassified points, picks the one whose voxel is
    interior-most (max Chebyshev distance to the region boundary); ties
    break by Euclidean distance to the region's point centroid, then by
    lowest point index. Returns None when prediction equals ground truth.
    """
    regions = extract_error_regions(gt_mask, pred_mask, grid)
    if not regions:
        return None
    region = regions[0]
    depths = _interior_depths(region)
    pts = region.point_indices
    pt_depth = np.array([depths[tuple(v)] for v in grid.point_voxels[pts]])
    best = pts[pt_depth == pt_depth.max()]
    centroid = cloud.positions[pts].mean(axis=0)
    d = np.linalg.norm(cloud.positions[best] - centroid, axis=1)
    chosen = int(best[np.lexsort((best, d))[0]])
    p = cloud.positions[chosen]
    polarity = POSITIVE if region.kind == FALSE_NEGATIVE else NEGATIVE
    return Click(position=(float(p[0]), float(p[1]), float(p[2])),
                 polarity=polarity, ordinal=0, snapped_index=chosen)


@dataclass
class SessionTrace:
    """Full record of one simulated (or replayed human) session."""

    scene_id: str
    instance_id: int
    config: dict
    seed: int | None = None
    clicks: list[Click] = field(default_factory=list)
    ious: list[float] = field(default_factory=list)
    fn_counts: list[int] = field(default_factory=list)
    fp_counts: list[int] = field(default_factory=list)
    masks: dict[int, np.ndarray] = field(default_factory=dict)  # step -> binary mask
    confidences: dict[int, float] = field(default_factory=dict)  # step -> AP confidence
    status: str = "done"   # "done" | "aborted"

    def to_jsonl(self) -> str:
        header = {"type": "header", "version": TRACE_VERSION,
                  "scene_id": self.scene_id, "instance_id": self.instance_id,
                  "seed": self.seed, "config": self.config}
        lines = [json.dumps(header, sort_keys=True)]
        for i, c in enumerate(self.clicks):
            lines.append(json.dumps({
                "type": "step", "step": i + 1, "click": c.to_record(),
                "iou": self.ious[i], "n_fn_points": self.fn_counts[i],
                "n_fp_points": self.fp_counts[i]}, sort_keys=True))
        body = "\n".join(lines)
        footer = json.dumps({"type": "end", "status": self.status,
                             "checksum": zlib.crc32(body.encode())}, sort_keys=True)
        return body + "\n" + footer + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str, verify: bool = True) -> tuple["SessionTrace", bool]:
        """Parse a trace log; returns (trace, checksum_ok)."""
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty trace")
        header = json.loads(lines[0])
        if header.get("type") != "header" or header.get("version") != TRACE_VERSION:
            raise ValueError(f"unsupported trace header: {lines[0][:80]}")
        trace = cls(scene_id=header["scene_id"], instance_id=header["instance_id"],
                    config=header.get("config", {}), seed=header.get("seed"))
        checksum_ok = True
        body_lines = lines[:-1] if json.loads(lines[-1]).get("type") == "end" else lines
        for ln in body_lines[1:]:
            rec = json.loads(ln)
            if rec.get("type") != "step":
                raise ValueError(f"unexpected trace record: {ln[:80]}")
            trace.clicks.append(Click.from_record(rec["click"]))
            trace.ious.append(rec["iou"])
            trace.fn_counts.append(rec["n_fn_points"])
            trace.fp_counts.append(rec["n_fp_points"])
        if len(body_lines) != len(lines):
            footer = json.loads(lines[-1])
            trace.status = footer.get("status", "done")
            if verify:
                body = "\n".join(body_lines)
                checksum_ok = footer.get("checksum") == zlib.crc32(body.encode())
        return trace, checksum_ok


def run_simulated_session(scene: Scene, instance_id: int, backend,
                          max_clicks: int = 20,
                          epsilon: float = DEFAULT_EPSILON,
                          grid_res: float = 0.05,
                          seed: int | None = None,
                          grid: VoxelGrid | None = None,
                          record_masks_at: set[int] | None = None) -> SessionTrace:
    """Drive one instance's interactive episode with the test-click policy.

    Each step clicks the center of the current largest error region,
    re-encodes the channels, queries the backend and records the IoU.
    Stops when the mask is exact or max_clicks is reached. Backend
    failures leave a trace marked aborted at the last good step.
    """
    from .segmenter import BackendError, segment  # local import, avoids cycle

    if scene.labels is None:
        raise ValueError("scene has no instance labels")
    gt = scene.labels.mask(instance_id)
    if grid is None:
        grid = voxelize(scene.cloud, grid_res)
    trace = SessionTrace(
        scene_id=scene.scene_id, instance_id=instance_id, seed=seed,
        config={"max_clicks": max_clicks, "epsilon": epsilon, "grid_res": grid_res,
                "policy": "largest-error-region"})
    pred = np.zeros(scene.cloud.n_points, dtype=bool)
    for step in range(1, max_clicks + 1):
        click = next_test_click(gt, pred, grid, scene.cloud)
        if click is None:
            break
        click = Click(position=click.position, polarity=click.polarity,
                      ordinal=step, snapped_index=click.snapped_index)
        channels = encode_clicks(scene.cloud, trace.clicks + [click], epsilon)
        try:
            mask = segment(backend, scene.cloud, channels, clicks=trace.clicks + [click])
        except BackendError:
            trace.status = "aborted"
            break
        trace.clicks.append(click)
        pred = mask.binary
        trace.ious.append(iou(gt, pred))
        trace.fn_counts.append(int(np.count_nonzero(gt & ~pred)))
        trace.fp_counts.append(int(np.count_nonzero(~gt & pred)))
        if record_masks_at is None or step in record_masks_at:
            trace.masks[step] = pred
            fg = mask.scores[pred]
            trace.confidences[step] = float(fg.mean()) if fg.size else 0.0
    return trace
