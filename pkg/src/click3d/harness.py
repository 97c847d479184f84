"""Dataset-scale evaluation: run simulated sessions over every labeled
instance, aggregate metrics, and write traces, reports, and figures."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .clicks import DEFAULT_EPSILON
from .metrics import ClickCurve, MetricsReport, instance_ap
from .scene import Scene, load_ply, load_scene, save_scene, voxelize
from .segmenter import (ConstantEmptyBackend, ExternalBackend, GeodesicBackend,
                        GeodesicConfig, OracleBackend, SegmenterBackend)
from .simulate import SessionTrace, run_simulated_session

log = logging.getLogger("click3d.harness")

DEFAULT_BUDGETS = (1, 2, 3, 5, 10, 20)


@dataclass
class EvalConfig:
    data_dir: str
    backend: str = "ref"            # "ref" | "oracle" | "empty" | "cmd:<command>"
    epsilon: float = DEFAULT_EPSILON
    grid_res: float = 0.05
    max_clicks: int = 20
    seed: int = 0
    instance_filter: str = "all"    # "all" | "seen" | "unseen" | "classes:1,2,3"
    seen_classes: tuple[int, ...] = ()
    class_map: dict[str, dict[str, int]] = field(default_factory=dict)
    min_points: int = 10
    workers: int = 1
    budgets: tuple[int, ...] = ()
    out_dir: str | None = None

    def __post_init__(self):
        if self.max_clicks < 1:
            raise ValueError("max_clicks must be >= 1")
        if self.grid_res <= 0:
            raise ValueError("grid resolution must be > 0")

    def public_dict(self) -> dict:
        """Config echo for reports: no machine-local paths."""
        return {
            "backend": self.backend, "epsilon": self.epsilon,
            "grid_res": self.grid_res, "max_clicks": self.max_clicks,
            "seed": self.seed, "instance_filter": self.instance_filter,
            "min_points": self.min_points, "budgets": list(self.budgets),
        }


@dataclass
class EvalResult:
    report: MetricsReport
    traces: list[SessionTrace]
    ap_table: dict[int, dict] = field(default_factory=dict)
    n_skipped_scenes: int = 0
    n_skipped_instances: int = 0

    @property
    def status(self) -> str:
        return "partial" if self.n_skipped_scenes else "ok"


def instance_seed(global_seed: int, scene_id: str, instance_id: int) -> int:
    """Stable per-instance seed so filtering never shifts other instances."""
    digest = hashlib.sha256(f"{global_seed}:{scene_id}:{instance_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def discover_scenes(data_dir: str | Path) -> list[Path]:
    """Scene files in a dataset directory: internal manifests and PLYs."""
    data_dir = Path(data_dir)
    paths = sorted(data_dir.glob("*.json")) + sorted(data_dir.glob("*.ply"))
    return paths


def load_any(path: Path) -> Scene:
    return load_ply(path) if path.suffix == ".ply" else load_scene(path)


def _make_backend(spec: str, scene: Scene, config: EvalConfig,
                  instance_id: int | None = None,
                  workdir: Path | None = None) -> SegmenterBackend:
    if spec == "ref":
        return GeodesicBackend(scene.cloud, GeodesicConfig())
    if spec == "oracle":
        if instance_id is None:
            raise ValueError("oracle backend needs an instance id")
        return OracleBackend(scene.labels.mask(instance_id))
    if spec == "empty":
        return ConstantEmptyBackend()
    if spec.startswith("cmd:"):
        workdir = workdir or Path(".")
        blob = save_scene(scene, workdir / f"{scene.scene_id}__backend")
        return ExternalBackend(spec[4:], scene_blob=str(blob),
                               n_points=scene.cloud.n_points,
                               c=scene.cloud.n_channels, epsilon=config.epsilon)
    raise ValueError(f"unknown backend spec {spec!r}")


def _instance_class(config: EvalConfig, scene_id: str, instance_id: int) -> int | None:
    return config.class_map.get(scene_id, {}).get(str(instance_id))


def _passes_filter(config: EvalConfig, scene_id: str, instance_id: int) -> bool:
    f = config.instance_filter
    if f == "all":
        return True
    cls = _instance_class(config, scene_id, instance_id)
    if f == "seen":
        return cls in config.seen_classes
    if f == "unseen":
        return cls not in config.seen_classes
    if f.startswith("classes:"):
        wanted = {int(x) for x in f[len("classes:"):].split(",") if x}
        return cls in wanted
    raise ValueError(f"unknown instance filter {f!r}")


def evaluate(config: EvalConfig) -> EvalResult:
    """Run the full simulated-annotator protocol over a labeled dataset.

    Deterministic for a fixed config: scenes and instances are visited in
    sorted order and parallel workers only change scheduling, never the
    aggregate (results are re-sorted before reduction).
    """
    scene_paths = discover_scenes(config.data_dir)
    record_all = bool(config.budgets)
    result_rows: list[tuple[str, int, SessionTrace, np.ndarray]] = []
    n_skipped_scenes = 0
    n_skipped_instances = 0
    shared_backend_specs = ("ref", "cmd:")

    for path in scene_paths:
        try:
            scene = load_any(path)
        except Exception as exc:
            log.warning("skipping unreadable scene %s: %s", path, exc)
            n_skipped_scenes += 1
            continue
        if scene.labels is None:
            log.warning("skipping unlabeled scene %s", path)
            n_skipped_scenes += 1
            continue
        grid = voxelize(scene.cloud, config.grid_res)
        instance_ids = sorted(scene.labels.index)
        todo = []
        for iid in instance_ids:
            if len(scene.labels.index[iid]) < config.min_points:
                n_skipped_instances += 1
                continue
            if not _passes_filter(config, scene.scene_id, iid):
                continue
            todo.append(iid)
        if not todo:
            continue

        shared = None
        if config.backend.startswith(shared_backend_specs):
            shared = _make_backend(config.backend, scene, config,
                                   workdir=Path(config.out_dir or "."))

        def run_one(iid: int, scene=scene, grid=grid, shared=shared):
            backend = shared if shared is not None else _make_backend(
                config.backend, scene, config, instance_id=iid)
            trace = run_simulated_session(
                scene, iid, backend, max_clicks=config.max_clicks,
                epsilon=config.epsilon, grid_res=config.grid_res,
                seed=instance_seed(config.seed, scene.scene_id, iid), grid=grid,
                record_masks_at=None if record_all else set())
            return scene.scene_id, iid, trace, scene.labels.mask(iid)

        external = config.backend.startswith("cmd:")
        if config.workers > 1 and not external:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                rows = list(pool.map(run_one, todo))
        else:
            rows = [run_one(iid) for iid in todo]
        result_rows.extend(rows)
        if shared is not None:
            shared.close()

    if not result_rows:
        raise ValueError(f"no evaluable instances found under {config.data_dir}")
    result_rows.sort(key=lambda r: (r[0], r[1]))

    curves = []
    for scene_id, iid, trace, _gt in result_rows:
        if not trace.ious:
            continue
        curves.append(ClickCurve(ious=tuple(trace.ious), instance_id=iid,
                                 scene_id=scene_id,
                                 class_id=_instance_class(config, scene_id, iid)))
    report = metrics.aggregate(
        curves, ks=tuple(range(1, config.max_clicks + 1)), cap=config.max_clicks,
        per_class=bool(config.class_map))

    ap_table = {}
    if config.budgets:
        ap_table = _ap_sweep_from_rows(result_rows, config.budgets)

    result = EvalResult(report=report,
                        traces=[t for _, _, t, _ in result_rows],
                        ap_table=ap_table,
                        n_skipped_scenes=n_skipped_scenes,
                        n_skipped_instances=n_skipped_instances)
    if config.out_dir:
        write_outputs(result, config)
    return result


def _ap_sweep_from_rows(rows, budgets) -> dict[int, dict]:
    """AP at each click budget from recorded per-step masks.

    Matching is per scene (masks on different clouds never overlap), with
    one global confidence-ordered PR curve via a block-diagonal IoU matrix.
    """
    table = {}
    scenes = sorted({r[0] for r in rows})
    for budget in budgets:
        preds, gts = [], []
        for scene_id in scenes:
            scene_rows = [r for r in rows if r[0] == scene_id]
            for _sid, _iid, trace, gt in scene_rows:
                gts.append(gt)
                if not trace.masks:
                    continue
                step = min(budget, max(trace.masks))
                preds.append((trace.masks[step], trace.confidences[step]))
        iou_matrix = np.zeros((len(preds), len(gts)))
        pi = 0
        for scene_id in scenes:
            scene_rows = [r for r in rows if r[0] == scene_id]
            g0 = sum(1 for r in rows if r[0] < scene_id)
            scene_gts = [gt for _, _, _, gt in scene_rows]
            for _sid, _iid, trace, _gt in scene_rows:
                if not trace.masks:
                    continue
                step = min(budget, max(trace.masks))
                for j, g in enumerate(scene_gts):
                    iou_matrix[pi, g0 + j] = metrics.iou(trace.masks[step], g)
                pi += 1
        table[budget] = instance_ap(preds, gts, iou_matrix=iou_matrix)
    return table


def write_outputs(result: EvalResult, config: EvalConfig) -> None:
    """Persist traces, the JSON/CSV report, the AP table, and figures."""
    from . import plotting

    out = Path(config.out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    for trace in result.traces:
        trace.save(out / "traces" / f"{trace.scene_id}__{trace.instance_id}.jsonl")
    report_doc = {
        "config": config.public_dict(),
        "metrics": result.report.to_dict(),
        "status": result.status,
        "n_skipped_scenes": result.n_skipped_scenes,
        "n_skipped_instances": result.n_skipped_instances,
    }
    (out / "report.json").write_text(json.dumps(report_doc, sort_keys=True, indent=2) + "\n")
    (out / "report.csv").write_text(result.report.to_csv())
    figures = out / "figures"
    figures.mkdir(exist_ok=True)
    plotting.plot_iou_curve(result.report, figures / "iou_at_k.png")
    noc_values = {q: [metrics.noc(ClickCurve(tuple(t.ious)), q, config.max_clicks)
                      for t in result.traces if t.ious]
                  for q in metrics.NOC_QUALITIES}
    plotting.plot_noc_bars(noc_values, figures / "noc_hist.png")
    if result.ap_table:
        (out / "ap_sweep.json").write_text(
            json.dumps({str(k): v for k, v in sorted(result.ap_table.items())},
                       sort_keys=True, indent=2) + "\n")
        plotting.plot_ap_sweep(result.ap_table, figures / "ap_sweep.png")


def replay(trace_dir: str | Path) -> dict:
    """Recompute the report from trace logs without touching any backend.

    Returns the same report document `evaluate` writes. Edited traces are
    caught by the per-file checksum and reported as warnings.
    """
    trace_dir = Path(trace_dir)
    paths = sorted(trace_dir.glob("*.jsonl"))
    if not paths:
        raise ValueError(f"no trace files under {trace_dir}")
    curves = []
    configs = []
    warnings = []
    for path in paths:
        trace, ok = SessionTrace.from_jsonl(path.read_text())
        if not ok:
            warnings.append(str(path.name))
            log.warning("checksum mismatch in %s (edited trace?)", path)
        configs.append(trace.config)
        if trace.ious:
            curves.append(ClickCurve(ious=tuple(trace.ious),
                                     instance_id=trace.instance_id,
                                     scene_id=trace.scene_id))
    max_clicks = {c.get("max_clicks") for c in configs}
    if len(max_clicks) != 1:
        raise ValueError(f"mixed trace configs: max_clicks={sorted(max_clicks)}")
    cap = max_clicks.pop()
    report = metrics.aggregate(curves, ks=tuple(range(1, cap + 1)), cap=cap)
    return {"metrics": report.to_dict(), "checksum_warnings": warnings}


def ap_sweep(config: EvalConfig, budgets=DEFAULT_BUDGETS) -> dict[int, dict]:
    """Evaluate and report {budget -> AP, AP50, AP25}."""
    config.budgets = tuple(budgets)
    return evaluate(config).ap_table
