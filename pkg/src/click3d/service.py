"""HTTP session service: live interactive annotation over the same engine
the simulator drives.

API (prefix /v1):
  POST /scenes                         {"manifest": {...}, "blob_b64": "..."}
  GET  /scenes/{id}/meta
  GET  /scenes/{id}/chunks/{i}         binary little-endian body, per chunk of
                                       n points: float32 xyz[n*3], uint8 rgb[n*3],
                                       then float32 scores[n] if ?session= given
  POST /sessions                       {"scene_id", "backend"?, "epsilon"?}
  POST /sessions/{id}/clicks           {"point_index" | "position", "polarity"}
  POST /sessions/{id}/undo
  GET  /sessions/{id}/mask?format=scores|bitset
  POST /sessions/{id}/finalize

Masks travel as base64 float32 scores, or as a threshold-applied bitset
(packed bits, little-endian within bytes) with format=bitset.
"""

from __future__ import annotations

import base64
import logging
import threading
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel

from .clicks import Click, encode_clicks, renumber, snap_to_point
from .metrics import iou
from .scene import Scene, scene_from_blob
from .segmenter import (BackendError, ExternalBackend, GeodesicBackend,
                        GeodesicConfig, SegmenterBackend, SoftMask, segment)
from .simulate import SessionTrace

log = logging.getLogger("click3d.service")

CHUNK_SIZE = 65536
MASK_HISTORY_DEPTH = 20


@dataclass
class LiveSession:
    session_id: str
    scene: Scene
    backend: SegmenterBackend
    epsilon: float
    backend_spec: str = "ref"
    clicks: list[Click] = field(default_factory=list)
    ious: list[float | None] = field(default_factory=list)
    fn_counts: list[int] = field(default_factory=list)
    fp_counts: list[int] = field(default_factory=list)
    mask: SoftMask | None = None
    history: deque = field(default_factory=lambda: deque(maxlen=MASK_HISTORY_DEPTH))
    mask_version: int = 0
    status: str = "active"
    final_record: dict | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def gt_mask(self) -> np.ndarray | None:
        """Ground truth inferred from the first positive click's instance."""
        if self.scene.labels is None:
            return None
        for c in self.clicks:
            if c.is_positive and c.snapped_index is not None:
                iid = int(self.scene.labels.instance_ids[c.snapped_index])
                if iid != 0:
                    return self.scene.labels.mask(iid)
        return None

    def target_instance(self) -> int:
        if self.scene.labels is None:
            return 0
        for c in self.clicks:
            if c.is_positive and c.snapped_index is not None:
                return int(self.scene.labels.instance_ids[c.snapped_index])
        return 0


class ServiceState:
    def __init__(self, results_dir: str | Path | None = None):
        self.scenes: dict[str, Scene] = {}
        self.sessions: dict[str, LiveSession] = {}
        self.results_dir = Path(results_dir) if results_dir else None
        self._ref_backends: dict[str, GeodesicBackend] = {}
        self._lock = threading.Lock()

    def add_scene(self, scene: Scene) -> None:
        self.scenes[scene.scene_id] = scene

    def reference_backend(self, scene_id: str) -> GeodesicBackend:
        # graph build is expensive; the reference backend is pure, so one
        # instance per scene serves every session
        with self._lock:
            if scene_id not in self._ref_backends:
                self._ref_backends[scene_id] = GeodesicBackend(
                    self.scenes[scene_id].cloud, GeodesicConfig())
            return self._ref_backends[scene_id]


class CreateSessionRequest(BaseModel):
    scene_id: str
    backend: str = "ref"
    epsilon: float = 0.05


class ClickRequest(BaseModel):
    polarity: str
    point_index: int | None = None
    position: list[float] | None = None


class SceneUpload(BaseModel):
    manifest: dict
    blob_b64: str


def _mask_payload(session: LiveSession, fmt: str = "scores") -> dict:
    scores = (session.mask.scores if session.mask is not None
              else np.zeros(session.scene.cloud.n_points, dtype=np.float32))
    if fmt == "bitset":
        bits = np.packbits((scores >= 0.5).astype(np.uint8), bitorder="little")
        key, value = "bitset_b64", base64.b64encode(bits.tobytes()).decode()
    else:
        key, value = "scores_b64", base64.b64encode(scores.astype("<f4").tobytes()).decode()
    return {"mask_version": session.mask_version, key: value,
            "n_points": session.scene.cloud.n_points}


def create_app(state: ServiceState | None = None) -> FastAPI:
    state = state or ServiceState()
    app = FastAPI(title="click3d session service")
    app.state.click3d = state

    def get_scene(scene_id: str) -> Scene:
        if scene_id not in state.scenes:
            raise HTTPException(404, f"unknown scene {scene_id!r}")
        return state.scenes[scene_id]

    def get_session(session_id: str) -> LiveSession:
        if session_id not in state.sessions:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return state.sessions[session_id]

    @app.post("/v1/scenes")
    def upload_scene(req: SceneUpload):
        try:
            scene = scene_from_blob(req.manifest, base64.b64decode(req.blob_b64))
        except Exception as exc:
            raise HTTPException(400, f"bad scene upload: {exc}")
        if not scene.scene_id:
            raise HTTPException(400, "manifest lacks scene_id")
        state.add_scene(scene)
        return {"scene_id": scene.scene_id, "n_points": scene.cloud.n_points}

    @app.get("/v1/scenes/{scene_id}/meta")
    def scene_meta(scene_id: str):
        scene = get_scene(scene_id)
        cloud = scene.cloud
        return {
            "scene_id": scene_id,
            "n_points": cloud.n_points,
            "has_color": cloud.colors is not None,
            "has_labels": scene.labels is not None,
            "chunk_size": CHUNK_SIZE,
            "n_chunks": -(-cloud.n_points // CHUNK_SIZE),
            "bbox": {"min": cloud.positions.min(axis=0).tolist(),
                     "max": cloud.positions.max(axis=0).tolist()},
        }

    @app.get("/v1/scenes/{scene_id}/chunks/{index}")
    def scene_chunk(scene_id: str, index: int, session: str | None = None):
        scene = get_scene(scene_id)
        n = scene.cloud.n_points
        n_chunks = -(-n // CHUNK_SIZE)
        if index < 0 or index >= n_chunks:
            raise HTTPException(404, f"chunk {index} out of range (0..{n_chunks - 1})")
        a, b = index * CHUNK_SIZE, min(n, (index + 1) * CHUNK_SIZE)
        parts = [scene.cloud.positions[a:b].astype("<f4").tobytes()]
        if scene.cloud.colors is not None:
            rgb = np.clip(np.rint(scene.cloud.colors[a:b] * 255.0), 0, 255).astype(np.uint8)
        else:
            rgb = np.full((b - a, 3), 180, dtype=np.uint8)
        parts.append(rgb.tobytes())
        if session is not None:
            sess = get_session(session)
            scores = (sess.mask.scores if sess.mask is not None
                      else np.zeros(n, dtype=np.float32))
            parts.append(scores[a:b].astype("<f4").tobytes())
        return Response(content=b"".join(parts), media_type="application/octet-stream")

    @app.post("/v1/sessions")
    def create_session(req: CreateSessionRequest):
        scene = get_scene(req.scene_id)
        if req.backend == "ref":
            backend = state.reference_backend(req.scene_id)
        elif req.backend.startswith("cmd:"):
            if state.results_dir is None:
                raise HTTPException(400, "server has no results dir for backend blobs")
            from .scene import save_scene
            state.results_dir.mkdir(parents=True, exist_ok=True)
            blob = save_scene(scene, state.results_dir / f"{scene.scene_id}__svc")
            try:
                backend = ExternalBackend(req.backend[4:], scene_blob=str(blob),
                                          n_points=scene.cloud.n_points,
                                          c=scene.cloud.n_channels, epsilon=req.epsilon)
            except BackendError as exc:
                raise HTTPException(502, f"backend start failed: {exc}")
        else:
            raise HTTPException(400, f"unknown backend {req.backend!r}")
        session = LiveSession(session_id=uuid.uuid4().hex, scene=scene,
                              backend=backend, epsilon=req.epsilon,
                              backend_spec=req.backend)
        state.sessions[session.session_id] = session
        return {"session_id": session.session_id, "mask_version": 0}

    @app.post("/v1/sessions/{session_id}/clicks")
    def add_click(session_id: str, req: ClickRequest, format: str = "scores"):
        sess = get_session(session_id)
        with sess.lock:
            if sess.status == "finalized":
                raise HTTPException(409, "session is finalized")
            if req.polarity not in ("pos", "neg"):
                raise HTTPException(400, f"bad polarity {req.polarity!r}")
            cloud = sess.scene.cloud
            if req.point_index is not None:
                if not 0 <= req.point_index < cloud.n_points:
                    raise HTTPException(400, f"point index {req.point_index} out of range")
                idx = req.point_index
            elif req.position is not None and len(req.position) == 3:
                idx = snap_to_point(cloud, req.position)
            else:
                raise HTTPException(400, "need point_index or position[3]")
            p = cloud.positions[idx]
            click = Click(position=(float(p[0]), float(p[1]), float(p[2])),
                          polarity=req.polarity, ordinal=len(sess.clicks) + 1,
                          snapped_index=int(idx))
            channels = encode_clicks(cloud, sess.clicks + [click], sess.epsilon)
            try:
                mask = segment(sess.backend, cloud, channels,
                               clicks=sess.clicks + [click])
            except BackendError as exc:
                raise HTTPException(502, f"backend failed, click not recorded: {exc}")
            sess.clicks.append(click)
            sess.mask = mask
            sess.history.append(mask)
            sess.mask_version += 1
            gt = sess.gt_mask()
            if gt is not None:
                pred = mask.binary
                sess.ious.append(iou(gt, pred))
                sess.fn_counts.append(int(np.count_nonzero(gt & ~pred)))
                sess.fp_counts.append(int(np.count_nonzero(~gt & pred)))
            else:
                sess.ious.append(None)
                sess.fn_counts.append(0)
                sess.fp_counts.append(0)
            out = _mask_payload(sess, format)
            out["snapped_point_index"] = int(idx)
            if sess.ious[-1] is not None:
                out["iou"] = sess.ious[-1]
            return out

    @app.post("/v1/sessions/{session_id}/undo")
    def undo(session_id: str, format: str = "scores"):
        sess = get_session(session_id)
        with sess.lock:
            if sess.status == "finalized":
                raise HTTPException(409, "session is finalized")
            if not sess.clicks:
                raise HTTPException(409, "nothing to undo")
            sess.clicks = renumber(sess.clicks[:-1])
            sess.ious.pop()
            sess.fn_counts.pop()
            sess.fp_counts.pop()
            cloud = sess.scene.cloud
            channels = encode_clicks(cloud, sess.clicks, sess.epsilon)
            try:
                mask = segment(sess.backend, cloud, channels, clicks=sess.clicks)
            except BackendError as exc:
                raise HTTPException(502, f"backend failed during undo: {exc}")
            sess.mask = mask
            sess.history.append(mask)
            sess.mask_version += 1
            out = _mask_payload(sess, format)
            # an adapted model cannot un-learn a correction
            if sess.backend.capabilities.supports_adaptation:
                out["lossy_undo"] = True
            return out

    @app.get("/v1/sessions/{session_id}/mask")
    def get_mask(session_id: str, version: int | None = None, format: str = "scores"):
        sess = get_session(session_id)
        out = _mask_payload(sess, format)
        out["stale"] = version is not None and version != sess.mask_version
        return out

    @app.post("/v1/sessions/{session_id}/finalize")
    def finalize(session_id: str):
        sess = get_session(session_id)
        with sess.lock:
            if sess.status == "finalized":
                return sess.final_record  # idempotent
            sess.status = "finalized"
            gt = sess.gt_mask()
            final_iou = None
            if gt is not None and sess.mask is not None:
                final_iou = iou(gt, sess.mask.binary)
            trace = SessionTrace(
                scene_id=sess.scene.scene_id, instance_id=sess.target_instance(),
                config={"max_clicks": 20, "epsilon": sess.epsilon,
                        "grid_res": 0.05, "policy": "human"},
                clicks=list(sess.clicks),
                ious=[v if v is not None else 0.0 for v in sess.ious],
                fn_counts=list(sess.fn_counts), fp_counts=list(sess.fp_counts))
            trace_path = None
            if self_dir := state.results_dir:
                self_dir.mkdir(parents=True, exist_ok=True)
                trace_path = self_dir / f"session_{sess.session_id}.jsonl"
                trace.save(trace_path)
            sess.final_record = {
                "session_id": sess.session_id,
                "mask_version": sess.mask_version,
                "n_clicks": len(sess.clicks),
                "clicks": [c.to_record() for c in sess.clicks],
                "iou": final_iou,
                "trace_path": str(trace_path) if trace_path else None,
            }
            return sess.final_record

    return app


def serve(data_dir: str | Path | None, results_dir: str | Path | None,
          host: str = "127.0.0.1", port: int = 8008) -> None:
    """Load scenes from a directory and run the service with uvicorn."""
    import uvicorn

    from .harness import discover_scenes, load_any

    state = ServiceState(results_dir=results_dir)
    if data_dir:
        for path in discover_scenes(data_dir):
            try:
                state.add_scene(load_any(path))
            except Exception as exc:
                log.warning("skipping scene %s: %s", path, exc)
    app = create_app(state)
    uvicorn.run(app, host=host, port=port, log_level="info")
