"""Segmentation backends: the geodesic reference segmenter, simple test
doubles, and the line-delimited JSON subprocess adapter for external models."""

from __future__ import annotations

import base64
import json
import selectors
import shlex
import subprocess
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csgraph, csr_matrix

from .clicks import Click, ClickChannels
from .scene import NeighborGraph, PointCloud, build_knn_graph

PROTOCOL_VERSION = "click3d/1"
DEFAULT_THRESHOLD = 0.5

# largest float32 score still classified as background at threshold 0.5
_BELOW_THRESHOLD = float(np.nextafter(np.float32(0.5), np.float32(0)))


class BackendError(RuntimeError):
    """Backend crashed, timed out, or broke the wire protocol."""


class CapabilityError(RuntimeError):
    """Operation requires a capability the backend does not declare."""


@dataclass(frozen=True)
class SoftMask:
    scores: np.ndarray            # (N,) float32 in [0, 1]
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float32)
        if not np.isfinite(s).all():
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)

    @property
    def binary(self) -> np.ndarray:
        return self.scores >= self.threshold


@dataclass(frozen=True)
class BackendCapabilities:
    supports_adaptation: bool = False
    needs_color: bool = False


class SegmenterBackend(ABC):
    """Maps (point features + click channels) to per-point foreground scores."""

    capabilities: BackendCapabilities = BackendCapabilities()

    @abstractmethod
    def segment(self, cloud: PointCloud, channels: ClickChannels,
                clicks: list[Click] | None = None) -> SoftMask:
        ...

    def adapt(self, clicks: list[Click], gt_hint: dict[int, bool] | None = None) -> None:
        """Forward a correction event; only valid for adaptive backends."""
        raise CapabilityError(f"{type(self).__name__} does not support adaptation")

    def close(self) -> None:
        pass


def segment(backend: SegmenterBackend, cloud: PointCloud, channels: ClickChannels,
            clicks: list[Click] | None = None) -> SoftMask:
    """Run a backend; with no positive click bits the mask is defined all-zero."""
    if channels.t_p.shape[0] != cloud.n_points:
        raise ValueError("channels do not match cloud size")
    if not channels.t_p.any():
        return SoftMask(np.zeros(cloud.n_points, dtype=np.float32))
    return backend.segment(cloud, channels, clicks=clicks)


# ---------------------------------------------------------------------------
# Reference geodesic segmenter


@dataclass(frozen=True)
class GeodesicConfig:
    k: int = 8
    color_weight: float = 0.2      # scales ||delta rgb||_2 in the edge weight
    background_radius: float = 0.5  # geodesic radius of the background prior, meters

    def __post_init__(self):
        if self.k < 1 or self.background_radius <= 0 or self.color_weight < 0:
            raise ValueError(f"invalid geodesic config: {self}")


def _edge_weights(cloud: PointCloud, graph: NeighborGraph, config: GeodesicConfig) -> csr_matrix:
    """Symmetric weights: euclidean + color_weight * ||delta color|| (if color)."""
    w = graph.matrix.copy()
    if cloud.colors is not None and config.color_weight > 0:
        coo = w.tocoo()
        dc = np.linalg.norm(cloud.colors[coo.row].astype(np.float64)
                            - cloud.colors[coo.col].astype(np.float64), axis=1)
        coo.data = coo.data + config.color_weight * dc
        w = coo.tocsr()
    return w


def _seed_distances(weights: csr_matrix, seeds: np.ndarray, limit: float) -> np.ndarray:
    if seeds.size == 0:
        return np.full(weights.shape[0], np.inf)
    return csgraph.dijkstra(weights, directed=False, indices=seeds,
                            min_only=True, limit=limit)


def geodesic_segment(cloud: PointCloud, graph: NeighborGraph, channels: ClickChannels,
                     config: GeodesicConfig = GeodesicConfig(),
                     weights: csr_matrix | None = None) -> SoftMask:
    """Label by multi-source shortest-path distance from click seeds.

    Points with t_p set are positive seeds, t_n negative seeds; a point
    carrying both bits is a negative seed. Foreground iff the positive
    distance wins (d_pos <= d_neg) and lies within the background radius.
    Searches are pruned at the background radius: anything farther from
    every positive seed is background with score 0 regardless.
    """
    n = cloud.n_points
    neg_seeds = np.flatnonzero(channels.t_n)
    pos_seeds = np.flatnonzero(channels.t_p & ~channels.t_n)
    if pos_seeds.size == 0:
        return SoftMask(np.zeros(n, dtype=np.float32))
    if weights is None:
        weights = _edge_weights(cloud, graph, config)
    d_bg = config.background_radius
    d_pos = _seed_distances(weights, pos_seeds, limit=d_bg)
    d_neg = _seed_distances(weights, neg_seeds, limit=d_bg)

    foreground = (d_pos <= d_neg) & (d_pos <= d_bg)
    denom = np.maximum(d_neg, d_bg)
    with np.errstate(invalid="ignore"):
        ratio = np.where(np.isinf(d_pos), 1.0, d_pos / denom)
    scores = 1.0 - np.minimum(1.0, ratio)
    # keep scores consistent with the 0.5 threshold rule
    scores = np.where(foreground, np.maximum(scores, DEFAULT_THRESHOLD),
                      np.minimum(scores, _BELOW_THRESHOLD))
    return SoftMask(scores.astype(np.float32))


class GeodesicBackend(SegmenterBackend):
    """Reference backend bound to one cloud; caches graph and edge weights."""

    capabilities = BackendCapabilities(supports_adaptation=False, needs_color=False)

    def __init__(self, cloud: PointCloud, config: GeodesicConfig = GeodesicConfig(),
                 graph: NeighborGraph | None = None):
        self.cloud = cloud
        self.config = config
        self.graph = graph if graph is not None else build_knn_graph(cloud, config.k)
        self._weights = _edge_weights(cloud, self.graph, config)

    def segment(self, cloud, channels, clicks=None):
        return geodesic_segment(self.cloud, self.graph, channels, self.config,
                                weights=self._weights)


# ---------------------------------------------------------------------------
# Test doubles


class OracleBackend(SegmenterBackend):
    """Returns the installed ground-truth mask whatever the clicks say."""

    def __init__(self, gt_mask: np.ndarray):
        self.gt = np.asarray(gt_mask, dtype=bool)

    def segment(self, cloud, channels, clicks=None):
        return SoftMask(self.gt.astype(np.float32))


class ConstantEmptyBackend(SegmenterBackend):
    """Never segments anything; exercises the 20-click cap."""

    def segment(self, cloud, channels, clicks=None):
        return SoftMask(np.zeros(cloud.n_points, dtype=np.float32))


# ---------------------------------------------------------------------------
# External subprocess backend (line-delimited JSON over stdio)


class ExternalBackend(SegmenterBackend):
    """Adapter that speaks the click3d/1 protocol to a child process.

    One in-flight request per connection; concurrent sessions should each
    spawn their own backend. The child reads the scene from the internal
    scene format path handed over at init.
    """

    def __init__(self, command: str, scene_blob: str, n_points: int, c: int,
                 epsilon: float, timeout: float = 30.0):
        self.timeout = timeout
        self.n_points = n_points
        try:
            self._proc = subprocess.Popen(
                shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        except OSError as exc:
            raise BackendError(f"cannot spawn backend {command!r}: {exc}") from exc
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._proc.stdout, selectors.EVENT_READ)
        self._send({"type": "init", "version": PROTOCOL_VERSION, "n_points": n_points,
                    "c": c, "epsilon": epsilon, "scene_blob": str(scene_blob)})
        ready = self._recv()
        if ready.get("type") != "ready":
            self._terminate()
            raise BackendError(f"expected ready handshake, got {ready!r}")
        self.capabilities = BackendCapabilities(
            supports_adaptation=bool(ready.get("supports_adaptation", False)))

    def _send(self, obj: dict) -> None:
        if self._proc.poll() is not None:
            raise BackendError(f"backend exited with code {self._proc.returncode}")
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(f"backend pipe closed: {exc}") from exc

    def _recv(self) -> dict:
        deadline = time.monotonic() + self.timeout
        line = ""
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._terminate()
                raise BackendError(f"backend response timed out after {self.timeout}s")
            if not self._sel.select(timeout=remaining):
                continue
            line = self._proc.stdout.readline()
            break
        if not line:
            code = self._proc.poll()
            raise BackendError(f"backend closed its stdout (exit code {code})")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            self._terminate()
            raise BackendError(f"malformed backend line: {line[:120]!r}") from exc
        return msg

    def segment(self, cloud, channels, clicks=None):
        if clicks is None:
            raise ValueError("external backends need the click list")
        self._send({"type": "segment", "session": "s0",
                    "clicks": [c.to_record() for c in clicks]})
        msg = self._recv()
        if msg.get("type") != "mask":
            self._terminate()
            raise BackendError(f"expected mask response, got {msg!r}")
        raw = base64.b64decode(msg["scores_b64"])
        scores = np.frombuffer(raw, dtype="<f4")
        if scores.shape[0] != self.n_points:
            raise BackendError(
                f"backend returned {scores.shape[0]} scores for {self.n_points} points")
        return SoftMask(scores.copy())

    def adapt(self, clicks, gt_hint=None):
        if not self.capabilities.supports_adaptation:
            raise CapabilityError("backend does not declare supports_adaptation")
        payload = {"type": "adapt", "session": "s0",
                   "clicks": [c.to_record() for c in clicks]}
        if gt_hint is not None:
            payload["gt_hint"] = {str(k): bool(v) for k, v in gt_hint.items()}
        self._send(payload)
        msg = self._recv()
        if msg.get("type") != "ack":
            raise BackendError(f"expected ack, got {msg!r}")

    def _terminate(self) -> None:
        if self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._send({"type": "shutdown"})
            except BackendError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._terminate()
        self._sel.close()
