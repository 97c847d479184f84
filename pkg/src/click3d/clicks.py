"""User clicks and the two binary click-encoding channels.

A click lights every point inside a closed axis-aligned cube of
half-width epsilon around the click position; positive and negative
clicks feed separate channels that get appended to the point features.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .scene import PointCloud

POSITIVE = "pos"
NEGATIVE = "neg"

DEFAULT_EPSILON = 0.05  # meters; one cell at the 5 cm simulation grid


@dataclass(frozen=True)
class Click:
    position: tuple[float, float, float]
    polarity: str                     # "pos" | "neg"
    ordinal: int                      # 1-based within a session
    snapped_index: int | None = None  # scene point the click landed on

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"polarity must be 'pos' or 'neg', got {self.polarity!r}")
        if not all(np.isfinite(self.position)):
            raise ValueError("click position must be finite")

    @property
    def is_positive(self) -> bool:
        return self.polarity == POSITIVE

    def to_record(self) -> dict:
        return {
            "ordinal": self.ordinal,
            "polarity": self.polarity,
            "x": float(self.position[0]),
            "y": float(self.position[1]),
            "z": float(self.position[2]),
            "snapped_point_index": self.snapped_index,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Click":
        return cls(position=(rec["x"], rec["y"], rec["z"]), polarity=rec["polarity"],
                   ordinal=rec["ordinal"], snapped_index=rec.get("snapped_point_index"))


@dataclass(frozen=True)
class ClickChannels:
    t_p: np.ndarray   # (N,) uint8
    t_n: np.ndarray   # (N,) uint8
    epsilon: float


def encode_clicks(cloud: PointCloud, clicks: list[Click], epsilon: float = DEFAULT_EPSILON) -> ClickChannels:
    """Build the positive/negative channels over all points.

    A point is set in a channel iff it lies within the closed Chebyshev
    cube of half-width epsilon around any click of that polarity.
    Order-independent and idempotent in click multiplicity.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    n = cloud.n_points
    t_p = np.zeros(n, dtype=np.uint8)
    t_n = np.zeros(n, dtype=np.uint8)
    pos = cloud.positions
    for c in clicks:
        q = np.asarray(c.position, dtype=np.float64)
        inside = np.all(np.abs(pos - q) <= epsilon, axis=1)
        if c.is_positive:
            t_p |= inside
        else:
            t_n |= inside
    for a in (t_p, t_n):
        a.flags.writeable = False
    return ClickChannels(t_p=t_p, t_n=t_n, epsilon=float(epsilon))


def assemble_input(cloud: PointCloud, channels: ClickChannels) -> np.ndarray:
    """Stack [xyz | rgb? | t_p | t_n] into the (N, C+2) feature matrix."""
    if channels.t_p.shape[0] != cloud.n_points:
        raise ValueError(
            f"channels built for {channels.t_p.shape[0]} points, cloud has {cloud.n_points}")
    cols = [cloud.positions]
    if cloud.colors is not None:
        cols.append(cloud.colors.astype(np.float64))
    cols.append(channels.t_p[:, None].astype(np.float64))
    cols.append(channels.t_n[:, None].astype(np.float64))
    return np.hstack(cols)


def snap_to_point(cloud: PointCloud, position) -> int:
    """Index of the nearest scene point (lowest index on exact ties)."""
    d = np.linalg.norm(cloud.positions - np.asarray(position, dtype=np.float64), axis=1)
    return int(np.argmin(d))


def snapped_click(cloud: PointCloud, position, polarity: str, ordinal: int) -> Click:
    """Click snapped onto the nearest scene point's exact coordinates."""
    idx = snap_to_point(cloud, position)
    p = cloud.positions[idx]
    return Click(position=(float(p[0]), float(p[1]), float(p[2])),
                 polarity=polarity, ordinal=ordinal, snapped_index=idx)


def renumber(clicks: list[Click]) -> list[Click]:
    """Reassign contiguous 1-based ordinals (after undo)."""
    return [replace(c, ordinal=i + 1) for i, c in enumerate(clicks)]
