"""Minimal external backend: echoes the positive click channel as the mask.

Reference implementation of the click3d/1 stdio protocol for backend
authors, and the loopback double used by the protocol conformance tests.

    python -m click3d.backends.echo [--adaptive] [--crash-after N]

--adaptive declares supports_adaptation and additionally pins the scores
of clicked points to their polarity after each adapt event. --crash-after
exits abruptly before answering request number N (fault injection).
"""

from __future__ import annotations

import argparse
import base64
import json
import sys

import numpy as np


def emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--adaptive", action="store_true")
    ap.add_argument("--crash-after", type=int, default=0)
    args = ap.parse_args(argv)

    from click3d.scene import load_scene

    positions = None
    epsilon = 0.05
    pinned: dict[int, float] = {}
    n_requests = 0

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        msg = json.loads(line)
        mtype = msg.get("type")
        if mtype == "init":
            if msg.get("version") != "click3d/1":
                return 2
            scene = load_scene(msg["scene_blob"])
            positions = scene.cloud.positions
            epsilon = float(msg["epsilon"])
            emit({"type": "ready", "supports_adaptation": bool(args.adaptive)})
            continue
        n_requests += 1
        if args.crash_after and n_requests >= args.crash_after:
            sys.exit(13)
        if mtype == "segment":
            scores = np.zeros(len(positions), dtype=np.float32)
            for c in msg["clicks"]:
                if c["polarity"] != "pos":
                    continue
                q = np.array([c["x"], c["y"], c["z"]])
                scores[np.all(np.abs(positions - q) <= epsilon, axis=1)] = 1.0
            for idx, v in pinned.items():
                scores[idx] = v
            emit({"type": "mask", "session": msg.get("session"),
                  "scores_b64": base64.b64encode(scores.astype("<f4").tobytes()).decode()})
        elif mtype == "adapt":
            if not args.adaptive:
                return 2
            for c in msg["clicks"]:
                if c.get("snapped_point_index") is not None:
                    pinned[c["snapped_point_index"]] = 1.0 if c["polarity"] == "pos" else 0.0
            emit({"type": "ack"})
        elif mtype == "shutdown":
            return 0
        else:
            return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
