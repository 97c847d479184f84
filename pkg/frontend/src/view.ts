/** View state: camera framing, color mode, active polarity. */

import type { ColorMode } from "./overlay.js";
import type { Polarity } from "./protocol.js";

export interface CameraFrame {
  target: [number, number, number];
  distance: number;
}

export interface ViewState {
  frame: CameraFrame;
  pointSize: number;
  colorMode: ColorMode;
  polarity: Polarity;
  sessionId: string | null;
  maskVersion: number;
}

/** Orbit target at the bbox center, distance scaled to fit the diagonal. */
export function frameBBox(min: ArrayLike<number>, max: ArrayLike<number>, fovDeg = 50): CameraFrame {
  const target: [number, number, number] = [
    (min[0] + max[0]) / 2,
    (min[1] + max[1]) / 2,
    (min[2] + max[2]) / 2,
  ];
  const diagonal = Math.hypot(max[0] - min[0], max[1] - min[1], max[2] - min[2]);
  const distance = Math.max(diagonal, 1e-6) / (2 * Math.tan((fovDeg * Math.PI) / 360));
  return { target, distance: distance * 1.2 };
}

export function initialViewState(frame: CameraFrame): ViewState {
  return {
    frame,
    pointSize: 3,
    colorMode: "mask-overlay",
    polarity: "pos",
    sessionId: null,
    maskVersion: 0,
  };
}

export function togglePolarity(state: ViewState): ViewState {
  return { ...state, polarity: state.polarity === "pos" ? "neg" : "pos" };
}
