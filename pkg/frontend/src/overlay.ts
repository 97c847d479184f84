/** Click markers and mask overlay coloring.
 *
 * The server is the single source of truth: every marker corresponds 1:1 to
 * a server-acknowledged click, and recoloring never mutates the base color
 * buffer, so clearing local state and refetching reproduces the display.
 */

import type { Polarity } from "./protocol.js";

export interface Marker {
  pointIndex: number;
  polarity: Polarity;
  ordinal: number;
}

export const MARKER_COLORS: Record<Polarity, [number, number, number]> = {
  pos: [0, 200, 0],   // green
  neg: [220, 0, 0],   // red
};
export const MASK_TINT: [number, number, number] = [170, 90, 220]; // purple

export type ColorMode = "rgb" | "mask-overlay" | "error-overlay";

export class OverlayState {
  private markers_: Marker[] = [];
  maskVersion = 0;
  scores: Float32Array | null = null;

  get markers(): readonly Marker[] {
    return this.markers_;
  }

  /** Record a click only once the server has acknowledged it. */
  acknowledge(pointIndex: number, polarity: Polarity, maskVersion: number, scores: Float32Array): void {
    this.markers_.push({ pointIndex, polarity, ordinal: this.markers_.length + 1 });
    this.maskVersion = maskVersion;
    this.scores = scores;
  }

  undo(maskVersion: number, scores: Float32Array): void {
    this.markers_.pop();
    this.maskVersion = maskVersion;
    this.scores = scores;
  }

  /** The latest click renders enlarged. */
  markerScale(marker: Marker): number {
    return marker.ordinal === this.markers_.length ? 2.0 : 1.0;
  }

  /** New per-point color buffer; the base buffer is left untouched. */
  colorize(baseRgb: Uint8Array, mode: ColorMode, gtMask?: Uint8Array): Uint8Array {
    const out = baseRgb.slice();
    if (mode === "rgb" || this.scores === null) return out;
    const n = this.scores.length;
    for (let i = 0; i < n; i++) {
      const inMask = this.scores[i] >= 0.5;
      if (mode === "mask-overlay") {
        if (!inMask) continue;
        out[i * 3] = (out[i * 3] + 2 * MASK_TINT[0]) / 3;
        out[i * 3 + 1] = (out[i * 3 + 1] + 2 * MASK_TINT[1]) / 3;
        out[i * 3 + 2] = (out[i * 3 + 2] + 2 * MASK_TINT[2]) / 3;
      } else if (gtMask) {
        // error overlay: false negatives blue, false positives orange
        const inGt = gtMask[i] !== 0;
        if (inGt && !inMask) out.set([40, 90, 255], i * 3);
        else if (!inGt && inMask) out.set([255, 150, 30], i * 3);
      }
    }
    return out;
  }
}
