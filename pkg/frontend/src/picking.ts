/** Screen-space point picking.
 *
 * Points are infinitesimal, so picking is "nearest projected point within a
 * pixel radius" rather than exact ray intersection. Ties on screen distance
 * (e.g. two points on the same view ray) go to the point nearer the camera.
 */

export interface Viewport {
  width: number;
  height: number;
}

export interface PickResult {
  index: number;
  screenDistance: number; // pixels
  depth: number;          // NDC z, smaller = nearer
}

const TIE_EPS_PX = 1e-6;

/** Project one world point through a column-major view-projection matrix.
 *  Returns [px, py, ndcZ] or null when the point is behind the camera. */
export function projectPoint(
  m: ArrayLike<number>, x: number, y: number, z: number, viewport: Viewport,
): [number, number, number] | null {
  const cw = m[3] * x + m[7] * y + m[11] * z + m[15];
  if (cw <= 0) return null;
  const cx = (m[0] * x + m[4] * y + m[8] * z + m[12]) / cw;
  const cy = (m[1] * x + m[5] * y + m[9] * z + m[13]) / cw;
  const cz = (m[2] * x + m[6] * y + m[10] * z + m[14]) / cw;
  return [(cx * 0.5 + 0.5) * viewport.width, (0.5 - cy * 0.5) * viewport.height, cz];
}

export function pickPoint(
  positions: Float32Array | Float64Array,
  viewProjection: ArrayLike<number>,
  viewport: Viewport,
  screenX: number,
  screenY: number,
  radiusPx = 8,
): PickResult | null {
  let best: PickResult | null = null;
  const n = positions.length / 3;
  for (let i = 0; i < n; i++) {
    const p = projectPoint(viewProjection, positions[i * 3], positions[i * 3 + 1], positions[i * 3 + 2], viewport);
    if (p === null) continue;
    const d = Math.hypot(p[0] - screenX, p[1] - screenY);
    if (d > radiusPx) continue;
    if (
      best === null ||
      d < best.screenDistance - TIE_EPS_PX ||
      (Math.abs(d - best.screenDistance) <= TIE_EPS_PX && p[2] < best.depth)
    ) {
      best = { index: i, screenDistance: d, depth: p[2] };
    }
  }
  return best; // null = click on empty sky, a valid no-op
}
