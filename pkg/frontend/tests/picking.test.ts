import { describe, expect, it } from "vitest";

import { pickPoint, projectPoint, Viewport } from "../src/picking.js";

const VIEWPORT: Viewport = { width: 800, height: 600 };

/** Column-major perspective matrix, camera at origin looking down -z. */
function perspective(fovDeg = 50, aspect = 800 / 600, near = 0.1, far = 100): number[] {
  const f = 1 / Math.tan((fovDeg * Math.PI) / 360);
  // prettier-ignore
  return [
    f / aspect, 0, 0, 0,
    0, f, 0, 0,
    0, 0, (far + near) / (near - far), -1,
    0, 0, (2 * far * near) / (near - far), 0,
  ];
}

/** Independent oracle: full 4-vector multiply per point, exhaustive scan. */
function brutePick(
  positions: Float32Array, m: number[], cursor: [number, number], radius: number,
): number | null {
  let best: { i: number; d: number; z: number } | null = null;
  for (let i = 0; i < positions.length / 3; i++) {
    const [x, y, z] = [positions[i * 3], positions[i * 3 + 1], positions[i * 3 + 2]];
    const clip = [0, 1, 2, 3].map((r) => m[r] * x + m[4 + r] * y + m[8 + r] * z + m[12 + r]);
    if (clip[3] <= 0) continue;
    const px = (clip[0] / clip[3] * 0.5 + 0.5) * VIEWPORT.width;
    const py = (0.5 - clip[1] / clip[3] * 0.5) * VIEWPORT.height;
    const d = Math.hypot(px - cursor[0], py - cursor[1]);
    if (d > radius) continue;
    const ndcZ = clip[2] / clip[3];
    if (best === null || d < best.d - 1e-6 || (Math.abs(d - best.d) <= 1e-6 && ndcZ < best.z)) {
      best = { i, d, z: ndcZ };
    }
  }
  return best?.i ?? null;
}

describe("projectPoint", () => {
  it("maps the optical axis to the viewport center", () => {
    const p = projectPoint(perspective(), 0, 0, -5, VIEWPORT);
    expect(p).not.toBeNull();
    expect(p![0]).toBeCloseTo(400);
    expect(p![1]).toBeCloseTo(300);
  });

  it("culls points behind the camera", () => {
    expect(projectPoint(perspective(), 0, 0, 5, VIEWPORT)).toBeNull();
  });
});

describe("pickPoint", () => {
  const m = perspective();

  it("hits a single isolated point under the cursor", () => {
    const positions = new Float32Array([0, 0, -5]);
    const hit = pickPoint(positions, m, VIEWPORT, 400, 300);
    expect(hit?.index).toBe(0);
  });

  it("is a no-op on empty sky", () => {
    const positions = new Float32Array([0, 0, -5]);
    expect(pickPoint(positions, m, VIEWPORT, 100, 100)).toBeNull();
  });

  it("ignores points just outside the pixel radius", () => {
    const positions = new Float32Array([0, 0, -5]);
    const p = projectPoint(m, 0, 0, -5, VIEWPORT)!;
    expect(pickPoint(positions, m, VIEWPORT, p[0] + 9, p[1], 8)).toBeNull();
    expect(pickPoint(positions, m, VIEWPORT, p[0] + 7, p[1], 8)?.index).toBe(0);
  });

  it("breaks exact-ray ties toward the camera, whatever the order", () => {
    const near = [0, 0, -5];
    const far = [0, 0, -10];
    const a = pickPoint(new Float32Array([...near, ...far]), m, VIEWPORT, 400, 300);
    const b = pickPoint(new Float32Array([...far, ...near]), m, VIEWPORT, 400, 300);
    expect(a?.index).toBe(0);
    expect(b?.index).toBe(1);
  });

  it("matches the brute-force oracle on random scenes and cursors", () => {
    let seed = 1234;
    const rand = () => {
      // Park-Miller so the fixture is reproducible
      seed = (seed * 48271) % 2147483647;
      return seed / 2147483647;
    };
    for (let round = 0; round < 20; round++) {
      const n = 30 + Math.floor(rand() * 70);
      const positions = new Float32Array(n * 3);
      for (let i = 0; i < n; i++) {
        positions[i * 3] = rand() * 4 - 2;
        positions[i * 3 + 1] = rand() * 4 - 2;
        positions[i * 3 + 2] = -1 - rand() * 10;
      }
      for (let c = 0; c < 10; c++) {
        const cursor: [number, number] = [rand() * VIEWPORT.width, rand() * VIEWPORT.height];
        const hit = pickPoint(positions, m, VIEWPORT, cursor[0], cursor[1], 12);
        expect(hit?.index ?? null).toBe(brutePick(positions, m, cursor, 12));
      }
    }
  });
});
