/** Typed view of the click3d /v1 session service responses. */

import { z } from "zod";

export const SceneMeta = z.object({
  scene_id: z.string(),
  n_points: z.number().int().positive(),
  has_color: z.boolean(),
  has_labels: z.boolean(),
  chunk_size: z.number().int().positive(),
  n_chunks: z.number().int().positive(),
  bbox: z.object({
    min: z.array(z.number()).length(3),
    max: z.array(z.number()).length(3),
  }),
});
export type SceneMeta = z.infer<typeof SceneMeta>;

export const MaskResponse = z.object({
  mask_version: z.number().int().nonnegative(),
  n_points: z.number().int().positive(),
  scores_b64: z.string().optional(),
  bitset_b64: z.string().optional(),
  snapped_point_index: z.number().int().optional(),
  iou: z.number().optional(),
  stale: z.boolean().optional(),
  lossy_undo: z.boolean().optional(),
});
export type MaskResponse = z.infer<typeof MaskResponse>;

export const FinalRecord = z.object({
  session_id: z.string(),
  mask_version: z.number().int(),
  n_clicks: z.number().int(),
  clicks: z.array(z.record(z.unknown())),
  iou: z.number().nullable(),
  trace_path: z.string().nullable(),
});
export type FinalRecord = z.infer<typeof FinalRecord>;

export type Polarity = "pos" | "neg";

function b64ToBytes(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

/** Little-endian float32 scores, one per point. */
export function decodeScores(b64: string, nPoints: number): Float32Array {
  const bytes = b64ToBytes(b64);
  if (bytes.byteLength !== nPoints * 4) {
    throw new Error(`score payload is ${bytes.byteLength} bytes, expected ${nPoints * 4}`);
  }
  return new Float32Array(bytes.buffer, bytes.byteOffset, nPoints);
}

/** Packed bitset (little-endian within each byte) -> boolean mask. */
export function decodeBitset(b64: string, nPoints: number): Uint8Array {
  const bytes = b64ToBytes(b64);
  if (bytes.byteLength < Math.ceil(nPoints / 8)) {
    throw new Error(`bitset payload too short for ${nPoints} points`);
  }
  const out = new Uint8Array(nPoints);
  for (let i = 0; i < nPoints; i++) {
    out[i] = (bytes[i >> 3] >> (i & 7)) & 1;
  }
  return out;
}
