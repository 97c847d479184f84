/** Binary geometry chunk decoding.
 *
 * Each chunk of n points is laid out little-endian as float32 xyz[n*3],
 * uint8 rgb[n*3], then float32 scores[n] when the request named a session.
 */

export interface DecodedChunk {
  positions: Float32Array; // n*3
  colors: Uint8Array;      // n*3
  scores: Float32Array | null;
}

export function chunkPointCount(chunkIndex: number, nPoints: number, chunkSize: number): number {
  const start = chunkIndex * chunkSize;
  if (start < 0 || start >= nPoints) throw new Error(`chunk ${chunkIndex} out of range`);
  return Math.min(nPoints, start + chunkSize) - start;
}

export function decodeChunk(buffer: ArrayBuffer, nChunkPoints: number, withScores: boolean): DecodedChunk {
  const expected = nChunkPoints * 12 + nChunkPoints * 3 + (withScores ? nChunkPoints * 4 : 0);
  if (buffer.byteLength !== expected) {
    throw new Error(`chunk is ${buffer.byteLength} bytes, expected ${expected}`);
  }
  const positions = new Float32Array(buffer, 0, nChunkPoints * 3);
  const colors = new Uint8Array(buffer, nChunkPoints * 12, nChunkPoints * 3);
  let scores: Float32Array | null = null;
  if (withScores) {
    // the rgb block can leave the score offset unaligned for a float32
    // view, so copy the bytes out
    const raw = new Uint8Array(buffer, nChunkPoints * 15, nChunkPoints * 4);
    scores = new Float32Array(raw.slice().buffer);
  }
  return { positions, colors, scores };
}

/** Concatenate per-chunk buffers into whole-scene render buffers. */
export function assembleChunks(chunks: DecodedChunk[], nPoints: number): DecodedChunk {
  const positions = new Float32Array(nPoints * 3);
  const colors = new Uint8Array(nPoints * 3);
  const withScores = chunks.length > 0 && chunks[0].scores !== null;
  const scores = withScores ? new Float32Array(nPoints) : null;
  let at = 0;
  for (const chunk of chunks) {
    const n = chunk.positions.length / 3;
    positions.set(chunk.positions, at * 3);
    colors.set(chunk.colors, at * 3);
    if (scores && chunk.scores) scores.set(chunk.scores, at);
    at += n;
  }
  if (at !== nPoints) {
    throw new Error(`chunks held ${at} points, scene has ${nPoints}`);
  }
  return { positions, colors, scores };
}
