/** HTTP client for the click3d /v1 session service.
 *
 * At most one click request is in flight per session; further clicks queue
 * behind it so server mask versions always arrive in order.
 */

import {
  FinalRecord,
  MaskResponse,
  Polarity,
  SceneMeta,
  decodeScores,
} from "./protocol.js";
import { DecodedChunk, assembleChunks, chunkPointCount, decodeChunk } from "./chunks.js";

export class ServiceError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function expectJson(res: Response): Promise<unknown> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = (await res.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // keep the status text
    }
    throw new ServiceError(res.status, detail);
  }
  return res.json();
}

export class SessionClient {
  sessionId: string | null = null;
  maskVersion = 0;
  nPoints = 0;
  finalized = false;
  lastRoundTripMs = 0;
  private queue: Promise<unknown> = Promise.resolve();

  constructor(readonly baseUrl: string, readonly sceneId: string) {}

  private url(path: string): string {
    return `${this.baseUrl}/v1${path}`;
  }

  async sceneMeta(): Promise<SceneMeta> {
    return SceneMeta.parse(await expectJson(await fetch(this.url(`/scenes/${this.sceneId}/meta`))));
  }

  /** Fetch and assemble every geometry chunk; pass withScores to include
   *  the live mask of the open session. */
  async loadGeometry(withScores = false): Promise<DecodedChunk> {
    const meta = await this.sceneMeta();
    const suffix = withScores && this.sessionId ? `?session=${this.sessionId}` : "";
    const chunks: DecodedChunk[] = [];
    for (let i = 0; i < meta.n_chunks; i++) {
      const res = await fetch(this.url(`/scenes/${this.sceneId}/chunks/${i}${suffix}`));
      if (!res.ok) throw new ServiceError(res.status, `chunk ${i} fetch failed`);
      const n = chunkPointCount(i, meta.n_points, meta.chunk_size);
      chunks.push(decodeChunk(await res.arrayBuffer(), n, withScores && this.sessionId !== null));
    }
    return assembleChunks(chunks, meta.n_points);
  }

  async open(backend = "ref", epsilon = 0.05): Promise<void> {
    const doc = (await expectJson(
      await fetch(this.url("/sessions"), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ scene_id: this.sceneId, backend, epsilon }),
      }),
    )) as { session_id: string; mask_version: number };
    this.sessionId = doc.session_id;
    this.maskVersion = doc.mask_version;
    this.nPoints = (await this.sceneMeta()).n_points;
  }

  private enqueue<T>(task: () => Promise<T>): Promise<T> {
    const next = this.queue.then(task, task);
    this.queue = next.catch(() => undefined);
    return next;
  }

  private async mutate(path: string, body?: unknown): Promise<MaskResponse> {
    if (this.sessionId === null) throw new Error("session not open");
    if (this.finalized) throw new ServiceError(409, "session is finalized");
    const start = performance.now();
    const res = await fetch(this.url(`/sessions/${this.sessionId}${path}`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    let doc: MaskResponse;
    try {
      doc = MaskResponse.parse(await expectJson(res));
    } catch (err) {
      if (err instanceof ServiceError && err.status === 409) this.finalized = true;
      throw err;
    }
    this.lastRoundTripMs = performance.now() - start;
    this.maskVersion = doc.mask_version;
    return doc;
  }

  addClick(pointIndex: number, polarity: Polarity): Promise<MaskResponse> {
    return this.enqueue(() => this.mutate("/clicks", { polarity, point_index: pointIndex }));
  }

  undo(): Promise<MaskResponse> {
    return this.enqueue(() => this.mutate("/undo"));
  }

  /** Current mask scores; refetches when the local version is stale. */
  async maskScores(doc?: MaskResponse): Promise<Float32Array> {
    if (doc?.scores_b64) return decodeScores(doc.scores_b64, this.nPoints);
    const fresh = MaskResponse.parse(
      await expectJson(await fetch(this.url(`/sessions/${this.sessionId}/mask?version=${this.maskVersion}`))),
    );
    this.maskVersion = fresh.mask_version;
    return decodeScores(fresh.scores_b64!, this.nPoints);
  }

  finalize(): Promise<FinalRecord> {
    return this.enqueue(async () => {
      if (this.sessionId === null) throw new Error("session not open");
      const doc = FinalRecord.parse(
        await expectJson(await fetch(this.url(`/sessions/${this.sessionId}/finalize`), { method: "POST" })),
      );
      this.finalized = true;
      return doc;
    });
  }
}
