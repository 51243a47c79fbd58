/** Typed client for the annotation service HTTP API. */

import type {
  AddPointReply,
  PointLabelName,
  PropagateProgress,
  SessionDetail,
  SessionInfo,
  TrackedPoint,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function fail(response: Response): Promise<never> {
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { error?: string };
    if (body.error) detail = body.error;
  } catch {
    /* non-JSON error body */
  }
  throw new ApiError(response.status, detail);
}

export class AnnotationClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) await fail(response);
    return (await response.json()) as T;
  }

  createSession(payload: object): Promise<SessionInfo> {
    return this.json("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  sessionDetail(id: string): Promise<SessionDetail> {
    return this.json(`/sessions/${id}`);
  }

  async pointsAtFrame(id: string, frame: number): Promise<TrackedPoint[]> {
    const reply = await this.json<{ frame: number; points: TrackedPoint[] }>(
      `/sessions/${id}/points/${frame}`);
    return reply.points;
  }

  addPoint(
    id: string,
    frame: number,
    x: number,
    y: number,
    label: PointLabelName,
    object: number,
  ): Promise<AddPointReply> {
    return this.json(`/sessions/${id}/points`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ frame, x, y, label, object }),
    });
  }

  removePoint(id: string, pointId: number): Promise<AddPointReply> {
    return this.json(`/sessions/${id}/points/${pointId}`, { method: "DELETE" });
  }

  undo(id: string): Promise<{ ok: boolean }> {
    return this.json(`/sessions/${id}/undo`, { method: "POST" });
  }

  redo(id: string): Promise<{ ok: boolean }> {
    return this.json(`/sessions/${id}/redo`, { method: "POST" });
  }

  frameUrl(id: string, frame: number): string {
    return `${this.baseUrl}/sessions/${id}/frames/${frame}`;
  }

  maskUrl(id: string, frame: number): string {
    return `${this.baseUrl}/sessions/${id}/masks/${frame}`;
  }

  exportUrl(id: string): string {
    return `${this.baseUrl}/sessions/${id}/export`;
  }

  async fetchMask(id: string, frame: number): Promise<Blob> {
    const response = await this.fetchFn(this.maskUrl(id, frame));
    if (!response.ok) await fail(response);
    return response.blob();
  }

  async fetchExport(id: string): Promise<Blob> {
    const response = await this.fetchFn(this.exportUrl(id));
    if (!response.ok) await fail(response);
    return response.blob();
  }

  /** Stream ndjson propagation progress, invoking onProgress per line. */
  async propagate(
    id: string,
    fromFrame: number,
    onProgress?: (p: PropagateProgress) => void,
  ): Promise<number> {
    const response = await this.fetchFn(`${this.baseUrl}/sessions/${id}/propagate`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ from: fromFrame }),
    });
    if (!response.ok) await fail(response);
    const text = await response.text();
    let completed = 0;
    for (const line of text.trim().split("\n")) {
      if (!line) continue;
      const progress = JSON.parse(line) as PropagateProgress;
      if (progress.error) throw new ApiError(500, progress.error);
      if (typeof progress.frame === "number") completed += 1;
      onProgress?.(progress);
    }
    return completed;
  }
}
