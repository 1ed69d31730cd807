/**
 * Typed REST client for the editing service.
 *
 * All model state lives server-side; the client only moves JSON and base64
 * PNG blobs. Server errors surface as ApiError and are rendered inline by
 * the UI, never swallowed.
 */

export interface Pose {
  pitch: number;
  yaw: number;
  roll: number;
}

export interface RenderRequest {
  checkpoint_id: string;
  pose?: Pose;
  width?: number;
  height?: number;
  z?: number[];
  z_i?: number[][];
  seed?: number;
}

export interface RenderResponse {
  rgb_png: string;
  labels_png: string;
  sem_meta: { width: number; height: number; num_groups: number };
  z: number[];
  z_i: number[][];
}

export interface SemanticResponse {
  labels_png: string;
  sem_probs: string;
  sem_meta: { dtype: string; shape: number[] };
  z: number[];
  z_i: number[][];
}

export interface JobRecord {
  id: string;
  kind: string;
  state: "queued" | "running" | "done" | "failed";
  progress: number;
  artifacts: Record<string, unknown>;
  error: string | null;
  trace_tail: Array<Record<string, number>>;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class SfeClient {
  constructor(
    public base: string,
    private fetchFn: FetchLike = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchFn(`${this.base}${path}`, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await resp.text();
    let parsed: unknown;
    try {
      parsed = text ? JSON.parse(text) : null;
    } catch {
      parsed = text;
    }
    if (!resp.ok) {
      const detail =
        parsed && typeof parsed === "object" && "detail" in (parsed as object)
          ? String((parsed as { detail: unknown }).detail)
          : String(parsed);
      throw new ApiError(resp.status, detail);
    }
    return parsed as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  checkpoints(): Promise<Array<{ id: string }>> {
    return this.request("GET", "/checkpoints");
  }

  render(req: RenderRequest): Promise<RenderResponse> {
    return this.request("POST", "/render", req);
  }

  semantic(req: RenderRequest): Promise<SemanticResponse> {
    return this.request("POST", "/semantic", req);
  }

  invert(req: Record<string, unknown>): Promise<{ job_id: string }> {
    return this.request("POST", "/invert", req);
  }

  submitEdit(req: {
    checkpoint_id: string;
    inversion_id: string;
    edited_mask_png: string;
    region_png?: string;
    steps?: number;
  }): Promise<{ job_id: string }> {
    return this.request("POST", "/edit/preview", req);
  }

  transfer(req: Record<string, unknown>): Promise<{ job_id: string }> {
    return this.request("POST", "/transfer", req);
  }

  job(id: string): Promise<JobRecord> {
    return this.request("GET", `/jobs/${id}`);
  }
}

/** Hard labels from a flattened [H, W, n] probability map. */
export function argmaxLabels(probs: Float32Array, width: number, height: number, groups: number): Uint8Array {
  const labels = new Uint8Array(width * height);
  for (let p = 0; p < width * height; p++) {
    let best = 0;
    let bestVal = probs[p * groups];
    for (let c = 1; c < groups; c++) {
      const v = probs[p * groups + c];
      if (v > bestVal) {
        best = c;
        bestVal = v;
      }
    }
    labels[p] = best;
  }
  return labels;
}

export function decodeBase64(data: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(data);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(data, "base64"));
}

export function encodeBase64(data: Uint8Array): string {
  if (typeof btoa === "function") {
    let bin = "";
    for (let i = 0; i < data.length; i++) bin += String.fromCharCode(data[i]);
    return btoa(bin);
  }
  return Buffer.from(data).toString("base64");
}

export function decodeFloat32(b64: string): Float32Array {
  const bytes = decodeBase64(b64);
  return new Float32Array(bytes.buffer, bytes.byteOffset, bytes.byteLength / 4);
}
