/** Typed client for the faceforge /v1 HTTP API. All geometry comes from the
 * service; this module never computes vertices. A custom fetch can be
 * injected for tests. */

import type { ParamVector } from "./params.js";

export interface MeshJson {
  vertices: number[][];
  faces: number[][];
  normals: number[][];
  uvs: number[][] | null;
}

export interface ServiceInfo {
  model: {
    n_vertices: number;
    n_faces: number;
    n_shape: number;
    n_expression: number;
    n_joints: number;
    n_pose_correctives: number;
  } | null;
  weights_signature: string | null;
  architecture: string | null;
  embedder: string | null;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public errorCode: string,
    public detail: string,
  ) {
    super(`${errorCode}: ${detail}`);
  }

  get isEmbedderUnavailable(): boolean {
    return this.status === 503;
  }
}

type FetchFn = typeof fetch;

async function raiseForStatus(resp: Response): Promise<void> {
  if (resp.ok) return;
  let code = "error";
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    code = body.error ?? code;
    detail = body.detail ?? detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ServiceError(resp.status, code, detail);
}

export class ServiceClient {
  constructor(
    public baseUrl: string,
    private fetchFn: FetchFn = globalThis.fetch,
  ) {}

  private async post(path: string, body: unknown): Promise<Response> {
    const resp = await this.fetchFn(this.baseUrl.replace(/\/$/, "") + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    await raiseForStatus(resp);
    return resp;
  }

  async info(): Promise<ServiceInfo> {
    const resp = await this.fetchFn(this.baseUrl.replace(/\/$/, "") + "/v1/info");
    await raiseForStatus(resp);
    return resp.json();
  }

  async embedText(text: string): Promise<number[]> {
    const resp = await this.post("/v1/embed-text", { text });
    const body = await resp.json();
    return body.embedding;
  }

  async regress(embedding: number[]): Promise<ParamVector> {
    const resp = await this.post("/v1/regress", { embedding });
    return resp.json();
  }

  async decodeJson(params: ParamVector): Promise<MeshJson> {
    const resp = await this.post("/v1/decode", { params, want: "json" });
    return resp.json();
  }

  async decodeObj(params: ParamVector): Promise<string> {
    const resp = await this.post("/v1/decode", { params, want: "obj" });
    return resp.text();
  }
}
