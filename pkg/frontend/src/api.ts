/**
 * Typed fetch client for the /v1 workbench API.
 *
 * JSON endpoints are decoded into the wire types; error responses carry a
 * {code, message, detail} body which surfaces as ApiError so callers can
 * branch on the machine-readable code.  Binary endpoints (images, masks,
 * exports) return the exact response bytes with no decode/re-encode step:
 * downloaded CSVs must stay byte-identical to what the server produced.
 */

import type {
  BundleInfo,
  ClassifyRequest,
  ClassifyResponse,
  ClickBody,
  GridJobRequest,
  HealthResponse,
  ImageUploadResponse,
  JobResponse,
  MaskResponse,
  ModelInfo,
  QuantifyRequest,
  QuantifyResponse,
  SessionCreateResponse,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly detail: unknown;

  constructor(status: number, code: string, message: string, detail: unknown = null) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
    this.detail = detail;
  }
}

export class WorkbenchClient {
  constructor(private readonly baseUrl: string = "") {}

  // -- images ---------------------------------------------------------------

  async uploadImage(bytes: Uint8Array | Blob, contentType = "image/png"): Promise<ImageUploadResponse> {
    const res = await fetch(this.url("/v1/images"), {
      method: "POST",
      headers: { "Content-Type": contentType },
      body: bytes as BodyInit,
    });
    return this.decodeJson<ImageUploadResponse>(res);
  }

  fetchImage(imageId: string): Promise<Uint8Array> {
    return this.fetchBytes(`/v1/images/${imageId}`);
  }

  // -- sessions -------------------------------------------------------------

  createSession(imageId: string, bundle: string): Promise<SessionCreateResponse> {
    return this.requestJson("POST", "/v1/sessions", { image_id: imageId, bundle });
  }

  addClick(sessionId: string, click: ClickBody): Promise<MaskResponse> {
    return this.requestJson("POST", `/v1/sessions/${sessionId}/clicks`, click);
  }

  undoClick(sessionId: string): Promise<MaskResponse> {
    return this.requestJson("POST", `/v1/sessions/${sessionId}/undo`);
  }

  sessionMask(sessionId: string): Promise<Uint8Array> {
    return this.fetchBytes(`/v1/sessions/${sessionId}/mask`);
  }

  quantify(sessionId: string, req: QuantifyRequest): Promise<QuantifyResponse> {
    return this.requestJson("POST", `/v1/sessions/${sessionId}/quantify`, req);
  }

  // -- classification and jobs ---------------------------------------------

  classify(req: ClassifyRequest): Promise<ClassifyResponse> {
    return this.requestJson("POST", "/v1/classify", req);
  }

  submitGridJob(req: GridJobRequest): Promise<JobResponse> {
    return this.requestJson("POST", "/v1/jobs/grid", req);
  }

  getJob(jobId: string): Promise<JobResponse> {
    return this.requestJson("GET", `/v1/jobs/${jobId}`);
  }

  // -- registries -----------------------------------------------------------

  listModels(): Promise<ModelInfo[]> {
    return this.requestJson("GET", "/v1/models");
  }

  listBundles(): Promise<BundleInfo[]> {
    return this.requestJson("GET", "/v1/bundles");
  }

  health(): Promise<HealthResponse> {
    return this.requestJson("GET", "/v1/healthz");
  }

  // -- plumbing -------------------------------------------------------------

  /** Fetch a server resource as raw bytes, exactly as served. */
  async fetchBytes(path: string): Promise<Uint8Array> {
    const res = await fetch(this.url(path));
    if (!res.ok) {
      throw await this.toApiError(res);
    }
    return new Uint8Array(await res.arrayBuffer());
  }

  private async requestJson<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await fetch(this.url(path), {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    return this.decodeJson<T>(res);
  }

  private async decodeJson<T>(res: Response): Promise<T> {
    if (!res.ok) {
      throw await this.toApiError(res);
    }
    return (await res.json()) as T;
  }

  private async toApiError(res: Response): Promise<ApiError> {
    let code = "http_error";
    let message = `${res.status} ${res.statusText}`;
    let detail: unknown = null;
    try {
      const body = (await res.json()) as { code?: string; message?: string; detail?: unknown };
      if (typeof body.code === "string") code = body.code;
      if (typeof body.message === "string") message = body.message;
      detail = body.detail ?? null;
    } catch {
      // non-JSON error body; keep the HTTP status text
    }
    return new ApiError(res.status, code, message, detail);
  }

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }
}
