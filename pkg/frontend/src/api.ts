/**
 * Typed client for the /v1 endpoints.
 *
 * One request is in flight at a time: issuing a new prompt aborts the
 * pending one. Bodies are validated both ways; any mismatch surfaces as a
 * thrown error rather than a silent drop.
 */

import {
  PromptRequest,
  QuadrupletResponse,
  validateRequest,
  validateResponse,
} from "./types.js";

export type FetchLike = (url: string, init: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  requestCount = 0;
  private inflight: AbortController | null = null;

  constructor(
    public baseUrl: string,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async post(path: string, body: PromptRequest): Promise<QuadrupletResponse> {
    validateRequest(body);
    if (this.inflight) this.inflight.abort();
    const controller = new AbortController();
    this.inflight = controller;
    this.requestCount += 1;
    try {
      const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
        signal: controller.signal,
      });
      if (!res.ok) {
        let detail = res.statusText;
        try {
          const parsed = (await res.json()) as { error?: string };
          if (parsed.error) detail = parsed.error;
        } catch {
          // non-JSON error body; keep the status text
        }
        throw new ApiError(res.status, detail);
      }
      return validateResponse(await res.json());
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }

  detect(req: PromptRequest): Promise<QuadrupletResponse> {
    return this.post("/v1/detect", { ...req, kind: "detect" });
  }

  promptVisual(req: PromptRequest): Promise<QuadrupletResponse> {
    return this.post("/v1/prompt/visual", { ...req, kind: "visual" });
  }

  promptText(req: PromptRequest): Promise<QuadrupletResponse> {
    return this.post("/v1/prompt/text", { ...req, kind: "text" });
  }

  async health(): Promise<boolean> {
    try {
      const res = await this.fetchImpl(`${this.baseUrl}/v1/health`, { method: "GET" });
      return res.ok;
    } catch {
      return false;
    }
  }
}
