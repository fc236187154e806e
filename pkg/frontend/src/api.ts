/** Thin fetch client for the annotation service. */

import type { AnnotateResponse, ModelInfo } from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number | null = null,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

declare global {
  interface Window {
    SERVICE_BASE_URL?: string;
  }
}

/** Base URL from the page config global, else same-origin. */
export function defaultBaseUrl(): string {
  if (typeof window !== "undefined" && window.SERVICE_BASE_URL) {
    return window.SERVICE_BASE_URL.replace(/\/$/, "");
  }
  return "";
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = defaultBaseUrl(),
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`);
    }
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const doc = (await resp.json()) as { detail?: string };
        if (doc.detail) detail = doc.detail;
      } catch {
        // keep the status text
      }
      throw new ApiError(detail, resp.status);
    }
    return resp.json();
  }

  async annotate(
    text: string,
    model: string,
    signal?: AbortSignal,
  ): Promise<AnnotateResponse> {
    return (await this.request("/annotate", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ text, model }),
      signal,
    })) as AnnotateResponse;
  }

  async models(): Promise<ModelInfo[]> {
    return (await this.request("/models")) as ModelInfo[];
  }
}
