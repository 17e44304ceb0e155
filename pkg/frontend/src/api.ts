/**
 * Typed client for the /v1 recommendation endpoints.
 *
 * The console never preprocesses query text; the service owns all NLP so the
 * two surfaces cannot diverge.
 */

export interface RankedCard {
  rank: number;
  class_id: number;
  cluster_id: string;
  score: number;
  tool: string;
  signatures: string[];
  description: string;
  parameters: string;
  returns: string;
}

export interface QueryResponse {
  results: RankedCard[];
  latency_ms: number;
  model_version: string;
}

export interface HealthResponse {
  status: string;
  model_version: string;
}

/** Service rejected the query as unanswerable (HTTP 422). */
export class UnanswerableQueryError extends Error {
  constructor(detail: string) {
    super(detail);
    this.name = "UnanswerableQueryError";
  }
}

/** Service unreachable or returned a non-2xx status other than 422. */
export class ServiceError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
    this.name = "ServiceError";
  }
}

export class ApiClient {
  constructor(
    public baseUrl: string = "",
    private fetchFn: typeof fetch = globalThis.fetch?.bind(globalThis),
  ) {}

  async postQuery(text: string, k: number, signal?: AbortSignal): Promise<QueryResponse> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/v1/query`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ text, k }),
        signal,
      });
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") throw err;
      throw new ServiceError(`service unreachable: ${String(err)}`);
    }
    if (response.status === 422) {
      const body = await response.json().catch(() => ({}));
      throw new UnanswerableQueryError(extractDetail(body));
    }
    if (!response.ok) {
      throw new ServiceError(`query failed with status ${response.status}`, response.status);
    }
    return (await response.json()) as QueryResponse;
  }

  async health(signal?: AbortSignal): Promise<HealthResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/v1/health`, { signal });
    if (!response.ok) throw new ServiceError(`health check failed`, response.status);
    return (await response.json()) as HealthResponse;
  }
}

function extractDetail(body: unknown): string {
  if (body && typeof body === "object" && "detail" in body) {
    const detail = (body as { detail: unknown }).detail;
    if (typeof detail === "string") return detail;
    if (detail && typeof detail === "object" && "error" in detail) {
      return String((detail as { error: unknown }).error);
    }
    return JSON.stringify(detail);
  }
  return "unanswerable query";
}
