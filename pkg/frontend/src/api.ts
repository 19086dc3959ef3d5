/** Thin HTTP client for the conversation service. Every method maps to one
 * endpoint and returns a decoded payload; all failures surface as ApiError,
 * with status null when the request never reached the server. */

import {
  HealthInfo,
  HistoryReply,
  MessageReply,
  SessionInfo,
  Suggestion,
  decodeHealth,
  decodeHistory,
  decodeMessageReply,
  decodePins,
  decodeSession,
  decodeSuggestion,
} from "./types.js";

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  /** HTTP status, or null for a network-level failure. */
  readonly status: number | null;
  readonly body: unknown;

  constructor(message: string, status: number | null, body?: unknown) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.body = body;
  }

  get isNetwork(): boolean {
    return this.status === null;
  }
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchFn;

  constructor(baseUrl = "", fetchFn?: FetchFn) {
    // trailing slash would double up when paths are appended
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn ?? ((url, init) => globalThis.fetch(url, init));
  }

  async health(): Promise<HealthInfo> {
    return decodeHealth(await this.request("GET", "/health"));
  }

  async createSession(dataset: string): Promise<SessionInfo> {
    return decodeSession(await this.request("POST", "/sessions", { dataset }));
  }

  async sendMessage(sessionId: string, text: string): Promise<MessageReply> {
    const path = `/sessions/${encodeURIComponent(sessionId)}/messages`;
    return decodeMessageReply(await this.request("POST", path, { text }));
  }

  async history(sessionId: string): Promise<HistoryReply> {
    const path = `/sessions/${encodeURIComponent(sessionId)}/history`;
    return decodeHistory(await this.request("GET", path));
  }

  async pin(sessionId: string, turn: number): Promise<number[]> {
    const path = `/sessions/${encodeURIComponent(sessionId)}/pins`;
    return decodePins(await this.request("POST", path, { turn }));
  }

  async unpin(sessionId: string, turn: number): Promise<number[]> {
    const path = `/sessions/${encodeURIComponent(sessionId)}/pins/${turn}`;
    return decodePins(await this.request("DELETE", path));
  }

  async pins(sessionId: string): Promise<number[]> {
    const path = `/sessions/${encodeURIComponent(sessionId)}/pins`;
    return decodePins(await this.request("GET", path));
  }

  async suggest(sessionId: string, category: string): Promise<Suggestion> {
    const path =
      `/sessions/${encodeURIComponent(sessionId)}/suggest` +
      `?category=${encodeURIComponent(category)}`;
    return decodeSuggestion(await this.request("GET", path));
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    let res: Response;
    try {
      res = await this.fetchFn(this.base + path, init);
    } catch (err) {
      throw new ApiError(`network failure: ${describe(err)}`, null);
    }
    let payload: unknown = null;
    try {
      payload = await res.json();
    } catch {
      // non-JSON body; the status check below decides what that means
    }
    if (!res.ok) {
      const detail =
        payload !== null && typeof payload === "object" && "error" in payload
          ? String((payload as Record<string, unknown>).error)
          : `${method} ${path} failed with status ${res.status}`;
      throw new ApiError(detail, res.status, payload);
    }
    if (payload === null) {
      throw new ApiError(`malformed response for ${method} ${path}`, res.status);
    }
    return payload;
  }
}

export function describe(err: unknown): string {
  if (err instanceof Error) return err.message;
  return String(err);
}
