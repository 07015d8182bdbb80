/** Thin typed client for the chat service; fetch is injectable so tests
 * can replay recorded responses without a network. */

import type {
  ApiError,
  ImagesResponse,
  Reply,
  SessionResponse,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class ServiceError extends Error {
  constructor(
    public readonly code: string,
    message: string,
    public readonly status: number,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike,
  ) {}

  private async request<T>(
    path: string,
    method: "GET" | "POST",
    body?: unknown,
  ): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = (await res.json()) as T | ApiError;
    if (res.status >= 400) {
      const err = payload as ApiError;
      throw new ServiceError(err.code ?? "UNKNOWN", err.message ?? "", res.status);
    }
    return payload as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("/health", "GET");
  }

  images(): Promise<ImagesResponse> {
    return this.request("/images", "GET");
  }

  createSession(body: {
    image_id?: string;
    style?: string;
    degender?: boolean;
  }): Promise<SessionResponse> {
    return this.request("/session", "POST", body);
  }

  chat(sessionId: string, message: string): Promise<Reply> {
    return this.request("/chat", "POST", {
      session_id: sessionId,
      message,
    });
  }
}
