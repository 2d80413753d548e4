// Thin typed client for the service endpoints plus the ndjson advice stream.

import type {
  Action,
  AdviseRecord,
  ApplyResponse,
  ErrorBody,
  GridResponse,
  LogResponse,
  SecurityResponse,
  StopResponse,
  WhatifResponse,
} from "./types.js";

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly body: ErrorBody,
  ) {
    super(`${body.error}: ${body.message}`);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  const body = await resp.json();
  if (!resp.ok) throw new ServiceError(resp.status, body as ErrorBody);
  return body as T;
}

/** Splits a byte stream into newline-delimited JSON records. */
export async function* ndjson(
  stream: ReadableStream<Uint8Array>,
): AsyncGenerator<AdviseRecord> {
  const reader = stream.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  for (;;) {
    const { done, value } = await reader.read();
    if (done) break;
    buffer += decoder.decode(value, { stream: true });
    let nl;
    while ((nl = buffer.indexOf("\n")) >= 0) {
      const line = buffer.slice(0, nl).trim();
      buffer = buffer.slice(nl + 1);
      if (line) yield JSON.parse(line) as AdviseRecord;
    }
  }
  const tail = buffer.trim();
  if (tail) yield JSON.parse(tail) as AdviseRecord;
}

export class Client {
  constructor(
    readonly base = "",
    readonly fetchFn: typeof fetch = fetch,
  ) {}

  private get<T>(path: string): Promise<T> {
    return this.fetchFn(this.base + path).then((r) => asJson<T>(r));
  }

  private post<T>(path: string, body?: unknown): Promise<T> {
    return this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    }).then((r) => asJson<T>(r));
  }

  grid(): Promise<GridResponse> {
    return this.get("/grid");
  }

  security(): Promise<SecurityResponse> {
    return this.get("/security");
  }

  whatif(action: Action): Promise<WhatifResponse> {
    return this.post("/whatif", action);
  }

  apply(action: Action): Promise<ApplyResponse> {
    return this.post("/apply", action);
  }

  revert(): Promise<unknown> {
    return this.post("/revert");
  }

  log(): Promise<LogResponse> {
    return this.get("/log");
  }

  stopAdvise(): Promise<StopResponse> {
    return this.post("/advise/stop");
  }

  async *advise(k: number, budget: number): AsyncGenerator<AdviseRecord> {
    const resp = await this.fetchFn(
      `${this.base}/advise?k=${k}&budget=${budget}`,
    );
    if (!resp.ok) throw new ServiceError(resp.status, await resp.json());
    if (!resp.body) throw new Error("advise response has no body");
    yield* ndjson(resp.body);
  }
}
