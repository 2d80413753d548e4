import { describe, expect, it } from "vitest";

import { Client, ServiceError, ndjson } from "../src/api.js";
import { FakeService } from "./fake.js";

function streamOf(chunks: string[]): ReadableStream<Uint8Array> {
  const encoder = new TextEncoder();
  return new ReadableStream({
    start(controller) {
      for (const c of chunks) controller.enqueue(encoder.encode(c));
      controller.close();
    },
  });
}

async function collect<T>(gen: AsyncGenerator<T>): Promise<T[]> {
  const out: T[] = [];
  for await (const item of gen) out.push(item);
  return out;
}

describe("ndjson", () => {
  it("reassembles records split across arbitrary chunk boundaries", async () => {
    const records = await collect(
      ndjson(streamOf(['{"kind":"cand', 'idate"}\n{"ki', 'nd":"done"}\n'])),
    );
    expect(records.map((r) => r.kind)).toEqual(["candidate", "done"]);
  });

  it("accepts a final record without trailing newline", async () => {
    const records = await collect(ndjson(streamOf(['{"kind":"done"}'])));
    expect(records).toHaveLength(1);
  });

  it("skips blank lines", async () => {
    const records = await collect(
      ndjson(streamOf(['{"kind":"done"}\n\n\n'])),
    );
    expect(records).toHaveLength(1);
  });
});

describe("Client", () => {
  it("parses grid and security from the fixture service", async () => {
    const svc = new FakeService();
    const client = new Client("", svc.fetch);
    const grid = await client.grid();
    expect(grid.substations).toEqual(["S0", "A1", "B1"]);
    const sec = await client.security();
    expect(sec.issues.map((i) => i.line)).toEqual(["M1"]);
  });

  it("raises ServiceError with the server's error body", async () => {
    const svc = new FakeService();
    const client = new Client("", svc.fetch);
    await expect(
      client.whatif({
        changes: [{ kind: "line_status", line: "ghost", in_service: false }],
      }),
    ).rejects.toSatisfy(
      (e) => e instanceof ServiceError && e.status === 400 && e.body.error === "malformed_action",
    );
  });

  it("streams advise candidates before the final done record", async () => {
    const svc = new FakeService();
    const client = new Client("", svc.fetch);
    const records = await collect(client.advise(2, 60));
    expect(records.at(-1)?.kind).toBe("done");
    expect(records.filter((r) => r.kind === "candidate").length).toBeGreaterThan(0);
  });
});
