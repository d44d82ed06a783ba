import { afterEach, describe, expect, it, vi } from "vitest";

import { ServiceClient, ServiceError } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

afterEach(() => {
  vi.restoreAllMocks();
});

describe("ServiceClient", () => {
  it("posts text queries with text, k, and filter in the body", async () => {
    const fetchMock = vi
      .spyOn(globalThis, "fetch")
      .mockResolvedValue(jsonResponse({ results: [] }));
    const client = new ServiceClient("http://svc");
    await client.queryText("a brown macule", 7, "image");
    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("http://svc/query/text");
    expect(JSON.parse(init!.body as string)).toEqual({
      text: "a brown macule",
      k: 7,
      filter: "image",
    });
  });

  it("carries the seed item id in 'more like this' requests", async () => {
    const fetchMock = vi
      .spyOn(globalThis, "fetch")
      .mockResolvedValue(jsonResponse({ results: [] }));
    const client = new ServiceClient("http://svc");
    await client.queryItem("img:case-0042", 5, null);
    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("http://svc/query/item");
    expect(JSON.parse(init!.body as string).id).toBe("img:case-0042");
  });

  it("aborts the previous in-flight query when a new one starts", async () => {
    const seen: AbortSignal[] = [];
    vi.spyOn(globalThis, "fetch").mockImplementation((_url, init) => {
      seen.push(init!.signal as AbortSignal);
      return new Promise<Response>((resolve) => {
        setTimeout(() => resolve(jsonResponse({ results: [] })), 5);
      });
    });
    const client = new ServiceClient("http://svc");
    const first = client.queryText("one", 3, null);
    const second = client.queryText("two", 3, null);
    await Promise.allSettled([first, second]);
    expect(seen[0].aborted).toBe(true);
    expect(seen[1].aborted).toBe(false);
  });

  it("surfaces service error details", async () => {
    vi.spyOn(globalThis, "fetch").mockImplementation(async () =>
      jsonResponse({ detail: "empty query text" }, 422),
    );
    const client = new ServiceClient("http://svc");
    await expect(client.queryText("", 3, null)).rejects.toThrowError(ServiceError);
    await expect(client.queryText("", 3, null)).rejects.toThrow("empty query text");
  });

  it("reads health", async () => {
    vi.spyOn(globalThis, "fetch").mockResolvedValue(
      jsonResponse({ status: "ok", index_size: 700, checkpoint_hash: "abc" }),
    );
    const client = new ServiceClient("http://svc");
    const health = await client.health();
    expect(health.index_size).toBe(700);
  });
});
