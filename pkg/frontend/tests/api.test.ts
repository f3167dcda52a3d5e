import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiError, KisClient } from "../src/api";

interface RecordedCall {
  url: string;
  init?: RequestInit;
}

function stubFetch(body: unknown, status = 200): RecordedCall[] {
  const calls: RecordedCall[] = [];
  vi.stubGlobal(
    "fetch",
    vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      calls.push({ url: String(url), init });
      return new Response(JSON.stringify(body), {
        status,
        headers: { "Content-Type": "application/json" },
      });
    }),
  );
  return calls;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("KisClient request shapes", () => {
  it("posts session creation with the policy header when given", async () => {
    const calls = stubFetch({ session_id: "s", step: 0 });
    const client = new KisClient("http://h:1");
    await client.createSession(
      { mode: "demo", seed: 5, query: { target_id: "item-000001", sigma: 0.5 } },
      "pichunter",
    );
    expect(calls).toHaveLength(1);
    expect(calls[0].url).toBe("http://h:1/sessions");
    expect(calls[0].init?.method).toBe("POST");
    const headers = calls[0].init?.headers as Record<string, string>;
    expect(headers["X-KIS-Policy"]).toBe("pichunter");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      mode: "demo",
      seed: 5,
      query: { target_id: "item-000001", sigma: 0.5 },
    });
  });

  it("omits the policy header by default", async () => {
    const calls = stubFetch({ session_id: "s", step: 0 });
    await new KisClient().createSession({ mode: "live", query: { vectors: [[1, 0]] } });
    const headers = calls[0].init?.headers as Record<string, string>;
    expect(headers["X-KIS-Policy"]).toBeUndefined();
  });

  it("sends feedback labels exactly as given, one 0/1 per pair", async () => {
    const calls = stubFetch({ step: 1, finished: false, confidences: [], top: [] });
    await new KisClient("http://h:1").postFeedback("sess-9", [0, 1, 0, 0, 1]);
    expect(calls[0].url).toBe("http://h:1/sessions/sess-9/feedback");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({ labels: [0, 1, 0, 0, 1] });
  });

  it("asks for a display with the chosen strategy", async () => {
    const calls = stubFetch({ step: 0, strategy: "diverse", pairs: [] });
    await new KisClient().getDisplay("sess", "diverse");
    expect(calls[0].url).toBe("/sessions/sess/display?strategy=diverse");
  });

  it("passes k through to the ranking route", async () => {
    const calls = stubFetch({ step: 0, ranking: [], prob_sum: "1", target_rank: null });
    await new KisClient().getRanking("sess", 50);
    expect(calls[0].url).toBe("/sessions/sess/ranking?k=50");
  });
});

describe("KisClient error mapping", () => {
  it("surfaces the server's detail field with the status", async () => {
    stubFetch({ detail: "no pending display; fetch one first" }, 409);
    const err = await new KisClient()
      .postFeedback("s", [0])
      .then(() => null, (e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(409);
    expect((err as ApiError).detail).toBe("no pending display; fetch one first");
    expect((err as ApiError).retryable).toBe(false);
  });

  it("marks 5xx responses retryable", async () => {
    stubFetch({ detail: "boom" }, 503);
    const err = await new KisClient()
      .health()
      .then(() => null, (e: unknown) => e);
    expect((err as ApiError).retryable).toBe(true);
  });

  it("maps network failures to status 0 and retryable", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => {
        throw new TypeError("fetch failed");
      }),
    );
    const err = await new KisClient("http://down:9")
      .health()
      .then(() => null, (e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(0);
    expect((err as ApiError).retryable).toBe(true);
  });
});
