import { afterEach, describe, expect, it, vi } from "vitest";

import {
  ApiError,
  DEFAULT_PARAMS,
  fetchHealth,
  fetchZones,
  postInfer,
} from "../src/api";
import { InferRequest, SessionState } from "../src/state";

const ZONES = [
  {
    zone_id: "forehead",
    display_noun: "forehead wrinkles",
    scale_max: 5,
    default_box: [0.3, 0.05, 0.7, 0.25] as [number, number, number, number],
  },
];

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("fetchHealth / fetchZones", () => {
  it("returns the health payload", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => jsonResponse({ status: "ok", checkpoint_sha256: "ab" })),
    );
    const health = await fetchHealth("http://h");
    expect(health.status).toBe("ok");
    expect(vi.mocked(fetch).mock.calls[0]?.[0]).toBe("http://h/healthz");
  });

  it("unwraps the zones list", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => jsonResponse({ zones: ZONES })));
    const zones = await fetchZones("http://h");
    expect(zones).toHaveLength(1);
    expect(zones[0]?.zone_id).toBe("forehead");
  });

  it("raises ApiError while the service is loading", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => jsonResponse({ status: "loading" }, 503)),
    );
    await expect(fetchZones("http://h")).rejects.toBeInstanceOf(ApiError);
  });
});

describe("postInfer", () => {
  it("posts multipart form with image and request fields", async () => {
    const png = new Blob([new Uint8Array([137, 80, 78, 71])]);
    const fetchMock = vi.fn(async () =>
      blobResponse(png, {
        "X-Ldla-Seed": "7",
        "X-Ldla-Duration-Ms": "41.5",
        "X-Ldla-Applied": '{"forehead": 60}',
      }),
    );
    vi.stubGlobal("fetch", fetchMock);

    const state = new SessionState(ZONES);
    state.setEnabled("forehead", true);
    state.setValue("forehead", 60);
    const wire = InferRequest.fromState(state, { ...DEFAULT_PARAMS, seed: 7 }).toWire();
    const result = await postInfer("http://h", png, "face.png", wire);

    expect(result.seed).toBe("7");
    expect(result.durationMs).toBeCloseTo(41.5);
    expect(result.applied).toEqual({ forehead: 60 });

    const [url, init] = fetchMock.mock.calls[0] as unknown as [string, RequestInit];
    expect(url).toBe("http://h/infer");
    const form = init.body as FormData;
    expect(form.get("request")).toBe(wire);
    expect(form.get("image")).toBeInstanceOf(Blob);
  });

  it("surfaces field errors from a 400", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () =>
        jsonResponse(
          { errors: [{ field: "targets.nose", message: "unknown zone" }] },
          400,
        ),
      ),
    );
    const err = await postInfer("http://h", new Blob(["x"]), "f.png", "{}").catch(
      (e) => e,
    );
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(400);
    expect(err.fieldErrors).toEqual([
      { field: "targets.nose", message: "unknown zone" },
    ]);
    expect(err.message).toContain("targets.nose");
  });

  it("handles opaque server failures", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => new Response("boom", { status: 502 })),
    );
    const err = await postInfer("http://h", new Blob(["x"]), "f.png", "{}").catch(
      (e) => e,
    );
    expect(err).toBeInstanceOf(ApiError);
    expect(err.message).toContain("502");
    expect(err.fieldErrors).toEqual([]);
  });
});

function jsonResponse(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function blobResponse(blob: Blob, headers: Record<string, string>): Response {
  return new Response(blob, { status: 200, headers });
}
