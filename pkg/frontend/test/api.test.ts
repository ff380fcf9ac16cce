import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { fixture, installFixtureFetch, knownRecordId } from "./helpers.js";

describe("ApiClient", () => {
  beforeEach(() => {
    installFixtureFetch();
  });

  it("search returns ranked results", async () => {
    const api = new ApiClient();
    const response = await api.search("dragon");
    expect(response.results.length).toBeGreaterThan(0);
    expect(response.results[0]!.record_id).toBe(
      fixture<{ results: { record_id: string }[] }>("search_dragon.json").results[0]!.record_id,
    );
    const scores = response.results.map((r) => r.score);
    expect(scores).toEqual([...scores].sort((a, b) => b - a));
  });

  it("record detail carries the IIIF url and provenance", async () => {
    const api = new ApiClient();
    const record = await api.record(knownRecordId());
    expect(record.iiif_url).toMatch(/^https:\/\//);
    expect(record.iiif_url).toContain("/full/full/0/default.jpg");
    expect(record.page_ref.page_index).toBeGreaterThanOrEqual(1);
  });

  it("unknown record raises ApiError 404", async () => {
    const api = new ApiClient();
    await expect(api.record("zz_zz_zz_p00001_b00")).rejects.toMatchObject({
      name: "ApiError",
      status: 404,
    });
  });

  it("neighbors are sorted by weight descending", async () => {
    const api = new ApiClient();
    const response = await api.neighbors(knownRecordId(), 8);
    const weights = response.neighbors.map((n) => n.weight);
    expect(weights).toEqual([...weights].sort((a, b) => b - a));
  });

  it("network failure surfaces as ApiError status 0", async () => {
    installFixtureFetch({ failing: /\/api\/search/ });
    const api = new ApiClient();
    try {
      await api.search("dragon");
      expect.unreachable("should have thrown");
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).status).toBe(0);
    }
  });

  it("graph payload matches node-link schema", async () => {
    const api = new ApiClient();
    const graph = await api.graph();
    expect(graph.directed).toBe(false);
    const ids = new Set(graph.nodes.map((n) => n.id));
    for (const link of graph.links) {
      expect(ids.has(link.source)).toBe(true);
      expect(ids.has(link.target)).toBe(true);
    }
  });
});
