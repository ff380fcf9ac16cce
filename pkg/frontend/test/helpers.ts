/** Test harness: a fetch stub backed by the canned API fixtures exported
 * from the real fixture service (scripts/export_ui_fixtures.py). */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

export function fixture<T = unknown>(name: string): T {
  return JSON.parse(readFileSync(join(FIXTURES, name), "utf-8")) as T;
}

export interface FetchLogEntry {
  url: string;
}

/** Routes API URLs onto fixture payloads; unknown records 404, unknown
 * routes 500. Override specific URLs (or mark them failing) per test. */
export function installFixtureFetch(options: {
  overrides?: Record<string, unknown>;
  failing?: RegExp;
  log?: FetchLogEntry[];
} = {}): void {
  const detail = fixture<{ record_id: string }>("record_detail.json");
  const knownId = detail.record_id;

  globalThis.fetch = (async (input: RequestInfo | URL): Promise<Response> => {
    const url = typeof input === "string" ? input : input.toString();
    options.log?.push({ url });
    if (options.failing?.test(url)) {
      throw new TypeError("fetch failed (simulated outage)");
    }
    const respond = (payload: unknown, status = 200) =>
      new Response(JSON.stringify(payload), {
        status,
        headers: { "content-type": "application/json" },
      });

    if (options.overrides && url in options.overrides) {
      return respond(options.overrides[url]);
    }
    const path = url.split("?")[0] ?? "";
    const query = new URLSearchParams(url.split("?")[1] ?? "");

    if (path === "/api/search") {
      const q = query.get("q") ?? "";
      if (!q.trim()) return respond({ detail: "empty query" }, 400);
      if (q.includes("dragon")) return respond(fixture("search_dragon.json"));
      return respond(fixture("search_empty.json"));
    }
    if (path === `/api/illustrations/${knownId}`) return respond(fixture("record_detail.json"));
    if (path === `/api/illustrations/${knownId}/neighbors`)
      return respond(fixture("record_neighbors.json"));
    const recordMatch = path.match(/^\/api\/illustrations\/([^/]+)(\/neighbors)?$/);
    if (recordMatch) {
      const requestedId = decodeURIComponent(recordMatch[1] ?? "");
      // any other fixture-corpus id resolves to a patched copy of the
      // canned record; ids outside the corpus stay 404
      if (!requestedId.startsWith("vlib_")) return respond({ detail: "unknown record" }, 404);
      if (recordMatch[2]) {
        const neighbors = fixture<{ record_id: string }>("record_neighbors.json");
        return respond({ ...neighbors, record_id: requestedId });
      }
      return respond({ ...detail, record_id: requestedId });
    }
    if (path === "/api/communities") return respond(fixture("communities.json"));
    if (/^\/api\/communities\/\d+$/.test(path)) {
      const communityDetail = fixture<{ community_id: number }>("community_detail.json");
      const wanted = Number(path.split("/").pop());
      if (wanted === communityDetail.community_id) return respond(communityDetail);
      return respond({ detail: "unknown community" }, 404);
    }
    if (path === "/api/graph") return respond(fixture("graph.json"));
    if (path === "/api/stats") return respond(fixture("stats.json"));
    return respond({ detail: `unrouted test url ${url}` }, 500);
  }) as typeof fetch;
}

export function knownRecordId(): string {
  return fixture<{ record_id: string }>("record_detail.json").record_id;
}
