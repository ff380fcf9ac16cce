/** View-level end-to-end tests against the canned fixture service:
 * the UI acceptance checks (search ranking, IIIF deep link, two-cluster
 * graph, URL reload stability) plus failure states. */

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { App } from "../src/main.js";
import { encodeRoute } from "../src/router.js";
import { renderSearch, type ViewContext } from "../src/views/search.js";
import { fixture, installFixtureFetch, knownRecordId } from "./helpers.js";

function freshApp(): App {
  document.body.innerHTML = '<div id="app"></div>';
  return new App(document.getElementById("app") as HTMLElement, new ApiClient());
}

async function open(app: App, hash: string): Promise<void> {
  window.location.hash = hash;
  await app.dispatch();
}

beforeEach(() => {
  installFixtureFetch();
  window.location.hash = "";
});

describe("search view", () => {
  it("renders the dragon fixture first, in service order", async () => {
    const app = freshApp();
    await open(app, "#/search?q=dragon");
    const cards = [...document.querySelectorAll<HTMLElement>(".result-card")];
    expect(cards.length).toBeGreaterThan(0);
    const expected = fixture<{ results: { record_id: string; caption: string }[] }>(
      "search_dragon.json",
    );
    expect(cards[0]!.dataset.recordId).toBe(expected.results[0]!.record_id);
    expect(cards[0]!.querySelector(".caption")!.textContent).toContain("dragon");
    const renderedIds = cards.map((c) => c.dataset.recordId);
    expect(renderedIds).toEqual(expected.results.slice(0, cards.length).map((r) => r.record_id));
  });

  it("shows the empty state when nothing matches", async () => {
    const app = freshApp();
    await open(app, "#/search?q=zzzunmatchable");
    expect(document.querySelector(".empty-state")).not.toBeNull();
    expect(document.querySelectorAll(".result-card").length).toBe(0);
  });

  it("service outage shows the error banner with retry, no crash", async () => {
    installFixtureFetch({ failing: /\/api\/search/ });
    const app = freshApp();
    await open(app, "#/search?q=dragon");
    const banner = document.querySelector(".banner:not(.hidden)");
    expect(banner).not.toBeNull();
    expect(banner!.textContent).toContain("Search failed");
    // service recovers; retry re-renders the grid
    installFixtureFetch();
    (banner!.querySelector("button.retry") as HTMLButtonElement).click();
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(document.querySelectorAll(".result-card").length).toBeGreaterThan(0);
  });

  it("is reload-stable: same URL reproduces the same grid", async () => {
    const app1 = freshApp();
    await open(app1, "#/search?q=dragon");
    const first = [...document.querySelectorAll<HTMLElement>(".result-card")].map(
      (c) => c.dataset.recordId,
    );
    const app2 = freshApp(); // fresh DOM, same URL: a reload
    await open(app2, "#/search?q=dragon");
    const second = [...document.querySelectorAll<HTMLElement>(".result-card")].map(
      (c) => c.dataset.recordId,
    );
    expect(second).toEqual(first);
    // the search box reflects the URL query after reload
    expect((document.querySelector("input[name=q]") as HTMLInputElement).value).toBe("dragon");
  });
});

describe("detail view", () => {
  it("renders caption, provenance, and the record's exact IIIF link", async () => {
    const app = freshApp();
    const record = fixture<{ record_id: string; iiif_url: string; caption: string }>(
      "record_detail.json",
    );
    await open(app, `#/record/${record.record_id}`);
    const link = document.querySelector<HTMLAnchorElement>("a.iiif-link");
    expect(link).not.toBeNull();
    expect(link!.getAttribute("href")).toBe(record.iiif_url);
    expect(link!.getAttribute("target")).toBe("_blank");
    expect(document.querySelector(".full-caption")!.textContent).toBe(record.caption);
    expect(document.querySelector(".provenance")!.textContent).toContain("vlib");
  });

  it("neighbor links extend the navigation trail", async () => {
    const app = freshApp();
    const recordId = knownRecordId();
    await open(app, `#/record/${recordId}`);
    const neighborCards = [...document.querySelectorAll<HTMLAnchorElement>(".neighbor-card")];
    expect(neighborCards.length).toBeGreaterThan(0);
    const href = neighborCards[0]!.getAttribute("href")!;
    expect(href).toContain(`trail=${recordId}`);
    // following the link and reloading reproduces the trail breadcrumb
    await open(app, href);
    const trail = document.querySelector(".trail");
    expect(trail).not.toBeNull();
    expect(trail!.textContent).toContain(recordId);
  });

  it("unknown id shows the not-found page", async () => {
    const app = freshApp();
    await open(app, "#/record/zz_zz_zz_p00001_b00");
    expect(document.querySelector(".not-found")).not.toBeNull();
    expect(document.body.textContent).toContain("Record not found");
  });
});

describe("graph view", () => {
  it("draws both planted communities as spatially separated clusters", async () => {
    const app = freshApp();
    await open(app, "#/graph");
    const circles = [...document.querySelectorAll<SVGCircleElement>("circle.graph-node")];
    const graph = fixture<{ nodes: { id: string }[] }>("graph.json");
    expect(circles.length).toBe(graph.nodes.length);

    const byCommunity = new Map<string, { x: number; y: number }[]>();
    for (const circle of circles) {
      const community = circle.getAttribute("data-community")!;
      const point = {
        x: Number(circle.getAttribute("cx")),
        y: Number(circle.getAttribute("cy")),
      };
      byCommunity.set(community, [...(byCommunity.get(community) ?? []), point]);
    }
    expect(byCommunity.size).toBe(2);

    const centroids = new Map<string, { x: number; y: number }>();
    const spreads = new Map<string, number>();
    for (const [community, points] of byCommunity) {
      const cx = points.reduce((s, p) => s + p.x, 0) / points.length;
      const cy = points.reduce((s, p) => s + p.y, 0) / points.length;
      centroids.set(community, { x: cx, y: cy });
      spreads.set(
        community,
        points.reduce((s, p) => s + Math.hypot(p.x - cx, p.y - cy), 0) / points.length,
      );
    }
    const [a, b] = [...centroids.values()];
    const separation = Math.hypot(a!.x - b!.x, a!.y - b!.y);
    for (const spread of spreads.values()) {
      expect(separation).toBeGreaterThan(spread);
    }
  });

  it("layout is identical across reloads for the same seed", async () => {
    const app1 = freshApp();
    await open(app1, "#/graph?seed=11");
    const coords = () =>
      [...document.querySelectorAll<SVGCircleElement>("circle.graph-node")].map((c) => [
        c.getAttribute("data-record-id"),
        c.getAttribute("cx"),
        c.getAttribute("cy"),
      ]);
    const first = coords();
    const app2 = freshApp();
    await open(app2, "#/graph?seed=11");
    expect(coords()).toEqual(first);
  });

  it("community filter renders only that community's nodes", async () => {
    const communityId = fixture<{ communities: { community_id: number; size: number }[] }>(
      "communities.json",
    ).communities[0]!;
    const app = freshApp();
    await open(app, `#/graph?community=${communityId.community_id}`);
    const circles = [...document.querySelectorAll<SVGCircleElement>("circle.graph-node")];
    expect(circles.length).toBe(communityId.size);
    for (const circle of circles) {
      expect(circle.getAttribute("data-community")).toBe(String(communityId.community_id));
    }
  });

  it("clicking a node navigates to its record detail", async () => {
    const app = freshApp();
    await open(app, "#/graph");
    const circle = document.querySelector<SVGCircleElement>(
      `circle[data-record-id="${knownRecordId()}"]`,
    );
    expect(circle).not.toBeNull();
    circle!.dispatchEvent(new MouseEvent("click", { bubbles: true }));
    expect(window.location.hash).toBe(
      encodeRoute({ view: "record", recordId: knownRecordId(), trail: [] }),
    );
  });

  it("falls back to a list when the graph exceeds the viewport budget", async () => {
    const big = {
      schema_version: 1,
      k: 2,
      directed: false,
      nodes: Array.from({ length: 5001 }, (_, i) => ({
        id: `n${i}`,
        community: i % 7,
        caption: "",
      })),
      links: [],
    };
    installFixtureFetch({ overrides: { "/api/graph": big } });
    const app = freshApp();
    await open(app, "#/graph");
    expect(document.querySelector(".graph-fallback")).not.toBeNull();
    expect(document.querySelector("svg.graph-canvas")).toBeNull();
  });
});

describe("community members view", () => {
  it("renders the member grid and is URL-addressable", async () => {
    const detail = fixture<{ community_id: number; size: number }>("community_detail.json");
    const app = freshApp();
    await open(app, `#/community/${detail.community_id}`);
    expect(document.querySelectorAll(".result-card").length).toBe(detail.size);
  });

  it("unknown community shows not-found", async () => {
    const app = freshApp();
    await open(app, "#/community/9999");
    expect(document.querySelector(".not-found")).not.toBeNull();
  });
});

describe("stale responses", () => {
  it("a superseded render never touches the DOM", async () => {
    document.body.innerHTML = '<div id="container"></div>';
    const container = document.getElementById("container") as HTMLElement;
    let release!: () => void;
    const gate = new Promise<void>((resolve) => (release = resolve));
    const slowPayload = fixture("search_dragon.json");
    globalThis.fetch = (async () => {
      await gate;
      return new Response(JSON.stringify(slowPayload), {
        status: 200,
        headers: { "content-type": "application/json" },
      });
    }) as typeof fetch;

    let current = true;
    const ctx: ViewContext = {
      api: new ApiClient(),
      navigate: () => {},
      isCurrent: () => current,
      showError: () => {},
    };
    const pending = renderSearch(container, { view: "search", query: "dragon", page: 0 }, ctx);
    current = false; // the user navigated away before the response landed
    release();
    await pending;
    expect(container.querySelectorAll(".result-card").length).toBe(0);
  });
});
