/** Graph view: community overview plus a client-side force layout of the
 * similarity network. Clicking a node opens its record; selecting a
 * community filters the canvas to it. Falls back to a list beyond the
 * node budget a viewport can usefully show. */

import type { CommunitiesResponse, GraphPayload } from "../api.js";
import { el, svgEl, clear } from "../dom.js";
import { forceLayout } from "../layout.js";
import type { Route } from "../router.js";
import { encodeRoute } from "../router.js";
import type { ViewContext } from "./search.js";

export const MAX_VISIBLE_NODES = 5000;
const WIDTH = 900;
const HEIGHT = 600;

const PALETTE = [
  "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
  "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

export function communityColor(community: number | null): string {
  if (community === null) return "#888888";
  return PALETTE[((community % PALETTE.length) + PALETTE.length) % PALETTE.length] as string;
}

export async function renderGraph(
  container: HTMLElement,
  route: Extract<Route, { view: "graph" }>,
  ctx: ViewContext,
): Promise<void> {
  clear(container);
  container.append(el("p", { class: "hint", text: "Loading graph…" }));

  let graph: GraphPayload;
  let communities: CommunitiesResponse;
  try {
    [graph, communities] = await Promise.all([ctx.api.graph(), ctx.api.communities()]);
  } catch (err) {
    if (!ctx.isCurrent()) return;
    ctx.showError(`Could not load the graph: ${(err as Error).message}`, () =>
      void renderGraph(container, route, ctx),
    );
    return;
  }
  if (!ctx.isCurrent()) return;
  clear(container);

  const overview = el("div", { class: "community-overview" },
    el("h3", { text: `Communities (${communities.communities.length})` }),
  );
  const list = el("ul", { class: "community-list" });
  list.append(
    el("li", {},
      el("a", {
        class: route.community === null ? "current" : "",
        href: encodeRoute({ ...route, community: null }),
        text: "all nodes",
      }),
    ),
  );
  for (const community of communities.communities) {
    const item = el("li", {},
      el("a", {
        class: route.community === community.community_id ? "current" : "",
        href: encodeRoute({ ...route, community: community.community_id }),
        text: `community ${community.community_id} (${community.size})`,
      }),
      el("a", {
        class: "members-link",
        href: encodeRoute({ view: "community", communityId: community.community_id }),
        text: " members →",
      }),
    );
    list.append(item);
  }
  overview.append(list);
  container.append(overview);

  const nodes =
    route.community === null
      ? graph.nodes
      : graph.nodes.filter((n) => n.community === route.community);
  const visibleIds = new Set(nodes.map((n) => n.id));
  const links = graph.links.filter(
    (l) => visibleIds.has(l.source) && visibleIds.has(l.target),
  );

  if (nodes.length > MAX_VISIBLE_NODES) {
    const fallback = el("div", { class: "graph-fallback" },
      el("p", { class: "hint", text: `${nodes.length} nodes exceed the ${MAX_VISIBLE_NODES}-node canvas budget; showing a list instead. Filter to a community to draw the network.` }),
    );
    const nodeList = el("ul", { class: "node-list" });
    for (const node of nodes) {
      nodeList.append(
        el("li", {},
          el("a", {
            href: encodeRoute({ view: "record", recordId: node.id, trail: [] }),
            text: node.caption ? `${node.id} — ${node.caption}` : node.id,
          }),
        ),
      );
    }
    fallback.append(nodeList);
    container.append(fallback);
    return;
  }

  const positions = forceLayout(
    nodes.map((n) => n.id),
    links,
    { width: WIDTH, height: HEIGHT, seed: route.seed },
  );

  const svg = svgEl("svg", {
    class: "graph-canvas",
    viewBox: `0 0 ${WIDTH} ${HEIGHT}`,
    width: String(WIDTH),
    height: String(HEIGHT),
    role: "img",
  });
  for (const link of links) {
    const a = positions.get(link.source);
    const b = positions.get(link.target);
    if (!a || !b) continue;
    svg.append(
      svgEl("line", {
        x1: a.x.toFixed(1), y1: a.y.toFixed(1),
        x2: b.x.toFixed(1), y2: b.y.toFixed(1),
        class: "graph-edge",
        "stroke-opacity": Math.min(0.15 + link.weight * 0.5, 0.8).toFixed(2),
      }),
    );
  }
  const captionById = new Map(nodes.map((n) => [n.id, n.caption ?? n.id]));
  for (const node of nodes) {
    const p = positions.get(node.id);
    if (!p) continue;
    const circle = svgEl("circle", {
      cx: p.x.toFixed(1),
      cy: p.y.toFixed(1),
      r: "7",
      fill: communityColor(node.community),
      class: "graph-node",
      "data-record-id": node.id,
      "data-community": node.community === null ? "" : String(node.community),
    });
    const title = svgEl("title");
    title.textContent = captionById.get(node.id) ?? node.id;
    circle.append(title);
    circle.addEventListener("click", () => {
      ctx.navigate({ view: "record", recordId: node.id, trail: [] });
    });
    svg.append(circle);
  }
  container.append(el("div", { class: "graph-wrap" }, svg));
  container.append(
    el("p", { class: "hint", text: `${nodes.length} nodes, ${links.length} edges · layout seed ${route.seed} · click a node to open its record` }),
  );
}

export async function renderCommunity(
  container: HTMLElement,
  route: Extract<Route, { view: "community" }>,
  ctx: ViewContext,
): Promise<void> {
  clear(container);
  container.append(el("p", { class: "hint", text: "Loading community…" }));
  let detail;
  try {
    detail = await ctx.api.community(route.communityId);
  } catch (err) {
    if (!ctx.isCurrent()) return;
    clear(container);
    container.append(
      el("div", { class: "empty-state not-found" },
        el("h2", { text: "Community not found" }),
        el("p", { text: (err as Error).message }),
        el("a", { href: "#/graph", text: "Back to the graph" }),
      ),
    );
    return;
  }
  if (!ctx.isCurrent()) return;
  clear(container);
  container.append(
    el("h2", { text: `Community ${detail.community_id} · ${detail.size} illustrations` }),
    el("p", {},
      el("a", {
        href: encodeRoute({ view: "graph", community: detail.community_id, seed: 7 }),
        text: "View as network",
      }),
    ),
  );
  const grid = el("div", { class: "result-grid" });
  for (const member of detail.members) {
    grid.append(
      el("a", {
        class: "result-card",
        href: encodeRoute({ view: "record", recordId: member.record_id, trail: [] }),
        "data-record-id": member.record_id,
      },
        el("img", { class: "thumb", src: member.crop_url, alt: member.caption ?? member.record_id, loading: "lazy" }),
        el("div", { class: "caption", text: member.caption ?? "(no caption)" }),
      ),
    );
  }
  container.append(grid);
}
