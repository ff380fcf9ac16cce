/** Hash-based routing. Every view is URL-addressable: reloading any URL
 * reproduces the view, and the browser's back button restores prior
 * state, including the neighbor-navigation trail. */

export type Route =
  | { view: "search"; query: string; page: number }
  | { view: "record"; recordId: string; trail: string[] }
  | { view: "community"; communityId: number }
  | { view: "graph"; community: number | null; seed: number };

export const DEFAULT_ROUTE: Route = { view: "search", query: "", page: 0 };
export const DEFAULT_GRAPH_SEED = 7;

export function encodeRoute(route: Route): string {
  switch (route.view) {
    case "search": {
      const params = new URLSearchParams();
      if (route.query) params.set("q", route.query);
      if (route.page > 0) params.set("page", String(route.page));
      const suffix = params.toString();
      return suffix ? `#/search?${suffix}` : "#/search";
    }
    case "record": {
      const params = new URLSearchParams();
      if (route.trail.length) params.set("trail", route.trail.join(","));
      const suffix = params.toString();
      return `#/record/${encodeURIComponent(route.recordId)}${suffix ? `?${suffix}` : ""}`;
    }
    case "community":
      return `#/community/${route.communityId}`;
    case "graph": {
      const params = new URLSearchParams();
      if (route.community !== null) params.set("community", String(route.community));
      if (route.seed !== DEFAULT_GRAPH_SEED) params.set("seed", String(route.seed));
      const suffix = params.toString();
      return suffix ? `#/graph?${suffix}` : "#/graph";
    }
  }
}

export function parseRoute(hash: string): Route {
  const raw = hash.startsWith("#") ? hash.slice(1) : hash;
  const [path, queryString] = raw.split("?", 2);
  const params = new URLSearchParams(queryString ?? "");
  const segments = (path ?? "").split("/").filter((s) => s.length > 0);
  const head = segments[0] ?? "";

  if (head === "record" && segments[1]) {
    const trailParam = params.get("trail") ?? "";
    return {
      view: "record",
      recordId: decodeURIComponent(segments[1]),
      trail: trailParam ? trailParam.split(",").filter((t) => t.length > 0) : [],
    };
  }
  if (head === "community" && segments[1] !== undefined) {
    const communityId = Number(segments[1]);
    if (Number.isInteger(communityId)) return { view: "community", communityId };
  }
  if (head === "graph") {
    const communityParam = params.get("community");
    const seedParam = params.get("seed");
    const community = communityParam === null ? null : Number(communityParam);
    const seed = seedParam === null ? DEFAULT_GRAPH_SEED : Number(seedParam);
    return {
      view: "graph",
      community: community !== null && Number.isInteger(community) ? community : null,
      seed: Number.isInteger(seed) ? seed : DEFAULT_GRAPH_SEED,
    };
  }
  if (head === "search" || head === "") {
    const pageParam = Number(params.get("page") ?? "0");
    return {
      view: "search",
      query: params.get("q") ?? "",
      page: Number.isInteger(pageParam) && pageParam > 0 ? pageParam : 0,
    };
  }
  return DEFAULT_ROUTE;
}

/** Extend a record route's trail by one navigation step. */
export function followNeighbor(current: Route, neighborId: string): Route {
  const trail =
    current.view === "record" ? [...current.trail, current.recordId] : [];
  return { view: "record", recordId: neighborId, trail };
}
