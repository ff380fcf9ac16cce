/** Search view: ranked thumbnail grid with captions and scores. */

import type { ApiClient, SearchResponse } from "../api.js";
import { el, clear } from "../dom.js";
import type { Route } from "../router.js";
import { encodeRoute } from "../router.js";

export const RESULTS_PER_PAGE = 24;
const FETCH_TOP = 200;

export interface ViewContext {
  api: ApiClient;
  navigate: (route: Route) => void;
  isCurrent: () => boolean;
  showError: (message: string, retry: () => void) => void;
}

export async function renderSearch(
  container: HTMLElement,
  route: Extract<Route, { view: "search" }>,
  ctx: ViewContext,
): Promise<void> {
  clear(container);
  if (!route.query.trim()) {
    container.append(
      el("p", { class: "hint", text: "Search captions and metadata — try “winged horse” or “dragon”." }),
    );
    return;
  }
  container.append(el("p", { class: "hint", text: "Searching…" }));

  let response: SearchResponse;
  try {
    response = await ctx.api.search(route.query, FETCH_TOP);
  } catch (err) {
    if (!ctx.isCurrent()) return;
    ctx.showError(`Search failed: ${String((err as Error).message)}`, () =>
      void renderSearch(container, route, ctx),
    );
    return;
  }
  if (!ctx.isCurrent()) return;
  clear(container);

  if (response.results.length === 0) {
    container.append(
      el("div", { class: "empty-state" },
        el("p", { text: `No results for “${route.query}”.` }),
        el("p", { class: "hint", text: "Captions are generated text; try broader words (animal, border, figure)." }),
      ),
    );
    return;
  }

  const pageCount = Math.ceil(response.results.length / RESULTS_PER_PAGE);
  const page = Math.min(route.page, pageCount - 1);
  const start = page * RESULTS_PER_PAGE;
  const visible = response.results.slice(start, start + RESULTS_PER_PAGE);

  container.append(
    el("p", { class: "result-count", text: `${response.results.length} results for “${response.query}”` }),
  );
  const grid = el("div", { class: "result-grid" });
  for (const result of visible) {
    const card = el(
      "a",
      {
        class: "result-card",
        href: encodeRoute({ view: "record", recordId: result.record_id, trail: [] }),
        "data-record-id": result.record_id,
      },
      el("img", {
        class: "thumb",
        src: result.crop_url,
        alt: result.caption ?? result.record_id,
        loading: "lazy",
      }),
      el("div", { class: "caption", text: result.caption ?? "(no caption)" }),
      el("div", { class: "meta", text: `${result.page_ref.volume_id} · p.${result.page_ref.page_index} · ${result.score.toFixed(3)}` }),
    );
    grid.append(card);
  }
  container.append(grid);

  if (pageCount > 1) {
    const pager = el("div", { class: "pager" });
    for (let p = 0; p < pageCount; p++) {
      pager.append(
        el("a", {
          class: p === page ? "page current" : "page",
          href: encodeRoute({ view: "search", query: route.query, page: p }),
          text: String(p + 1),
        }),
      );
    }
    container.append(pager);
  }
}
