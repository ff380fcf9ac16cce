/** App shell: header with the search box, hash router dispatch, error
 * banner, and stale-response sequencing. */

import { ApiClient } from "./api.js";
import { el, clear } from "./dom.js";
import { DEFAULT_GRAPH_SEED, encodeRoute, parseRoute, type Route } from "./router.js";
import { renderSearch, type ViewContext } from "./views/search.js";
import { renderDetail } from "./views/detail.js";
import { renderCommunity, renderGraph } from "./views/graph.js";

export class App {
  private sequence = 0;
  private readonly api: ApiClient;
  private readonly root: HTMLElement;
  private content!: HTMLElement;
  private banner!: HTMLElement;
  private searchInput!: HTMLInputElement;

  constructor(root: HTMLElement, api: ApiClient = new ApiClient()) {
    this.root = root;
    this.api = api;
    this.buildShell();
    window.addEventListener("hashchange", () => void this.dispatch());
  }

  start(): Promise<void> {
    return this.dispatch();
  }

  private buildShell(): void {
    clear(this.root);
    this.searchInput = el("input", {
      type: "search",
      name: "q",
      placeholder: "winged horse, dragon, floral border…",
      "aria-label": "search captions",
    });
    const form = el("form", { class: "search-form" }, this.searchInput,
      el("button", { type: "submit", text: "Search" }));
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      this.navigate({ view: "search", query: this.searchInput.value, page: 0 });
    });
    this.banner = el("div", { class: "banner hidden", role: "alert" });
    this.content = el("main", { class: "content" });
    this.root.append(
      el("header", { class: "topbar" },
        el("a", { class: "brand", href: "#/search", text: "codexforge" }),
        form,
        el("nav", { class: "nav" },
          el("a", { href: "#/search", text: "Search" }),
          el("a", { href: encodeRoute({ view: "graph", community: null, seed: DEFAULT_GRAPH_SEED }), text: "Graph" }),
        ),
      ),
      this.banner,
      this.content,
    );
  }

  navigate(route: Route): void {
    const target = encodeRoute(route);
    if (window.location.hash === target) {
      void this.dispatch();
    } else {
      window.location.hash = target;
    }
  }

  private showError(message: string, retry: () => void): void {
    clear(this.banner);
    this.banner.classList.remove("hidden");
    this.banner.append(
      el("span", { text: message }),
      el("button", {
        class: "retry",
        text: "Retry",
        onclick: () => {
          this.banner.classList.add("hidden");
          retry();
        },
      }),
    );
  }

  async dispatch(): Promise<void> {
    const route = parseRoute(window.location.hash);
    const token = ++this.sequence;
    this.banner.classList.add("hidden");
    const ctx: ViewContext = {
      api: this.api,
      navigate: (r) => this.navigate(r),
      isCurrent: () => token === this.sequence,
      showError: (message, retry) => this.showError(message, retry),
    };
    if (route.view === "search") {
      this.searchInput.value = route.query;
      await renderSearch(this.content, route, ctx);
    } else if (route.view === "record") {
      await renderDetail(this.content, route, ctx);
    } else if (route.view === "community") {
      await renderCommunity(this.content, route, ctx);
    } else {
      await renderGraph(this.content, route, ctx);
    }
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const app = new App(document.getElementById("app") as HTMLElement);
  void app.start();
}
