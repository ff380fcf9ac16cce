/** Illustration detail: crop, caption, provenance, IIIF deep link into
 * the source library's viewer, and similar-image navigation. */

import type { NeighborsResponse, RecordDetail } from "../api.js";
import { ApiError } from "../api.js";
import { el, clear } from "../dom.js";
import type { Route } from "../router.js";
import { encodeRoute, followNeighbor } from "../router.js";
import type { ViewContext } from "./search.js";

export async function renderDetail(
  container: HTMLElement,
  route: Extract<Route, { view: "record" }>,
  ctx: ViewContext,
): Promise<void> {
  clear(container);
  container.append(el("p", { class: "hint", text: "Loading record…" }));

  let record: RecordDetail;
  try {
    record = await ctx.api.record(route.recordId);
  } catch (err) {
    if (!ctx.isCurrent()) return;
    clear(container);
    if (err instanceof ApiError && err.status === 404) {
      container.append(
        el("div", { class: "empty-state not-found" },
          el("h2", { text: "Record not found" }),
          el("p", { text: `No illustration with id ${route.recordId}.` }),
          el("a", { href: "#/search", text: "Back to search" }),
        ),
      );
      return;
    }
    ctx.showError(`Could not load record: ${(err as Error).message}`, () =>
      void renderDetail(container, route, ctx),
    );
    return;
  }
  if (!ctx.isCurrent()) return;
  clear(container);

  if (route.trail.length) {
    const breadcrumb = el("nav", { class: "trail" }, "Trail: ");
    route.trail.forEach((earlierId, i) => {
      breadcrumb.append(
        el("a", {
          href: encodeRoute({ view: "record", recordId: earlierId, trail: route.trail.slice(0, i) }),
          text: earlierId,
        }),
        " → ",
      );
    });
    breadcrumb.append(el("span", { class: "current", text: record.record_id }));
    container.append(breadcrumb);
  }

  const page = record.page_ref;
  const provenance = `${page.library_id} / ${page.collection_id} / ${page.volume_id}, page ${page.page_index}`;
  const detail = el("div", { class: "detail" },
    el("div", { class: "detail-image" },
      el("img", { src: record.crop_url, alt: record.caption ?? record.record_id }),
    ),
    el("div", { class: "detail-meta" },
      el("h2", { text: record.record_id }),
      el("p", { class: "full-caption", text: record.caption ?? "(no caption)" }),
      record.caption_model
        ? el("p", { class: "hint", text: `caption by ${record.caption_model}` })
        : null,
      el("p", { class: "provenance", text: provenance }),
      el("p", {},
        el("a", {
          class: "iiif-link",
          href: record.iiif_url,
          target: "_blank",
          rel: "noopener",
          text: "Open source page in library viewer (IIIF)",
        }),
      ),
      record.community !== null && record.community !== undefined
        ? el("p", {},
            el("a", {
              href: encodeRoute({ view: "community", communityId: record.community }),
              text: `Community ${record.community}`,
            }),
          )
        : null,
    ),
  );
  container.append(detail);

  const panel = el("div", { class: "neighbors" },
    el("h3", { text: "Visually similar" }),
    el("p", { class: "hint", text: "Loading neighbors…" }),
  );
  container.append(panel);

  let neighbors: NeighborsResponse;
  try {
    neighbors = await ctx.api.neighbors(route.recordId, 10);
  } catch {
    if (!ctx.isCurrent()) return;
    panel.append(el("p", { class: "hint", text: "Neighbor graph not available." }));
    return;
  }
  if (!ctx.isCurrent()) return;
  clear(panel);
  panel.append(el("h3", { text: "Visually similar" }));
  const strip = el("div", { class: "neighbor-strip" });
  for (const neighbor of neighbors.neighbors) {
    strip.append(
      el("a", {
        class: "neighbor-card",
        href: encodeRoute(followNeighbor(route, neighbor.record_id)),
        "data-record-id": neighbor.record_id,
      },
        el("img", { src: neighbor.crop_url, alt: neighbor.caption ?? neighbor.record_id, loading: "lazy" }),
        el("div", { class: "weight", text: neighbor.weight.toFixed(3) }),
      ),
    );
  }
  panel.append(strip);
}
