// DOM rendering for result grids, banners, and the query history.

import type { SearchResult, ServiceClient } from "./api.js";

export interface CardHandlers {
  onMoreLikeThis: (id: string) => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderError(container: HTMLElement, message: string): void {
  const banner = el("div", "error-banner", message);
  banner.setAttribute("role", "alert");
  container.prepend(banner);
}

export function clearErrors(container: HTMLElement): void {
  container.querySelectorAll(".error-banner").forEach((node) => node.remove());
}

/** Render the ranked result cards into `grid`, replacing previous content. */
export function renderResults(
  grid: HTMLElement,
  results: SearchResult[],
  handlers: CardHandlers,
  client?: ServiceClient,
): void {
  grid.replaceChildren();
  for (const result of results) {
    const card = el("article", "result-card");
    card.dataset.itemId = result.id;

    if (result.modality === "image") {
      const thumb = el("div", "thumb");
      const img = el("img");
      img.alt = result.preview;
      thumb.append(img);
      card.append(thumb);
      // thumbnails come from the item endpoint; the grid stays responsive
      // while they load
      client
        ?.item(result.id)
        .then((detail) => {
          if (detail.image_b64) img.src = `data:image/png;base64,${detail.image_b64}`;
        })
        .catch(() => {
          /* missing thumbnail is cosmetic */
        });
    } else {
      card.append(el("p", "note-snippet", result.preview));
    }

    const meta = el("div", "card-meta");
    meta.append(el("span", "label", result.label));
    meta.append(el("span", "modality", result.modality));
    meta.append(el("span", "score", result.score.toFixed(2)));
    card.append(meta);

    const more = el("button", "more-like-this", "more like this");
    more.addEventListener("click", () => handlers.onMoreLikeThis(result.id));
    card.append(more);

    grid.append(card);
  }
}

export function renderHistory(
  list: HTMLElement,
  history: { query: string; topId: string | null }[],
): void {
  list.replaceChildren();
  for (const entry of history) {
    list.append(el("li", "history-entry", `${entry.query} -> ${entry.topId ?? "(none)"}`));
  }
}
