// Application wiring: query form, one or two result panes, URL sync.

import { ServiceClient, type SearchResult, type Modality } from "./api.js";
import {
  clampK,
  pushHistory,
  stateFromParams,
  stateToParams,
  type QueryState,
} from "./state.js";
import { clearErrors, renderError, renderHistory, renderResults } from "./render.js";

interface PaneElements {
  root: HTMLElement;
  grid: HTMLElement;
  errors: HTMLElement;
}

/** One result pane bound to one service endpoint. */
export class Pane {
  readonly client: ServiceClient;
  private readonly els: PaneElements;

  constructor(
    container: HTMLElement,
    baseUrl: string,
    private readonly onMoreLikeThis: (id: string) => void,
  ) {
    this.client = new ServiceClient(baseUrl);
    const root = document.createElement("section");
    root.className = "pane";
    const title = document.createElement("h2");
    title.className = "pane-title";
    title.textContent = baseUrl;
    const errors = document.createElement("div");
    errors.className = "error-area";
    const grid = document.createElement("div");
    grid.className = "result-grid";
    root.append(title, errors, grid);
    container.append(root);
    this.els = { root, grid, errors };
  }

  /** Run the query for `state`; errors stay inside this pane. */
  async run(state: QueryState, imageFile: Blob | null): Promise<SearchResult[] | null> {
    clearErrors(this.els.errors);
    try {
      let results: SearchResult[];
      if (state.seedItemId) {
        results = await this.client.queryItem(state.seedItemId, state.k, state.filter);
      } else if (state.mode === "image") {
        if (!imageFile) throw new Error("choose an image first");
        results = await this.client.queryImage(imageFile, state.k, state.filter);
      } else {
        results = await this.client.queryText(state.text, state.k, state.filter);
      }
      renderResults(
        this.els.grid,
        results,
        { onMoreLikeThis: this.onMoreLikeThis },
        this.client,
      );
      return results;
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") {
        return null; // superseded by a newer submission; keep current view
      }
      renderError(this.els.errors, `query failed: ${(err as Error).message}`);
      return null;
    }
  }
}

export interface AppOptions {
  baseUrls: string[]; // one pane per endpoint; two = comparison mode
  indexSize?: number;
}

export class ExplorerApp {
  state: QueryState;
  panes: Pane[] = [];
  private imageFile: Blob | null = null;
  private indexSize: number;

  constructor(
    private readonly root: HTMLElement,
    state: QueryState,
    options: AppOptions,
  ) {
    this.state = state;
    this.indexSize = options.indexSize ?? 1000;
    const paneHost = this.elem("#panes");
    for (const baseUrl of options.baseUrls) {
      this.panes.push(new Pane(paneHost, baseUrl, (id) => this.moreLikeThis(id)));
    }
    this.bindControls();
    this.reflectStateIntoControls();
  }

  private elem(selector: string): HTMLElement {
    const node = this.root.querySelector(selector);
    if (!node) throw new Error(`missing element ${selector}`);
    return node as HTMLElement;
  }

  private bindControls(): void {
    const form = this.elem("#query-form") as HTMLFormElement;
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const input = this.elem("#query-text") as HTMLInputElement;
      this.state = { ...this.state, text: input.value, seedItemId: null };
      void this.submit();
    });

    const slider = this.elem("#k-slider") as HTMLInputElement;
    slider.addEventListener("input", () => {
      this.state = { ...this.state, k: clampK(Number(slider.value), this.indexSize) };
      this.elem("#k-value").textContent = String(this.state.k);
      // the grid grows/shrinks without re-entering the query
      void this.submit();
    });

    const filter = this.elem("#modality-filter") as HTMLSelectElement;
    filter.addEventListener("change", () => {
      const value = filter.value === "image" || filter.value === "text" ? filter.value : null;
      this.state = { ...this.state, filter: value as Modality | null };
      void this.submit();
    });

    const file = this.elem("#query-image") as HTMLInputElement;
    file.addEventListener("change", () => {
      this.imageFile = file.files?.[0] ?? null;
      if (this.imageFile) {
        this.state = { ...this.state, mode: "image", seedItemId: null };
        void this.submit();
      }
    });
  }

  private reflectStateIntoControls(): void {
    (this.elem("#query-text") as HTMLInputElement).value = this.state.text;
    const slider = this.elem("#k-slider") as HTMLInputElement;
    slider.value = String(this.state.k);
    this.elem("#k-value").textContent = String(this.state.k);
    (this.elem("#modality-filter") as HTMLSelectElement).value = this.state.filter ?? "";
  }

  /** Send the current state to every pane; panes succeed or fail alone. */
  async submit(): Promise<void> {
    if (this.state.mode === "text" && !this.state.seedItemId && !this.state.text.trim()) {
      return;
    }
    const outcomes = await Promise.all(
      this.panes.map((pane) => pane.run(this.state, this.imageFile)),
    );
    const first = outcomes.find((r) => r !== null) ?? null;
    if (first !== null) {
      const label = this.state.seedItemId ? `like:${this.state.seedItemId}` : this.state.text;
      this.state = {
        ...pushHistory(this.state, label, first[0]?.id ?? null),
        lastResults: first,
      };
      renderHistory(this.elem("#history-list"), this.state.history);
    }
    this.updateUrl();
  }

  moreLikeThis(id: string): void {
    this.state = { ...this.state, seedItemId: id };
    void this.submit();
  }

  private updateUrl(): void {
    const params = stateToParams(this.state);
    if (typeof history !== "undefined" && history.replaceState) {
      history.replaceState(null, "", `?${params.toString()}`);
    }
  }
}

/** Bootstrap from the page URL; exported for tests. */
export function mountApp(root: HTMLElement, search: string, options: AppOptions): ExplorerApp {
  const state = stateFromParams(new URLSearchParams(search));
  state.k = clampK(state.k, options.indexSize ?? 1000);
  return new ExplorerApp(root, state, options);
}
