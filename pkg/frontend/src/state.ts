// Query state and its URL serialization. Sessions are shareable: everything
// needed to reproduce a view lives in the URL parameters.

import type { Modality, SearchResult } from "./api.js";

export type QueryMode = "text" | "image";

export interface HistoryEntry {
  query: string;
  topId: string | null;
}

export interface QueryState {
  mode: QueryMode;
  text: string;
  k: number;
  filter: Modality | null;
  /** set when the current view came from a "more like this" click */
  seedItemId: string | null;
  lastResults: SearchResult[];
  history: HistoryEntry[]; // append-only within a session
}

export const DEFAULT_K = 8;

export function initialState(): QueryState {
  return {
    mode: "text",
    text: "",
    k: DEFAULT_K,
    filter: null,
    seedItemId: null,
    lastResults: [],
    history: [],
  };
}

export function clampK(k: number, indexSize: number): number {
  if (!Number.isFinite(k)) return DEFAULT_K;
  return Math.min(Math.max(1, Math.round(k)), Math.max(1, indexSize));
}

export function stateToParams(state: QueryState): URLSearchParams {
  const params = new URLSearchParams();
  if (state.text) params.set("q", state.text);
  params.set("k", String(state.k));
  if (state.filter) params.set("filter", state.filter);
  if (state.mode !== "text") params.set("mode", state.mode);
  if (state.seedItemId) params.set("seed", state.seedItemId);
  return params;
}

export function stateFromParams(params: URLSearchParams): QueryState {
  const state = initialState();
  state.text = params.get("q") ?? "";
  const k = Number(params.get("k"));
  if (Number.isFinite(k) && k >= 1) state.k = Math.round(k);
  const filter = params.get("filter");
  if (filter === "image" || filter === "text") state.filter = filter;
  if (params.get("mode") === "image") state.mode = "image";
  state.seedItemId = params.get("seed");
  return state;
}

/** Returns a new state with the entry appended; never mutates or truncates. */
export function pushHistory(state: QueryState, query: string, topId: string | null): QueryState {
  return { ...state, history: [...state.history, { query, topId }] };
}
