// Client for the dermalign retrieval service. The UI is a thin client: all
// ranking happens server-side, this module only moves JSON around.

export type Modality = "image" | "text";

export interface SearchResult {
  id: string;
  score: number;
  label: string;
  modality: Modality;
  preview: string;
}

export interface QueryResponse {
  results: SearchResult[];
}

export interface HealthResponse {
  status: string;
  index_size: number;
  checkpoint_hash: string;
}

export interface ItemDetail {
  id: string;
  modality: Modality;
  sample_id: string;
  label: string;
  dataset: string;
  preview: string;
  note_text?: string;
  image_b64?: string;
}

export class ServiceError extends Error {
  constructor(
    message: string,
    readonly status?: number,
  ) {
    super(message);
  }
}

/** One client per pane; a new request cancels the pane's in-flight one. */
export class ServiceClient {
  private inflight: AbortController | null = null;

  constructor(readonly baseUrl: string) {}

  private nextSignal(): AbortSignal {
    this.inflight?.abort();
    this.inflight = new AbortController();
    return this.inflight.signal;
  }

  private async parse<T>(resp: Response): Promise<T> {
    if (!resp.ok) {
      let detail = `HTTP ${resp.status}`;
      try {
        const body = (await resp.json()) as { detail?: string };
        if (body.detail) detail = String(body.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ServiceError(detail, resp.status);
    }
    return (await resp.json()) as T;
  }

  async health(): Promise<HealthResponse> {
    const resp = await fetch(`${this.baseUrl}/health`);
    return this.parse<HealthResponse>(resp);
  }

  async queryText(text: string, k: number, filter: Modality | null): Promise<SearchResult[]> {
    const resp = await fetch(`${this.baseUrl}/query/text`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text, k, filter }),
      signal: this.nextSignal(),
    });
    return (await this.parse<QueryResponse>(resp)).results;
  }

  async queryImage(image: Blob, k: number, filter: Modality | null): Promise<SearchResult[]> {
    const form = new FormData();
    form.append("image", image, "query.png");
    form.append("k", String(k));
    if (filter) form.append("filter", filter);
    const resp = await fetch(`${this.baseUrl}/query/image`, {
      method: "POST",
      body: form,
      signal: this.nextSignal(),
    });
    return (await this.parse<QueryResponse>(resp)).results;
  }

  /** "More like this": the request body carries the seed item's id. */
  async queryItem(id: string, k: number, filter: Modality | null): Promise<SearchResult[]> {
    const resp = await fetch(`${this.baseUrl}/query/item`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ id, k, filter }),
      signal: this.nextSignal(),
    });
    return (await this.parse<QueryResponse>(resp)).results;
  }

  async item(id: string): Promise<ItemDetail> {
    const resp = await fetch(`${this.baseUrl}/item/${encodeURIComponent(id)}`);
    return this.parse<ItemDetail>(resp);
  }
}
