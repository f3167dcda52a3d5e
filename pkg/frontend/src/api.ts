/** Typed fetch client for the session service. All shapes mirror the JSON the
 * server emits; probabilities stay strings so traces can be compared exactly. */

export interface ItemDoc {
  index: number;
  item_id: string;
  label: string;
  thumbnail_uri: string | null;
}

export interface RankedItem extends ItemDoc {
  rank: number;
  prob: string;
}

export interface SessionCreated {
  session_id: string;
  mode: "demo" | "live";
  policy: string;
  step: number;
  params: Record<string, number>;
  top: RankedItem[];
  target_rank: number | null;
}

export interface PairDoc {
  a: number;
  b: number;
  a_item: ItemDoc;
  b_item: ItemDoc;
  /** Demo sessions only: the simulated user's suggested label (0 = first). */
  oracle_label?: 0 | 1;
}

export interface DisplayDoc {
  step: number;
  strategy: string;
  pairs: PairDoc[];
}

export interface FeedbackDoc {
  step: number;
  finished: boolean;
  confidences: string[][];
  top: RankedItem[];
  target_rank: number | null;
}

export interface RankingDoc {
  step: number;
  ranking: RankedItem[];
  prob_sum: string;
  target_rank: number | null;
}

export interface HealthDoc {
  status: string;
  n_items: number;
  spaces: { space_id: string; dim: number }[];
  predictors_loaded: boolean;
  sessions: number;
}

export interface CreateSessionBody {
  mode: "demo" | "live";
  seed?: number;
  session_id?: string;
  params?: Record<string, number>;
  query: { target_id?: string; sigma?: number; vectors?: number[][] };
}

const POLICY_HEADER = "X-KIS-Policy";

/** status 0 means the request never reached the server (retryable). */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    super(`API error ${status}: ${JSON.stringify(detail)}`);
    this.name = "ApiError";
  }

  get retryable(): boolean {
    return this.status === 0 || this.status >= 500;
  }
}

export class KisClient {
  constructor(readonly baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let res: Response;
    try {
      res = await fetch(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, String(err));
    }
    if (!res.ok) {
      const body: unknown = await res.json().catch(() => null);
      const detail =
        body && typeof body === "object" && "detail" in body
          ? (body as { detail: unknown }).detail
          : res.statusText;
      throw new ApiError(res.status, detail);
    }
    return res.json() as Promise<T>;
  }

  createSession(body: CreateSessionBody, policy?: string): Promise<SessionCreated> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (policy) headers[POLICY_HEADER] = policy;
    return this.request<SessionCreated>("/sessions", {
      method: "POST",
      headers,
      body: JSON.stringify(body),
    });
  }

  getDisplay(sessionId: string, strategy = "greedy"): Promise<DisplayDoc> {
    return this.request<DisplayDoc>(
      `/sessions/${encodeURIComponent(sessionId)}/display?strategy=${strategy}`,
    );
  }

  postFeedback(sessionId: string, labels: number[]): Promise<FeedbackDoc> {
    return this.request<FeedbackDoc>(
      `/sessions/${encodeURIComponent(sessionId)}/feedback`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ labels }),
      },
    );
  }

  getRanking(sessionId: string, k = 10): Promise<RankingDoc> {
    return this.request<RankingDoc>(
      `/sessions/${encodeURIComponent(sessionId)}/ranking?k=${k}`,
    );
  }

  getItem(itemId: string): Promise<ItemDoc> {
    return this.request<ItemDoc>(`/items/${encodeURIComponent(itemId)}`);
  }

  health(): Promise<HealthDoc> {
    return this.request<HealthDoc>("/healthz");
  }

  thumbnailUrl(itemId: string): string {
    return `${this.baseUrl}/items/${encodeURIComponent(itemId)}/thumbnail`;
  }
}
