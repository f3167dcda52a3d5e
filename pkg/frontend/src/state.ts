/** Client-side session state. Every field that reaches the screen is copied
 * verbatim from the latest server response — the view never computes its own
 * probabilities or ranks. */

import type {
  DisplayDoc,
  FeedbackDoc,
  ItemDoc,
  RankedItem,
  RankingDoc,
  SessionCreated,
} from "./api";

/** Selection side per pair: 0 picks the first (a) item, 1 picks the second. */
export type Side = 0 | 1;

export interface PendingPair {
  a: number;
  b: number;
  aItem: ItemDoc;
  bItem: ItemDoc;
  oracleLabel: Side | null;
  selection: Side | null;
}

export class StepMismatchError extends Error {
  constructor(client: number, server: number) {
    super(`client is at step ${client} but the server display is for step ${server}`);
    this.name = "StepMismatchError";
  }
}

export class SessionView {
  readonly sessionId: string;
  readonly mode: "demo" | "live";
  readonly policy: string;
  /** null when resuming an existing session (the server owns the cutoff). */
  readonly maxSteps: number | null;
  /** Last step count confirmed by the server; never advanced locally. */
  step: number;
  top: RankedItem[];
  targetRank: number | null;
  pairs: PendingPair[] = [];
  finished = false;
  /** Target rank after step 0, 1, 2, ... — the rank-badge history. */
  readonly rankTrace: (number | null)[] = [];

  private constructor(
    sessionId: string,
    mode: "demo" | "live",
    policy: string,
    maxSteps: number | null,
    step: number,
    top: RankedItem[],
    targetRank: number | null,
  ) {
    this.sessionId = sessionId;
    this.mode = mode;
    this.policy = policy;
    this.maxSteps = maxSteps;
    this.step = step;
    this.top = top;
    this.targetRank = targetRank;
    this.rankTrace.push(targetRank);
  }

  static fromCreate(doc: SessionCreated): SessionView {
    return new SessionView(
      doc.session_id,
      doc.mode,
      doc.policy,
      doc.params["max_steps"] ?? 7,
      doc.step,
      doc.top,
      doc.target_rank,
    );
  }

  /** Rebuild a view for a session id found in the URL. Mode is inferred: only
   * demo sessions report a target rank. */
  static fromResume(sessionId: string, doc: RankingDoc): SessionView {
    return new SessionView(
      sessionId,
      doc.target_rank === null ? "live" : "demo",
      "unknown",
      null,
      doc.step,
      doc.ranking,
      doc.target_rank,
    );
  }

  /** Accept a proposed display. Rejects a display built for a different step
   * so a stale tab can never submit against the wrong round. */
  loadDisplay(doc: DisplayDoc): void {
    if (doc.step !== this.step) {
      throw new StepMismatchError(this.step, doc.step);
    }
    this.pairs = doc.pairs.map((p) => ({
      a: p.a,
      b: p.b,
      aItem: p.a_item,
      bItem: p.b_item,
      oracleLabel: p.oracle_label ?? null,
      selection: null,
    }));
  }

  select(pairIndex: number, side: Side): void {
    const pair = this.pairs[pairIndex];
    if (!pair) throw new RangeError(`no pair at index ${pairIndex}`);
    pair.selection = side;
  }

  get canSubmit(): boolean {
    return this.pairs.length > 0 && this.pairs.every((p) => p.selection !== null);
  }

  /** Wire labels, one per pair: 0 means the first (a) item was chosen. */
  labels(): Side[] {
    if (!this.canSubmit) {
      throw new Error("every pair needs a selection before submitting");
    }
    return this.pairs.map((p) => p.selection as Side);
  }

  applyFeedback(doc: FeedbackDoc): void {
    this.step = doc.step;
    this.top = doc.top;
    this.targetRank = doc.target_rank;
    this.finished = doc.finished;
    this.rankTrace.push(doc.target_rank);
    this.pairs = [];
  }

  /** Drop the pending pairs (used after a 409 so a fresh display can load). */
  clearDisplay(): void {
    this.pairs = [];
  }

  /** Adopt the server's authoritative step after the session advanced without
   * this client (another tab answered). The badge trace only records rounds
   * this client submitted, so nothing is appended here. */
  resyncFromRanking(doc: RankingDoc): void {
    this.step = doc.step;
    this.top = doc.ranking;
    this.targetRank = doc.target_rank;
    this.pairs = [];
  }
}
