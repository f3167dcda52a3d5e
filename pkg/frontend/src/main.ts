/** Application wiring: one session per tab, all state transitions driven by
 * server responses. */

import "./style.css";
import { ApiError, KisClient } from "./api";
import type { ItemDoc, RankingDoc } from "./api";
import {
  el,
  renderBanner,
  renderControls,
  renderFinalScreen,
  renderPairs,
  renderRankingPanel,
  renderStartForm,
  renderTargetCard,
  type StartChoices,
} from "./render";
import { SessionView, StepMismatchError, type Side } from "./state";

export class App {
  view: SessionView | null = null;
  targetItem: ItemDoc | null = null;
  targetId: string | null = null;
  /** Resolves when the most recent user-triggered handler settles. */
  lastAction: Promise<void> = Promise.resolve();
  private busy = false;
  private banner: { message: string; kind: "error" | "info"; retry?: () => void } | null =
    null;

  constructor(
    readonly root: HTMLElement,
    readonly client: KisClient,
    readonly strategy: string = "greedy",
  ) {}

  /** Entry point: resume the session named in the URL, else show the form. */
  async boot(): Promise<void> {
    const sessionId = new URLSearchParams(window.location.search).get("session");
    if (sessionId) {
      await this.resume(sessionId);
    } else {
      this.render();
    }
  }

  private track(work: () => Promise<void>): Promise<void> {
    const run = work().catch((err) => this.showError(err));
    this.lastAction = run;
    return run;
  }

  startFromForm(choices: StartChoices): Promise<void> {
    return this.track(async () => {
      const query: { target_id?: string; sigma?: number; vectors?: number[][] } = {};
      if (choices.mode === "demo") {
        query.target_id = choices.targetId;
        query.sigma = choices.sigma;
      } else if (choices.vectorsJson) {
        query.vectors = JSON.parse(choices.vectorsJson) as number[][];
      }
      const doc = await this.client.createSession(
        { mode: choices.mode, seed: choices.seed, query },
        choices.policy || undefined,
      );
      this.view = SessionView.fromCreate(doc);
      this.banner = null;
      this.targetId = choices.mode === "demo" ? choices.targetId : null;
      this.targetItem = null;
      window.history.replaceState(null, "", `?session=${doc.session_id}`);
      if (this.targetId) {
        this.targetItem = await this.client.getItem(this.targetId).catch(() => null);
      }
      await this.refreshDisplay();
    });
  }

  async resume(sessionId: string): Promise<void> {
    return this.track(async () => {
      const doc = await this.client.getRanking(sessionId);
      this.view = SessionView.fromResume(sessionId, doc);
      this.banner = null;
      await this.refreshDisplay();
    });
  }

  /** Fetch the next display; a 410 means the session is over. A step mismatch
   * (the session advanced without us) resyncs from the ranking route once. */
  private async refreshDisplay(attempt = 0): Promise<void> {
    const view = this.view;
    if (!view) return;
    try {
      const doc = await this.client.getDisplay(view.sessionId, this.strategy);
      view.loadDisplay(doc);
    } catch (err) {
      if (err instanceof ApiError && err.status === 410) {
        view.finished = true;
        await this.showFinal();
        return;
      }
      if (err instanceof StepMismatchError && attempt === 0) {
        view.resyncFromRanking(await this.client.getRanking(view.sessionId));
        await this.refreshDisplay(1);
        return;
      }
      throw err;
    }
    this.render();
  }

  select(pairIndex: number, side: Side): void {
    if (!this.view || this.busy) return;
    this.view.select(pairIndex, side);
    this.render();
  }

  submit(): Promise<void> {
    return this.track(async () => {
      const view = this.view;
      if (!view || !view.canSubmit || this.busy) return;
      this.busy = true;
      this.render();
      try {
        const doc = await this.client.postFeedback(view.sessionId, view.labels());
        view.applyFeedback(doc);
        this.banner = null;
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          // The display was consumed elsewhere; reload and ask again.
          view.clearDisplay();
          this.banner = {
            message: "This display was already answered. Fresh pairs loaded — please re-select.",
            kind: "info",
          };
          this.busy = false;
          await this.refreshDisplay();
          return;
        }
        throw err;
      } finally {
        this.busy = false;
      }
      if (view.finished) {
        await this.showFinal();
      } else {
        await this.refreshDisplay();
      }
    });
  }

  private async showFinal(): Promise<void> {
    const view = this.view;
    if (!view) return;
    const doc = await this.client.getRanking(view.sessionId, 50);
    view.top = doc.ranking;
    view.targetRank = doc.target_rank;
    this.renderFinal(doc);
  }

  private showError(err: unknown): void {
    const message =
      err instanceof ApiError
        ? err.status === 0
          ? "Cannot reach the server."
          : `Server error ${err.status}: ${JSON.stringify(err.detail)}`
        : String(err);
    const retryable = err instanceof ApiError && err.retryable;
    this.banner = {
      message,
      kind: "error",
      retry: retryable ? () => void this.boot() : undefined,
    };
    this.render();
  }

  private header(): HTMLElement {
    return el("h1", undefined, "kisrf — interactive known-item search");
  }

  private sidePanel(view: SessionView): HTMLElement {
    const side = el("div", "side-panel");
    if (view.mode === "demo") {
      side.append(renderTargetCard(this.targetItem, view.targetRank, this.client));
    }
    side.append(renderRankingPanel(view.top, this.targetId, this.client));
    return side;
  }

  render(): void {
    const view = this.view;
    this.root.textContent = "";
    this.root.className = "app";
    this.root.append(this.header());
    if (this.banner) {
      this.root.append(renderBanner(this.banner.message, this.banner.kind, this.banner.retry));
    }
    if (!view) {
      this.root.append(
        renderStartForm(true, (choices) => void this.startFromForm(choices)),
      );
      return;
    }
    const layout = el("div", "layout");
    const left = el("div");
    left.append(renderPairs(view, this.client, (pair, side) => this.select(pair, side)));
    const controls = renderControls(view, () => void this.submit());
    if (this.busy) {
      const btn = controls.querySelector<HTMLButtonElement>("[data-testid=submit]");
      if (btn) btn.disabled = true;
    }
    left.append(controls);
    layout.append(left);
    layout.append(this.sidePanel(view));
    this.root.append(layout);
  }

  private renderFinal(doc: RankingDoc): void {
    const view = this.view;
    this.root.textContent = "";
    this.root.className = "app";
    this.root.append(this.header());
    if (view && view.mode === "demo") {
      this.root.append(renderTargetCard(this.targetItem, view.targetRank, this.client));
    }
    this.root.append(renderFinalScreen(doc, this.targetId, this.client));
  }
}

export function createApp(root: HTMLElement, client: KisClient, strategy = "greedy"): App {
  return new App(root, client, strategy);
}

// Auto-boot in the browser; tests construct the app themselves.
if (import.meta.env?.MODE !== "test") {
  const root = document.getElementById("app");
  if (root) {
    void createApp(root, new KisClient("")).boot();
  }
}
