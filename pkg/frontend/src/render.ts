/** DOM builders. Every probability and rank string is rendered verbatim from
 * the server payload; nothing numeric is recomputed on the client. */

import type { ItemDoc, KisClient, RankedItem, RankingDoc } from "./api";
import { glyphSvg } from "./glyph";
import type { PendingPair, SessionView, Side } from "./state";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function itemVisual(item: ItemDoc, client: KisClient): HTMLElement {
  if (item.thumbnail_uri) {
    const img = el("img");
    img.src = client.thumbnailUrl(item.item_id);
    img.alt = item.label || item.item_id;
    return img;
  }
  const glyph = el("div", "glyph");
  glyph.innerHTML = glyphSvg(item.item_id);
  return glyph;
}

export interface StartChoices {
  mode: "demo" | "live";
  targetId: string;
  sigma: number;
  seed: number;
  policy: string;
  vectorsJson: string;
}

export function renderStartForm(
  predictorsLoaded: boolean,
  onStart: (choices: StartChoices) => void,
): HTMLFormElement {
  const form = el("form", "start-form");
  form.innerHTML = `
    <label>Mode
      <select name="mode" data-testid="mode">
        <option value="demo">demo (simulated user)</option>
        <option value="live">live</option>
      </select>
    </label>
    <label>Target item id (demo)
      <input name="target" data-testid="target" placeholder="item-0042" />
    </label>
    <label>Query noise sigma
      <input name="sigma" data-testid="sigma" type="number" step="0.1" min="0" value="0" />
    </label>
    <label>Seed
      <input name="seed" data-testid="seed" type="number" step="1" value="0" />
    </label>
    <label>Policy
      <select name="policy" data-testid="policy">
        <option value="">server default</option>
        <option value="pichunter">pichunter (hard updates)</option>
        <option value="ours" ${predictorsLoaded ? "" : "disabled"}>ours (soft updates)</option>
        <option value="random">random</option>
      </select>
    </label>
    <label>Query vectors (live, JSON)
      <textarea name="vectors" data-testid="vectors" rows="2" placeholder="[[0.1, ...], ...]"></textarea>
    </label>
    <div class="actions">
      <button type="submit" class="primary" data-testid="start">Start session</button>
    </div>
  `;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    onStart({
      mode: data.get("mode") === "live" ? "live" : "demo",
      targetId: String(data.get("target") ?? "").trim(),
      sigma: Number(data.get("sigma") ?? 0),
      seed: Number(data.get("seed") ?? 0),
      policy: String(data.get("policy") ?? ""),
      vectorsJson: String(data.get("vectors") ?? "").trim(),
    });
  });
  return form;
}

export function renderBanner(
  message: string,
  kind: "error" | "info",
  onRetry?: () => void,
): HTMLElement {
  const banner = el("div", kind === "info" ? "banner info" : "banner");
  banner.setAttribute("data-testid", "banner");
  banner.append(el("span", undefined, message));
  if (onRetry) {
    const retry = el("button", undefined, "Retry");
    retry.addEventListener("click", onRetry);
    banner.append(retry);
  }
  return banner;
}

function pairOption(
  pair: PendingPair,
  index: number,
  side: Side,
  client: KisClient,
  onSelect: (pairIndex: number, side: Side) => void,
): HTMLButtonElement {
  const item = side === 0 ? pair.aItem : pair.bItem;
  const option = el("button", "pair-option");
  option.type = "button";
  option.dataset.pair = String(index);
  option.dataset.side = String(side);
  if (pair.selection === side) option.classList.add("selected");
  option.append(itemVisual(item, client));
  option.append(el("span", "name", item.label || item.item_id));
  if (pair.oracleLabel === side) {
    const hint = el("span", "hint", "simulated user pick");
    hint.dataset.oracle = "1";
    option.append(hint);
  }
  option.addEventListener("click", () => onSelect(index, side));
  return option;
}

export function renderPairs(
  view: SessionView,
  client: KisClient,
  onSelect: (pairIndex: number, side: Side) => void,
): HTMLElement {
  const wrap = el("div", "pairs");
  view.pairs.forEach((pair, index) => {
    const card = el("div", "pair-card");
    card.append(pairOption(pair, index, 0, client, onSelect));
    card.append(el("span", "pair-vs", "vs"));
    card.append(pairOption(pair, index, 1, client, onSelect));
    wrap.append(card);
  });
  return wrap;
}

export function renderControls(view: SessionView, onSubmit: () => void): HTMLElement {
  const controls = el("div", "controls");
  const total = view.maxSteps === null ? "?" : String(view.maxSteps);
  controls.append(
    el("span", "step", `Step ${view.step + 1} of ${total}`),
  );
  const submit = el("button", "primary", "Submit judgments");
  submit.type = "button";
  submit.setAttribute("data-testid", "submit");
  submit.disabled = !view.canSubmit;
  submit.addEventListener("click", onSubmit);
  controls.append(submit);
  return controls;
}

export function renderTargetCard(
  item: ItemDoc | null,
  targetRank: number | null,
  client: KisClient,
): HTMLElement {
  const card = el("div", "target-card");
  card.setAttribute("data-testid", "target-card");
  if (item) {
    card.append(itemVisual(item, client));
    card.append(el("span", "name", item.label || item.item_id));
  } else {
    card.append(el("span", "name", "target"));
  }
  const badge = el(
    "span",
    "rank-badge",
    targetRank === null ? "–" : `rank ${targetRank}`,
  );
  badge.setAttribute("data-testid", "rank-badge");
  card.append(badge);
  return card;
}

export function renderRankingPanel(
  top: RankedItem[],
  targetId: string | null,
  client: KisClient,
): HTMLElement {
  const panel = el("div", "ranking-panel");
  panel.append(el("h2", undefined, "Current ranking"));
  const list = el("ol");
  for (const row of top) {
    const li = el("li");
    if (targetId !== null && row.item_id === targetId) li.classList.add("target-row");
    li.append(el("span", "rank", String(row.rank)));
    li.append(itemVisual(row, client));
    li.append(el("span", "name", row.label || row.item_id));
    li.append(el("span", "prob", row.prob));
    list.append(li);
  }
  panel.append(list);
  return panel;
}

export function renderFinalScreen(
  doc: RankingDoc,
  targetId: string | null,
  client: KisClient,
): HTMLElement {
  const screen = el("div", "final-screen");
  screen.setAttribute("data-testid", "final-screen");
  screen.append(el("h2", undefined, "Session finished"));
  if (doc.target_rank !== null) {
    screen.append(
      el("p", undefined, `The target ended at rank ${doc.target_rank}.`),
    );
  }
  screen.append(renderRankingPanel(doc.ranking, targetId, client));
  return screen;
}
