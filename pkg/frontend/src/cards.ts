/**
 * Result-card rendering. Card order equals the response rank order and scores
 * are printed with exactly three decimals; no client-side re-sorting happens
 * here or anywhere else.
 */

import type { RankedCard } from "./api.js";

export function formatScore(score: number): string {
  return score.toFixed(3);
}

/** Verbatim clipboard payload: every member signature, newline-separated. */
export function clipboardPayload(card: RankedCard): string {
  return card.signatures.join("\n");
}

export function renderCard(
  card: RankedCard,
  onCopy: (card: RankedCard) => void,
): HTMLElement {
  const root = document.createElement("article");
  root.className = "card";
  root.dataset.rank = String(card.rank);
  root.dataset.clusterId = card.cluster_id;

  const header = document.createElement("header");
  const rankBadge = document.createElement("span");
  rankBadge.className = "rank";
  rankBadge.textContent = `#${card.rank}`;
  const toolBadge = document.createElement("span");
  toolBadge.className = "tool";
  toolBadge.textContent = card.tool;
  const score = document.createElement("span");
  score.className = "score";
  score.textContent = formatScore(card.score);
  header.append(rankBadge, toolBadge, score);
  root.append(header);

  const signatures = document.createElement("pre");
  signatures.className = "signatures";
  signatures.textContent = card.signatures.join("\n");
  root.append(signatures);

  const description = document.createElement("p");
  description.className = "description";
  description.textContent = card.description;
  root.append(description);

  if (card.parameters) {
    const parameters = document.createElement("p");
    parameters.className = "parameters";
    parameters.textContent = `Parameters: ${card.parameters}`;
    root.append(parameters);
  }
  if (card.returns) {
    const returns = document.createElement("p");
    returns.className = "returns";
    returns.textContent = `Returns: ${card.returns}`;
    root.append(returns);
  }

  const copyButton = document.createElement("button");
  copyButton.type = "button";
  copyButton.className = "copy";
  copyButton.textContent = "Copy API";
  copyButton.addEventListener("click", () => onCopy(card));
  root.append(copyButton);
  return root;
}

export function renderCards(
  container: HTMLElement,
  cards: RankedCard[],
  onCopy: (card: RankedCard) => void,
): void {
  container.replaceChildren(...cards.map((card) => renderCard(card, onCopy)));
}
