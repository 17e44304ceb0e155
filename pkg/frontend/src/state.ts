/**
 * Console state transitions, kept pure so they are trivially testable.
 *
 * History is append-only within the session; cards always mirror the last
 * successful QueryResponse exactly, and a failed submission never destroys
 * them.
 */

import type { QueryResponse, RankedCard } from "./api.js";

export interface HistoryEntry {
  query: string;
  topSignature: string;
}

export interface ConsoleState {
  queryText: string;
  k: number;
  cards: RankedCard[];
  history: HistoryEntry[];
  banner: string | null;
  latencyMs: number | null;
  modelVersion: string | null;
}

export function initialState(): ConsoleState {
  return {
    queryText: "",
    k: 3,
    cards: [],
    history: [],
    banner: null,
    latencyMs: null,
    modelVersion: null,
  };
}

export function canSubmit(state: ConsoleState): boolean {
  return state.queryText.trim().length > 0;
}

export function withQueryText(state: ConsoleState, text: string): ConsoleState {
  return { ...state, queryText: text };
}

export function withK(state: ConsoleState, k: number): ConsoleState {
  if (!Number.isInteger(k) || k < 1 || k > 10) return state;
  return { ...state, k };
}

/** A successful response replaces the cards and appends to the history. */
export function applyResponse(
  state: ConsoleState,
  query: string,
  response: QueryResponse,
): ConsoleState {
  const top = response.results[0];
  return {
    ...state,
    cards: response.results,
    banner: null,
    latencyMs: response.latency_ms,
    modelVersion: response.model_version,
    history: [
      ...state.history,
      { query, topSignature: top ? top.signatures[0] : "(no result)" },
    ],
  };
}

/** Failures raise the banner but keep the previous cards and history intact. */
export function applyFailure(state: ConsoleState, message: string): ConsoleState {
  return { ...state, banner: message };
}

export function unanswerableMessage(detail: string): string {
  return `The service could not answer this query (${detail}). Try adding task keywords such as a verb and the object you want to act on.`;
}

export function serviceDownMessage(): string {
  return "The recommendation service is unreachable. Previous results are still shown; retry once the service is back.";
}
