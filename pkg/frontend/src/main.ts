/**
 * Console wiring: one in-flight request at a time; a rapid resubmission
 * aborts the superseded request so stale responses can never overwrite newer
 * cards.
 */

import { ApiClient, ServiceError, UnanswerableQueryError } from "./api.js";
import { clipboardPayload, renderCards } from "./cards.js";
import { copyText } from "./clipboard.js";
import {
  ConsoleState,
  applyFailure,
  applyResponse,
  canSubmit,
  initialState,
  serviceDownMessage,
  unanswerableMessage,
  withK,
  withQueryText,
} from "./state.js";

export function mountConsole(root: Document, client: ApiClient): { submit: () => Promise<void> } {
  let state: ConsoleState = initialState();
  let inFlight: AbortController | null = null;

  const input = root.getElementById("query-input") as HTMLInputElement;
  const kSelect = root.getElementById("k-select") as HTMLSelectElement;
  const submitButton = root.getElementById("submit-btn") as HTMLButtonElement;
  const banner = root.getElementById("banner") as HTMLElement;
  const results = root.getElementById("results") as HTMLElement;
  const historyList = root.getElementById("history") as HTMLElement;
  const status = root.getElementById("status") as HTMLElement;

  function render(): void {
    submitButton.disabled = !canSubmit(state);
    banner.hidden = state.banner === null;
    banner.textContent = state.banner ?? "";
    renderCards(results, state.cards, (card) => void copyText(clipboardPayload(card)));
    historyList.replaceChildren(
      ...state.history.map((entry) => {
        const item = root.createElement("li");
        item.textContent = `${entry.query} → ${entry.topSignature}`;
        return item;
      }),
    );
    status.textContent =
      state.latencyMs !== null
        ? `model ${state.modelVersion} · ${state.latencyMs.toFixed(1)} ms`
        : "";
  }

  async function submit(): Promise<void> {
    if (!canSubmit(state)) return;
    const query = state.queryText.trim();
    inFlight?.abort();
    const controller = new AbortController();
    inFlight = controller;
    try {
      const response = await client.postQuery(query, state.k, controller.signal);
      if (controller.signal.aborted) return;
      state = applyResponse(state, query, response);
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") return;
      if (controller.signal.aborted) return;
      if (err instanceof UnanswerableQueryError) {
        state = applyFailure(state, unanswerableMessage(err.message));
      } else if (err instanceof ServiceError) {
        state = applyFailure(state, serviceDownMessage());
      } else {
        state = applyFailure(state, String(err));
      }
    } finally {
      if (inFlight === controller) inFlight = null;
    }
    render();
  }

  input.addEventListener("input", () => {
    state = withQueryText(state, input.value);
    render();
  });
  kSelect.addEventListener("change", () => {
    state = withK(state, Number(kSelect.value));
  });
  const form = root.getElementById("query-form") as HTMLFormElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void submit();
  });

  void client
    .health()
    .then((h) => {
      status.textContent = `model ${h.model_version}`;
    })
    .catch(() => {
      state = applyFailure(state, serviceDownMessage());
      render();
    });

  render();
  return { submit };
}

if (typeof document !== "undefined" && document.getElementById("query-form")) {
  mountConsole(document, new ApiClient(""));
}
