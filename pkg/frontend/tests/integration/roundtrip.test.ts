/**
 * Round trip against a live desk-model service. Set CONSOLE_SERVICE_URL to a
 * running service before executing; without it the suite is skipped. The
 * killed-service leg reuses the mounted console against an unreachable port.
 */

import { beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../../src/api.js";
import { mountConsole } from "../../src/main.js";

const SERVICE_URL = process.env.CONSOLE_SERVICE_URL ?? "";
const DEAD_URL = "http://127.0.0.1:1";

const CONSOLE_HTML = `
  <form id="query-form">
    <input id="query-input" type="text">
    <select id="k-select"><option selected>3</option></select>
    <button id="submit-btn" type="submit"></button>
  </form>
  <div id="banner" hidden></div>
  <section id="results"></section>
  <ul id="history"></ul>
  <footer id="status"></footer>
`;

describe.skipIf(!SERVICE_URL)("console round trip", () => {
  beforeAll(() => {
    document.body.innerHTML = CONSOLE_HTML;
  });

  it("renders three ordered cards for the unordered-query example", async () => {
    const client = new ApiClient(SERVICE_URL);
    const console_ = mountConsole(document, client);

    const input = document.getElementById("query-input") as HTMLInputElement;
    input.value = "How to listify payloads available?";
    input.dispatchEvent(new Event("input"));
    await console_.submit();

    const cards = [...document.querySelectorAll("#results .card")] as HTMLElement[];
    expect(cards).toHaveLength(3);
    expect(cards.map((c) => c.dataset.rank)).toEqual(["1", "2", "3"]);
    expect(cards[0].querySelector(".signatures")?.textContent).toContain(
      "limacharlie.Payloads.Payloads.list()",
    );
    const history = document.querySelectorAll("#history li");
    expect(history).toHaveLength(1);

    // killed service: submit again against a dead port; banner appears and
    // the previous cards survive untouched
    client.baseUrl = DEAD_URL;
    input.value = "How to remove yara rule?";
    input.dispatchEvent(new Event("input"));
    await console_.submit();

    const banner = document.getElementById("banner") as HTMLElement;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("unreachable");
    const cardsAfter = [...document.querySelectorAll("#results .card")] as HTMLElement[];
    expect(cardsAfter.map((c) => c.dataset.clusterId)).toEqual(
      cards.map((c) => c.dataset.clusterId),
    );
    expect(document.querySelectorAll("#history li")).toHaveLength(1);
  });
});
