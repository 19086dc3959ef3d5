/** DOM behavior against a fake in-memory service: bubbles, parse details,
 * pending lockout, hint rendering, pin sidebar, suggestion box, failure
 * banner and toast. */

import { describe, expect, it } from "vitest";
import {
  Page,
  click,
  memoryStorage,
  openPage,
  q,
  qa,
  renderedHistory,
  submit,
  type,
  until,
} from "./driver.js";
import { FakeService, fakeService } from "./fakeservice.js";

async function freshPage(): Promise<{ page: Page; service: FakeService }> {
  const service = fakeService();
  const page = await openPage("", service.fetch, memoryStorage());
  return { page, service };
}

async function say(page: Page, text: string): Promise<void> {
  const before = qa(page.doc, "turn").length;
  type(page, text);
  submit(page);
  await until(() => qa(page.doc, "turn").length === before + 1, `turn ${before + 1}`);
}

describe("page boot", () => {
  it("shows the dataset and fills the category picker", async () => {
    const { page } = await freshPage();
    expect(q(page.doc, "dataset").textContent).toBe("diabetes");
    const select = q(page.doc, "category-select") as HTMLSelectElement;
    expect(Array.from(select.options).map((o) => o.value)).toEqual([
      "explain",
      "filter",
      "predict",
    ]);
    expect(page.store.state.sessionId).toBe("fs-1");
  });
});

describe("conversation pane", () => {
  it("renders a sent message as user and system bubbles with a collapsed parse", async () => {
    const { page } = await freshPage();
    await say(page, "how many instances are there");

    const turn = qa(page.doc, "turn")[0];
    expect(turn.querySelector(".bubble.user")?.textContent).toBe(
      "how many instances are there",
    );
    expect(turn.querySelector(".response")?.textContent).toBe(
      "reply 0: how many instances are there",
    );
    const parse = turn.querySelector("details.parse") as HTMLDetailsElement;
    expect(parse.open).toBe(false);
    expect(parse.querySelector("code")?.textContent).toBe("count data");
    expect(q(page.doc, "composer-input").getAttribute("disabled")).toBeNull();
    expect((q(page.doc, "composer-input") as HTMLInputElement).value).toBe("");
  });

  it("disables the composer while a message is in flight", async () => {
    const service = fakeService();
    let release: (() => void) | null = null;
    const slowFetch: typeof service.fetch = async (url, init) => {
      if (String(url).endsWith("/messages")) {
        await new Promise<void>((r) => {
          release = r;
        });
      }
      return service.fetch(url, init);
    };
    const page = await openPage("", slowFetch, memoryStorage());

    type(page, "slow question");
    submit(page);
    await until(() => page.store.state.pending, "pending flag");
    const input = q(page.doc, "composer-input") as HTMLInputElement;
    const send = q(page.doc, "send-btn") as HTMLButtonElement;
    expect(input.disabled).toBe(true);
    expect(send.disabled).toBe(true);

    release!();
    await until(() => qa(page.doc, "turn").length === 1, "reply rendered");
    expect(input.disabled).toBe(false);
    expect(send.disabled).toBe(false);
  });

  it("renders could-not-understand replies with their hint list", async () => {
    const { page } = await freshPage();
    await say(page, "gibberish quantum toast");

    const turn = qa(page.doc, "turn")[0];
    const hints = turn.querySelector('[data-testid="hints"]');
    expect(hints).not.toBeNull();
    expect(Array.from(hints!.querySelectorAll("li")).map((li) => li.textContent)).toEqual([
      "filter",
      "predict",
      "explain feature importance",
    ]);
    expect(turn.querySelector("details.parse")).toBeNull();
    expect(turn.querySelector("button[data-turn]")).toBeNull();
  });

  it("shows a retry banner on network failure and recovers on retry", async () => {
    const { page, service } = await freshPage();
    await say(page, "first question");

    service.offline = true;
    type(page, "lost question");
    submit(page);
    await until(() => !q(page.doc, "banner").hidden, "banner visible");
    expect(qa(page.doc, "turn")).toHaveLength(1);
    expect((q(page.doc, "composer-input") as HTMLInputElement).value).toBe("lost question");

    service.offline = false;
    click(q(page.doc, "retry-btn"));
    await until(() => qa(page.doc, "turn").length === 2, "retried turn rendered");
    expect(q(page.doc, "banner").hidden).toBe(true);
    expect(renderedHistory(page.doc)[1].utterance).toBe("lost question");
  });
});

describe("pins and suggestions", () => {
  it("pins into the sidebar and unpins back out", async () => {
    const { page, service } = await freshPage();
    await say(page, "question a");
    await say(page, "question b");

    const pinButtons = qa(page.doc, "pin-btn");
    expect(pinButtons).toHaveLength(2);
    click(pinButtons[1]);
    await until(() => qa(page.doc, "pin-item").length === 1, "pin appears");
    const item = q(page.doc, "pin-item");
    expect(item.dataset.turnIndex).toBe("1");
    expect(item.querySelector(".pin-q")?.textContent).toBe("question b");
    expect(service.sessions.get("fs-1")!.pins.has(1)).toBe(true);

    click(qa(page.doc, "pin-btn")[1]);
    await until(() => qa(page.doc, "pin-item").length === 0, "pin removed");
    expect(service.sessions.get("fs-1")!.pins.size).toBe(0);
  });

  it("toasts and keeps state when the pin endpoint fails", async () => {
    const { page, service } = await freshPage();
    await say(page, "question a");
    service.brokenSidebar = true;

    click(q(page.doc, "pin-btn"));
    await until(() => !q(page.doc, "toast").hidden, "toast visible");
    expect(q(page.doc, "toast").textContent).toContain("pin failed");
    expect(qa(page.doc, "pin-item")).toHaveLength(0);
    expect(qa(page.doc, "pin-btn")[0].classList.contains("pinned")).toBe(false);
  });

  it("puts the suggestion into the input box without sending it", async () => {
    const { page } = await freshPage();
    const select = q(page.doc, "category-select") as HTMLSelectElement;
    select.value = "predict";

    click(q(page.doc, "suggest-btn"));
    const input = q(page.doc, "composer-input") as HTMLInputElement;
    await until(() => input.value !== "", "suggestion in input");
    expect(input.value).toBe("sample predict question");
    expect(qa(page.doc, "turn")).toHaveLength(0);
  });

  it("toasts when the suggestion endpoint fails", async () => {
    const { page, service } = await freshPage();
    service.brokenSidebar = true;
    click(q(page.doc, "suggest-btn"));
    await until(() => !q(page.doc, "toast").hidden, "toast visible");
    expect(q(page.doc, "toast").textContent).toContain("suggestion failed");
    expect((q(page.doc, "composer-input") as HTMLInputElement).value).toBe("");
  });
});

describe("reload", () => {
  it("restores the conversation and pins from history", async () => {
    const service = fakeService();
    const storage = memoryStorage();
    const first = await openPage("", service.fetch, storage);
    await say(first, "question a");
    await say(first, "question b");
    click(qa(first.doc, "pin-btn")[0]);
    await until(() => qa(first.doc, "pin-item").length === 1, "pin appears");
    const before = renderedHistory(first.doc);

    const second = await openPage("", service.fetch, storage);
    expect(second.store.state.sessionId).toBe(first.store.state.sessionId);
    expect(renderedHistory(second.doc)).toEqual(before);
    expect(qa(second.doc, "pin-item")).toHaveLength(1);
  });
});
