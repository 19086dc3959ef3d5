/** DOM layer. Builds the page skeleton once, then redraws the dynamic
 * regions (turn list, sidebar, banner, toast) on every store change. The
 * composer input is created once and never replaced, so focus and the
 * caret survive re-renders; its value is only synced when the store's
 * draft diverges (a suggestion arrived or a send cleared it). */

import { ChatStore, TurnView } from "./store.js";

const SKELETON = `
  <header class="top">
    <h1>table talk</h1>
    <span class="dataset" data-testid="dataset"></span>
  </header>
  <div class="columns">
    <section class="chat">
      <ol class="turns" data-testid="turns"></ol>
      <div class="banner" data-testid="banner" hidden>
        <span class="banner-text"></span>
        <button type="button" data-testid="retry-btn">retry</button>
        <button type="button" data-testid="dismiss-btn">dismiss</button>
      </div>
      <form class="composer">
        <input
          data-testid="composer-input"
          autocomplete="off"
          placeholder="ask about the data or the model"
        />
        <button type="submit" data-testid="send-btn">send</button>
      </form>
      <div class="helper">
        <label>
          need an idea?
          <select data-testid="category-select"></select>
        </label>
        <button type="button" data-testid="suggest-btn">suggest a question</button>
      </div>
    </section>
    <aside class="pins">
      <h2>pinned</h2>
      <ul class="pin-list" data-testid="pin-list"></ul>
    </aside>
  </div>
  <div class="toast" data-testid="toast" hidden></div>
`;

function byTestId(host: HTMLElement, id: string): HTMLElement {
  const el = host.querySelector(`[data-testid="${id}"]`);
  if (el === null) throw new Error(`skeleton is missing ${id}`);
  return el as HTMLElement;
}

export function mountApp(doc: Document, host: HTMLElement, store: ChatStore): void {
  host.innerHTML = SKELETON;
  const dataset = byTestId(host, "dataset");
  const turnsList = byTestId(host, "turns") as HTMLOListElement;
  const banner = byTestId(host, "banner");
  const bannerText = banner.querySelector(".banner-text") as HTMLElement;
  const retryBtn = byTestId(host, "retry-btn") as HTMLButtonElement;
  const dismissBtn = byTestId(host, "dismiss-btn") as HTMLButtonElement;
  const form = host.querySelector("form.composer") as HTMLFormElement;
  const input = byTestId(host, "composer-input") as HTMLInputElement;
  const sendBtn = byTestId(host, "send-btn") as HTMLButtonElement;
  const categorySelect = byTestId(host, "category-select") as HTMLSelectElement;
  const suggestBtn = byTestId(host, "suggest-btn") as HTMLButtonElement;
  const pinList = byTestId(host, "pin-list") as HTMLUListElement;
  const toast = byTestId(host, "toast");

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void store.send(input.value);
  });
  input.addEventListener("input", () => store.setDraft(input.value));
  retryBtn.addEventListener("click", () => void store.retry());
  dismissBtn.addEventListener("click", () => store.dismissBanner());
  suggestBtn.addEventListener("click", () => {
    if (categorySelect.value) void store.suggest(categorySelect.value);
  });
  // one delegated listener covers every per-turn pin button
  turnsList.addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement | null;
    const btn = target?.closest("button[data-turn]") as HTMLButtonElement | null;
    if (btn !== null && btn !== undefined) {
      void store.togglePin(Number(btn.dataset.turn));
    }
  });

  const render = (): void => {
    const state = store.state;
    dataset.textContent = state.dataset;

    renderTurns(doc, turnsList, state.turns);
    renderPins(doc, pinList, store.pinnedTurns());

    banner.hidden = state.banner === null;
    bannerText.textContent = state.banner ?? "";
    retryBtn.hidden = state.lastFailed === null;

    toast.hidden = state.toast === null;
    toast.textContent = state.toast ?? "";

    input.disabled = state.pending;
    sendBtn.disabled = state.pending;
    if (input.value !== state.draft) input.value = state.draft;

    const options = state.categories.join("|");
    if (categorySelect.dataset.options !== options) {
      categorySelect.dataset.options = options;
      categorySelect.innerHTML = "";
      for (const cat of state.categories) {
        const opt = doc.createElement("option");
        opt.value = cat;
        opt.textContent = cat;
        categorySelect.appendChild(opt);
      }
    }
    suggestBtn.disabled = state.categories.length === 0;
  };

  store.subscribe(render);
  render();
}

function renderTurns(doc: Document, list: HTMLOListElement, turns: TurnView[]): void {
  list.innerHTML = "";
  for (const turn of turns) {
    const li = doc.createElement("li");
    li.className = "turn";
    li.dataset.testid = "turn";
    if (turn.turnIndex !== null) li.dataset.turnIndex = String(turn.turnIndex);

    const user = doc.createElement("div");
    user.className = "bubble user";
    user.textContent = turn.utterance;
    li.appendChild(user);

    const system = doc.createElement("div");
    system.className = turn.turnIndex === null ? "bubble system miss" : "bubble system";
    const response = doc.createElement("p");
    response.className = "response";
    response.textContent = turn.response;
    system.appendChild(response);

    if (turn.parse) {
      const details = doc.createElement("details");
      details.className = "parse";
      details.dataset.testid = "parse";
      const summary = doc.createElement("summary");
      summary.textContent = "parse";
      const code = doc.createElement("code");
      code.textContent = turn.parse;
      details.appendChild(summary);
      details.appendChild(code);
      system.appendChild(details);
    }

    if (turn.hints.length > 0) {
      const hints = doc.createElement("ul");
      hints.className = "hints";
      hints.dataset.testid = "hints";
      for (const hint of turn.hints) {
        const item = doc.createElement("li");
        item.textContent = hint;
        hints.appendChild(item);
      }
      system.appendChild(hints);
    }

    if (turn.turnIndex !== null) {
      const pin = doc.createElement("button");
      pin.type = "button";
      pin.className = turn.pinned ? "pin pinned" : "pin";
      pin.dataset.testid = "pin-btn";
      pin.dataset.turn = String(turn.turnIndex);
      pin.textContent = turn.pinned ? "unpin" : "pin";
      system.appendChild(pin);
    }

    li.appendChild(system);
    list.appendChild(li);
  }
}

function renderPins(doc: Document, list: HTMLUListElement, pinned: TurnView[]): void {
  list.innerHTML = "";
  for (const turn of pinned) {
    const li = doc.createElement("li");
    li.className = "pin-item";
    li.dataset.testid = "pin-item";
    li.dataset.turnIndex = String(turn.turnIndex);

    const q = doc.createElement("div");
    q.className = "pin-q";
    q.textContent = turn.utterance;
    const a = doc.createElement("div");
    a.className = "pin-a";
    a.textContent = turn.response;
    li.appendChild(q);
    li.appendChild(a);
    list.appendChild(li);
  }
}
