/** Conversation view model. Holds everything the page renders and enforces
 * the client-side contract: turns render in turn_index order, at most one
 * message is in flight, pins only change after the server confirms, and
 * suggested questions land in the draft box instead of being sent. */

import { describe } from "./api.js";
import { HealthInfo, HistoryReply, MessageReply, SessionInfo, Suggestion } from "./types.js";

/** The slice of ApiClient the store depends on; tests substitute fakes. */
export interface ChatApi {
  health(): Promise<HealthInfo>;
  createSession(dataset: string): Promise<SessionInfo>;
  sendMessage(sessionId: string, text: string): Promise<MessageReply>;
  history(sessionId: string): Promise<HistoryReply>;
  pin(sessionId: string, turn: number): Promise<number[]>;
  unpin(sessionId: string, turn: number): Promise<number[]>;
  suggest(sessionId: string, category: string): Promise<Suggestion>;
}

/** localStorage look-alike so tests and the reload flow can share state. */
export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

export interface TurnView {
  /** null for could-not-understand replies, which never enter history */
  turnIndex: number | null;
  utterance: string;
  response: string;
  parse: string;
  hints: string[];
  pinned: boolean;
}

export interface ChatState {
  sessionId: string | null;
  dataset: string;
  categories: string[];
  turns: TurnView[];
  pending: boolean;
  draft: string;
  /** network-failure notice with a retry affordance; null when absent */
  banner: string | null;
  /** transient pin/suggest server error; null when absent */
  toast: string | null;
  lastFailed: string | null;
}

type Listener = () => void;

export function sessionKey(dataset: string): string {
  return `ttm:session:${dataset}`;
}

export class ChatStore {
  readonly state: ChatState = {
    sessionId: null,
    dataset: "",
    categories: [],
    turns: [],
    pending: false,
    draft: "",
    banner: null,
    toast: null,
    lastFailed: null,
  };

  private listeners: Listener[] = [];

  constructor(private readonly api: ChatApi) {}

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  /** Reach the server, then resume the stored session or open a new one.
   * A stored id the server no longer recognizes falls back to a fresh
   * session rather than failing the boot. */
  async init(storage: KeyValueStore): Promise<void> {
    let health: HealthInfo;
    try {
      health = await this.api.health();
    } catch (err) {
      this.state.banner = `cannot reach the server: ${describe(err)}`;
      this.notify();
      return;
    }
    this.state.dataset = health.dataset;
    this.state.categories = health.categories;

    const key = sessionKey(health.dataset);
    const stored = storage.getItem(key);
    if (stored !== null) {
      try {
        await this.adopt(stored);
        this.notify();
        return;
      } catch {
        // stale session id; open a fresh conversation below
      }
    }
    try {
      const sess = await this.api.createSession(health.dataset);
      this.state.sessionId = sess.session_id;
      storage.setItem(key, sess.session_id);
    } catch (err) {
      this.state.banner = `could not open a session: ${describe(err)}`;
    }
    this.notify();
  }

  private async adopt(sessionId: string): Promise<void> {
    const hist = await this.api.history(sessionId);
    const turns = hist.turns.slice().sort((a, b) => a.turn_index - b.turn_index);
    this.state.sessionId = sessionId;
    this.state.turns = turns.map((t) => ({
      turnIndex: t.turn_index,
      utterance: t.utterance,
      response: t.response,
      parse: t.parse,
      hints: [],
      pinned: t.pinned,
    }));
  }

  /** Post one message. Returns false without touching the server when a
   * message is already in flight or the text is blank. On network failure
   * the turn is not appended; a banner offers retry and the draft stays. */
  async send(text: string): Promise<boolean> {
    const clean = text.trim();
    if (!clean || this.state.pending || this.state.sessionId === null) return false;
    this.state.pending = true;
    this.state.banner = null;
    this.state.toast = null;
    this.state.draft = clean;
    this.notify();
    try {
      const reply = await this.api.sendMessage(this.state.sessionId, clean);
      this.state.turns.push({
        turnIndex: reply.turn_index,
        utterance: clean,
        response: reply.response,
        parse: reply.parse,
        hints: reply.hints ?? [],
        pinned: false,
      });
      this.state.draft = "";
      this.state.lastFailed = null;
      return true;
    } catch (err) {
      this.state.banner = `message not sent: ${describe(err)}`;
      this.state.lastFailed = clean;
      return false;
    } finally {
      this.state.pending = false;
      this.notify();
    }
  }

  /** Re-send the message behind the retry banner. */
  async retry(): Promise<boolean> {
    if (this.state.lastFailed === null) return false;
    return this.send(this.state.lastFailed);
  }

  /** Flip one turn's pin. The local flags are rewritten from the pin list
   * the server answers with, so the UI always shows confirmed state; on a
   * server error nothing changes except a toast. */
  async togglePin(turnIndex: number): Promise<void> {
    const sid = this.state.sessionId;
    const turn = this.state.turns.find((t) => t.turnIndex === turnIndex);
    if (sid === null || turn === undefined) return;
    this.state.toast = null;
    try {
      const pins = turn.pinned
        ? await this.api.unpin(sid, turnIndex)
        : await this.api.pin(sid, turnIndex);
      const confirmed = new Set(pins);
      for (const t of this.state.turns) {
        if (t.turnIndex !== null) t.pinned = confirmed.has(t.turnIndex);
      }
    } catch (err) {
      this.state.toast = `pin failed: ${describe(err)}`;
    }
    this.notify();
  }

  /** Fetch a suggested question and place it in the draft box, unsent. */
  async suggest(category: string): Promise<void> {
    const sid = this.state.sessionId;
    if (sid === null) return;
    this.state.toast = null;
    try {
      const s = await this.api.suggest(sid, category);
      this.state.draft = s.suggestion;
    } catch (err) {
      this.state.toast = `suggestion failed: ${describe(err)}`;
    }
    this.notify();
  }

  /** Mirror the input box without a re-render (typing must not redraw). */
  setDraft(text: string): void {
    this.state.draft = text;
  }

  dismissBanner(): void {
    this.state.banner = null;
    this.state.lastFailed = null;
    this.notify();
  }

  /** Sidebar content: pinned turns in turn order. */
  pinnedTurns(): TurnView[] {
    return this.state.turns.filter((t) => t.pinned && t.turnIndex !== null);
  }

  /** True when indexed turns appear in strictly increasing order. */
  indexedOrderOk(): boolean {
    let last = -1;
    for (const t of this.state.turns) {
      if (t.turnIndex === null) continue;
      if (t.turnIndex <= last) return false;
      last = t.turnIndex;
    }
    return true;
  }

}
