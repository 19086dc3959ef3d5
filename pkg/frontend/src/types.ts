/** Wire types for the conversation service's JSON API, with runtime
 * decoders. The app runs as plain browser ES modules with no bundler, so
 * payloads are checked by hand instead of with a schema library. */

export interface HealthInfo {
  status: string;
  dataset: string;
  categories: string[];
}

export interface SessionInfo {
  session_id: string;
  dataset: string;
}

export interface ResultRecord {
  kind: string;
  payload: unknown;
  error: string | null;
}

/** Reply to POST /sessions/{id}/messages. A could-not-understand reply
 * carries turn_index null plus a hint list and is not part of history. */
export interface MessageReply {
  response: string;
  parse: string;
  results: ResultRecord[];
  turn_index: number | null;
  hints?: string[];
}

export interface HistoryTurn {
  turn_index: number;
  utterance: string;
  parse: string;
  response: string;
  pinned: boolean;
}

export interface HistoryReply {
  session_id: string;
  turns: HistoryTurn[];
}

export interface Suggestion {
  suggestion: string;
  category: string;
}

export class DecodeError extends Error {}

function record(v: unknown, where: string): Record<string, unknown> {
  if (typeof v !== "object" || v === null || Array.isArray(v)) {
    throw new DecodeError(`${where}: expected an object`);
  }
  return v as Record<string, unknown>;
}

function str(v: unknown, where: string): string {
  if (typeof v !== "string") throw new DecodeError(`${where}: expected a string`);
  return v;
}

function bool(v: unknown, where: string): boolean {
  if (typeof v !== "boolean") throw new DecodeError(`${where}: expected a boolean`);
  return v;
}

function int(v: unknown, where: string): number {
  if (typeof v !== "number" || !Number.isInteger(v)) {
    throw new DecodeError(`${where}: expected an integer`);
  }
  return v;
}

function strings(v: unknown, where: string): string[] {
  if (!Array.isArray(v)) throw new DecodeError(`${where}: expected an array`);
  return v.map((item, i) => str(item, `${where}[${i}]`));
}

export function decodeHealth(v: unknown): HealthInfo {
  const doc = record(v, "health");
  return {
    status: str(doc.status, "health.status"),
    dataset: str(doc.dataset, "health.dataset"),
    categories: strings(doc.categories, "health.categories"),
  };
}

export function decodeSession(v: unknown): SessionInfo {
  const doc = record(v, "session");
  return {
    session_id: str(doc.session_id, "session.session_id"),
    dataset: str(doc.dataset, "session.dataset"),
  };
}

export function decodeMessageReply(v: unknown): MessageReply {
  const doc = record(v, "message");
  const results = Array.isArray(doc.results) ? doc.results : [];
  return {
    response: str(doc.response, "message.response"),
    parse: str(doc.parse, "message.parse"),
    results: results.map((r, i) => {
      const item = record(r, `message.results[${i}]`);
      return {
        kind: str(item.kind, `message.results[${i}].kind`),
        payload: item.payload,
        error: item.error === null ? null : str(item.error, `message.results[${i}].error`),
      };
    }),
    turn_index: doc.turn_index === null ? null : int(doc.turn_index, "message.turn_index"),
    hints: doc.hints === undefined ? undefined : strings(doc.hints, "message.hints"),
  };
}

export function decodeHistory(v: unknown): HistoryReply {
  const doc = record(v, "history");
  if (!Array.isArray(doc.turns)) throw new DecodeError("history.turns: expected an array");
  return {
    session_id: str(doc.session_id, "history.session_id"),
    turns: doc.turns.map((t, i) => {
      const item = record(t, `history.turns[${i}]`);
      return {
        turn_index: int(item.turn_index, `history.turns[${i}].turn_index`),
        utterance: str(item.utterance, `history.turns[${i}].utterance`),
        parse: str(item.parse, `history.turns[${i}].parse`),
        response: str(item.response, `history.turns[${i}].response`),
        pinned: bool(item.pinned, `history.turns[${i}].pinned`),
      };
    }),
  };
}

export function decodePins(v: unknown): number[] {
  const doc = record(v, "pins");
  if (!Array.isArray(doc.pins)) throw new DecodeError("pins.pins: expected an array");
  return doc.pins.map((p, i) => int(p, `pins.pins[${i}]`));
}

export function decodeSuggestion(v: unknown): Suggestion {
  const doc = record(v, "suggestion");
  return {
    suggestion: str(doc.suggestion, "suggestion.suggestion"),
    category: str(doc.category, "suggestion.category"),
  };
}
