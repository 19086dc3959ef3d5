/** Page bootstrap. In the browser this module self-boots against the same
 * origin; tests call boot() with an injected document, fetch, and storage
 * so a "reload" is just a second boot over the same storage. */

import { ApiClient, FetchFn } from "./api.js";
import { ChatStore, KeyValueStore } from "./store.js";
import { mountApp } from "./view.js";

export interface BootOptions {
  doc: Document;
  host?: HTMLElement;
  baseUrl?: string;
  fetchFn?: FetchFn;
  storage?: KeyValueStore;
}

export async function boot(opts: BootOptions): Promise<ChatStore> {
  const doc = opts.doc;
  const host = opts.host ?? doc.getElementById("app");
  if (host === null) throw new Error("no #app element to mount into");
  const api = new ApiClient(opts.baseUrl ?? "", opts.fetchFn);
  const store = new ChatStore(api);
  mountApp(doc, host, store);
  const storage = opts.storage ?? windowStorage();
  await store.init(storage);
  return store;
}

/** localStorage when available; harmless in-memory fallback otherwise
 * (private browsing modes can throw on access). */
function windowStorage(): KeyValueStore {
  try {
    const probe = globalThis.localStorage;
    probe.getItem("ttm:probe");
    return probe;
  } catch {
    const mem = new Map<string, string>();
    return {
      getItem: (k) => mem.get(k) ?? null,
      setItem: (k, v) => {
        mem.set(k, v);
      },
    };
  }
}

// self-boot only on a real page that shipped the mount point; test
// environments import boot() and provide their own document
if (typeof document !== "undefined" && document.getElementById("app") !== null) {
  boot({ doc: document }).catch((err) => {
    console.error("boot failed", err);
  });
}
