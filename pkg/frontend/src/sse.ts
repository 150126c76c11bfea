// Server-push event stream over fetch + ReadableStream (works in browsers and
// node, unlike EventSource). Heartbeat comments keep the stale detector fed.
import type { TwinEvent } from "./types.js";

export interface SseFrame {
  event: string | null;
  id: string | null;
  data: string;
  comment: boolean;
}

/** Incremental parser for text/event-stream payloads. Feed arbitrary chunks,
 * get completed frames back. */
export class SseParser {
  private buffer = "";

  push(chunk: string): SseFrame[] {
    this.buffer += chunk;
    const frames: SseFrame[] = [];
    let idx: number;
    while ((idx = this.buffer.indexOf("\n\n")) >= 0) {
      const block = this.buffer.slice(0, idx);
      this.buffer = this.buffer.slice(idx + 2);
      const frame = parseBlock(block);
      if (frame !== null) frames.push(frame);
    }
    return frames;
  }
}

function parseBlock(block: string): SseFrame | null {
  const lines = block.split("\n").filter((l) => l.length > 0);
  if (lines.length === 0) return null;
  let event: string | null = null;
  let id: string | null = null;
  const dataParts: string[] = [];
  let commentOnly = true;
  for (const line of lines) {
    if (line.startsWith(":")) continue; // heartbeat / keep-alive comment
    commentOnly = false;
    const sep = line.indexOf(":");
    const field = sep < 0 ? line : line.slice(0, sep);
    let value = sep < 0 ? "" : line.slice(sep + 1);
    if (value.startsWith(" ")) value = value.slice(1);
    if (field === "event") event = value;
    else if (field === "id") id = value;
    else if (field === "data") dataParts.push(value);
  }
  return { event, id, data: dataParts.join("\n"), comment: commentOnly };
}

export function decodeEvent(frame: SseFrame): TwinEvent | null {
  if (frame.comment || !frame.data) return null;
  try {
    return JSON.parse(frame.data) as TwinEvent;
  } catch {
    return null;
  }
}

/** Reconnect delay schedule: 1 s, 2 s, 4 s ... capped at 15 s. */
export function reconnectDelayMs(attempt: number): number {
  return Math.min(1000 * 2 ** Math.max(0, attempt - 1), 15_000);
}

export interface StreamHandle {
  stop(): void;
}

export interface StreamCallbacks {
  onEvent(ev: TwinEvent): void;
  onHeartbeat?(): void;
  onStateChange?(connected: boolean): void;
}

export function subscribeEvents(
  url: string,
  callbacks: StreamCallbacks,
  fetchFn: (input: string, init?: RequestInit) => Promise<Response> =
    (input, init) => fetch(input, init),
): StreamHandle {
  let stopped = false;
  let attempt = 0;

  const run = async (): Promise<void> => {
    while (!stopped) {
      try {
        const resp = await fetchFn(url, { headers: { Accept: "text/event-stream" } });
        if (!resp.ok || resp.body === null) throw new Error(`stream ${resp.status}`);
        callbacks.onStateChange?.(true);
        attempt = 0;
        const reader = resp.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SseParser();
        for (;;) {
          const { done, value } = await reader.read();
          if (stopped) {
            await reader.cancel().catch(() => undefined);
            return;
          }
          if (done) break;
          for (const frame of parser.push(decoder.decode(value, { stream: true }))) {
            if (frame.comment) {
              callbacks.onHeartbeat?.();
              continue;
            }
            const ev = decodeEvent(frame);
            if (ev !== null) callbacks.onEvent(ev);
          }
        }
      } catch {
        // fall through to reconnect
      }
      callbacks.onStateChange?.(false);
      attempt += 1;
      await new Promise((r) => setTimeout(r, reconnectDelayMs(attempt)));
    }
  };

  void run();
  return { stop: () => { stopped = true; } };
}
