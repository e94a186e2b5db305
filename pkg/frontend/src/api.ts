// HTTP client for the session service plus the push-channel subscription.
// Uses EventSource (SSE) when the host provides it, falling back to
// long-poll style fetches of /updates, so the same client drives browsers
// and test environments.

import type {
  DeltaDoc,
  Hand,
  InterventionDoc,
  OntologyDoc,
  PushEvent,
  RespondBody,
  SessionStateDoc,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`api error ${status}: ${JSON.stringify(detail)}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  const body = await response.json().catch(() => null);
  if (!response.ok) {
    throw new ApiError(response.status, body?.detail ?? body);
  }
  return body as T;
}

export class ApiClient {
  constructor(
    public baseUrl: string,
    public sessionId: string | null = null,
  ) {}

  private session(): string {
    if (!this.sessionId) throw new Error("no session open");
    return `${this.baseUrl}/sessions/${this.sessionId}`;
  }

  async createSession(clipId: string, config?: Record<string, unknown>): Promise<string> {
    const doc = await request<{ session_id: string }>(`${this.baseUrl}/sessions`, {
      method: "POST",
      body: JSON.stringify({ clip_id: clipId, config: config ?? null }),
    });
    this.sessionId = doc.session_id;
    return doc.session_id;
  }

  fullState(): Promise<SessionStateDoc> {
    return request(`${this.session()}/state`);
  }

  ontology(): Promise<OntologyDoc> {
    return request(`${this.session()}/ontology`);
  }

  createEvent(hand: Hand, t_s: number, t_e: number): Promise<unknown> {
    return request(`${this.session()}/events`, {
      method: "POST",
      body: JSON.stringify({ hand, t_s, t_e }),
    });
  }

  nextIntervention(hand: Hand): Promise<InterventionDoc> {
    return request(`${this.session()}/next-intervention`, {
      method: "POST",
      body: JSON.stringify({ hand }),
    });
  }

  respond(body: RespondBody): Promise<DeltaDoc> {
    return request(`${this.session()}/respond`, {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  confirmField(hand: Hand, field: string): Promise<DeltaDoc> {
    return request(`${this.session()}/confirm-field`, {
      method: "POST",
      body: JSON.stringify({ hand, field }),
    });
  }

  editField(hand: Hand, values: Record<string, number | string>): Promise<DeltaDoc> {
    return request(`${this.session()}/edit-field`, {
      method: "POST",
      body: JSON.stringify({ hand, values }),
    });
  }

  save(): Promise<unknown> {
    return request(`${this.session()}/save`, { method: "POST" });
  }

  updates(since: number): Promise<{ events: PushEvent[]; next: number }> {
    return request(`${this.session()}/updates?since=${since}`);
  }
}

export interface Subscription {
  close(): void;
}

export interface SubscribeOptions {
  since?: number;
  pollIntervalMs?: number;
  onStatusChange?: (connected: boolean) => void;
}

/** Subscribe to the push channel; prefers SSE, falls back to polling. */
export function subscribe(
  api: ApiClient,
  onEvent: (event: PushEvent) => void,
  options: SubscribeOptions = {},
): Subscription {
  const hasEventSource = typeof (globalThis as { EventSource?: unknown }).EventSource === "function";
  if (hasEventSource) {
    const url = `${api.baseUrl}/sessions/${api.sessionId}/events-stream?since=${options.since ?? 0}`;
    const source = new EventSource(url);
    const handler = (message: MessageEvent) => onEvent(JSON.parse(message.data) as PushEvent);
    for (const kind of ["event_created", "intervention", "delta", "saved"]) {
      source.addEventListener(kind, handler as EventListener);
    }
    source.onopen = () => options.onStatusChange?.(true);
    source.onerror = () => options.onStatusChange?.(false);
    return { close: () => source.close() };
  }

  let cursor = options.since ?? 0;
  let closed = false;
  const interval = options.pollIntervalMs ?? 50;
  const tick = async () => {
    if (closed) return;
    try {
      const batch = await api.updates(cursor);
      options.onStatusChange?.(true);
      cursor = batch.next;
      for (const event of batch.events) onEvent(event);
    } catch {
      options.onStatusChange?.(false);
    }
    if (!closed) setTimeout(tick, interval);
  };
  void tick();
  return {
    close: () => {
      closed = true;
    },
  };
}
