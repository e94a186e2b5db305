// Client-side mirror of the session: a pure projection of server state
// plus push deltas, never the source of truth.  Rehydration replaces the
// mirror wholesale so reconnects cannot leave phantom edits behind.

import type {
  DeltaDoc,
  EventDoc,
  FieldName,
  Hand,
  InterventionDoc,
  OntologyDoc,
  PushEvent,
  SessionStateDoc,
} from "./types.js";

export interface Toast {
  eventIndex: number;
  fields: Partial<Record<FieldName, { value: unknown; previous: unknown }>>;
  at: number;
}

export type Listener = () => void;

export class ViewModel {
  sessionId = "";
  clipId = "";
  frameCount = 1;
  saved = false;
  connected = false;
  events: EventDoc[] = [];
  ontology: OntologyDoc | null = null;
  current: Partial<Record<Hand, InterventionDoc & { intervention_id: string }>> = {};
  toasts: Toast[] = [];
  pushSeq = 0;

  private listeners: Listener[] = [];

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  setConnected(connected: boolean): void {
    if (this.connected !== connected) {
      this.connected = connected;
      this.notify();
    }
  }

  setOntology(doc: OntologyDoc): void {
    this.ontology = doc;
    this.notify();
  }

  /** Full-state rehydration: the server wins, local mirror is replaced. */
  rehydrate(state: SessionStateDoc): void {
    this.sessionId = state.session_id;
    this.clipId = state.clip_id;
    this.frameCount = state.frame_count;
    this.saved = state.saved;
    this.events = state.events.map((e) => ({ ...e, values: { ...e.values }, status: { ...e.status } }));
    this.current = {};
    for (const [hand, doc] of Object.entries(state.active_interventions)) {
      this.current[hand as Hand] = doc;
    }
    this.pushSeq = state.push_seq;
    this.notify();
  }

  applyPush(event: PushEvent): void {
    if (event.seq < this.pushSeq) return; // already seen (rehydrated past it)
    this.pushSeq = event.seq + 1;
    if (event.type === "event_created") {
      const doc = event.payload as unknown as EventDoc;
      this.events[doc.index] = doc;
    } else if (event.type === "delta") {
      this.applyDelta(event.payload as unknown as DeltaDoc);
    } else if (event.type === "intervention") {
      const doc = event.payload as unknown as InterventionDoc & {
        intervention_id: string;
        hand: Hand;
      };
      this.current[doc.hand] = doc;
    } else if (event.type === "saved") {
      this.saved = true;
    }
    this.notify();
  }

  applyDelta(delta: DeltaDoc): void {
    const event = this.events[delta.event_index];
    if (!event) return;
    for (const [field, change] of Object.entries(delta.fields)) {
      const f = field as FieldName;
      if (change.value === null) {
        delete event.values[f];
      } else {
        event.values[f] = change.value;
      }
      event.status[f] = change.status;
      const prov = event.provenance[f];
      event.provenance[f] = {
        origin: prov?.origin ?? "human",
        step: prov?.step ?? 0,
        intervention_id: prov?.intervention_id ?? null,
        locked: change.locked,
      };
    }
    this.notify();
  }

  /** Machine writes that arrived silently become revertable toasts. */
  noteSilentApply(delta: DeltaDoc, previous: EventDoc | undefined): void {
    const fields: Toast["fields"] = {};
    for (const [field, change] of Object.entries(delta.fields)) {
      fields[field as FieldName] = {
        value: change.value,
        previous: previous?.values[field as FieldName],
      };
    }
    this.toasts.push({ eventIndex: delta.event_index, fields, at: Date.now() });
    this.notify();
  }

  dismissToast(toast: Toast): void {
    this.toasts = this.toasts.filter((t) => t !== toast);
    this.notify();
  }

  clearIntervention(hand: Hand): void {
    delete this.current[hand];
    this.notify();
  }

  isLocked(eventIndex: number, field: FieldName): boolean {
    return this.events[eventIndex]?.provenance[field]?.locked ?? false;
  }

  /** Nouns the ontology allows for the given verb; never offers invalid pairs. */
  validNouns(verb: string | undefined): string[] {
    if (!this.ontology) return [];
    if (!verb) return [...this.ontology.nouns];
    return this.ontology.valid_pairs.filter(([v]) => v === verb).map(([, n]) => n);
  }

  allowsNoNoun(verb: string | undefined): boolean {
    if (!this.ontology || !verb) return true;
    const entry = this.ontology.verbs.find((v) => v.id === verb);
    return entry ? !entry.noun_required : true;
  }
}
