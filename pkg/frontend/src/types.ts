// Wire types for the session service; mirrors the JSON documents exactly.

export type Hand = "Left" | "Right";
export type FieldName = "t_s" | "t_o" | "t_e" | "v" | "n";
export type FieldStatus = "empty" | "suggested" | "confirmed";
export type Authority = "human_only" | "human_confirm" | "safe_local";
export type Surface =
  | "timeline_query"
  | "choice_prompt"
  | "suggestion_card"
  | "silent_apply";

export const NO_NOUN = "__none__";
export const FIELDS: FieldName[] = ["t_s", "t_o", "t_e", "v", "n"];

export interface ProvenanceDoc {
  origin: "human" | "machine" | "oracle";
  step: number;
  intervention_id: string | null;
  locked: boolean;
}

export interface OnsetPriorDoc {
  onset: number;
  band: [number, number];
  reliability: number;
}

export interface EventDoc {
  index: number;
  hand: Hand;
  values: Partial<Record<FieldName, number | string>>;
  status: Record<FieldName, FieldStatus>;
  provenance: Partial<Record<FieldName, ProvenanceDoc>>;
  onset_prior: OnsetPriorDoc | null;
}

export interface InterventionDoc {
  status: "intervention" | "done" | "needs_manual" | "no_active_event";
  intervention_id?: string;
  event_index?: number;
  hand?: Hand;
  targets?: FieldName[];
  surface?: Surface;
  authority?: Authority;
  payload?: Partial<Record<FieldName, number | string>>;
}

export interface FieldDelta {
  value: number | string | null;
  status: FieldStatus;
  locked: boolean;
}

export interface DeltaDoc {
  event_index: number;
  fields: Partial<Record<FieldName, FieldDelta>>;
  rollback: boolean;
}

export interface PushEvent {
  seq: number;
  type: "event_created" | "intervention" | "delta" | "saved";
  payload: Record<string, unknown>;
}

export interface SessionStateDoc {
  session_id: string;
  clip_id: string;
  config_hash: string;
  saved: boolean;
  frame_count: number;
  events: EventDoc[];
  active_interventions: Record<string, InterventionDoc & { intervention_id: string }>;
  push_seq: number;
}

export interface OntologyDoc {
  verbs: { id: string; noun_required: boolean; phase_family: string }[];
  nouns: string[];
  valid_pairs: [string, string][];
}

export type ResponseKind = "accept" | "reject" | "edit" | "manual_entry" | "timeout";

export interface RespondBody {
  intervention_id: string;
  kind: ResponseKind;
  values?: Partial<Record<FieldName, number | string>>;
  latency?: number;
}
