// Intervention surfaces: suggestion cards with accept/edit/reject and an
// authority badge, direct-input widgets for human-only queries, and
// non-blocking toasts with a revert affordance for silent applies.
//
// Writes only ever leave through respond/edit-field requests; locked
// fields never get widgets, so the UI cannot produce a locked-field write
// outside the explicit human edit affordances.

import type { ApiClient } from "./api.js";
import type { FieldName, Hand, InterventionDoc } from "./types.js";
import { NO_NOUN } from "./types.js";
import type { Toast, ViewModel } from "./viewmodel.js";

type Active = InterventionDoc & { intervention_id: string; hand: Hand };

function authorityBadge(authority: string): HTMLElement {
  const badge = document.createElement("span");
  badge.className = `authority-badge authority-${authority}`;
  badge.textContent = authority;
  return badge;
}

function nounSelect(vm: ViewModel, verb: string | undefined, current: unknown): HTMLSelectElement {
  const select = document.createElement("select");
  select.dataset.field = "n";
  for (const noun of vm.validNouns(verb)) {
    const option = document.createElement("option");
    option.value = noun;
    option.textContent = noun;
    option.selected = noun === current;
    select.appendChild(option);
  }
  if (vm.allowsNoNoun(verb)) {
    const option = document.createElement("option");
    option.value = NO_NOUN;
    option.textContent = "(no noun)";
    option.selected = current === NO_NOUN;
    select.appendChild(option);
  }
  return select;
}

function verbSelect(vm: ViewModel, current: unknown): HTMLSelectElement {
  const select = document.createElement("select");
  select.dataset.field = "v";
  for (const verb of vm.ontology?.verbs ?? []) {
    const option = document.createElement("option");
    option.value = verb.id;
    option.textContent = verb.id;
    option.selected = verb.id === current;
    select.appendChild(option);
  }
  return select;
}

function fieldInput(
  vm: ViewModel,
  field: FieldName,
  verbContext: string | undefined,
  current: unknown,
): HTMLElement {
  if (field === "v") return verbSelect(vm, current);
  if (field === "n") return nounSelect(vm, verbContext, current);
  const input = document.createElement("input");
  input.type = "number";
  input.dataset.field = field;
  if (current !== undefined && current !== null) input.value = String(current);
  return input;
}

function collectValues(root: HTMLElement, targets: FieldName[]): Record<string, number | string> {
  const values: Record<string, number | string> = {};
  for (const field of targets) {
    const widget = root.querySelector<HTMLInputElement | HTMLSelectElement>(
      `[data-field="${field}"]`,
    );
    if (!widget) continue;
    values[field] = widget instanceof HTMLInputElement ? Number(widget.value) : widget.value;
  }
  return values;
}

export interface CardCallbacks {
  onResolved: (hand: Hand) => void;
}

export function renderIntervention(
  container: HTMLElement,
  vm: ViewModel,
  api: ApiClient,
  callbacks: CardCallbacks,
): void {
  container.textContent = "";
  for (const active of Object.values(vm.current) as Active[]) {
    container.appendChild(
      active.authority === "human_only"
        ? queryWidget(active, vm, api, callbacks)
        : suggestionCard(active, vm, api, callbacks),
    );
  }
  for (const toast of vm.toasts) {
    container.appendChild(renderToast(toast, vm, api));
  }
}

function suggestionCard(
  active: Active,
  vm: ViewModel,
  api: ApiClient,
  callbacks: CardCallbacks,
): HTMLElement {
  const card = document.createElement("div");
  card.className = "suggestion-card";
  card.dataset.interventionId = active.intervention_id;
  card.appendChild(authorityBadge(active.authority ?? "human_confirm"));

  const body = document.createElement("div");
  body.className = "card-body";
  const payload = active.payload ?? {};
  body.textContent = (active.targets ?? [])
    .map((f) => `${f} → ${payload[f] === NO_NOUN ? "(no noun)" : payload[f]}`)
    .join(", ");
  card.appendChild(body);

  const issuedAt = Date.now();
  const sendThen = (promise: Promise<unknown>) =>
    promise
      .then(() => {
        vm.clearIntervention(active.hand);
        callbacks.onResolved(active.hand);
      })
      .catch(() => {
        // stale or rejected request: rehydration reconciles the view
        vm.clearIntervention(active.hand);
        callbacks.onResolved(active.hand);
      });

  const accept = document.createElement("button");
  accept.className = "btn-accept";
  accept.textContent = "Accept (a)";
  accept.onclick = () =>
    sendThen(
      api.respond({
        intervention_id: active.intervention_id,
        kind: "accept",
        latency: (Date.now() - issuedAt) / 1000,
      }),
    );

  const reject = document.createElement("button");
  reject.className = "btn-reject";
  reject.textContent = "Reject (r)";
  reject.onclick = () =>
    sendThen(
      api.respond({
        intervention_id: active.intervention_id,
        kind: "reject",
        latency: (Date.now() - issuedAt) / 1000,
      }),
    );

  const edit = document.createElement("button");
  edit.className = "btn-edit";
  edit.textContent = "Edit (e)";
  const editForm = document.createElement("div");
  editForm.className = "edit-form hidden";
  const verbContext = (payload.v as string | undefined) ?? (vm.events[active.event_index ?? 0]?.values.v as string | undefined);
  for (const field of active.targets ?? []) {
    editForm.appendChild(fieldInput(vm, field, verbContext, payload[field]));
  }
  const submit = document.createElement("button");
  submit.className = "btn-submit-edit";
  submit.textContent = "Apply edit";
  submit.onclick = () =>
    sendThen(
      api.respond({
        intervention_id: active.intervention_id,
        kind: "edit",
        values: collectValues(editForm, active.targets ?? []),
        latency: (Date.now() - issuedAt) / 1000,
      }),
    );
  editForm.appendChild(submit);
  edit.onclick = () => editForm.classList.toggle("hidden");

  card.appendChild(accept);
  card.appendChild(edit);
  card.appendChild(reject);
  card.appendChild(editForm);
  return card;
}

function queryWidget(
  active: Active,
  vm: ViewModel,
  api: ApiClient,
  callbacks: CardCallbacks,
): HTMLElement {
  const widget = document.createElement("div");
  widget.className = "query-widget";
  widget.dataset.interventionId = active.intervention_id;
  widget.appendChild(authorityBadge("human_only"));

  const label = document.createElement("div");
  label.textContent = `Please provide: ${(active.targets ?? []).join(", ")}`;
  widget.appendChild(label);

  const event = vm.events[active.event_index ?? 0];
  const verbContext = event?.values.v as string | undefined;
  for (const field of active.targets ?? []) {
    widget.appendChild(fieldInput(vm, field, verbContext, event?.values[field]));
  }
  const issuedAt = Date.now();
  const submit = document.createElement("button");
  submit.className = "btn-submit-query";
  submit.textContent = "Enter";
  submit.onclick = () =>
    api
      .respond({
        intervention_id: active.intervention_id,
        kind: "manual_entry",
        values: collectValues(widget, active.targets ?? []),
        latency: (Date.now() - issuedAt) / 1000,
      })
      .then(() => {
        vm.clearIntervention(active.hand);
        callbacks.onResolved(active.hand);
      });
  widget.appendChild(submit);
  return widget;
}

function renderToast(toast: Toast, vm: ViewModel, api: ApiClient): HTMLElement {
  const el = document.createElement("div");
  el.className = "toast";
  const event = vm.events[toast.eventIndex];
  const parts = Object.entries(toast.fields).map(([f, change]) => `${f} → ${change.value}`);
  el.textContent = `applied: ${parts.join(", ")} `;

  const revert = document.createElement("button");
  revert.className = "btn-revert";
  revert.textContent = "Revert";
  revert.onclick = () => {
    // the revert is an explicit human edit back to the previous values
    const values: Record<string, number | string> = {};
    for (const [field, change] of Object.entries(toast.fields)) {
      if (change.previous !== undefined) values[field] = change.previous as number | string;
    }
    if (event && Object.keys(values).length) {
      void api.editField(event.hand, values);
    }
    vm.dismissToast(toast);
  };
  const dismiss = document.createElement("button");
  dismiss.className = "btn-dismiss";
  dismiss.textContent = "OK";
  dismiss.onclick = () => vm.dismissToast(toast);

  el.appendChild(revert);
  el.appendChild(dismiss);
  return el;
}
