// Timeline rendering: one lane per hand, spans with draggable edges, the
// onset marker, onset-band shading, and lock icons on confirmed fields.

import type { ApiClient } from "./api.js";
import type { EventDoc, FieldName, Hand } from "./types.js";
import type { ViewModel } from "./viewmodel.js";

const HANDS: Hand[] = ["Left", "Right"];
export const LOCK_ICON = "\u{1F512}";

function pct(frame: number, frameCount: number): string {
  return `${(100 * frame) / Math.max(frameCount, 1)}%`;
}

function lockBadge(event: EventDoc, field: FieldName): HTMLElement | null {
  if (!event.provenance[field]?.locked) return null;
  const icon = document.createElement("span");
  icon.className = "lock-icon";
  icon.dataset.field = field;
  icon.textContent = LOCK_ICON;
  icon.title = `${field} confirmed and locked`;
  return icon;
}

function renderSpan(
  event: EventDoc,
  vm: ViewModel,
  api: ApiClient,
): HTMLElement {
  const span = document.createElement("div");
  span.className = "event-span";
  span.dataset.eventIndex = String(event.index);
  const t_s = Number(event.values.t_s ?? 0);
  const t_e = Number(event.values.t_e ?? t_s);
  span.style.left = pct(t_s, vm.frameCount);
  span.style.width = pct(Math.max(t_e - t_s, 1), vm.frameCount);

  if (event.onset_prior) {
    const band = document.createElement("div");
    band.className = "onset-band";
    const [lo, hi] = event.onset_prior.band;
    const width = Math.max(t_e - t_s, 1);
    band.style.left = `${(100 * (lo - t_s)) / width}%`;
    band.style.width = `${(100 * (hi - lo + 1)) / width}%`;
    band.title = `onset band [${lo}, ${hi}] reliability ${event.onset_prior.reliability.toFixed(2)}`;
    span.appendChild(band);
  }

  if (event.values.t_o !== undefined) {
    const marker = document.createElement("div");
    marker.className = "onset-marker";
    const width = Math.max(t_e - t_s, 1);
    marker.style.left = `${(100 * (Number(event.values.t_o) - t_s)) / width}%`;
    marker.title = `onset ${event.values.t_o} (${event.status.t_o})`;
    const markerLock = lockBadge(event, "t_o");
    if (markerLock) marker.appendChild(markerLock);
    span.appendChild(marker);
  }

  const label = document.createElement("div");
  label.className = "span-label";
  for (const field of ["v", "n"] as FieldName[]) {
    const chip = document.createElement("span");
    chip.className = `field-chip field-${field} status-${event.status[field]}`;
    chip.dataset.field = field;
    chip.textContent = `${field}=${event.values[field] ?? "?"}`;
    const icon = lockBadge(event, field);
    if (icon) chip.appendChild(icon);
    label.appendChild(chip);
  }
  span.appendChild(label);

  for (const edge of ["t_s", "t_e"] as FieldName[]) {
    const handle = document.createElement("div");
    handle.className = `drag-handle handle-${edge}`;
    handle.dataset.field = edge;
    const icon = lockBadge(event, edge);
    if (icon) handle.appendChild(icon);
    attachDrag(handle, edge, event, vm, api);
    span.appendChild(handle);
  }
  return span;
}

function attachDrag(
  handle: HTMLElement,
  edge: FieldName,
  event: EventDoc,
  vm: ViewModel,
  api: ApiClient,
): void {
  // every drag ends in an explicit human edit request; there is no local
  // mutation path around the server
  handle.addEventListener("pointerdown", (down: PointerEvent) => {
    const lane = handle.closest(".timeline") as HTMLElement | null;
    const laneWidth = lane?.clientWidth || 1;
    const startFrame = Number(event.values[edge] ?? 0);
    const move = (moveEvent: PointerEvent) => {
      handle.dataset.pendingFrame = String(
        Math.max(0, Math.round(startFrame + ((moveEvent.clientX - down.clientX) / laneWidth) * vm.frameCount)),
      );
    };
    const up = () => {
      window.removeEventListener("pointermove", move);
      window.removeEventListener("pointerup", up);
      const pending = handle.dataset.pendingFrame;
      if (pending !== undefined && Number(pending) !== startFrame) {
        void api.editField(event.hand, { [edge]: Number(pending) });
      }
    };
    window.addEventListener("pointermove", move);
    window.addEventListener("pointerup", up);
  });
}

export function renderTimeline(container: HTMLElement, vm: ViewModel, api: ApiClient): void {
  container.textContent = "";
  const status = document.createElement("div");
  status.className = `connection ${vm.connected ? "online" : "offline"}`;
  status.textContent = vm.connected ? "connected" : "reconnecting";
  container.appendChild(status);

  for (const hand of HANDS) {
    const lane = document.createElement("div");
    lane.className = "timeline";
    lane.dataset.hand = hand;
    const title = document.createElement("div");
    title.className = "lane-title";
    title.textContent = hand;
    lane.appendChild(title);
    for (const event of vm.events) {
      if (event && event.hand === hand) {
        lane.appendChild(renderSpan(event, vm, api));
      }
    }
    container.appendChild(lane);
  }
}
