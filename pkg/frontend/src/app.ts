// Application wiring: one render loop over the view model, all server
// mutations funneled through the api client, push events folded in as
// they arrive, full-state rehydration on reconnect.

import { ApiClient, subscribe, type Subscription } from "./api.js";
import { renderIntervention } from "./cards.js";
import { bindCardShortcuts } from "./keyboard.js";
import { renderTimeline } from "./timeline.js";
import type { DeltaDoc, Hand, PushEvent } from "./types.js";
import { ViewModel } from "./viewmodel.js";

export interface App {
  vm: ViewModel;
  api: ApiClient;
  requestNext(hand: Hand): Promise<void>;
  rehydrate(): Promise<void>;
  close(): void;
}

export async function startApp(
  root: HTMLElement,
  baseUrl: string,
  clipId: string,
  options: { sessionId?: string; pollIntervalMs?: number } = {},
): Promise<App> {
  const api = new ApiClient(baseUrl, options.sessionId ?? null);
  if (!api.sessionId) {
    await api.createSession(clipId);
  }
  const vm = new ViewModel();
  vm.setOntology(await api.ontology());

  const timeline = document.createElement("div");
  timeline.id = "timeline-root";
  const cards = document.createElement("div");
  cards.id = "cards-root";
  root.appendChild(timeline);
  root.appendChild(cards);

  const requestNext = async (hand: Hand) => {
    const next = await api.nextIntervention(hand);
    if (next.status !== "intervention") {
      vm.clearIntervention(hand);
    }
    // interventions arrive through the push channel as well; rendering is
    // driven by the view model either way
  };

  vm.subscribe(() => {
    renderTimeline(timeline, vm, api);
    renderIntervention(cards, vm, api, {
      onResolved: (hand) => void requestNext(hand),
    });
  });

  let wasConnected = true;
  const onPush = (event: PushEvent) => {
    if (event.type === "delta") {
      const delta = event.payload as unknown as DeltaDoc;
      const machineWrite = Object.values(delta.fields).some((f) => f.status === "suggested");
      if (machineWrite && !delta.rollback) {
        vm.noteSilentApply(delta, vm.events[delta.event_index]);
      }
    }
    vm.applyPush(event);
  };

  const subscription: Subscription = subscribe(api, onPush, {
    pollIntervalMs: options.pollIntervalMs,
    onStatusChange: (connected) => {
      vm.setConnected(connected);
      if (connected && !wasConnected) {
        // reconnect: replace the mirror wholesale, no phantom edits survive
        void rehydrate();
      }
      wasConnected = connected;
    },
  });

  const rehydrate = async () => {
    vm.rehydrate(await api.fullState());
  };
  await rehydrate();

  const unbind = bindCardShortcuts(cards, root.ownerDocument);

  return {
    vm,
    api,
    requestNext,
    rehydrate,
    close: () => {
      subscription.close();
      unbind();
    },
  };
}
