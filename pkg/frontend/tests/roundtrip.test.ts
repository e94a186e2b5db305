// Scripted browser round trip against the real Python service: create a
// session, receive a confirmation suggestion, press accept, and watch the
// field render as confirmed with a lock icon as soon as the push delta
// lands.  The reject path must immediately request the next intervention,
// and noun choices are always filtered to ontology-valid pairs.

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { startApp, type App } from "../src/app";
import { LOCK_ICON } from "../src/timeline";
import { startServer, waitFor, type RunningServer } from "./server";

let server: RunningServer;
let app: App;
let root: HTMLElement;

function dispatchKey(key: string): void {
  document.dispatchEvent(new KeyboardEvent("keydown", { key, bubbles: true }));
}

beforeAll(async () => {
  server = await startServer();
  root = document.createElement("div");
  document.body.appendChild(root);
  app = await startApp(root, server.baseUrl, "demo", { pollIntervalMs: 25 });
});

afterAll(() => {
  app?.close();
  server?.stop();
});

describe("UI round trip", () => {
  it("renders the created event with its onset band", async () => {
    await app.api.createEvent("Left", 0, 24);
    await waitFor(() => app.vm.events.length === 1);
    await waitFor(() => root.querySelectorAll(".event-span").length === 1);
    expect(root.querySelector(".onset-band")).not.toBeNull();
  });

  it("accept keystroke confirms the field with a lock icon within one push delta", async () => {
    await app.requestNext("Left");
    await waitFor(() => app.vm.current.Left !== undefined);
    const card = root.querySelector<HTMLElement>(".suggestion-card");
    expect(card).not.toBeNull();
    expect(card!.querySelector(".authority-badge")!.textContent).toBe("human_confirm");

    const targets = app.vm.current.Left!.targets!;
    const seqBefore = app.vm.pushSeq;
    dispatchKey("a");

    // the confirmation must arrive through the push channel
    await waitFor(() => app.vm.pushSeq > seqBefore);
    await waitFor(() =>
      targets.every((f) => app.vm.events[0].status[f] === "confirmed"),
    );
    for (const field of targets) {
      expect(app.vm.isLocked(0, field)).toBe(true);
    }
    const lockIcons = Array.from(root.querySelectorAll<HTMLElement>(".lock-icon"));
    const renderedFields = lockIcons.map((icon) => icon.dataset.field);
    for (const field of targets) {
      expect(renderedFields).toContain(field);
      expect(lockIcons.find((i) => i.dataset.field === field)!.textContent).toBe(LOCK_ICON);
    }
  });

  it("reject requests the next intervention", async () => {
    await app.requestNext("Left");
    await waitFor(() => app.vm.current.Left !== undefined);
    const firstId = app.vm.current.Left!.intervention_id;

    dispatchKey("r");
    await waitFor(
      () =>
        app.vm.current.Left !== undefined &&
        app.vm.current.Left.intervention_id !== firstId,
    );
    expect(app.vm.current.Left!.intervention_id).not.toBe(firstId);
  });

  it("noun dropdowns never offer ontology-invalid options", async () => {
    // grasp only pairs with bolt / screw / wrench in the demo ontology
    const offered = app.vm.validNouns("grasp");
    expect(offered.sort()).toEqual(["bolt", "screw", "wrench"]);
    expect(offered).not.toContain("panel");
    expect(offered).not.toContain("block");
    expect(app.vm.allowsNoNoun("grasp")).toBe(false);
    expect(app.vm.allowsNoNoun("hold")).toBe(true);

    // and the rendered edit form honors the same filter
    await waitFor(() => app.vm.current.Left !== undefined);
    const active = app.vm.current.Left!;
    if (active.targets!.includes("n")) {
      dispatchKey("e");
      const select = root.querySelector<HTMLSelectElement>('.edit-form [data-field="n"]');
      expect(select).not.toBeNull();
      const verb =
        (active.payload?.v as string | undefined) ??
        (app.vm.events[0].values.v as string | undefined);
      const allowed = new Set(app.vm.validNouns(verb));
      if (app.vm.allowsNoNoun(verb)) allowed.add("__none__");
      for (const option of Array.from(select!.options)) {
        expect(allowed.has(option.value)).toBe(true);
      }
    }
  });

  it("drives the event to completion and rehydrates identically", async () => {
    for (let i = 0; i < 12; i += 1) {
      const current = app.vm.current.Left;
      if (!current) {
        const next = await app.api.nextIntervention("Left");
        if (next.status === "done") break;
        await waitFor(() => app.vm.current.Left !== undefined);
        continue;
      }
      if (current.payload && Object.keys(current.payload).length > 0) {
        dispatchKey("a");
      } else {
        await app.api.respond({
          intervention_id: current.intervention_id,
          kind: "manual_entry",
          values: Object.fromEntries(
            current.targets!.map((f) => [
              f,
              f === "t_o" ? 12 : f === "v" ? "grasp" : "bolt",
            ]),
          ),
        });
        app.vm.clearIntervention("Left");
      }
      await waitFor(() => app.vm.current.Left?.intervention_id !== current.intervention_id, 5000).catch(() => {});
    }
    await waitFor(() =>
      (["t_o", "v", "n"] as const).every((f) => app.vm.events[0].status[f] === "confirmed"),
    );

    // rehydration from the server reproduces exactly what we rendered
    const mirrored = JSON.parse(JSON.stringify(app.vm.events[0].values));
    await app.rehydrate();
    expect(app.vm.events[0].values).toEqual(mirrored);
  });
});
