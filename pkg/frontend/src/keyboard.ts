// Keyboard-first review: single keys drive accept / reject / edit on the
// visible suggestion card, so confirmation stays cheaper than manual entry.

export interface KeyBindings {
  [key: string]: () => void;
}

export function bindKeys(target: EventTarget, bindings: KeyBindings): () => void {
  const handler = (raw: Event) => {
    const event = raw as KeyboardEvent;
    const element = event.target as HTMLElement | null;
    if (element && (element.tagName === "INPUT" || element.tagName === "SELECT")) {
      return; // typing in a widget must not trigger review shortcuts
    }
    const action = bindings[event.key.toLowerCase()];
    if (action) {
      event.preventDefault();
      action();
    }
  };
  target.addEventListener("keydown", handler);
  return () => target.removeEventListener("keydown", handler);
}

/** Wire the default card shortcuts against the rendered DOM. */
export function bindCardShortcuts(root: HTMLElement, target: EventTarget = root): () => void {
  const click = (selector: string) => () => {
    const button = root.querySelector<HTMLButtonElement>(selector);
    button?.click();
  };
  return bindKeys(target, {
    a: click(".btn-accept"),
    r: click(".btn-reject"),
    e: click(".btn-edit"),
  });
}
