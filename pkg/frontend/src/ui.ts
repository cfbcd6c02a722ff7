/** Plain-DOM rendering: one image per screen on a neutral background, a
 * progress counter, a review grid with final revisions, and a banner for
 * rejected writes. No framework; render() rebuilds the root on each state
 * change (the trees involved are tiny). */

import type { Session } from "./session";
import { LABEL_FAKE, LABEL_REAL } from "./types";
import type { Label } from "./types";

const DISPLAY_SIZE = 512; // px; display size is a config choice

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

function labelName(label: Label | undefined): string {
  if (label === undefined) return "unanswered";
  return label === LABEL_REAL ? "real" : "fake";
}

function banner(session: Session): HTMLElement | null {
  const snap = session.snapshot();
  if (!snap.banner) return null;
  const box = el("div", { class: "banner", role: "alert" }, snap.banner);
  const dismiss = el("button", {}, "dismiss");
  dismiss.addEventListener("click", () => session.clearBanner());
  box.appendChild(dismiss);
  return box;
}

function classifyScreen(root: HTMLElement, session: Session): void {
  const snap = session.snapshot();
  const item = session.currentItem();
  const { answered, total } = session.progress();

  const note = banner(session);
  if (note) root.appendChild(note);
  root.appendChild(
    el("div", { class: "progress" },
      `image ${snap.index + 1} of ${total} | answered ${answered}/${total}`));

  const frame = el("div", {
    class: "frame",
    style: `background:#808080;width:${DISPLAY_SIZE}px;height:${DISPLAY_SIZE}px;` +
      "display:flex;align-items:center;justify-content:center;",
  });
  const img = el("img", {
    src: session.imageUrls.get(item) ?? "",
    alt: "study image",
    style: `width:${DISPLAY_SIZE}px;height:${DISPLAY_SIZE}px;` +
      "image-rendering:pixelated;",
  });
  frame.appendChild(img);
  root.appendChild(frame);

  const picked = session.answerFor(item);
  const buttons = el("div", { class: "choices" });
  for (const [label, name] of [[LABEL_REAL, "real (1)"],
                               [LABEL_FAKE, "fake (0)"]] as const) {
    const b = el("button", {}, name);
    if (picked === label) b.setAttribute("aria-pressed", "true");
    b.addEventListener("click", () => {
      void session.classify(item, label).catch(() => undefined);
      session.next();
    });
    buttons.appendChild(b);
  }
  root.appendChild(buttons);
  root.appendChild(
    el("div", { class: "picked" }, `current answer: ${labelName(picked)}`));

  const nav = el("div", { class: "nav" });
  const back = el("button", {}, "back");
  back.addEventListener("click", () => session.prev());
  const fwd = el("button", {}, "next");
  fwd.addEventListener("click", () => session.next());
  const review = el("button", {}, "review all");
  review.addEventListener("click", () => session.enterReview());
  nav.append(back, fwd, review);
  root.appendChild(nav);
}

function reviewScreen(root: HTMLElement, session: Session): void {
  const note = banner(session);
  if (note) root.appendChild(note);
  root.appendChild(el("h2", {}, "review your answers"));

  const grid = el("div", {
    class: "grid",
    style: "display:grid;grid-template-columns:repeat(8,1fr);gap:8px;",
  });
  session.order.forEach((item, i) => {
    const cell = el("figure", { class: "cell" });
    const img = el("img", {
      src: session.imageUrls.get(item) ?? "",
      alt: `image ${i + 1}`,
      style: "width:96px;height:96px;",
    });
    img.addEventListener("click", () => session.goTo(i));
    cell.appendChild(img);
    cell.appendChild(
      el("figcaption", {}, labelName(session.answerFor(item))));
    grid.appendChild(cell);
  });
  root.appendChild(grid);

  const gaps = session.unanswered();
  const submit = el("button", {}, "submit");
  if (gaps.length > 0) {
    submit.setAttribute("disabled", "true");
    root.appendChild(
      el("div", { class: "gaps" },
        `${gaps.length} image(s) still unanswered`));
  }
  submit.addEventListener("click", () => {
    void session.submit().catch(() => undefined);
  });
  root.appendChild(submit);
}

function completeScreen(root: HTMLElement, session: Session): void {
  const { total } = session.progress();
  root.appendChild(el("h2", {}, "session complete"));
  root.appendChild(
    el("p", {}, `all ${total} answers are recorded; this session is now ` +
      "read-only. Thank you for taking part."));
}

export function render(root: HTMLElement, session: Session): void {
  root.replaceChildren();
  const snap = session.snapshot();
  if (snap.stage === "classify") classifyScreen(root, session);
  else if (snap.stage === "review") reviewScreen(root, session);
  else completeScreen(root, session);
}
