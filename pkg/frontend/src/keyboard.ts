/** Keyboard shortcuts mirroring the button actions: 1=real, 0=fake,
 * arrows=navigate, Enter=submit from the review grid. */

import { LABEL_FAKE, LABEL_REAL } from "./types";
import type { Label, Stage } from "./types";

export type KeyAction =
  | { kind: "classify"; label: Label }
  | { kind: "prev" }
  | { kind: "next" }
  | { kind: "submit" };

export function mapKey(key: string, stage: Stage): KeyAction | null {
  if (stage === "complete") return null;
  switch (key) {
    case "1":
      return { kind: "classify", label: LABEL_REAL };
    case "0":
      return { kind: "classify", label: LABEL_FAKE };
    case "ArrowLeft":
      return { kind: "prev" };
    case "ArrowRight":
      return { kind: "next" };
    case "Enter":
      return stage === "review" ? { kind: "submit" } : null;
    default:
      return null;
  }
}
