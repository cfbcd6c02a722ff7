/** Entry point: wire URL parameters, the session store, keyboard
 * shortcuts, and the renderer together.
 *
 * URL parameters: ?base=<service url>&study=<id> plus either
 * participant=<id> (resume) or role=<DLE|ED|other> (enroll first).
 */

import { StudyApi } from "./api";
import { mapKey } from "./keyboard";
import { Session } from "./session";
import { render } from "./ui";

async function boot(root: HTMLElement): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("base") ?? window.location.origin;
  const studyId = params.get("study");
  if (!studyId) {
    root.textContent = "missing ?study= parameter";
    return;
  }
  const api = new StudyApi(base);

  let participant = params.get("participant");
  if (!participant) {
    const role = params.get("role");
    if (!role) {
      root.textContent = "missing ?participant= or ?role= parameter";
      return;
    }
    const enrolled = await api.enroll(studyId, role);
    participant = enrolled.participant_id;
    params.set("participant", participant);
    params.delete("role");
    window.history.replaceState(null, "", `?${params.toString()}`);
  }

  const session = await Session.load(api, studyId, participant);
  session.subscribe(() => render(root, session));
  render(root, session);

  window.addEventListener("keydown", (event) => {
    const action = mapKey(event.key, session.snapshot().stage);
    if (!action) return;
    event.preventDefault();
    if (action.kind === "classify") {
      void session.classify(session.currentItem(), action.label)
        .catch(() => undefined);
      session.next();
    } else if (action.kind === "prev") session.prev();
    else if (action.kind === "next") session.next();
    else void session.submit().catch(() => undefined);
  });
}

const mount = document.getElementById("app");
if (mount) {
  boot(mount).catch((err) => {
    mount.replaceChildren();
    const p = document.createElement("p");
    p.className = "error";
    p.textContent = `could not load the study session: ${String(err)}. ` +
      "Check the service URL and try again.";
    const retry = document.createElement("button");
    retry.textContent = "retry";
    retry.addEventListener("click", () => window.location.reload());
    mount.append(p, retry);
  });
}
