/** Scripted participant flow against a real service instance:
 * enroll, classify all 80 items, revise 3, submit. The export (fetched
 * with the operator token, never by the client) must show 80 final labels
 * with exactly 3 revision counters of 1, and the client's request log must
 * never touch the export endpoint.
 */

import { spawn } from "node:child_process";
import type { ChildProcessWithoutNullStreams } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { StudyApi } from "../src/api";
import { Session } from "../src/session";
import type { FetchLike } from "../src/api";
import type { Label } from "../src/types";

const FIXTURE = new URL("./serve_fixture.py", import.meta.url).pathname;
const TOKEN = "test-token";

let child: ChildProcessWithoutNullStreams;
let base = "";
let studyId = "";

interface ExportRow {
  participant: string;
  role: string;
  item: string;
  truth: string;
  label: string;
  revisions: number;
}

interface ExportDoc {
  rows: ExportRow[];
  participants: { id: string; role: string; answered: number; complete: boolean }[];
}

function startService(): Promise<{ port: number; study: string }> {
  return new Promise((resolve, reject) => {
    child = spawn("python3", [FIXTURE], { stdio: "pipe" });
    let buf = "";
    let errbuf = "";
    const timer = setTimeout(
      () => reject(new Error(`service did not start:\n${errbuf}`)), 60_000);
    child.stdout.on("data", (chunk: Buffer) => {
      buf += chunk.toString();
      const line = buf.split("\n")[0];
      if (line && buf.includes("\n")) {
        clearTimeout(timer);
        resolve(JSON.parse(line) as { port: number; study: string });
      }
    });
    child.stderr.on("data", (chunk: Buffer) => {
      errbuf += chunk.toString();
    });
    child.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`service exited early (${code}):\n${errbuf}`));
    });
  });
}

async function waitReachable(url: string): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      await fetch(url);
      return;
    } catch {
      await new Promise((r) => setTimeout(r, 100));
    }
  }
  throw new Error(`service never became reachable at ${url}`);
}

beforeAll(async () => {
  const info = await startService();
  base = `http://127.0.0.1:${info.port}`;
  studyId = info.study;
  await waitReachable(`${base}/images/nonexistent`);
});

afterAll(() => {
  child?.kill();
});

describe("scripted participant flow", () => {
  it("enrolls, classifies 80, revises 3, submits; export agrees", async () => {
    const clientLog: string[] = [];
    const recordingFetch: FetchLike = (url, init) => {
      clientLog.push(url);
      return fetch(url, init);
    };
    const api = new StudyApi(base, recordingFetch);

    const enrolled = await api.enroll(studyId, "DLE");
    expect(enrolled.n_items).toBe(80);
    expect(enrolled.participant_id).toMatch(/^[0-9a-f]{16}$/);

    const session = await Session.load(api, studyId, enrolled.participant_id);
    expect(session.order).toHaveLength(80);
    expect(session.snapshot().index).toBe(0);
    expect(session.snapshot().answers.size).toBe(0);

    // the client sees only blinded image bytes, never truth
    const img = await recordingFetch(session.imageUrls.get(session.order[0]!)!);
    expect(img.headers.get("content-type")).toBe("image/png");
    const magic = new Uint8Array((await img.arrayBuffer()).slice(0, 4));
    expect([...magic]).toEqual([0x89, 0x50, 0x4e, 0x47]);

    const finalLabels = new Map<string, Label>();
    for (let i = 0; i < session.order.length; i++) {
      const item = session.order[i]!;
      const label = (i % 2) as Label;
      await session.classify(item, label);
      finalLabels.set(item, label);
    }
    expect(session.progress()).toEqual({ answered: 80, total: 80 });

    // final revisions from the review grid on the first three items
    session.enterReview();
    const revised = session.order.slice(0, 3);
    for (const [i, item] of revised.entries()) {
      const flipped = ((i % 2) ^ 1) as Label;
      const ack = await session.classify(item, flipped);
      expect(ack.revisions).toBe(1);
      finalLabels.set(item, flipped);
    }

    await session.submit();
    expect(session.isComplete()).toBe(true);

    // a hard refresh rebuilds everything acknowledged
    const resumed = await Session.load(api, studyId, enrolled.participant_id);
    expect(resumed.snapshot().answers.size).toBe(80);
    expect(resumed.snapshot().stage).toBe("review");
    for (const [item, label] of finalLabels) {
      expect(resumed.answerFor(item)).toBe(label);
    }

    // operator-side check, deliberately not through the client API
    const res = await fetch(
      `${base}/studies/${studyId}/export?token=${TOKEN}`);
    expect(res.status).toBe(200);
    const doc = (await res.json()) as ExportDoc;
    const mine = doc.rows.filter(
      (r) => r.participant === enrolled.participant_id);
    expect(mine).toHaveLength(80);
    const onceRevised = mine.filter((r) => r.revisions === 1);
    expect(onceRevised).toHaveLength(3);
    expect(new Set(onceRevised.map((r) => r.item)))
      .toEqual(new Set(revised));
    expect(mine.every((r) => r.revisions <= 1)).toBe(true);
    for (const row of mine) {
      const want = finalLabels.get(row.item) === 1 ? "real" : "fake";
      expect(row.label).toBe(want);
    }
    const me = doc.participants.find((p) => p.id === enrolled.participant_id);
    expect(me).toMatchObject({ role: "DLE", answered: 80, complete: true });

    // the client never requested the truth-bearing endpoint
    expect(clientLog.length).toBeGreaterThan(80);
    expect(clientLog.some((u) => u.includes("/export"))).toBe(false);
  });
});
