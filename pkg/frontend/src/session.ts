/** Participant session state: optimistic answers over the service API.
 *
 * Answers are recorded locally the moment a button is pressed, then written
 * through; a rejected write rolls the item back to its last acknowledged
 * value and raises a banner. Writes to the same item queue behind each
 * other, so the server always sees clicks in order. A hard refresh loses
 * nothing acknowledged: load() rebuilds the session from the server.
 */

import { ApiError, StudyApi } from "./api";
import type {
  Label,
  ResponseAck,
  SessionSnapshot,
  Stage,
} from "./types";

export class SessionError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "SessionError";
  }
}

export class Session {
  readonly studyId: string;
  readonly participant: string;
  readonly role: string;
  readonly order: string[];
  readonly imageUrls: ReadonlyMap<string, string>;

  private readonly api: StudyApi;
  private readonly answers = new Map<string, Label>();
  private readonly acked = new Map<string, Label>();
  private readonly clickSeq = new Map<string, number>();
  private readonly tail = new Map<string, Promise<void>>();
  private readonly listeners = new Set<() => void>();
  private index: number;
  private stage: Stage;
  private banner: string | null = null;

  private constructor(
    api: StudyApi,
    studyId: string,
    participant: string,
    role: string,
    order: string[],
    imageUrls: Map<string, string>,
    prior: Map<string, Label>,
  ) {
    this.api = api;
    this.studyId = studyId;
    this.participant = participant;
    this.role = role;
    this.order = order;
    this.imageUrls = imageUrls;
    for (const [item, label] of prior) {
      this.answers.set(item, label);
      this.acked.set(item, label);
    }
    const gap = order.findIndex((item) => !prior.has(item));
    this.index = gap >= 0 ? gap : 0;
    this.stage = gap >= 0 ? "classify" : "review";
  }

  /** Fetch the served order and prior answers; resume at the first gap. */
  static async load(
    api: StudyApi,
    studyId: string,
    participantId: string,
  ): Promise<Session> {
    const reply = await api.items(studyId, participantId);
    const order = reply.items.map((it) => it.item_id);
    const urls = new Map(
      reply.items.map((it) => [it.item_id, api.imageUrl(it.image_url)]),
    );
    const prior = new Map<string, Label>();
    for (const [item, cur] of Object.entries(reply.current)) {
      prior.set(item, cur.label);
    }
    return new Session(api, studyId, reply.participant, reply.role, order,
      urls, prior);
  }

  subscribe(fn: () => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  snapshot(): SessionSnapshot {
    return {
      participant: this.participant,
      order: [...this.order],
      index: this.index,
      answers: new Map(this.answers),
      stage: this.stage,
      banner: this.banner,
    };
  }

  currentItem(): string {
    const item = this.order[this.index];
    if (item === undefined) throw new SessionError("empty session");
    return item;
  }

  answerFor(itemId: string): Label | undefined {
    return this.answers.get(itemId);
  }

  progress(): { answered: number; total: number } {
    return { answered: this.answers.size, total: this.order.length };
  }

  unanswered(): string[] {
    return this.order.filter((item) => !this.answers.has(item));
  }

  canSubmit(): boolean {
    return this.answers.size === this.order.length;
  }

  clearBanner(): void {
    if (this.banner !== null) {
      this.banner = null;
      this.emit();
    }
  }

  /** Record a label optimistically and write it through, queued per item. */
  classify(itemId: string, label: Label): Promise<ResponseAck> {
    if (this.stage === "complete") {
      throw new SessionError("session is complete and read-only");
    }
    if (!this.imageUrls.has(itemId)) {
      throw new SessionError(`item ${itemId} is not part of this session`);
    }
    const seq = (this.clickSeq.get(itemId) ?? 0) + 1;
    this.clickSeq.set(itemId, seq);
    this.answers.set(itemId, label);
    this.banner = null;
    this.emit();

    const run = async (): Promise<ResponseAck> => {
      try {
        const ack = await this.api.respond(
          this.studyId, this.participant, itemId, label);
        this.acked.set(itemId, ack.label);
        this.emit();
        return ack;
      } catch (err) {
        if (this.clickSeq.get(itemId) === seq) {
          const last = this.acked.get(itemId);
          if (last === undefined) this.answers.delete(itemId);
          else this.answers.set(itemId, last);
          const why = err instanceof ApiError ? err.message : "network error";
          this.banner = `answer not saved (${why}); showing the last saved state`;
        }
        this.emit();
        throw err instanceof Error ? err : new Error(String(err));
      }
    };
    const prevTail = this.tail.get(itemId) ?? Promise.resolve();
    const write = prevTail.then(run, run);
    this.tail.set(itemId, write.then(() => undefined, () => undefined));
    return write;
  }

  goTo(index: number): void {
    if (this.stage === "complete") return;
    this.index = Math.min(Math.max(index, 0), this.order.length - 1);
    this.stage = "classify";
    this.emit();
  }

  next(): void {
    this.goTo(this.index + 1);
  }

  prev(): void {
    this.goTo(this.index - 1);
  }

  enterReview(): void {
    if (this.stage === "complete") return;
    this.stage = "review";
    this.emit();
  }

  inReview(): boolean {
    return this.stage === "review";
  }

  isComplete(): boolean {
    return this.stage === "complete";
  }

  /** Wait for queued writes, then mark the session complete (read-only). */
  async submit(): Promise<void> {
    if (this.stage === "complete") return;
    await Promise.all(this.tail.values());
    if (this.acked.size !== this.order.length) {
      const gaps = this.order.filter((item) => !this.acked.has(item));
      throw new SessionError(
        `cannot submit: ${gaps.length} unanswered (${gaps.slice(0, 3).join(", ")}${gaps.length > 3 ? ", ..." : ""})`);
    }
    this.stage = "complete";
    this.emit();
  }
}
