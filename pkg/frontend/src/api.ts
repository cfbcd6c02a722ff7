/** Thin typed client for the study service HTTP+JSON API.
 *
 * Deliberately has no accessor for the export endpoint: that route carries
 * ground truth and belongs to the operator, never to a participant client.
 */

import type { EnrollReply, ItemsReply, Label, ResponseAck } from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function readError(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { error?: unknown; detail?: unknown };
    if (typeof body.error === "string") return body.error;
    if (body.detail !== undefined) return JSON.stringify(body.detail);
  } catch {
    /* non-JSON body */
  }
  return `request failed with status ${res.status}`;
}

export class StudyApi {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    const impl = fetchImpl ?? globalThis.fetch;
    if (!impl) throw new Error("no fetch implementation available");
    this.fetchImpl = impl.bind(globalThis) as FetchLike;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.base + path, init);
    if (!res.ok) throw new ApiError(res.status, await readError(res));
    return (await res.json()) as T;
  }

  enroll(studyId: string, role: string): Promise<EnrollReply> {
    return this.request<EnrollReply>(
      `/studies/${encodeURIComponent(studyId)}/participants`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ role }),
      },
    );
  }

  items(studyId: string, participantId: string): Promise<ItemsReply> {
    return this.request<ItemsReply>(
      `/studies/${encodeURIComponent(studyId)}/participants/` +
        `${encodeURIComponent(participantId)}/items`,
    );
  }

  respond(
    studyId: string,
    participantId: string,
    itemId: string,
    label: Label,
  ): Promise<ResponseAck> {
    return this.request<ResponseAck>(
      `/studies/${encodeURIComponent(studyId)}/participants/` +
        `${encodeURIComponent(participantId)}/responses/` +
        encodeURIComponent(itemId),
      {
        method: "PUT",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ label }),
      },
    );
  }

  /** Absolute URL for a blinded image, for <img src>. */
  imageUrl(pathOrId: string): string {
    const path = pathOrId.startsWith("/")
      ? pathOrId
      : `/images/${encodeURIComponent(pathOrId)}`;
    return this.base + path;
  }
}
