/** Shared wire and session types. Field names mirror the service JSON. */

export type Label = 0 | 1;

export const LABEL_REAL: Label = 1;
export const LABEL_FAKE: Label = 0;

export interface EnrollReply {
  participant_id: string;
  role: string;
  n_items: number;
}

export interface ItemRef {
  item_id: string;
  image_url: string;
}

export interface CurrentAnswer {
  label: Label;
  revisions: number;
}

export interface ItemsReply {
  participant: string;
  role: string;
  items: ItemRef[];
  current: Record<string, CurrentAnswer>;
}

export interface ResponseAck {
  item_id: string;
  label: Label;
  revisions: number;
}

export type Stage = "classify" | "review" | "complete";

export interface SessionSnapshot {
  participant: string;
  order: string[];
  index: number;
  answers: ReadonlyMap<string, Label>;
  stage: Stage;
  banner: string | null;
}
