/** Payload types for the annotation service API (api_version 1). */

export interface SkillView {
  skill_id: string;
  name: string;
  level: string;
  labels: string[];
  rules: string[];
  examples: { text: string; label: string }[];
  applicability: string | null;
  not_assessable_allowed: boolean;
}

export interface Position {
  instance_id: string;
  skill_id: string;
}

export interface InstanceView {
  instance_id: string;
  text: string;
  span: [number, number] | null;
  marked_text: string;
}

export interface Progress {
  api_version: string;
  session_id: string;
  round: string;
  answered: number;
  total: number;
  fraction: number;
  complete: boolean;
  per_skill: Record<string, { answered: number; total: number }>;
}

export interface NextCell {
  api_version: string;
  done: false;
  position: Position;
  index: number;
  total: number;
  instance: InstanceView;
  skill: SkillView;
  round: string;
  progress: Progress;
}

export interface SessionDone {
  api_version: string;
  done: true;
  progress: Progress;
}

export type NextResponse = NextCell | SessionDone;

export interface SubmitAck {
  api_version: string;
  accepted: boolean;
  progress: Progress;
}

/** A label pick from the skill's inventory, or the explicit not-assessable sentinel. */
export type Choice = { label: string } | { notAssessable: true };
