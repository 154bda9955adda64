// Typed client for the audit service. Payloads are re-built field by field
// into frozen view objects, so nothing beyond the declared shape can reach
// application state — that is the client half of the blinding contract.

export const LABELS = [
  "same_speaker",
  "different_speaker",
  "audio_quality_issue",
  "missing_speech",
  "not_sure",
] as const;

export type Label = (typeof LABELS)[number];

export interface Progress {
  readonly done: number;
  readonly total: number;
}

export interface TrialView {
  readonly trialId: string;
  readonly enrollmentAudioUrl: string;
  readonly testAudioUrl: string;
  readonly round: number;
  readonly progress: Progress;
}

export interface Completion {
  readonly done: true;
  readonly completed: number;
  readonly total: number;
}

export type NextResponse = TrialView | Completion;

export function isCompletion(r: NextResponse): r is Completion {
  return (r as Completion).done === true;
}

export class SchemaError extends Error {}

const TRIAL_KEYS = new Set([
  "trial_id",
  "enrollment_audio_url",
  "test_audio_url",
  "round",
  "progress",
]);
const COMPLETION_KEYS = new Set(["done", "completed", "total"]);
const PROGRESS_KEYS = new Set(["done", "total"]);

function requireString(obj: Record<string, unknown>, key: string): string {
  const value = obj[key];
  if (typeof value !== "string" || value.length === 0) {
    throw new SchemaError(`expected non-empty string at ${key}`);
  }
  return value;
}

function requireInt(obj: Record<string, unknown>, key: string): number {
  const value = obj[key];
  if (typeof value !== "number" || !Number.isInteger(value)) {
    throw new SchemaError(`expected integer at ${key}`);
  }
  return value;
}

/** Defense-in-depth for blinding: an unexpected numeric field in a trial
 * payload is exactly what a score leak would look like. We log it and drop
 * the field rather than letting it into client state. */
function warnUnexpected(
  obj: Record<string, unknown>,
  allowed: Set<string>,
  context: string,
  warn: (message: string) => void,
): void {
  for (const [key, value] of Object.entries(obj)) {
    if (!allowed.has(key)) {
      const kind = typeof value === "number" ? "numeric " : "";
      warn(`schema warning: unexpected ${kind}field "${key}" in ${context}`);
    }
  }
}

export function parseNextResponse(
  raw: unknown,
  warn: (message: string) => void = console.warn,
): NextResponse {
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new SchemaError("trial payload is not an object");
  }
  const obj = raw as Record<string, unknown>;
  if (obj.done === true) {
    warnUnexpected(obj, COMPLETION_KEYS, "completion payload", warn);
    return Object.freeze({
      done: true as const,
      completed: requireInt(obj, "completed"),
      total: requireInt(obj, "total"),
    });
  }
  warnUnexpected(obj, TRIAL_KEYS, "trial payload", warn);
  const progressRaw = obj.progress;
  if (
    typeof progressRaw !== "object" ||
    progressRaw === null ||
    Array.isArray(progressRaw)
  ) {
    throw new SchemaError("expected progress object");
  }
  const progressObj = progressRaw as Record<string, unknown>;
  warnUnexpected(progressObj, PROGRESS_KEYS, "progress", warn);
  return Object.freeze({
    trialId: requireString(obj, "trial_id"),
    enrollmentAudioUrl: requireString(obj, "enrollment_audio_url"),
    testAudioUrl: requireString(obj, "test_audio_url"),
    round: requireInt(obj, "round"),
    progress: Object.freeze({
      done: requireInt(progressObj, "done"),
      total: requireInt(progressObj, "total"),
    }),
  });
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (
  input: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; ok: boolean; json(): Promise<unknown> }>;

export class AuditApi {
  constructor(
    private readonly fetchImpl: FetchLike,
    private readonly base: string = "",
    private readonly warn: (message: string) => void = console.warn,
  ) {}

  async annotators(): Promise<string[]> {
    const response = await this.fetchImpl(`${this.base}/api/annotators`);
    if (!response.ok) {
      throw new ApiError(response.status, "failed to load annotator roster");
    }
    const body = (await response.json()) as { annotators?: unknown };
    if (!Array.isArray(body.annotators)) {
      throw new SchemaError("roster payload missing annotators list");
    }
    return body.annotators.map(String);
  }

  async next(annotator: string): Promise<NextResponse> {
    const response = await this.fetchImpl(
      `${this.base}/api/session/${encodeURIComponent(annotator)}/next`,
    );
    if (!response.ok) {
      throw new ApiError(response.status, "failed to load the next trial");
    }
    return parseNextResponse(await response.json(), this.warn);
  }

  /** Returns the HTTP status: 201 accepted, 409 duplicate. Anything else
   * is thrown as an ApiError (configuration problem, blocking). */
  async submitLabel(
    trialId: string,
    annotator: string,
    label: Label,
  ): Promise<201 | 409> {
    const response = await this.fetchImpl(`${this.base}/api/labels`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ trial_id: trialId, annotator, label }),
    });
    if (response.status === 201 || response.status === 409) {
      return response.status;
    }
    throw new ApiError(response.status, `label rejected (${response.status})`);
  }
}
