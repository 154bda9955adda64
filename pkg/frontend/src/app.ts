// Screen flow: annotator roster -> trial loop -> completion. The only thing
// that survives a reload is the annotator choice (localStorage); every trial
// shown comes fresh from the service, so the server stays the single source
// of truth.

import {
  ApiError,
  AuditApi,
  isCompletion,
  Label,
  NextResponse,
  SchemaError,
  TrialView,
} from "./api.js";

interface LabelButton {
  label: Label;
  text: string;
  key: string;
  deEmphasized?: boolean;
  hint?: string;
}

// Fixed order and fixed keybindings, identical for every annotator and every
// trial; no position randomization.
export const LABEL_BUTTONS: readonly LabelButton[] = [
  { label: "same_speaker", text: "Same speaker", key: "1" },
  { label: "different_speaker", text: "Different speaker", key: "2" },
  { label: "audio_quality_issue", text: "Audio quality issue", key: "3" },
  { label: "missing_speech", text: "Missing speech", key: "4" },
  {
    label: "not_sure",
    text: "Not sure",
    key: "5",
    deEmphasized: true,
    hint: "use this option sparingly",
  },
];

export const ANNOTATOR_STORAGE_KEY = "voxclean.annotator";

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

type Screen = "roster" | "trial" | "completion" | "error" | "retry";

export class AuditApp {
  private trial: TrialView | null = null;
  private playedEnrollment = false;
  private playedTest = false;
  private gateWarned = false;
  private inFlight = false;
  private screen: Screen = "roster";

  constructor(
    private readonly root: HTMLElement,
    private readonly api: AuditApi,
    private readonly storage: StorageLike,
    private readonly doc: Document,
  ) {}

  get annotator(): string | null {
    return this.storage.getItem(ANNOTATOR_STORAGE_KEY);
  }

  get currentScreen(): Screen {
    return this.screen;
  }

  get currentTrialId(): string | null {
    return this.trial ? this.trial.trialId : null;
  }

  async start(): Promise<void> {
    this.doc.addEventListener("keydown", (event) => this.onKey(event));
    if (this.annotator) {
      await this.loadNext();
    } else {
      await this.showRoster();
    }
  }

  async showRoster(): Promise<void> {
    this.screen = "roster";
    this.trial = null;
    let roster: string[];
    try {
      roster = await this.api.annotators();
    } catch (error) {
      this.showRetry(`Could not reach the audit service: ${String(error)}`, () =>
        this.showRoster(),
      );
      return;
    }
    this.clear();
    const heading = this.el("h1", "Speaker audit");
    const prompt = this.el("p", "Who is annotating?");
    const list = this.el("div");
    list.className = "roster";
    for (const name of roster) {
      const button = this.el("button", name) as HTMLButtonElement;
      button.dataset.annotator = name;
      button.addEventListener("click", () => {
        this.storage.setItem(ANNOTATOR_STORAGE_KEY, name);
        void this.loadNext();
      });
      list.appendChild(button);
    }
    this.root.append(heading, prompt, list);
  }

  async loadNext(): Promise<void> {
    const annotator = this.annotator;
    if (!annotator) {
      await this.showRoster();
      return;
    }
    let next: NextResponse;
    try {
      next = await this.api.next(annotator);
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) {
        // stale stored annotator (roster changed): back to the roster
        this.storage.removeItem(ANNOTATOR_STORAGE_KEY);
        await this.showRoster();
        return;
      }
      if (error instanceof SchemaError) {
        this.showBlockingError(String(error));
        return;
      }
      this.showRetry("Network problem loading the next trial.", () =>
        this.loadNext(),
      );
      return;
    }
    if (isCompletion(next)) {
      this.showCompletion(next.total);
      return;
    }
    this.renderTrial(next);
  }

  private renderTrial(trial: TrialView): void {
    this.screen = "trial";
    this.trial = trial;
    this.playedEnrollment = false;
    this.playedTest = false;
    this.gateWarned = false;
    this.inFlight = false;
    this.clear();

    const header = this.el("div");
    header.className = "trial-header";
    const counter = this.el(
      "span",
      `Trial ${trial.progress.done + 1} of ${trial.progress.total}`,
    );
    counter.className = "counter";
    const round = this.el("span", trial.round === 2 ? "re-audit round" : "round one");
    round.className = "round-tag";
    header.append(counter, round);

    const bar = this.el("div");
    bar.className = "progress";
    const fill = this.el("div");
    fill.className = "progress-fill";
    const percent =
      trial.progress.total === 0
        ? 0
        : Math.round((100 * trial.progress.done) / trial.progress.total);
    fill.style.width = `${percent}%`;
    bar.appendChild(fill);

    const players = this.el("div");
    players.className = "players";
    players.append(
      this.player("A", trial.enrollmentAudioUrl, () => {
        this.playedEnrollment = true;
      }),
      this.player("B", trial.testAudioUrl, () => {
        this.playedTest = true;
      }),
    );

    const question = this.el("p", "Are clips A and B the same speaker?");
    question.className = "question";

    const buttons = this.el("div");
    buttons.className = "labels";
    for (const choice of LABEL_BUTTONS) {
      const button = this.el("button") as HTMLButtonElement;
      button.dataset.label = choice.label;
      button.className = choice.deEmphasized ? "label-btn subdued" : "label-btn";
      const keycap = this.el("kbd", choice.key);
      button.append(keycap, this.doc.createTextNode(` ${choice.text}`));
      if (choice.hint) {
        const hint = this.el("small", ` (${choice.hint})`);
        button.appendChild(hint);
      }
      button.addEventListener("click", () => void this.submit(choice.label));
      buttons.appendChild(button);
    }

    const status = this.el("p", "");
    status.className = "status";
    status.id = "status-line";

    this.root.append(header, bar, players, question, buttons, status);
  }

  private player(tag: string, url: string, onPlay: () => void): HTMLElement {
    const box = this.el("div");
    box.className = "player";
    const caption = this.el("h2", `Clip ${tag}`);
    const audio = this.doc.createElement("audio");
    audio.controls = true;
    audio.preload = "auto";
    audio.src = url;
    audio.addEventListener("play", onPlay);
    box.append(caption, audio);
    return box;
  }

  private async submit(label: Label): Promise<void> {
    if (!this.trial || this.inFlight || this.screen !== "trial") {
      return;
    }
    // Soft playback gate: warn once, allow the next attempt through. An
    // annotator may legitimately judge "missing speech" in the first second.
    if (!(this.playedEnrollment && this.playedTest) && !this.gateWarned) {
      this.gateWarned = true;
      this.setStatus(
        "Play both clips at least once before labeling — or click again to submit anyway.",
      );
      return;
    }
    const annotator = this.annotator;
    if (!annotator) {
      await this.showRoster();
      return;
    }
    this.inFlight = true;
    this.setButtonsDisabled(true);
    try {
      const status = await this.api.submitLabel(this.trial.trialId, annotator, label);
      if (status === 409) {
        this.setStatus("Already labeled elsewhere — skipping forward.");
      }
      await this.loadNext();
    } catch (error) {
      if (error instanceof ApiError) {
        this.showBlockingError(
          `The service rejected the label (${error.status}). ` +
            "This is a configuration problem; tell the study coordinator.",
        );
      } else {
        this.inFlight = false;
        this.setButtonsDisabled(false);
        this.setStatus("Network problem submitting — try again.");
      }
    }
  }

  private onKey(event: KeyboardEvent): void {
    if (this.screen !== "trial") {
      return;
    }
    const choice = LABEL_BUTTONS.find((b) => b.key === event.key);
    if (choice) {
      void this.submit(choice.label);
    }
  }

  private showCompletion(total: number): void {
    this.screen = "completion";
    this.trial = null;
    this.clear();
    const heading = this.el("h1", "All done");
    const body = this.el(
      "p",
      `You have labeled all ${total} trials assigned to you. Thank you!`,
    );
    this.root.append(heading, body);
  }

  private showRetry(message: string, retry: () => Promise<void>): void {
    this.screen = "retry";
    this.clear();
    const banner = this.el("div");
    banner.className = "retry-banner";
    banner.append(this.el("p", message));
    const button = this.el("button", "Retry") as HTMLButtonElement;
    button.id = "retry-button";
    button.addEventListener("click", () => void retry());
    banner.appendChild(button);
    this.root.appendChild(banner);
  }

  private showBlockingError(message: string): void {
    this.screen = "error";
    this.trial = null;
    this.clear();
    const dialog = this.el("div");
    dialog.className = "error-dialog";
    dialog.append(this.el("h1", "Cannot continue"), this.el("p", message));
    this.root.appendChild(dialog);
  }

  private setButtonsDisabled(disabled: boolean): void {
    for (const button of Array.from(this.root.querySelectorAll("button.label-btn"))) {
      (button as HTMLButtonElement).disabled = disabled;
    }
  }

  private setStatus(message: string): void {
    const line = this.doc.getElementById("status-line");
    if (line) {
      line.textContent = message;
    }
  }

  private clear(): void {
    this.root.textContent = "";
  }

  private el(tag: string, text?: string): HTMLElement {
    const node = this.doc.createElement(tag);
    if (text !== undefined) {
      node.textContent = text;
    }
    return node;
  }
}
