// Console controller: owns the view state, talks to the service through a
// Client, and re-renders panels from the latest responses only.

import { Client, ServiceError } from "./api.js";
import type {
  Action,
  AdviseCandidate,
  AdviseDone,
  GridResponse,
  SecurityResponse,
  TestedEntry,
  WhatifResponse,
} from "./types.js";
import {
  diffIssues,
  renderAdvice,
  renderGrid,
  renderLog,
  renderSecurity,
  renderWhatif,
} from "./ui.js";

export interface Panels {
  grid: HTMLElement;
  security: HTMLElement;
  whatif: HTMLElement;
  advice: HTMLElement;
  log: HTMLElement;
  confirm: HTMLElement;
}

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  ms: number,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | undefined;
  return (...args: A) => {
    if (timer !== undefined) clearTimeout(timer);
    timer = setTimeout(() => fn(...args), ms);
  };
}

export class Console {
  grid: GridResponse | null = null;
  security: SecurityResponse | null = null;
  whatif: WhatifResponse | null = null;
  candidates: AdviseCandidate[] = [];
  done: AdviseDone | null = null;
  partial = false;
  log: TestedEntry[] = [];
  pending: AdviseCandidate | null = null;
  private whatifSeq = 0;
  private advising = false;

  constructor(
    readonly client: Client,
    readonly panels: Panels,
  ) {}

  async refresh(): Promise<void> {
    try {
      this.grid = await this.client.grid();
      this.security = await this.client.security();
      renderGrid(this.panels.grid, this.grid);
      renderSecurity(this.panels.security, this.security);
    } catch {
      renderSecurity(this.panels.security, this.security, true);
    }
  }

  /** Last-write-wins what-if: stale responses are dropped, not rendered. */
  async exploreWhatif(action: Action): Promise<void> {
    const seq = ++this.whatifSeq;
    try {
      const resp = await this.client.whatif(action);
      if (seq !== this.whatifSeq) return;
      this.whatif = resp;
      renderWhatif(this.panels.whatif, resp, this.security, null);
    } catch (err) {
      if (seq !== this.whatifSeq) return;
      const message =
        err instanceof ServiceError
          ? err.status === 422
            ? "unrealistic state"
            : err.body.message
          : "request failed";
      renderWhatif(this.panels.whatif, null, null, message);
    }
  }

  async runAdvice(k: number, budget: number): Promise<void> {
    if (this.advising) return;
    this.advising = true;
    this.candidates = [];
    this.done = null;
    this.partial = false;
    const pick = (item: AdviseCandidate) => this.pick(item);
    try {
      for await (const record of this.client.advise(k, budget)) {
        if (record.kind === "candidate") {
          this.candidates.push(record);
        } else if (record.kind === "done") {
          this.done = record;
        }
        renderAdvice(this.panels.advice, this.candidates, this.done, false, pick);
      }
      if (!this.done) this.partial = true;
    } catch {
      this.partial = true; // stream interruption keeps what already arrived
    } finally {
      this.advising = false;
    }
    renderAdvice(this.panels.advice, this.candidates, this.done, this.partial, pick);
    await this.refreshLog();
  }

  async stopAdvice(): Promise<void> {
    const stop = await this.client.stopAdvise();
    this.log = stop.tested;
    renderLog(this.panels.log, this.log);
  }

  async refreshLog(): Promise<void> {
    this.log = (await this.client.log()).tested;
    renderLog(this.panels.log, this.log);
  }

  /** Pre-fills the what-if panel and arms Apply behind a confirmation that
   *  shows the validated (not predicted) issue delta. */
  pick(item: AdviseCandidate): void {
    this.pending = item;
    void this.exploreWhatif(item.action);
    const root = this.panels.confirm;
    root.replaceChildren();
    const box = document.createElement("div");
    box.className = "confirm validated";
    const delta = diffIssues(this.security?.issues ?? [], item.validated_issues);
    const title = document.createElement("div");
    title.textContent = `apply after validated check: ${delta.cured.length} cured, ${delta.added.length} new`;
    box.append(title);
    const button = document.createElement("button");
    button.className = "apply";
    button.textContent = "Apply";
    button.addEventListener("click", () => void this.applyPending());
    box.append(button);
    root.append(box);
  }

  async applyPending(): Promise<void> {
    if (!this.pending) return;
    try {
      await this.client.apply(this.pending.action);
      this.pending = null;
      this.panels.confirm.replaceChildren();
      await this.refresh();
    } catch (err) {
      const box = document.createElement("div");
      box.className = "banner danger";
      box.textContent = err instanceof ServiceError ? err.message : "apply failed";
      this.panels.confirm.append(box);
    }
  }
}
