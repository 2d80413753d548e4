// DOM rendering: every number shown comes straight from the most recent
// server response held in the view state, never from client-side arithmetic
// beyond formatting.  Predicted values get the "predicted" (dashed) style,
// validated values the "validated" (solid) style.

import type {
  AdviseCandidate,
  AdviseDone,
  GridResponse,
  Issue,
  SecurityResponse,
  TestedEntry,
  WhatifResponse,
} from "./types.js";

export const THRESHOLD = 0.95;

function el(tag: string, cls?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function pct(x: number): string {
  return `${(100 * x).toFixed(1)}%`;
}

export function describeAction(action: { changes: unknown[] }): string {
  return (action.changes as Record<string, unknown>[])
    .map((c) =>
      c.kind === "line_status"
        ? `${c.in_service ? "close" : "open"} ${c.line}`
        : `move ${c.elem} to busbar ${c.busbar} at ${c.sub}`,
    )
    .join(", ");
}

export function renderSecurity(
  root: HTMLElement,
  sec: SecurityResponse | null,
  stale = false,
): void {
  root.replaceChildren();
  if (stale) root.append(el("div", "banner stale", "connection lost, data may be stale"));
  if (!sec) return;
  if (!sec.converged) {
    root.append(el("div", "banner danger", "load flow did not converge"));
    return;
  }
  if (sec.issues.length === 0) {
    root.append(el("div", "banner secure", "secure (∅)"));
    return;
  }
  const table = el("table", "issues");
  const head = el("tr");
  for (const h of ["line", "flow (MVA)", "limit (MVA)", "loading"]) {
    head.append(el("th", undefined, h));
  }
  table.append(head);
  const sorted = [...sec.issues].sort((a, b) => b.ratio - a.ratio);
  for (const issue of sorted) {
    const row = el("tr", issue.ratio > THRESHOLD ? "issue over" : "issue");
    row.append(el("td", undefined, issue.line));
    row.append(el("td", undefined, issue.flow_mva.toFixed(1)));
    row.append(el("td", undefined, issue.limit_mva.toFixed(1)));
    row.append(el("td", undefined, pct(issue.ratio)));
    table.append(row);
  }
  root.append(table);
  root.append(el("div", "threshold-marker", `threshold ${pct(THRESHOLD)}`));
}

function loadingClass(loading: number | null): string {
  if (loading === null) return "unknown";
  if (loading > THRESHOLD) return "hot";
  if (loading > 0.75) return "warm";
  return "cool";
}

/** Single-line-diagram-lite: substations on a circle, edges by loading. */
export function renderGrid(root: HTMLElement, grid: GridResponse): void {
  root.replaceChildren();
  const size = 360;
  const r = size / 2 - 40;
  const pos = new Map<string, [number, number]>();
  grid.substations.forEach((sub, i) => {
    const a = (2 * Math.PI * i) / grid.substations.length - Math.PI / 2;
    pos.set(sub, [size / 2 + r * Math.cos(a), size / 2 + r * Math.sin(a)]);
  });
  const ns = "http://www.w3.org/2000/svg";
  const svg = document.createElementNS(ns, "svg");
  svg.setAttribute("viewBox", `0 0 ${size} ${size}`);
  svg.setAttribute("class", "diagram");
  for (const line of grid.lines) {
    const [x1, y1] = pos.get(line.from)!;
    const [x2, y2] = pos.get(line.to)!;
    const edge = document.createElementNS(ns, "line");
    edge.setAttribute("x1", String(x1));
    edge.setAttribute("y1", String(y1));
    edge.setAttribute("x2", String(x2));
    edge.setAttribute("y2", String(y2));
    const flow = grid.flows[line.id];
    edge.setAttribute(
      "class",
      line.in_service ? `edge ${loadingClass(flow?.loading ?? null)}` : "edge open",
    );
    edge.setAttribute("data-line", line.id);
    svg.append(edge);
  }
  for (const sub of grid.substations) {
    const [x, y] = pos.get(sub)!;
    const node = document.createElementNS(ns, "circle");
    node.setAttribute("cx", String(x));
    node.setAttribute("cy", String(y));
    node.setAttribute("r", "8");
    node.setAttribute("class", "node");
    svg.append(node);
    const label = document.createElementNS(ns, "text");
    label.setAttribute("x", String(x));
    label.setAttribute("y", String(y - 12));
    label.textContent = sub;
    svg.append(label);
  }
  root.append(svg);

  const list = el("ul", "loading-list");
  for (const line of grid.lines) {
    const flow = grid.flows[line.id];
    const item = el(
      "li",
      loadingClass(flow?.loading ?? null),
      flow && flow.loading !== null
        ? `${line.id}: ${pct(flow.loading)}`
        : `${line.id}: ${line.in_service ? "n/a" : "open"}`,
    );
    item.dataset.line = line.id;
    list.append(item);
  }
  root.append(list);
  root.append(el("div", "meta", `overlay depth ${grid.overlay_depth}`));
}

export interface IssueDelta {
  cured: Issue[];
  added: Issue[];
  unchanged: Issue[];
}

export function diffIssues(before: Issue[], after: Issue[]): IssueDelta {
  const key = (i: Issue) => `${i.kind}:${i.line}`;
  const beforeKeys = new Set(before.map(key));
  const afterKeys = new Set(after.map(key));
  return {
    cured: before.filter((i) => !afterKeys.has(key(i))),
    added: after.filter((i) => !beforeKeys.has(key(i))),
    unchanged: after.filter((i) => beforeKeys.has(key(i))),
  };
}

export function renderWhatif(
  root: HTMLElement,
  resp: WhatifResponse | null,
  current: SecurityResponse | null,
  error: string | null,
): void {
  root.replaceChildren();
  if (error) {
    root.append(el("div", "banner danger inline-error", error));
    return;
  }
  if (!resp || !current) return;
  const panel = el("div", "predicted");
  panel.append(el("div", "tag", `prediction (${resp.method}), not validated`));
  const delta = diffIssues(current.issues, resp.issues);
  if (delta.cured.length + delta.added.length === 0 && resp.issues.length === current.issues.length) {
    panel.append(el("div", "delta none", "no change"));
  }
  for (const issue of delta.cured) {
    panel.append(el("div", "delta cured", `${issue.line} cured`));
  }
  for (const issue of delta.added) {
    panel.append(el("div", "delta added", `${issue.line} new issue (${pct(issue.ratio)})`));
  }
  for (const issue of delta.unchanged) {
    panel.append(el("div", "delta unchanged", `${issue.line} still ${pct(issue.ratio)}`));
  }
  root.append(panel);
}

export function renderAdvice(
  root: HTMLElement,
  items: AdviseCandidate[],
  done: AdviseDone | null,
  partial: boolean,
  onPick?: (item: AdviseCandidate) => void,
): void {
  root.replaceChildren();
  if (done?.secure) {
    root.append(el("div", "banner secure", "no action needed"));
    return;
  }
  const list = el("ol", "recommendations");
  for (const item of items) {
    const entry = el("li", "validated recommendation");
    entry.append(el("span", "badge", "VALIDATED"));
    entry.append(el("span", "action", describeAction(item.action)));
    entry.append(
      el("span", "detail", ` at ${item.substation}, cost ${item.cost}, worst loading ${pct(item.max_loading)}`),
    );
    if (onPick) {
      const pick = el("button", "pick", "inspect");
      pick.addEventListener("click", () => onPick(item));
      entry.append(pick);
    }
    list.append(entry);
  }
  root.append(list);
  if (partial) root.append(el("div", "banner partial", "partial result"));
  if (done && !done.secure) {
    const bits = [`${done.recommendations} recommendation(s)`];
    if (done.stopped) bits.push("stopped");
    if (done.budget_exhausted) bits.push("budget exhausted");
    root.append(el("div", "meta done", bits.join(", ")));
  }
}

export function renderLog(root: HTMLElement, entries: TestedEntry[]): void {
  root.replaceChildren();
  if (entries.length === 0) {
    root.append(el("div", "meta", "no actions tested yet"));
    return;
  }
  const table = el("table", "log");
  for (const entry of entries) {
    const row = el("tr", entry.outcome === "validated" ? "validated" : "rejected");
    row.append(el("td", undefined, describeAction(entry.action)));
    row.append(el("td", undefined, entry.substation));
    row.append(el("td", undefined, entry.outcome));
    table.append(row);
  }
  root.append(table);
}
