// Response shapes of the remedial-action service; field names mirror the
// JSON bodies exactly so every rendered number traces to a server response.

export interface LineInfo {
  id: string;
  from: string;
  to: string;
  in_service: boolean;
  rating: number;
}

export interface FlowInfo {
  f_mw: number | null;
  apparent_mva: number | null;
  loading: number | null;
}

export interface GridResponse {
  substations: string[];
  lines: LineInfo[];
  generators: { id: string; substation: string; p_set: number; in_service: boolean }[];
  loads: { id: string; substation: string; p: number; q: number }[];
  overlay_depth: number;
  fingerprint: unknown[];
  converged: boolean;
  flows: Record<string, FlowInfo>;
}

export interface Issue {
  kind: string;
  line: string;
  flow_mva: number;
  limit_mva: number;
  ratio: number;
}

export interface SecurityResponse {
  converged: boolean;
  issues: Issue[];
}

export type Change =
  | { kind: "line_status"; line: string; in_service: boolean }
  | { kind: "reassign"; sub: string; elem: string; busbar: 1 | 2 };

export interface Action {
  changes: Change[];
}

export interface WhatifResponse {
  predicted: boolean;
  method: string;
  flows: Record<string, FlowInfo>;
  issues: Issue[];
}

export interface ApplyResponse {
  applied: Action;
  overlay_depth: number;
  issues: Issue[];
  flows: Record<string, FlowInfo>;
}

export interface ErrorBody {
  error: string;
  message: string;
}

export interface AdviseCandidate {
  kind: "candidate";
  status: "validated";
  action: Action;
  substation: string;
  cost: number;
  max_loading: number;
  validated_issues: Issue[];
}

export interface AdviseDone {
  kind: "done";
  secure: boolean;
  stopped: boolean;
  budget_exhausted: boolean;
  recommendations: number;
  ranking: Action[];
}

export type AdviseRecord =
  | AdviseCandidate
  | AdviseDone
  | { kind: "error"; message: string };

export interface TestedEntry {
  run: number;
  action: Action;
  substation: string;
  outcome: string;
}

export interface LogResponse {
  tested: TestedEntry[];
}

export interface StopResponse {
  stopping: boolean;
  tested: TestedEntry[];
}
