// Pure view-model helpers: no DOM, no fetch. Unit-tested directly.

import type { ApplicableMove, CostRow, TraceRow, TreeNode } from "./api.js";

export interface TreeLine {
  depth: number;
  label: string;
  kind: "scope" | "op";
  suffix: string | null;
}

/** Flatten the service's tree mirror into indented display lines. */
export function treeLines(nodes: TreeNode[], depth = 0): TreeLine[] {
  const out: TreeLine[] = [];
  for (const n of nodes) {
    if (n.kind === "scope") {
      const suffix = n.suffix ?? null;
      out.push({
        depth,
        label: n.extent + (suffix ? `:${suffix}` : ""),
        kind: "scope",
        suffix,
      });
      out.push(...treeLines(n.children ?? [], depth + 1));
    } else {
      out.push({ depth, label: n.text ?? "", kind: "op", suffix: null });
    }
  }
  return out;
}

/** Group applicable moves by transformation for the palette. */
export function groupMoves(moves: ApplicableMove[]): Map<string, ApplicableMove[]> {
  const grouped = new Map<string, ApplicableMove[]>();
  for (const m of moves) {
    const list = grouped.get(m.transform) ?? [];
    list.push(m);
    grouped.set(m.transform, list);
  }
  return new Map([...grouped.entries()].sort(([a], [b]) => a.localeCompare(b)));
}

export interface TimelinePoint {
  x: number;
  y: number;
  step: number;
  cost: number;
  label: string;
}

/** Scale the per-move cost history into plot coordinates. */
export function timelinePoints(
  costs: CostRow[],
  moves: string[],
  width: number,
  height: number,
  pad = 10,
): TimelinePoint[] {
  const values = costs.map((c) => c.modeled_cost);
  if (values.length === 0) return [];
  const max = Math.max(...values);
  const min = Math.min(...values);
  const span = max - min || 1;
  const dx = values.length > 1 ? (width - 2 * pad) / (values.length - 1) : 0;
  return values.map((v, i) => ({
    x: pad + i * dx,
    y: pad + (height - 2 * pad) * (1 - (v - min) / span),
    step: i,
    cost: v,
    label: i === 0 ? "start" : moves[i - 1],
  }));
}

export function polyline(points: TimelinePoint[]): string {
  return points.map((p) => `${p.x.toFixed(1)},${p.y.toFixed(1)}`).join(" ");
}

/** Best-so-far overlay for a search trace. */
export function tracePolyline(
  rows: TraceRow[],
  width: number,
  height: number,
  pad = 10,
): string {
  if (rows.length === 0) return "";
  const bests = rows.map((r) => r.best);
  const max = Math.max(...bests);
  const min = Math.min(...bests);
  const span = max - min || 1;
  const dx = rows.length > 1 ? (width - 2 * pad) / (rows.length - 1) : 0;
  return rows
    .map(
      (r, i) =>
        `${(pad + i * dx).toFixed(1)},${(
          pad + (height - 2 * pad) * (1 - (r.best - min) / span)
        ).toFixed(1)}`,
    )
    .join(" ");
}

export interface DiffLine {
  kind: "add" | "del" | "ctx" | "meta";
  text: string;
}

/** Classify unified-diff lines for colored rendering. */
export function diffLines(diff: string): DiffLine[] {
  if (!diff) return [];
  return diff
    .split("\n")
    .filter((l) => l.length > 0)
    .map((l) => {
      if (l.startsWith("+++") || l.startsWith("---") || l.startsWith("@@")) {
        return { kind: "meta", text: l } as DiffLine;
      }
      if (l.startsWith("+")) return { kind: "add", text: l } as DiffLine;
      if (l.startsWith("-")) return { kind: "del", text: l } as DiffLine;
      return { kind: "ctx", text: l } as DiffLine;
    });
}

/** Percentage change of the latest cost against the session start. */
export function costDelta(costs: CostRow[]): string {
  if (costs.length < 2) return "±0.0%";
  const first = costs[0].modeled_cost;
  const last = costs[costs.length - 1].modeled_cost;
  if (first === 0) return "±0.0%";
  const pct = ((last - first) / first) * 100;
  return `${pct <= 0 ? "" : "+"}${pct.toFixed(1)}%`;
}
