// DOM rendering. Views rebuild wholesale from the latest session state.

import type { ApplicableMove, SessionState, TraceRow } from "./api.js";
import {
  costDelta, diffLines, groupMoves, polyline, timelinePoints, tracePolyline,
  treeLines,
} from "./model.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderTree(container: HTMLElement, state: SessionState): void {
  container.replaceChildren();
  for (const line of treeLines(state.tree)) {
    const row = el("div", `tree-line tree-${line.kind}`);
    row.appendChild(el("span", "tree-bars", "|".repeat(line.depth)));
    const bare = line.suffix ? line.label.replace(`:${line.suffix}`, "") : line.label;
    const label = el("span", "tree-label", bare);
    if (line.suffix) label.appendChild(el("span", "suffix-badge", `:${line.suffix}`));
    row.appendChild(label);
    container.appendChild(row);
  }
}

export function renderMovePalette(
  container: HTMLElement,
  moves: ApplicableMove[],
  onApply: (move: string) => void,
): void {
  container.replaceChildren();
  for (const [transform, group] of groupMoves(moves)) {
    const section = el("details", "move-group");
    section.open = ["join_scopes", "reuse_dims"].includes(transform);
    const summary = el("summary", "", `${transform} (${group.length})`);
    section.appendChild(summary);
    for (const m of group) {
      const btn = el("button", "move-btn", `${m.site} ${m.params.join(" ")}`.trim());
      btn.title = m.move;
      btn.onclick = () => onApply(m.move);
      section.appendChild(btn);
    }
    container.appendChild(section);
  }
  if (moves.length === 0) {
    container.appendChild(el("div", "empty", "no applicable moves"));
  }
}

export function renderTimeline(
  svg: SVGSVGElement,
  state: SessionState,
  onSelect: (step: number) => void,
): void {
  const width = svg.clientWidth || 360;
  const height = svg.clientHeight || 120;
  svg.replaceChildren();
  const pts = timelinePoints(state.costs, state.moves_applied, width, height);
  const ns = "http://www.w3.org/2000/svg";
  const line = document.createElementNS(ns, "polyline");
  line.setAttribute("points", polyline(pts));
  line.setAttribute("class", "timeline-line");
  svg.appendChild(line);
  for (const p of pts) {
    const dot = document.createElementNS(ns, "circle");
    dot.setAttribute("cx", String(p.x));
    dot.setAttribute("cy", String(p.y));
    dot.setAttribute("r", "4");
    dot.setAttribute("class", "timeline-dot");
    const title = document.createElementNS(ns, "title");
    title.textContent = `#${p.step} ${p.label}: ${p.cost.toFixed(1)}`;
    dot.appendChild(title);
    dot.addEventListener("click", () => onSelect(p.step));
    svg.appendChild(dot);
  }
}

export function renderTraceOverlay(svg: SVGSVGElement, rows: TraceRow[]): void {
  const ns = "http://www.w3.org/2000/svg";
  const existing = svg.querySelector(".trace-line");
  if (existing) existing.remove();
  if (rows.length === 0) return;
  const width = svg.clientWidth || 360;
  const height = svg.clientHeight || 120;
  const line = document.createElementNS(ns, "polyline");
  line.setAttribute("points", tracePolyline(rows, width, height));
  line.setAttribute("class", "trace-line");
  svg.appendChild(line);
}

export function renderDiff(container: HTMLElement, diff: string | undefined): void {
  container.replaceChildren();
  for (const line of diffLines(diff ?? "")) {
    container.appendChild(el("div", `diff-${line.kind}`, line.text));
  }
  if (!diff) container.appendChild(el("div", "empty", "apply a move to see its diff"));
}

export function renderMoveLog(container: HTMLElement, state: SessionState): void {
  container.replaceChildren();
  state.moves_applied.forEach((m, i) => {
    container.appendChild(el("div", "log-line", `${i + 1}. ${m}`));
  });
  container.appendChild(el("div", "log-delta", `cost ${costDelta(state.costs)}`));
}
