// App wiring: session picker, tree panel, move palette, diff viewer, cost
// timeline, generated-code preview, search-trace overlay.

import { Api, InapplicableMoveError, SessionState } from "./api.js";
import {
  el, renderDiff, renderMoveLog, renderMovePalette, renderTimeline,
  renderTraceOverlay, renderTree,
} from "./render.js";

const api = new Api("");

interface Ui {
  picker: HTMLElement;
  tree: HTMLElement;
  palette: HTMLElement;
  diff: HTMLElement;
  log: HTMLElement;
  timeline: SVGSVGElement;
  code: HTMLElement;
  status: HTMLElement;
}

let current: SessionState | null = null;

function ui(): Ui {
  const get = (id: string) => document.getElementById(id) as HTMLElement;
  return {
    picker: get("picker"),
    tree: get("tree"),
    palette: get("palette"),
    diff: get("diff"),
    log: get("log"),
    timeline: document.getElementById("timeline") as unknown as SVGSVGElement,
    code: get("code"),
    status: get("status"),
  };
}

function setStatus(v: Ui, text: string, error = false): void {
  v.status.textContent = text;
  v.status.className = error ? "status error" : "status";
}

async function refresh(v: Ui, state: SessionState): Promise<void> {
  current = state;
  const url = new URL(window.location.href);
  url.searchParams.set("session", state.id);
  history.replaceState(null, "", url.toString());

  renderTree(v.tree, state);
  renderMovePalette(v.palette, state.applicable_moves ?? [], (move) => applyMove(v, move));
  renderDiff(v.diff, state.diff);
  renderMoveLog(v.log, state);
  renderTimeline(v.timeline, state, () => undefined);
  v.code.textContent = await api.code(state.id);
  setStatus(v, `${state.kernel}/${state.preset} · ${state.moves_applied.length} moves`);
}

async function applyMove(v: Ui, move: string): Promise<void> {
  if (!current) return;
  try {
    const state = await api.applyMove(current.id, move);
    await refresh(v, state);
  } catch (e) {
    if (e instanceof InapplicableMoveError) {
      setStatus(v, `move rejected: ${e.message}; palette refreshed`, true);
      renderMovePalette(v.palette, e.alternatives, (m) => applyMove(v, m));
    } else {
      setStatus(v, String(e), true);
    }
  }
}

async function undo(v: Ui): Promise<void> {
  if (!current) return;
  await refresh(v, await api.undo(current.id, 1));
}

async function runPass(v: Ui, name: string): Promise<void> {
  if (!current) return;
  setStatus(v, `running ${name} pass…`);
  await refresh(v, await api.runPass(current.id, name));
}

async function runSearch(v: Ui): Promise<void> {
  if (!current) return;
  const method = (document.getElementById("search-method") as HTMLSelectElement).value;
  const space = (document.getElementById("search-space") as HTMLSelectElement).value;
  const budget = Number((document.getElementById("search-budget") as HTMLInputElement).value);
  const { job } = await api.startSearch(current.id, { method, space, budget, seed: 0 });
  setStatus(v, `search ${job} running…`);
  const poll = async (): Promise<void> => {
    if (!current) return;
    const res = await api.pollSearch(current.id, job);
    renderTraceOverlay(v.timeline, res.rows);
    if (!res.done) {
      setTimeout(poll, 300);
      return;
    }
    if (res.error) {
      setStatus(v, `search failed: ${res.error}`, true);
      return;
    }
    const best = res.rows.length ? res.rows[res.rows.length - 1].best : NaN;
    setStatus(v, `search done: best ${best.toFixed(1)} over ${res.rows.length} evaluations`);
  };
  await poll();
}

async function exportLog(v: Ui): Promise<void> {
  if (!current) return;
  const text = await api.exportSession(current.id);
  await navigator.clipboard.writeText(text).catch(() => undefined);
  setStatus(v, "move log copied to clipboard");
  console.log(text);
}

async function buildPicker(v: Ui): Promise<void> {
  v.picker.replaceChildren();
  const kernels = await api.kernels();
  const select = el("select") as HTMLSelectElement;
  select.id = "kernel-select";
  for (const k of kernels) {
    const opt = el("option", "", k.name) as HTMLOptionElement;
    opt.value = k.name;
    select.appendChild(opt);
  }
  const newBtn = el("button", "", "new session");
  newBtn.onclick = async () => refresh(v, await api.createSession(select.value));
  v.picker.append(select, newBtn);

  const sessions = await api.sessions();
  if (sessions.length) {
    const open = el("select") as HTMLSelectElement;
    for (const s of sessions) {
      const opt = el("option", "", `${s.kernel} · ${s.moves} moves · ${s.id}`) as HTMLOptionElement;
      opt.value = s.id;
      open.appendChild(opt);
    }
    const openBtn = el("button", "", "open");
    openBtn.onclick = async () => refresh(v, await api.getSession(open.value));
    v.picker.append(open, openBtn);
  }
}

async function boot(): Promise<void> {
  const v = ui();
  (document.getElementById("undo") as HTMLButtonElement).onclick = () => undo(v);
  (document.getElementById("export") as HTMLButtonElement).onclick = () => exportLog(v);
  (document.getElementById("run-search") as HTMLButtonElement).onclick = () => runSearch(v);
  for (const name of ["naive", "greedy", "heuristic"]) {
    (document.getElementById(`pass-${name}`) as HTMLButtonElement).onclick = () =>
      runPass(v, name);
  }
  await buildPicker(v);
  const sid = new URL(window.location.href).searchParams.get("session");
  if (sid) {
    try {
      await refresh(v, await api.getSession(sid));
    } catch {
      setStatus(v, `session ${sid} not found`, true);
    }
  } else {
    setStatus(v, "create or open a session to start");
  }
}

boot().catch((e) => {
  const status = document.getElementById("status");
  if (status) status.textContent = String(e);
});
