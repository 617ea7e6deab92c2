// Typed client for the session service. The UI never mutates programs itself;
// every action maps 1:1 to an endpoint and state is rebuilt from responses.

export interface CostRow {
  scalar_ops: number;
  memory_traffic: number;
  loop_overhead: number;
  modeled_cost: number;
}

export interface TreeNode {
  kind: "scope" | "op";
  extent?: string;
  suffix?: string | null;
  text?: string;
  children?: TreeNode[];
}

export interface ApplicableMove {
  transform: string;
  site: string;
  params: string[];
  move: string;
}

export interface SessionState {
  id: string;
  kernel: string;
  preset: string;
  moves_applied: string[];
  program_text: string;
  tree: TreeNode[];
  costs: CostRow[];
  applicable_moves?: ApplicableMove[];
  diff?: string;
}

export interface SessionSummary {
  id: string;
  kernel: string;
  preset: string;
  moves: number;
  updated: number;
}

export interface KernelInfo {
  name: string;
  presets: string[];
}

export interface TraceRow {
  evaluation: number;
  cost: number;
  best: number;
  moves: number;
}

export interface SearchPoll {
  done: boolean;
  error: string | null;
  rows: TraceRow[];
  best_moves: string[];
}

export class InapplicableMoveError extends Error {
  alternatives: ApplicableMove[];

  constructor(message: string, alternatives: ApplicableMove[]) {
    super(message);
    this.alternatives = alternatives;
  }
}

export class Api {
  constructor(private base: string = "") {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.base + path, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (res.status === 409) {
      const body = await res.json();
      throw new InapplicableMoveError(
        body.detail?.error ?? "move not applicable",
        body.detail?.alternatives ?? [],
      );
    }
    if (!res.ok) {
      throw new Error(`${res.status} ${res.statusText}: ${await res.text()}`);
    }
    return res.json() as Promise<T>;
  }

  kernels(): Promise<KernelInfo[]> {
    return this.json("/api/kernels");
  }

  sessions(): Promise<SessionSummary[]> {
    return this.json("/api/sessions");
  }

  createSession(kernel: string, preset = "desk"): Promise<SessionState> {
    return this.json("/api/sessions", {
      method: "POST",
      body: JSON.stringify({ kernel, preset }),
    });
  }

  getSession(id: string): Promise<SessionState> {
    return this.json(`/api/sessions/${id}`);
  }

  applyMove(id: string, move: string): Promise<SessionState> {
    return this.json(`/api/sessions/${id}/moves`, {
      method: "POST",
      body: JSON.stringify({ move }),
    });
  }

  undo(id: string, count = 1): Promise<SessionState> {
    return this.json(`/api/sessions/${id}/undo`, {
      method: "POST",
      body: JSON.stringify({ count }),
    });
  }

  runPass(id: string, name: string): Promise<SessionState> {
    return this.json(`/api/sessions/${id}/pass`, {
      method: "POST",
      body: JSON.stringify({ name }),
    });
  }

  startSearch(
    id: string,
    opts: { method: string; space: string; budget: number; seed: number },
  ): Promise<{ job: string }> {
    return this.json(`/api/sessions/${id}/search`, {
      method: "POST",
      body: JSON.stringify(opts),
    });
  }

  pollSearch(id: string, job: string): Promise<SearchPoll> {
    return this.json(`/api/sessions/${id}/search/${job}`);
  }

  async exportSession(id: string): Promise<string> {
    const res = await fetch(`${this.base}/api/sessions/${id}/export`);
    if (!res.ok) throw new Error(`${res.status} ${res.statusText}`);
    return res.text();
  }

  importSession(kernel: string, preset: string, log: string): Promise<SessionState> {
    return this.json("/api/sessions/import", {
      method: "POST",
      body: JSON.stringify({ kernel, preset, log }),
    });
  }

  async code(id: string): Promise<string> {
    const res = await fetch(`${this.base}/api/sessions/${id}/code`);
    if (!res.ok) return `/* ${res.status}: ${await res.text()} */`;
    const body = (await res.json()) as { source: string };
    return body.source;
  }
}
