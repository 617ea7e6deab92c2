"""Max-Q learning over the transformation game.

The learner maximizes the best achievable reward along an episode rather than
the cumulative sum: targets are max(r, gamma * best next Q). Action values are
estimated by a dueling network over (state, action-embedding) pairs, trained
from uniformly sampled replay with Double-DQN action selection (argmax under
the policy net, value under the target net).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cost import ModeledRuntime, RuntimeProvider
from .encoder import DEFAULT_ENCODER, action_embedding, stop_action
from .ir import IrError, Program
from .machine import DEFAULT_MACHINE, MachineConfig
from .nn import MLPQNet
from .transforms import History, Move, enumerate_applied


# --------------------------------------------------------------------------- #
# RL math

def reward(runtime: float, c: float) -> float:
    """r = c / T: the runtime of the kernel after a transformation, rescaled."""
    if runtime <= 0:
        raise IrError(f"runtime must be positive, got {runtime}", "nonpositive-runtime")
    return c / runtime


def max_bellman_target(r: float, gamma: float, next_q_max: float | None) -> float:
    """Peak-reward target: max(r, gamma * best next value); r when terminal."""
    if next_q_max is None:
        return r
    return max(r, gamma * next_q_max)


def cumulative_target(r: float, gamma: float, next_q_max: float | None) -> float:
    """Standard Q-learning target, kept for comparison experiments."""
    if next_q_max is None:
        return r
    return r + gamma * next_q_max


def double_dqn_selection(policy_q: np.ndarray, target_q: np.ndarray) -> tuple[int, float]:
    """Pick the argmax under the policy net, value it under the target net."""
    i = int(np.argmax(policy_q))
    return i, float(target_q[i])


def dueling_combine(v: float, advantages: np.ndarray) -> np.ndarray:
    a = np.asarray(advantages, dtype=np.float64)
    return v + a - a.mean()


def epsilon_greedy(q: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    if len(q) == 0:
        raise IrError("empty action set", "empty-actions")
    if rng.random() < eps:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))  # ties resolve to the lowest index


# --------------------------------------------------------------------------- #
# Replay

@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    next_candidates: np.ndarray      # (k, 2d) embeddings enumerable at s', incl. stop
    cur_candidates: np.ndarray       # (n, 2d) embeddings the action was chosen from
    taken: int                       # index of `action` within cur_candidates
    terminal: bool


class ReplayBuffer:
    """Ring buffer with uniform, unprioritized sampling."""

    def __init__(self, capacity: int = 10_000):
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def push(self, t: Transition):
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._next] = t
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.integers(len(self._items), size=batch)
        return [self._items[i] for i in idx]


# --------------------------------------------------------------------------- #
# Environments

@dataclass
class EnvState:
    state: np.ndarray
    candidates: np.ndarray           # (n, 2d); row 0 is always the stop action
    labels: list[str]                # move lines; labels[0] == "stop"


class KernelEnv:
    """The transformation game on one kernel, runtime signal from a provider.

    Actions are enumerate_moves plus stop, so every reachable program is
    semantics-preserving by construction. The reward scale c is the root
    runtime, making the root's reward exactly 1.
    """

    def __init__(
        self,
        program: Program,
        machine: MachineConfig = DEFAULT_MACHINE,
        provider: RuntimeProvider | None = None,
        encoder=DEFAULT_ENCODER,
        max_moves: int = 30,
    ):
        self.root = program
        self.machine = machine
        self.provider = provider or ModeledRuntime(machine)
        self.encoder = encoder
        self.max_moves = max_moves
        self.c = self.provider.runtime(program)
        self.best_cost = self.c
        self.best_history = History(program)
        self.reset()

    def _snapshot(self) -> EnvState:
        state = self.encoder.encode(self.program)
        pairs = (
            enumerate_applied(self.program, self.machine)
            if len(self.history.moves) < self.max_moves else []
        )
        embeddings = [stop_action(state)]
        labels = ["stop"]
        kept: list[tuple[Move, Program]] = []
        for move, after in pairs:
            if after is None:
                continue
            embeddings.append(action_embedding(state, self.encoder.encode(after)))
            labels.append(move.line())
            kept.append((move, after))
        self._moves = kept
        return EnvState(state, np.asarray(embeddings), labels)

    def reset(self) -> EnvState:
        self.program = self.root
        self.history = History(self.root)
        self.current = self._snapshot()
        return self.current

    def step(self, index: int) -> tuple[float, EnvState | None]:
        """Apply candidate `index`; index 0 stops. Returns (reward, next or None)."""
        if index == 0:
            r = reward(self.provider.runtime(self.program), self.c)
            return r, None
        move, after = self._moves[index - 1]
        self.program = after
        self.history = self.history.extended(move)
        t = self.provider.runtime(self.program)
        if t < self.best_cost:
            self.best_cost = t
            self.best_history = self.history
        self.current = self._snapshot()
        return reward(t, self.c), self.current


class ScriptedEnv:
    """Tiny fixed-reward environment for learner tests; no programs involved.

    Transitions: table[state] = list of (reward, next_state or None). Action
    embeddings are one-hot-ish deterministic vectors.
    """

    def __init__(self, table: dict[int, list[tuple[float, int | None]]], dim: int = 8):
        self.table = table
        self.dim = dim
        self.state_id = 0

    def _embed_state(self, sid: int) -> np.ndarray:
        v = np.zeros(self.dim)
        v[sid % self.dim] = 1.0
        return v

    def _snapshot(self, sid: int) -> EnvState:
        s = self._embed_state(sid)
        rows = [np.concatenate([s, s])]
        labels = ["stop"]
        for i, (_r, nxt) in enumerate(self.table[sid]):
            tgt = self._embed_state(nxt if nxt is not None else self.dim - 1)
            rows.append(np.concatenate([s, tgt]))
            labels.append(f"a{i}")
        return EnvState(s, np.asarray(rows), labels)

    def reset(self) -> EnvState:
        self.state_id = 0
        return self._snapshot(0)

    def step(self, index: int):
        if index == 0:
            return 0.0, None
        r, nxt = self.table[self.state_id][index - 1]
        if nxt is None:
            return r, None
        self.state_id = nxt
        return r, self._snapshot(nxt)


# --------------------------------------------------------------------------- #
# Tabular Max-Q (for the toy MDP and as a value-iteration oracle)

@dataclass(frozen=True)
class ToyMdp:
    """actions[state] = list of (reward, next_state or None for terminal)."""

    actions: dict[int, list[tuple[float, int | None]]]


def value_iteration(mdp: ToyMdp, gamma: float, objective: str = "max",
                    tol: float = 1e-12, iters: int = 10_000) -> dict[tuple[int, int], float]:
    """Fixed point of the chosen Bellman operator on a deterministic MDP."""
    q = {(s, a): 0.0 for s, acts in mdp.actions.items() for a in range(len(acts))}
    combine = max_bellman_target if objective == "max" else cumulative_target
    for _ in range(iters):
        delta = 0.0
        for (s, a), old in q.items():
            r, nxt = mdp.actions[s][a]
            if nxt is None or not mdp.actions.get(nxt):
                new = combine(r, gamma, None)
            else:
                new = combine(r, gamma, max(q[(nxt, b)] for b in range(len(mdp.actions[nxt]))))
            q[(s, a)] = new
            delta = max(delta, abs(new - old))
        if delta < tol:
            break
    return q


class TabularMaxQ:
    """Table-backed Max-Q learner over a ToyMdp."""

    def __init__(self, mdp: ToyMdp, gamma: float, lr: float = 1.0, seed: int = 0):
        self.mdp = mdp
        self.gamma = gamma
        self.lr = lr
        self.rng = np.random.default_rng(seed)
        self.q = {(s, a): 0.0 for s, acts in mdp.actions.items() for a in range(len(acts))}

    def best(self, s: int) -> float:
        return max(self.q[(s, a)] for a in range(len(self.mdp.actions[s])))

    def episode(self, eps: float = 0.3, start: int = 0, cap: int = 50):
        s = start
        for _ in range(cap):
            acts = self.mdp.actions.get(s)
            if not acts:
                return
            qs = np.array([self.q[(s, a)] for a in range(len(acts))])
            a = epsilon_greedy(qs, eps, self.rng)
            r, nxt = acts[a]
            if nxt is None or not self.mdp.actions.get(nxt):
                target = max_bellman_target(r, self.gamma, None)
            else:
                target = max_bellman_target(r, self.gamma, self.best(nxt))
            self.q[(s, a)] += self.lr * (target - self.q[(s, a)])
            if nxt is None:
                return
            s = nxt

    def train(self, episodes: int = 200, eps: float = 0.5):
        for _ in range(episodes):
            self.episode(eps=eps)

    def greedy_action(self, s: int) -> int:
        return int(np.argmax([self.q[(s, a)] for a in range(len(self.mdp.actions[s]))]))


# --------------------------------------------------------------------------- #
# Deep agent

@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_min: float = 0.05
    eps_decay: float = 0.995           # per episode
    lr: float = 1e-3
    width: int = 128
    adv_width: int = 128
    buffer_capacity: int = 10_000
    batch_size: int = 32
    target_sync: int = 100             # updates between target-net syncs
    replay_start: int = 64
    seed: int = 0

    @staticmethod
    def from_dict(raw: dict) -> "AgentConfig":
        return AgentConfig(**raw)


class DqnAgent:
    def __init__(self, state_dim: int, config: AgentConfig = AgentConfig()):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.policy = MLPQNet(state_dim, 2 * state_dim, config.width,
                              config.adv_width, config.lr, seed=config.seed)
        self.target = self.policy.clone()
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.eps = config.eps_start
        self.updates = 0

    def act(self, env_state: EnvState) -> int:
        q = self.policy.q_values(env_state.state, env_state.candidates)
        return epsilon_greedy(q, self.eps, self.rng)

    def observe(self, t: Transition):
        self.buffer.push(t)

    def learn(self):
        if len(self.buffer) < max(self.config.replay_start, self.config.batch_size):
            return None
        batch = self.buffer.sample(self.config.batch_size, self.rng)
        items = []
        for t in batch:
            if t.terminal or len(t.next_candidates) == 0:
                target = max_bellman_target(t.reward, self.config.gamma, None)
            else:
                policy_q = self.policy.q_values(t.next_state, t.next_candidates)
                target_q = self.target.q_values(t.next_state, t.next_candidates)
                _i, value = double_dqn_selection(policy_q, target_q)
                target = max_bellman_target(t.reward, self.config.gamma, value)
            items.append((t.state, t.cur_candidates, t.taken, target))
        loss = self.policy.train_step(items)
        self.updates += 1
        if self.updates % self.config.target_sync == 0:
            self.target.set_params(self.policy.get_params())
        return loss

    def end_episode(self):
        self.eps = max(self.config.eps_min, self.eps * self.config.eps_decay)


@dataclass
class TrainResult:
    best_history: History
    best_cost: float
    curve: list[float] = field(default_factory=list)  # best cost after each episode
    episodes: int = 0
    agent: "DqnAgent | None" = None


def train_env(env, agent: DqnAgent, episodes: int) -> list[float]:
    """Generic training loop; returns per-episode total rewards."""
    totals = []
    for _ in range(episodes):
        es = env.reset()
        total = 0.0
        while True:
            idx = agent.act(es)
            try:
                r, nxt = env.step(idx)
            except IrError:
                break  # provider failure aborts the episode, not training
            total += r
            terminal = nxt is None
            agent.observe(Transition(
                state=es.state,
                action=es.candidates[idx],
                reward=r,
                next_state=nxt.state if nxt else es.state,
                next_candidates=nxt.candidates if nxt else np.zeros((0, es.candidates.shape[1])),
                cur_candidates=es.candidates,
                taken=idx,
                terminal=terminal,
            ))
            agent.learn()
            if terminal:
                break
            es = nxt
        agent.end_episode()
        totals.append(total)
    return totals


def train_kernel(
    program: Program,
    episodes: int = 200,
    config: AgentConfig = AgentConfig(),
    machine: MachineConfig = DEFAULT_MACHINE,
    provider: RuntimeProvider | None = None,
    encoder=DEFAULT_ENCODER,
    max_moves: int = 30,
) -> TrainResult:
    env = KernelEnv(program, machine, provider, encoder, max_moves)
    agent = DqnAgent(encoder.dim, config)
    result = TrainResult(best_history=env.best_history, best_cost=env.best_cost, agent=agent)
    for _ in range(episodes):
        train_env(env, agent, 1)
        result.curve.append(env.best_cost)
        result.episodes += 1
    result.best_history = env.best_history
    result.best_cost = env.best_cost
    return result
