"""Learner components: reward, targets, dueling, exploration, replay, training."""

import numpy as np
import pytest
from scipy import stats

from loopgym.agent import (
    AgentConfig, DqnAgent, ReplayBuffer, ScriptedEnv, TabularMaxQ, ToyMdp,
    Transition, cumulative_target, double_dqn_selection, dueling_combine,
    epsilon_greedy, max_bellman_target, reward, train_env, value_iteration,
)
from loopgym.encoder import DEFAULT_ENCODER, action_embedding, stop_action
from loopgym.ir import IrError
from loopgym.nn import MLPQNet

TOY = ToyMdp(actions={
    0: [(1.0, None), (-0.5, 1)],  # stop now for 1.0, or pay -0.5 to reach S1
    1: [(1.2, None)],
})


class TestReward:
    def test_values(self):
        assert reward(0.5, 1.0) == 2.0
        assert reward(2.0, 2.0) == 1.0

    def test_nonpositive_runtime_rejected(self):
        with pytest.raises(IrError):
            reward(0.0, 1.0)

    def test_cost_reducing_move_rewards_more(self, fig5):
        from loopgym.cost import cost
        from loopgym.ir import SiteRef
        from loopgym.transforms import Move, apply_move

        c = cost(fig5).modeled_cost
        fused = apply_move(fig5, Move("join_scopes", SiteRef.parse("t@0")))
        reused = apply_move(fused, Move("reuse_dims", SiteRef.parse("t.0")))
        padded = apply_move(fig5, Move("pad_dim", SiteRef.parse("t@0"), ("4",)))
        good = reward(cost(reused).modeled_cost, c)
        bad = reward(cost(padded).modeled_cost, c)
        assert good > bad


class TestMaxBellman:
    def test_arithmetic(self):
        assert max_bellman_target(1.0, 0.9, 2.0) == 1.8
        assert max_bellman_target(0.7, 0.9, None) == 0.7
        assert max_bellman_target(5.0, 0.9, 1.0) == 5.0

    def test_target_dominates_components(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            r = float(rng.normal())
            nq = float(rng.normal())
            t = max_bellman_target(r, 0.9, nq)
            assert t >= r and t >= 0.9 * nq

    def test_toy_mdp_flip(self):
        q_max = value_iteration(TOY, gamma=0.9, objective="max")
        q_cum = value_iteration(TOY, gamma=0.9, objective="cumulative")
        assert abs(q_max[(0, 1)] - 1.08) < 1e-12
        assert abs(q_cum[(0, 1)] - 0.58) < 1e-12
        assert q_max[(0, 1)] > q_max[(0, 0)]   # peak objective takes the path
        assert q_cum[(0, 1)] < q_cum[(0, 0)]   # cumulative objective stops

    def test_tabular_agent_matches_fixed_point(self):
        oracle = value_iteration(TOY, gamma=0.9, objective="max")
        agent = TabularMaxQ(TOY, gamma=0.9, lr=1.0, seed=0)
        agent.train(episodes=300, eps=0.5)
        for k, v in oracle.items():
            assert abs(agent.q[k] - v) < 1e-6
        assert agent.greedy_action(0) == 1


class TestDoubleDqn:
    def test_selection_and_value(self):
        policy_q = np.array([0.2, 0.9, 0.1])
        target_q = np.array([0.5, 0.7, 2.0])
        i, v = double_dqn_selection(policy_q, target_q)
        assert i == 1 and v == 0.7
        assert max_bellman_target(0.1, 0.9, v) == pytest.approx(0.63)

    def test_identical_networks_reduce_to_single(self):
        q = np.array([0.3, 0.8, 0.5])
        i, v = double_dqn_selection(q, q)
        assert v == q.max()

    def test_argmax_invariant_under_positive_scaling(self):
        policy_q = np.array([0.2, 0.9, 0.1])
        target_q = np.array([1.0, 2.0, 3.0])
        i1, _ = double_dqn_selection(policy_q, target_q)
        i2, _ = double_dqn_selection(policy_q * 7.5, target_q)
        assert i1 == i2


class TestDueling:
    def test_combine(self):
        q = dueling_combine(1.0, np.array([0.0, 1.0, 2.0]))
        assert np.allclose(q, [0.0, 1.0, 2.0])

    def test_single_candidate_gives_v(self):
        assert np.allclose(dueling_combine(3.5, np.array([9.9])), [3.5])

    def test_mean_shift_invariance(self):
        a = np.array([0.3, -0.2, 1.1])
        assert np.allclose(dueling_combine(2.0, a), dueling_combine(2.0, a + 100.0))


class TestEpsilonGreedy:
    def test_zero_eps_is_argmax_with_low_tie(self):
        rng = np.random.default_rng(0)
        q = np.array([1.0, 3.0, 3.0])
        for _ in range(20):
            assert epsilon_greedy(q, 0.0, rng) == 1

    def test_uniform_at_eps_one(self):
        rng = np.random.default_rng(1)
        k, n = 5, 10_000
        counts = np.zeros(k)
        q = np.arange(k, dtype=float)
        for _ in range(n):
            counts[epsilon_greedy(q, 1.0, rng)] += 1
        chi2 = ((counts - n / k) ** 2 / (n / k)).sum()
        p = stats.chi2.sf(chi2, df=k - 1)
        assert p > 0.01

    def test_decay_monotone(self):
        agent = DqnAgent(4, AgentConfig(eps_start=1.0, eps_decay=0.9, eps_min=0.05))
        values = []
        for _ in range(60):
            values.append(agent.eps)
            agent.end_episode()
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert values[-1] >= 0.05


class TestReplay:
    def test_ring_capacity(self):
        buf = ReplayBuffer(capacity=4)
        for i in range(9):
            buf.push(_transition(i))
        assert len(buf) == 4

    def test_uniform_sampling(self):
        buf = ReplayBuffer(capacity=8)
        for i in range(8):
            buf.push(_transition(i))
        rng = np.random.default_rng(2)
        counts = np.zeros(8)
        n = 12_000
        for t in buf.sample(n, rng):
            counts[int(t.reward)] += 1
        chi2 = ((counts - n / 8) ** 2 / (n / 8)).sum()
        p = stats.chi2.sf(chi2, df=7)
        assert p > 0.01


def _transition(i: int) -> Transition:
    s = np.zeros(4)
    return Transition(s, np.zeros(8), float(i), s, np.zeros((0, 8)), np.zeros((1, 8)), 0, True)


class TestGradients:
    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(3)
        net = MLPQNet(state_dim=6, action_dim=12, width=16, adv_width=14, seed=5)
        s = rng.normal(size=6)
        actions = rng.normal(size=(4, 12))
        batch = [(s, actions, 2, 1.7)]
        _loss, grads = net.loss_and_grads(batch)
        eps = 1e-5
        for k, P in net.params.items():
            it = np.nditer(P, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = P[idx]
                P[idx] = old + eps
                lp, _ = net.loss_and_grads(batch)
                P[idx] = old - eps
                lm, _ = net.loss_and_grads(batch)
                P[idx] = old
                num = (lp - lm) / (2 * eps)
                ana = grads[k][idx]
                assert abs(num - ana) <= 1e-8 + 1e-4 * max(abs(num), abs(ana)), (k, idx)

    def test_target_sync_is_bitwise(self):
        agent = DqnAgent(4, AgentConfig(seed=1))
        agent.policy.params["t1_W"] += 0.25
        assert not agent.policy.params_equal(agent.target)
        agent.target.set_params(agent.policy.get_params())
        assert agent.policy.params_equal(agent.target)


class TestCheckpoint:
    def test_save_load_round_trip(self, tmp_path):
        net = MLPQNet(5, 10, width=8, adv_width=8, seed=2)
        path = str(tmp_path / "q.npz")
        net.save(path)
        loaded = MLPQNet.load(path)
        assert net.params_equal(loaded)


class TestScriptedTraining:
    def test_greedy_policy_matches_value_iteration(self):
        # stop now for 0.3, or pay -0.2 to reach a 2.0 terminal payoff
        table = {0: [(0.3, None), (-0.2, 1)], 1: [(2.0, None)]}
        oracle = value_iteration(ToyMdp(actions=table), gamma=0.9, objective="max")
        best_action = 1 + int(np.argmax([oracle[(0, a)] for a in range(2)]))  # +1: stop is 0

        env = ScriptedEnv(table)
        cfg = AgentConfig(gamma=0.9, eps_start=1.0, eps_decay=0.995, eps_min=0.3,
                          lr=1e-2, width=16, adv_width=16, batch_size=32,
                          replay_start=32, target_sync=20, seed=3)
        agent = DqnAgent(env.dim, cfg)
        train_env(env, agent, episodes=300)
        es = env.reset()
        q = agent.policy.q_values(es.state, es.candidates)
        assert int(np.argmax(q[1:])) + 1 == best_action

    def test_terminal_transitions_have_empty_candidates(self):
        env = ScriptedEnv({0: [(1.0, None)]})
        agent = DqnAgent(env.dim, AgentConfig(seed=4))
        train_env(env, agent, episodes=5)
        for t in agent.buffer._items:
            if t.terminal:
                assert len(t.next_candidates) == 0


class TestActionEmbeddings:
    def test_stop_concatenates_identical_halves(self):
        s = np.arange(6.0)
        a = stop_action(s)
        assert np.array_equal(a[:6], a[6:])

    def test_action_embedding_concatenates(self):
        b, a = np.zeros(3), np.ones(3)
        assert np.array_equal(action_embedding(b, a), [0, 0, 0, 1, 1, 1])

    def test_encoder_deterministic(self, softmax):
        assert np.array_equal(DEFAULT_ENCODER.encode(softmax), DEFAULT_ENCODER.encode(softmax))
        assert DEFAULT_ENCODER.encode(softmax).shape == (DEFAULT_ENCODER.dim,)
