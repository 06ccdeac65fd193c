import math

import numpy as np
import pytest

from causalfeat.agents import (Agent, QNetwork, ReplayBuffer, StateContext,
                               dataset_block, default_buffer_capacity,
                               epsilon_schedule, select_action, state_operator,
                               state_primary, state_secondary, td_loss_and_grads,
                               train_step)


class TestEpsilonSchedule:
    def test_start(self):
        assert epsilon_schedule(0) == 0.95

    def test_end(self):
        assert epsilon_schedule(1000) == 0.1
        assert epsilon_schedule(5000) == 0.1

    def test_midpoint_linear(self):
        assert epsilon_schedule(500) == pytest.approx(0.525)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            epsilon_schedule(-1)


def _fixed_q_net(q_values, in_dim=4):
    """Zero all weights; the output bias becomes the constant Q vector."""
    net = QNetwork(in_dim, len(q_values), hidden=(8,), dropout=0.0, seed=0)
    for k in net.params:
        if k.startswith("W"):
            net.params[k] = np.zeros_like(net.params[k])
    last = f"b{net.n_layers - 1}"
    net.params[last] = np.array(q_values, dtype=float)
    return net


class TestSelectAction:
    def test_greedy_argmax(self):
        net = _fixed_q_net([1.0, 3.0, 2.0])
        rng = np.random.default_rng(0)
        assert select_action(net, np.zeros(4), 0.0, rng) == 1

    def test_tie_breaks_lowest_id(self):
        net = _fixed_q_net([2.0, 2.0, 1.0])
        assert select_action(net, np.zeros(4), 0.0, np.random.default_rng(0)) == 0

    def test_uniform_at_full_exploration(self):
        net = _fixed_q_net([9.0, 0.0, 0.0])
        rng = np.random.default_rng(1)
        counts = np.zeros(3)
        for _ in range(10_000):
            counts[select_action(net, np.zeros(4), 1.0, rng)] += 1
        freqs = counts / counts.sum()
        assert np.all(np.abs(freqs - 1 / 3) < 0.03)

    def test_eps_out_of_range(self):
        with pytest.raises(ValueError):
            select_action(_fixed_q_net([0.0, 1.0]), np.zeros(4), 1.5,
                          np.random.default_rng(0))


class TestReplayBuffer:
    def test_fifo_eviction_order(self):
        buf = ReplayBuffer(2, capacity=3)
        for i in range(5):
            buf.add(np.full(2, i), i, float(i), np.full(2, i + 1), False)
        assert len(buf) == 3
        stored = sorted(buf.a.tolist())
        assert stored == [2, 3, 4]  # the two oldest were evicted

    def test_never_exceeds_capacity(self):
        buf = ReplayBuffer(1, capacity=4)
        for i in range(100):
            buf.add([0.0], 0, 0.0, [0.0], False)
            assert len(buf) <= 4

    def test_capacity_rule(self):
        assert default_buffer_capacity(20) == 2000
        assert default_buffer_capacity(500) == 10_000
        assert default_buffer_capacity(500, ceiling=5000) == 5000


class TestGradientCheck:
    def test_backprop_matches_finite_differences(self):
        # miniature 4 -> 8 -> 2 network, same code path, dropout disabled
        net = QNetwork(4, 2, hidden=(8,), dropout=0.0, seed=3)
        rng = np.random.default_rng(4)
        states = rng.normal(size=(12, 4))
        actions = rng.integers(0, 2, size=12)
        targets = rng.normal(size=12)

        _, grads = td_loss_and_grads(net, states, actions, targets, training=True)

        eps = 1e-6
        for name, param in net.params.items():
            fd = np.zeros_like(param)
            it = np.nditer(param, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = param[idx]
                param[idx] = orig + eps
                lp, _ = td_loss_and_grads(net, states, actions, targets, training=True)
                param[idx] = orig - eps
                lm, _ = td_loss_and_grads(net, states, actions, targets, training=True)
                param[idx] = orig
                fd[idx] = (lp - lm) / (2 * eps)
                it.iternext()
            num = np.linalg.norm(fd - grads[name])
            den = max(np.linalg.norm(grads[name]), np.linalg.norm(fd), 1e-8)
            assert num / den < 1e-4, f"gradient mismatch in {name}: {num / den:.2e}"


class TestTrainStep:
    def _batch(self, net, n=8, seed=0):
        rng = np.random.default_rng(seed)
        s = rng.normal(size=(n, net.in_dim))
        a = rng.integers(0, net.out_dim, size=n)
        r = rng.normal(size=n)
        s2 = rng.normal(size=(n, net.in_dim))
        done = np.ones(n)
        return s, a, r, s2, done

    def test_zero_residual_zero_loss(self):
        net = _fixed_q_net([1.5, 1.5, 1.5])
        target = _fixed_q_net([0.0, 0.0, 0.0])
        rng = np.random.default_rng(1)
        s = rng.normal(size=(6, 4))
        batch = (s, rng.integers(0, 3, 6), np.full(6, 1.5), s, np.ones(6))
        loss = train_step(net, target, batch, gamma=0.9, lr=1e-3)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_single_transition_huber_closed_form(self):
        net = _fixed_q_net([2.0, 0.0])
        target = _fixed_q_net([0.0, 0.0])
        s = np.zeros((1, 4))
        # terminal: target = r = 0.5; Q(s, 0) = 2.0; err = 1.5 > delta
        batch = (s, np.array([0]), np.array([0.5]), s, np.array([1.0]))
        loss = train_step(net, target, batch, gamma=0.9, lr=0.0)
        assert loss == pytest.approx(1.0 * (1.5 - 0.5))

    def test_small_error_quadratic_branch(self):
        net = _fixed_q_net([0.3, 0.0])
        target = _fixed_q_net([0.0, 0.0])
        s = np.zeros((1, 4))
        batch = (s, np.array([0]), np.array([0.0]), s, np.array([1.0]))
        loss = train_step(net, target, batch, gamma=0.9, lr=0.0)
        assert loss == pytest.approx(0.5 * 0.3 ** 2)

    def test_gamma_zero_targets_are_rewards(self):
        net = _fixed_q_net([1.0, 1.0])
        target = _fixed_q_net([5.0, 7.0])
        s = np.zeros((2, 4))
        batch = (s, np.array([0, 1]), np.array([1.0, 1.0]), s, np.zeros(2))
        loss = train_step(net, target, batch, gamma=0.0, lr=0.0)
        assert loss == pytest.approx(0.0, abs=1e-12)  # Q == r exactly


class TestDeterminism:
    def test_eval_forward_bit_deterministic(self):
        net = QNetwork(6, 3, hidden=(16, 8), seed=5)
        x = np.random.default_rng(6).normal(size=(4, 6))
        q1, _ = net.forward(x, training=False)
        q2, _ = net.forward(x, training=False)
        assert np.array_equal(q1, q2)

    def test_same_seed_identical_networks(self):
        a = QNetwork(6, 3, hidden=(16, 8), seed=7)
        b = QNetwork(6, 3, hidden=(16, 8), seed=7)
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])

    def test_agent_learn_deterministic(self):
        def run_agent():
            ag = Agent(4, 2, capacity=64, seed=11, hidden=(8,), dropout=0.1,
                       batch_size=8)
            rng = np.random.default_rng(0)
            losses = []
            for i in range(30):
                ag.observe(rng.normal(size=4), i % 2, rng.normal(),
                           rng.normal(size=4), i % 5 == 0)
                loss = ag.learn()
                if loss is not None:
                    losses.append(loss)
            return losses

        assert run_agent() == run_agent()


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = QNetwork(5, 3, hidden=(12, 6), seed=9)
        batch = np.random.default_rng(1).normal(size=(7, 5))
        _, grads = td_loss_and_grads(net, batch, np.zeros(7, dtype=int),
                                     np.ones(7), training=True)
        net.adam_step(grads, 1e-3)
        path = str(tmp_path / "agent.bin")
        net.save(path)
        other = QNetwork(5, 3, hidden=(12, 6), seed=1)
        other.load(path)
        q1, _ = net.forward(batch, training=False)
        q2, _ = other.forward(batch, training=False)
        assert np.array_equal(q1, q2)
        assert other._adam_t == net._adam_t

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="checkpoint"):
            QNetwork(4, 2, hidden=(8,), seed=0).load(str(path))


def _ctx(**overrides):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(1000, 20))
    y = rng.normal(size=1000)
    blk = dataset_block(X, y, "regression", 1, 0.0)
    ctx = StateContext(**blk, episode_cap=30, step_cap=15, n_original=20)
    for k, v in overrides.items():
        setattr(ctx, k, v)
    return ctx


class TestStates:
    def test_primary_length_and_cold_start(self):
        vec = state_primary(_ctx())
        assert vec.shape == (24,)
        assert vec[0] == pytest.approx(math.log(1000))     # ln n = 6.9078
        assert vec[1] == pytest.approx(math.log(20))       # ln d = 2.9957
        assert vec[10] == 0.0 and vec[11] == 0.0 and vec[12] == 0.0  # deltas
        assert vec[13] == 0.0                              # progress

    def test_operator_state_suffix(self):
        base = state_primary(_ctx())
        vec = state_operator(base, 0)
        assert vec.shape == (27,)
        assert vec[24:].tolist() == [1.0, 0.0, 0.0]
        with pytest.raises(ValueError):
            state_operator(base, 3)

    def test_secondary_state_dimensions(self):
        base = state_operator(state_primary(_ctx()), 1)
        vec = state_secondary(base, 4)
        assert vec.shape == (43,)           # 27 + 15 + 1
        assert vec[27 + 4] == 1.0
        assert vec[-1] == 0.0               # unary op -> arity 0
        vec_b = state_secondary(base, 12)
        assert vec_b[-1] == 1.0             # binary op -> arity 1

    def test_best_score_occupies_rolling_slot_until_history(self):
        ctx = _ctx(best_score=0.7)
        vec = state_primary(ctx)
        assert vec[22] == pytest.approx(0.7)
        ctx.val_history = [0.5, 0.6, 0.7]
        vec2 = state_primary(ctx)
        assert vec2[22] == pytest.approx(np.var([0.5, 0.6, 0.7]))

    def test_all_entries_finite(self):
        ctx = _ctx(mean_variance=1e12, n_generated=500, n_selected=40)
        assert np.isfinite(state_primary(ctx)).all()
