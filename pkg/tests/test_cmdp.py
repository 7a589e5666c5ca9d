import numpy as np
import pytest

from covertmark.capacity import corollary_rate
from covertmark.cmdp import (
    Action,
    CmdpConfig,
    CmdpInstance,
    TabularPolicy,
    cost,
    discounted_sums,
    finite_difference_gradient,
    five_point_gradient,
    primal_dual_train,
    reward,
    rollout,
    transition_z,
)
from covertmark.prob import Pmf
from covertmark.sources import PairSource, parse_source


def pair_partition_action(src: PairSource):
    """Per-token balanced-partition action lifted to block states."""
    lo = set(range(src.v // 2))
    u_rows, w_rows = {}, {}
    import itertools

    for sid in itertools.product(range(len(src.pairs)), repeat=src.l):
        per_pos = [src.pairs[i] for i in sid]
        u_ids = list(itertools.product((0, 1), repeat=src.l))
        u_probs, w_per_u = [], {}
        for u in u_ids:
            p = 1.0
            members = []
            for t, (pair, ub) in enumerate(zip(per_pos, u)):
                cls = [0 if tok in lo else 1 for tok in pair]
                sel = [tok for tok, c in zip(pair, cls) if c == ub]
                p *= len(sel) / 2.0
                members.append(sel)
            u_probs.append(p)
            if p > 0:
                cands = list(itertools.product(*members))
                w_per_u[u] = Pmf(cands, np.full(len(cands), 1.0 / len(cands)))
        u_rows[sid] = Pmf(u_ids, u_probs)
        for u, law in w_per_u.items():
            w_rows[(sid, u)] = law
    return Action(u_rows, w_rows)


def base_action(instance):
    """Degenerate auxiliary, base emission: zero reward, zero cost."""
    u_rows, w_rows = {}, {}
    for block in instance.states_per_block:
        for sid in block:
            u_rows[sid] = Pmf((0,), [1.0])
            w_rows[(sid, 0)] = instance.base_laws[sid]
    return Action(u_rows, w_rows)


def single_state_instance(weights=(0.5, 0.5)):
    doc = {
        "version": 1,
        "V": 2,
        "L": 1,
        "B": 1,
        "Q": 2,
        "states": [
            {
                "id": 0,
                "candidates": [
                    {"tokens": [0], "weight": weights[0], "next_state": None},
                    {"tokens": [1], "weight": weights[1], "next_state": None},
                ],
            }
        ],
        "initial": [{"state": 0, "prob": 1.0}],
    }
    return CmdpInstance.from_source(parse_source(doc))


class TestReward:
    def test_degenerate_u_is_zero(self):
        inst = single_state_instance()
        a = base_action(inst)
        assert reward(inst.z1, a) == pytest.approx(0.0, abs=1e-12)

    def test_partition_action_v4_l1(self):
        src = PairSource(4, 1)
        inst = CmdpInstance.from_source(src)
        a = pair_partition_action(src)
        assert reward(inst.z1, a) == pytest.approx(2 / 3, abs=1e-9)

    def test_partition_action_v4_l2_additive(self):
        src = PairSource(4, 2)
        inst = CmdpInstance.from_source(src)
        a = pair_partition_action(src)
        assert reward(inst.z1, a) == pytest.approx(4 / 3, abs=1e-9)

    def test_support_mismatch(self):
        src = PairSource(4, 1)
        inst = CmdpInstance.from_source(src)
        a = pair_partition_action(src)
        bad = Action({k: v for k, v in a.u_rows.items() if k != (0,)}, a.w_rows)
        with pytest.raises(ValueError):
            reward(inst.z1, bad)


class TestCost:
    def test_marginal_preserving_is_zero(self):
        src = PairSource(4, 1)
        inst = CmdpInstance.from_source(src)
        a = pair_partition_action(src)
        assert cost(inst.z1, a, inst.base_laws) == pytest.approx(0.0, abs=1e-12)

    def test_force_one_candidate(self):
        inst = single_state_instance()
        u_rows = {0: Pmf((0,), [1.0])}
        w_rows = {(0, 0): Pmf.point_mass((0,), ids=((0,), (1,)))}
        a = Action(u_rows, w_rows)
        assert cost(inst.z1, a, inst.base_laws) == pytest.approx(0.5, abs=1e-12)

    def test_base_action_zero(self):
        inst = single_state_instance(weights=(0.7, 0.3))
        assert cost(inst.z1, base_action(inst), inst.base_laws) == 0.0


class TestTransitionZ:
    def chain_instance(self):
        doc = {
            "version": 1,
            "V": 2,
            "L": 1,
            "B": 2,
            "Q": 2,
            "states": [
                {
                    "id": "root",
                    "candidates": [
                        {"tokens": [0], "weight": 0.5, "next_state": "a"},
                        {"tokens": [1], "weight": 0.5, "next_state": "b"},
                    ],
                },
                {
                    "id": "a",
                    "candidates": [{"tokens": [0], "weight": 1.0, "next_state": None}],
                },
                {
                    "id": "b",
                    "candidates": [{"tokens": [1], "weight": 1.0, "next_state": None}],
                },
            ],
            "initial": [{"state": "root", "prob": 1.0}],
        }
        return CmdpInstance.from_source(parse_source(doc))

    def test_deterministic_action_point_mass(self):
        inst = self.chain_instance()
        u_rows = {"root": Pmf((0,), [1.0])}
        w_rows = {("root", 0): Pmf.point_mass((0,), ids=((0,), (1,)))}
        z2 = transition_z(inst.z1, Action(u_rows, w_rows), inst)
        assert z2.prob("a") == 1.0

    def test_base_action_matches_pushforward(self):
        inst = self.chain_instance()
        z2 = transition_z(inst.z1, base_action(inst), inst)
        # direct pushforward of the base block law
        assert z2.prob("a") == pytest.approx(0.5, abs=1e-12)
        assert z2.prob("b") == pytest.approx(0.5, abs=1e-12)

    def test_mixture_linearity(self):
        inst = self.chain_instance()
        a = base_action(inst)
        za = Pmf(("root",), [1.0])
        z_mix = transition_z(za, a, inst)
        # mixing degenerate starting points mixes the update
        u_rows = dict(a.u_rows)
        w_rows = dict(a.w_rows)
        w_rows[("root", 0)] = Pmf(((0,), (1,)), [1.0, 0.0])
        det = Action(u_rows, w_rows)
        z_det = transition_z(za, det, inst)
        assert z_det.prob("a") == 1.0
        assert z_mix.prob("a") == pytest.approx(0.5, abs=1e-12)

    def test_mass_preserved(self):
        src = PairSource(4, 1, b=3)
        inst = CmdpInstance.from_source(src)
        a = pair_partition_action(src)
        z = inst.z1
        for _ in range(2):
            z = transition_z(z, a, inst)
            assert abs(sum(z.probs) - 1.0) <= 1e-9


class TestRollout:
    def test_b1_single_step(self):
        src = PairSource(4, 1)
        inst = CmdpInstance.from_source(src)
        policy = TabularPolicy(inst, 2)
        cfg = CmdpConfig(blocks=1)
        steps = rollout(policy, cfg)
        assert len(steps) == 1
        assert steps[0].z.ids == inst.z1.ids

    def test_base_policy_zero_cost(self):
        src = PairSource(4, 1, b=2)
        inst = CmdpInstance.from_source(src)
        policy = TabularPolicy(inst, 2)  # zero logits: uniform W rows = base
        steps = rollout(policy, CmdpConfig(blocks=2))
        assert all(st.cost == pytest.approx(0.0, abs=1e-12) for st in steps)

    def test_partition_policy_discounted_total(self):
        src = PairSource(4, 1, b=2)
        inst = CmdpInstance.from_source(src)
        a = pair_partition_action(src)
        gamma = 0.9
        pairs = []
        z = inst.z1
        for b in range(2):
            pairs.append((reward(z, a), cost(z, a, inst.base_laws)))
            z = transition_z(z, a, inst)
        r, c = discounted_sums(pairs, gamma)
        assert r == pytest.approx(gamma * (2 / 3) + gamma ** 2 * (2 / 3), abs=1e-9)
        assert c == pytest.approx(0.0, abs=1e-12)


class TestFastPathAgreement:
    def test_objective_matches_ops(self):
        src = PairSource(4, 1, b=2)
        inst = CmdpInstance.from_source(src)
        policy = TabularPolicy(inst, 2)
        rng = np.random.default_rng(21)
        cfg = CmdpConfig(blocks=2)
        for _ in range(5):
            phi = rng.normal(size=policy.dim)
            fast = policy.evaluator.trajectory(phi)
            slow = [(st.reward, st.cost) for st in rollout(policy, cfg, phi)]
            assert np.allclose(fast, slow, atol=1e-9)


class TestGradients:
    def test_central_matches_five_point(self):
        src = PairSource(4, 1)
        inst = CmdpInstance.from_source(src)
        policy = TabularPolicy(inst, 2)
        ev = policy.evaluator
        rng = np.random.default_rng(3)

        def f(phi):
            (r, c), = ev.trajectory(phi)
            return r - 0.7 * c

        for _ in range(10):
            phi = rng.normal(size=policy.dim)
            g2 = finite_difference_gradient(f, phi.copy())
            g5 = five_point_gradient(f, phi.copy())
            rel = np.linalg.norm(g2 - g5) / max(np.linalg.norm(g5), 1e-12)
            assert rel <= 1e-4


class TestTraining:
    def test_reaches_capacity_with_loose_budget(self):
        src = PairSource(4, 1)
        cfg = CmdpConfig(epsilon=1.0, blocks=1, iters=500)
        res = primal_dual_train(src, cfg, seed=0)
        final_reward = res.log[-1][1]
        assert final_reward >= 2 / 3 - 1e-3
        assert final_reward >= corollary_rate(4) - 1e-3
        # loose budget: the dual variable never activates
        assert all(row[3] == 0.0 for row in res.log)

    def test_beta_nonnegative_every_iteration(self):
        src = PairSource(4, 1)
        cfg = CmdpConfig(epsilon=0.0, blocks=1, iters=50)
        res = primal_dual_train(src, cfg, seed=1)
        assert all(row[3] >= 0.0 for row in res.log)

    def test_binding_constraint_suppresses_cost(self):
        # declared support {0,1} but the base emits token 0 only: any covert
        # rate requires distortion, so with a zero budget training must drive
        # the discounted cost to zero
        doc = {
            "version": 1,
            "V": 2,
            "L": 1,
            "B": 1,
            "Q": 2,
            "states": [
                {
                    "id": 0,
                    "candidates": [
                        {"tokens": [0], "weight": 1.0, "next_state": None},
                        {"tokens": [1], "weight": 0.0, "next_state": None},
                    ],
                }
            ],
            "initial": [{"state": 0, "prob": 1.0}],
        }
        src = parse_source(doc)
        cfg = CmdpConfig(epsilon=0.0, blocks=1, iters=500, eta_beta=10.0)
        res = primal_dual_train(src, cfg, seed=2)
        final_cost = res.log[-1][2]
        assert final_cost <= 1e-3

    def test_frozen_primal(self):
        src = PairSource(4, 1)
        cfg = CmdpConfig(epsilon=0.1, blocks=1, iters=5, eta_phi=0.0, eta_beta=0.5)
        res = primal_dual_train(src, cfg, seed=3)
        rewards = [row[1] for row in res.log]
        costs = [row[2] for row in res.log]
        assert len(set(rewards)) == 1
        assert len(set(costs)) == 1
        gap = costs[0] - cfg.epsilon
        expected_beta = 0.0
        for row in res.log:
            expected_beta = max(0.0, expected_beta + cfg.eta_beta * gap)
            assert row[3] == pytest.approx(expected_beta, abs=1e-12)

    def test_block_laws_returned(self):
        src = PairSource(4, 1)
        cfg = CmdpConfig(epsilon=1.0, blocks=1, iters=20)
        res = primal_dual_train(src, cfg, seed=4)
        assert len(res.block_laws) == 1
        law = res.block_laws[0]
        assert abs(law.table().sum() - 1.0) <= 1e-9
