"""Constrained MDP over blocks: exact rollouts and primal-dual training.

The augmented state is the distribution of the block state; an action picks
per-state auxiliary and emission laws; the reward is the covert rate of the
induced block joint and the cost its total-variation distortion from the base
law. Rollouts propagate exact distributions (no sampling), so the policy
objective is deterministic and its gradient is computed by central finite
differences.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .capacity import gp_rate
from .prob import JointLaw, Pmf, entropy_bits
from .sources import FileSource, PairSource

STATE_CAP = 8192


@dataclass(frozen=True)
class CmdpConfig:
    gamma: float = 1.0
    epsilon: float = 0.1
    eta_phi: float = 10.0
    eta_beta: float = 2.0
    iters: int = 500
    blocks: int = 1
    u_block_size: int = 2

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if self.epsilon < 0:
            raise ValueError("distortion budget must be nonnegative")
        if self.eta_phi < 0 or self.eta_beta <= 0:
            raise ValueError("step sizes must be positive")


@dataclass(frozen=True)
class Action:
    """Per-state auxiliary and emission rows."""

    u_rows: dict  # sid -> Pmf over auxiliary symbols
    w_rows: dict  # (sid, u) -> Pmf over candidate blocks

    def joint_law(self, z: Pmf) -> JointLaw:
        missing = [s for s in z.support() if s not in self.u_rows]
        if missing:
            raise ValueError(f"action undefined on states {missing}")
        u_rows = {s: self.u_rows[s] for s in z.ids}
        w_rows = {k: v for k, v in self.w_rows.items() if k[0] in set(z.ids)}
        return JointLaw.from_components(z, u_rows, w_rows)


class CmdpInstance:
    """Explicit per-block state sets, base laws and transition kernel."""

    def __init__(self, states_per_block, base_laws, z1, next_dist, blocks, memoryless_prior=None):
        self.states_per_block = states_per_block
        self.base_laws = base_laws
        self.z1 = z1
        self.next_dist = next_dist  # (sid, candidate) -> list[(sid', prob)]
        self.blocks = blocks
        self.memoryless_prior = memoryless_prior

    @staticmethod
    def from_source(src, blocks=None):
        b = src.b if blocks is None else blocks
        if isinstance(src, PairSource):
            n_states = len(src.pairs) ** src.l
            if n_states > STATE_CAP:
                raise ValueError(f"{n_states} block states exceed the trainable cap")
            sids = list(itertools.product(range(len(src.pairs)), repeat=src.l))
            prior = Pmf(sids, np.full(len(sids), 1.0 / len(sids)))
            base = {sid: src.state(sid).block_law() for sid in sids}
            prior_pairs = list(zip(prior.ids, prior.probs))

            def next_dist(sid, cand):
                return prior_pairs

            return CmdpInstance([sids] * b, base, prior, next_dist, b, memoryless_prior=prior)
        if isinstance(src, FileSource):
            per_block = [src.states_at_depth(d) for d in range(1, b + 1)]
            base = {
                sid: src.states[sid].block_law()
                for block in per_block
                for sid in block
            }

            def next_dist(sid, cand):
                st = src.states[sid]
                ns = st.next_states[st.candidates.index(cand)]
                return [(ns, 1.0)] if ns is not None else []

            return CmdpInstance(per_block, base, src.initial, next_dist, b)
        raise TypeError(f"unsupported source type {type(src)!r}")


# ---------------------------------------------------------------------------
# spec-level operations on Pmf/Action objects


def reward(z: Pmf, action: Action) -> float:
    """Covert rate I(U;X) - I(U;S) of the action-induced block joint."""
    return gp_rate(action.joint_law(z))


def cost(z: Pmf, action: Action, base_laws: dict) -> float:
    """TV between the induced (S, X) joint and the base joint z(s)*base(x|s)."""
    total = 0.0
    for s in z.ids:
        zp = z.prob(s)
        if zp == 0:
            continue
        if s not in action.u_rows:
            raise ValueError(f"action undefined on state {s!r}")
        base = base_laws[s]
        induced = {}
        urow = action.u_rows[s]
        for u, pu in zip(urow.ids, urow.probs):
            if pu == 0:
                continue
            wrow = action.w_rows[(s, u)]
            for x, px in zip(wrow.ids, wrow.probs):
                induced[x] = induced.get(x, 0.0) + pu * px
        xs = set(induced) | set(base.ids)
        total += zp * 0.5 * sum(
            abs(induced.get(x, 0.0) - (base.prob(x) if x in base.ids else 0.0))
            for x in xs
        )
    return total


def transition_z(z: Pmf, action: Action, instance: CmdpInstance) -> Pmf:
    """Exact pushforward of the state distribution under the action."""
    acc = {}
    for s in z.ids:
        zp = z.prob(s)
        if zp == 0:
            continue
        urow = action.u_rows[s]
        for u, pu in zip(urow.ids, urow.probs):
            if pu == 0:
                continue
            wrow = action.w_rows[(s, u)]
            for x, px in zip(wrow.ids, wrow.probs):
                if px == 0:
                    continue
                for ns, tp in instance.next_dist(s, x):
                    acc[ns] = acc.get(ns, 0.0) + zp * pu * px * tp
    ids = sorted(acc, key=repr)
    return Pmf(ids, [acc[i] for i in ids])


# ---------------------------------------------------------------------------
# array-based evaluation used inside training loops


class _BlockArrays:
    """Dense per-block views: candidate supports merged into one alphabet."""

    def __init__(self, instance: CmdpInstance, block: int, u_size: int):
        self.sids = list(instance.states_per_block[block])
        xs = sorted(
            {x for sid in self.sids for x in instance.base_laws[sid].ids}
        )
        x_pos = {x: k for k, x in enumerate(xs)}
        self.x_ids = xs
        self.base = []
        self.cand_cols = []
        for sid in self.sids:
            law = instance.base_laws[sid]
            self.base.append(np.asarray(law.probs))
            self.cand_cols.append(np.array([x_pos[x] for x in law.ids]))
        self.u_size = u_size
        # logit layout within this block: per state a u-head then a w-head
        self.offsets = []
        off = 0
        for i, sid in enumerate(self.sids):
            nc = len(self.base[i])
            self.offsets.append((off, off + u_size, off + u_size + u_size * nc))
            off += u_size + u_size * nc
        self.dim = off

    def probs(self, phi_block):
        u_probs, w_probs = [], []
        for i, (u0, w0, end) in enumerate(self.offsets):
            u_probs.append(_softmax(phi_block[u0:w0]))
            nc = len(self.base[i])
            w = phi_block[w0:end].reshape(self.u_size, nc)
            w_probs.append(_softmax_rows(w))
        return u_probs, w_probs

    def reward_cost(self, z_vec, u_probs, w_probs):
        ns, m, nx = len(self.sids), self.u_size, len(self.x_ids)
        p_sux = np.zeros((ns, m, nx))
        cost_val = 0.0
        for i in range(ns):
            if z_vec[i] == 0:
                continue
            p_sux[i][:, self.cand_cols[i]] = z_vec[i] * u_probs[i][:, None] * w_probs[i]
            induced = u_probs[i] @ w_probs[i]
            cost_val += z_vec[i] * 0.5 * np.abs(induced - self.base[i]).sum()
        p_ux = p_sux.sum(0)
        p_su = p_sux.sum(2)
        h = entropy_bits
        i_ux = h(p_ux.sum(1)) + h(p_ux.sum(0)) - h(p_ux.ravel())
        i_us = h(p_su.sum(1)) + h(p_su.sum(0)) - h(p_su.ravel())
        return i_ux - i_us, cost_val


class _FastEval:
    def __init__(self, instance: CmdpInstance, u_size: int):
        self.instance = instance
        self.blocks = [
            _BlockArrays(instance, b, u_size) for b in range(instance.blocks)
        ]
        self.offsets = np.cumsum([0] + [blk.dim for blk in self.blocks])
        self.dim = int(self.offsets[-1])
        # per-block transition: candidate column -> index of next state
        self.memoryless = instance.memoryless_prior is not None

    def z1_vec(self):
        blk = self.blocks[0]
        return np.array([self.instance.z1.prob(s) if s in set(self.instance.z1.ids) else 0.0 for s in blk.sids])

    def phi_block(self, phi, b):
        return phi[self.offsets[b] : self.offsets[b + 1]]

    def trajectory(self, phi):
        z = self.z1_vec()
        out = []
        for b, blk in enumerate(self.blocks):
            u_probs, w_probs = blk.probs(self.phi_block(phi, b))
            r, c = blk.reward_cost(z, u_probs, w_probs)
            out.append((r, c))
            if b + 1 < len(self.blocks):
                z = self._advance(z, b, u_probs, w_probs)
        return out

    def _advance(self, z, b, u_probs, w_probs):
        blk, nxt = self.blocks[b], self.blocks[b + 1]
        if self.memoryless:
            prior = self.instance.memoryless_prior
            return np.array([prior.prob(s) for s in nxt.sids])
        pos = {s: i for i, s in enumerate(nxt.sids)}
        z_next = np.zeros(len(nxt.sids))
        for i, sid in enumerate(blk.sids):
            if z[i] == 0:
                continue
            induced = u_probs[i] @ w_probs[i]  # over this state's candidates
            law = self.instance.base_laws[sid]
            for x, px in zip(law.ids, induced):
                if px == 0:
                    continue
                for ns, tp in self.instance.next_dist(sid, x):
                    z_next[pos[ns]] += z[i] * px * tp
        return z_next


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def _softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# policy, rollout, training


class TabularPolicy:
    """Masked-softmax logit tables, one auxiliary head and one emission head
    per (block, state); the mask is implicit in parameterizing only the
    retained candidate support."""

    def __init__(self, instance: CmdpInstance, u_size: int):
        self.instance = instance
        self.u_size = u_size
        self.evaluator = _FastEval(instance, u_size)
        self.dim = self.evaluator.dim
        self.phi = np.zeros(self.dim)

    def action(self, block: int, phi=None) -> Action:
        phi = self.phi if phi is None else phi
        blk = self.evaluator.blocks[block]
        u_probs, w_probs = blk.probs(self.evaluator.phi_block(phi, block))
        u_rows, w_rows = {}, {}
        for i, sid in enumerate(blk.sids):
            base = self.instance.base_laws[sid]
            u_rows[sid] = Pmf(range(self.u_size), u_probs[i])
            for u in range(self.u_size):
                w_rows[(sid, u)] = Pmf(base.ids, w_probs[i][u])
        return Action(u_rows, w_rows)


@dataclass
class BlockStep:
    z: Pmf
    action: Action
    reward: float
    cost: float


def rollout(policy: TabularPolicy, cfg: CmdpConfig, phi=None):
    """Exact trajectory of (state distribution, action, reward, cost) built
    from the spec-level operations (the training loop uses an equivalent
    array path; equality is covered by tests)."""
    instance = policy.instance
    z = instance.z1
    steps = []
    for b in range(instance.blocks):
        a = policy.action(b, phi)
        r = reward(z, a)
        c = cost(z, a, instance.base_laws)
        steps.append(BlockStep(z, a, r, c))
        if b + 1 < instance.blocks:
            z = transition_z(z, a, instance)
    return steps


def discounted_sums(pairs, gamma: float):
    r = sum(gamma ** (b + 1) * rb for b, (rb, _) in enumerate(pairs))
    c = sum(gamma ** (b + 1) * cb for b, (_, cb) in enumerate(pairs))
    return r, c


def finite_difference_gradient(f, phi, h=1e-4):
    g = np.zeros_like(phi)
    for j in range(phi.size):
        orig = phi[j]
        phi[j] = orig + h
        fp = f(phi)
        phi[j] = orig - h
        fm = f(phi)
        phi[j] = orig
        g[j] = (fp - fm) / (2 * h)
    return g


def five_point_gradient(f, phi, h=1e-4):
    g = np.zeros_like(phi)
    for j in range(phi.size):
        orig = phi[j]
        vals = []
        for d in (2 * h, h, -h, -2 * h):
            phi[j] = orig + d
            vals.append(f(phi))
        phi[j] = orig
        g[j] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
    return g


@dataclass
class TrainResult:
    policy: TabularPolicy
    block_laws: list  # JointLaw per block under the final policy
    log: list = field(default_factory=list)  # (iter, reward_sum, cost_sum, beta)
    beta: float = 0.0


# step-size multiplier bounds for the backtracking primal update
_MULT_GROW = 2.0
_MULT_CAP = 4096.0
_MULT_FLOOR = 1e-3
_INIT_SCALE = 0.5


def primal_dual_train(src, cfg: CmdpConfig, seed: int = 0) -> TrainResult:
    """Primal-dual policy gradient on the exact-rollout objective.

    The primal step follows the gradient of sum_b gamma^b (r_b - beta c_b)
    with a backtracking multiplier on eta_phi (halved while the step lowers
    the objective, regrown after acceptance): a constant step either stalls
    before the softmax saturates or destabilizes into a limit cycle, so the
    multiplier is needed to reach tight optimality targets within the
    iteration budget. The dual variable ascends the constraint gap and is
    projected to stay nonnegative. Initial logits are small random values:
    the uniform all-zeros point is a stationary saddle of the exact dynamics.
    """
    instance = CmdpInstance.from_source(src, cfg.blocks)
    policy = TabularPolicy(instance, cfg.u_block_size)
    ev = policy.evaluator
    rng = np.random.default_rng(seed)
    policy.phi = _INIT_SCALE * rng.standard_normal(policy.dim)
    beta = 0.0
    mult = 1.0
    log = []

    def objective(phi, beta_now):
        traj = ev.trajectory(phi)
        r, c = discounted_sums(traj, cfg.gamma)
        return r - beta_now * c, r, c

    for it in range(cfg.iters):
        val, r_sum, c_sum = objective(policy.phi, beta)
        if not np.isfinite(val):
            raise FloatingPointError(
                f"objective became non-finite at iteration {it}: "
                f"reward={r_sum}, cost={c_sum}, beta={beta}"
            )
        grad = finite_difference_gradient(
            lambda p: objective(p, beta)[0], policy.phi
        )
        if cfg.eta_phi > 0:
            while True:
                cand = policy.phi + cfg.eta_phi * mult * grad
                cand_val, cand_r, cand_c = objective(cand, beta)
                if cand_val >= val - 1e-12 or mult <= _MULT_FLOOR:
                    break
                mult *= 0.5
            policy.phi = cand
            r_sum, c_sum = cand_r, cand_c
            mult = min(mult * _MULT_GROW, _MULT_CAP)
        beta = max(0.0, beta + cfg.eta_beta * (c_sum - cfg.epsilon))
        log.append((it, r_sum, c_sum, beta))

    steps = rollout(policy, cfg)
    laws = [st.action.joint_law(st.z) for st in steps]
    return TrainResult(policy=policy, block_laws=laws, log=log, beta=beta)
