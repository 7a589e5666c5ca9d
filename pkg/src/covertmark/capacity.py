"""Single-letter covert-rate objective: evaluation and optimization.

The objective is the Gelfand-Pinsker style rate I(U;X) - I(U;S) maximized
over auxiliary channels p(u|s), W(x|u,s) subject to preserving the base joint
P_XS, with key rate I(U;X|S). For the uniform pair-state source the optimum
has the closed form floor(V^2/4) / C(V,2), achieved by a balanced vocabulary
partition with U the partition indicator.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .prob import CondPmf, JointLaw, Pmf, binary_entropy


@dataclass(frozen=True)
class CapacityResult:
    rate: float
    key_rate: float
    argmax: JointLaw


def gp_rate(joint: JointLaw) -> float:
    """I(U;X) - I(U;S) in bits."""
    return joint.mutual_information("U", "X") - joint.mutual_information("U", "S")


def key_rate(joint: JointLaw) -> float:
    """I(U;X|S) in bits, the key rate sufficient for covert embedding."""
    return joint.conditional_mutual_information("U", "X", "S")


def corollary_rate(v: int) -> float:
    """Closed-form covert rate of the uniform pair-state source."""
    if v < 2:
        raise ValueError(f"vocabulary size must be at least 2, got {v}")
    return (v * v // 4) / math.comb(v, 2)


def partition_joint(v: int) -> JointLaw:
    """Balanced-partition achiever: U indicates the vocabulary half of X.

    Low half gets floor(V/2) tokens. W restricts the per-state half-half law
    to the partition class of u and renormalizes, which is the unique
    marginal-preserving completion; classes that miss the state's support get
    conditional probability zero.
    """
    if v < 2:
        raise ValueError(f"vocabulary size must be at least 2, got {v}")
    lo = set(range(v // 2))
    pairs = list(itertools.combinations(range(v), 2))
    s_pmf = Pmf(pairs, np.full(len(pairs), 1.0 / len(pairs)))
    u_rows, w_rows = {}, {}
    for s in pairs:
        classes = [0 if t in lo else 1 for t in s]
        u_rows[s] = Pmf((0, 1), [classes.count(0) / 2.0, classes.count(1) / 2.0])
        for u in (0, 1):
            members = [t for t, c in zip(s, classes) if c == u]
            if members:
                w_rows[(s, u)] = Pmf.uniform(members)
    return JointLaw.from_components(s_pmf, u_rows, w_rows)


def stochastic_map_joint(v: int, q) -> JointLaw:
    """Soft auxiliary on the pair source from a per-token map q_i = P(U=1|X=i).

    Marginal-preserving by construction. With q near the partition indicator
    but unequal within each class, this models the soft joints a trained
    policy produces: the auxiliary stays decodable while every conditional is
    strictly soft, which is the regime where over-keying visibly hurts
    covertness."""
    q = np.asarray(q, dtype=float)
    if q.shape != (v,) or np.any(q < 0) or np.any(q > 1):
        raise ValueError("q must be a length-V vector of probabilities")
    pairs = list(itertools.combinations(range(v), 2))
    p_s = Pmf(pairs, np.full(len(pairs), 1.0 / len(pairs)))
    base_rows = CondPmf(pairs, tuple(Pmf.uniform(p) for p in pairs))
    split = {
        s: {x: np.array([1 - q[x], q[x]]) for x in s} for s in pairs
    }
    return _joint_from_split(p_s, base_rows, split)


def _joint_from_split(p_s: Pmf, base_rows: CondPmf, q_split: dict) -> JointLaw:
    """Feasible joint from a reverse split q(u | s, x).

    Any conditional q yields a marginal-preserving triple via
    P(u|s) = sum_x base(x|s) q(u|s,x) and W(x|u,s) = base(x|s) q(u|s,x) / P(u|s),
    and every feasible joint arises this way.
    """
    u_rows, w_rows = {}, {}
    u_ids = None
    for s in p_s.ids:
        base = base_rows.row(s)
        split = q_split[s]  # dict x -> np.ndarray over u
        u_ids = tuple(range(len(next(iter(split.values())))))
        pu = np.zeros(len(u_ids))
        for x, px in zip(base.ids, base.probs):
            pu += px * split[x]
        u_rows[s] = Pmf(u_ids, pu)
        for u in u_ids:
            if pu[u] > 0:
                w_rows[(s, u)] = Pmf(
                    base.ids,
                    [px * split[x][u] / pu[u] for x, px in zip(base.ids, base.probs)],
                )
    return JointLaw.from_components(p_s, u_rows, w_rows)


def _deterministic_split(x_ids, assignment, u_size):
    onehots = np.eye(u_size)
    return {x: onehots[assignment[i]] for i, x in enumerate(x_ids)}


def _split_rate(p_s_vec, base, q):
    """Covert rate for a reverse split q of shape (nS, nX, nU) given dense
    base token laws, without building law objects."""
    from .prob import entropy_bits

    p_sxu = p_s_vec[:, None, None] * base[:, :, None] * q
    p_ux = p_sxu.sum(0).T
    p_su = p_sxu.sum(1)
    p_u = p_ux.sum(1)
    i_ux = entropy_bits(p_u) + entropy_bits(p_ux.sum(0)) - entropy_bits(p_ux.ravel())
    i_us = entropy_bits(p_u) + entropy_bits(p_s_vec) - entropy_bits(p_su.ravel())
    return i_ux - i_us


def brute_force_capacity(
    p_s: Pmf,
    base_rows: CondPmf,
    u_size: int = 2,
    restarts: int = 8,
    seed: int = 0,
) -> CapacityResult:
    """Search the feasible set for the best covert rate.

    Primary search enumerates deterministic auxiliaries U = phi(X) with the
    marginal-preserving W completion; ties break toward the lexicographically
    smallest assignment. A projected-ascent refinement from random stochastic
    splits guards non-pair inputs; it replaces the incumbent only on strict
    improvement.
    """
    if u_size < 2:
        raise ValueError(f"auxiliary alphabet needs at least 2 symbols, got {u_size}")
    x_ids = tuple(sorted({x for s in p_s.ids for x in base_rows.row(s).ids}))
    n_maps = u_size ** len(x_ids)
    if n_maps > 2_000_000:
        raise ValueError(
            f"deterministic enumeration of {n_maps} auxiliaries is not tractable"
        )
    x_pos = {x: j for j, x in enumerate(x_ids)}
    base = np.zeros((len(p_s.ids), len(x_ids)))
    for i, s in enumerate(p_s.ids):
        row = base_rows.row(s)
        for x, px in zip(row.ids, row.probs):
            base[i, x_pos[x]] = px

    best_q = None
    best_rate = -np.inf
    eye = np.eye(u_size)
    for assignment in itertools.product(range(u_size), repeat=len(x_ids)):
        q = np.broadcast_to(eye[list(assignment)], (len(p_s.ids),) + (len(x_ids), u_size))
        r = _split_rate(p_s.probs, base, q)
        if r > best_rate + 1e-12:
            best_rate, best_q = r, np.array(q)

    rng = np.random.default_rng(seed)
    nx = len(x_ids)
    for _ in range(restarts):
        # logits per (state, x, u); ascend the rate with numerical gradients
        logits = rng.normal(size=(len(p_s.ids), nx, u_size))

        def rate_of(lg):
            e = np.exp(lg - lg.max(axis=2, keepdims=True))
            return _split_rate(p_s.probs, base, e / e.sum(axis=2, keepdims=True))

        step = 1.0
        cur = rate_of(logits)
        for _ in range(60):
            grad = np.zeros_like(logits)
            h = 1e-5
            for idx in np.ndindex(logits.shape):
                orig = logits[idx]
                logits[idx] = orig + h
                fp = rate_of(logits)
                logits[idx] = orig - h
                fm = rate_of(logits)
                logits[idx] = orig
                grad[idx] = (fp - fm) / (2 * h)
            cand = logits + step * grad
            val = rate_of(cand)
            if val > cur:
                logits, cur = cand, val
                step = min(step * 1.5, 64.0)
            else:
                step *= 0.5
                if step < 1e-4:
                    break
        if cur > best_rate + 1e-9:
            e = np.exp(logits - logits.max(axis=2, keepdims=True))
            best_rate, best_q = cur, e / e.sum(axis=2, keepdims=True)

    splits = {
        s: {x: best_q[i, j] for j, x in enumerate(x_ids)}
        for i, s in enumerate(p_s.ids)
    }
    joint = _joint_from_split(p_s, base_rows, splits)
    return CapacityResult(rate=gp_rate(joint), key_rate=key_rate(joint), argmax=joint)


def converse_probe(v: int, samples: int, seed: int = 0) -> float:
    """Max rate over random stochastic maps q_i = P(U=1 | X=i) on the pair
    source; never exceeds the closed form (the objective reduces to an
    average Jensen-Shannon divergence, maximized at 0/1-valued q)."""
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    best = 0.0
    pairs = list(itertools.combinations(range(v), 2))
    for _ in range(samples):
        q = rng.random(v)
        best = max(best, _probe_rate(q, pairs, v))
    return best


def _probe_rate(q, pairs, v) -> float:
    h_u_given_s = sum(binary_entropy((q[i] + q[j]) / 2) for i, j in pairs) / len(pairs)
    h_u_given_x = sum(binary_entropy(qi) for qi in q) / v
    return h_u_given_s - h_u_given_x
