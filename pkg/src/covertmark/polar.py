"""Polar-code embedding over one block.

The pre-transform vector v relates to the auxiliary block u by u = v G^(x p)
over GF(2) (an involution), so P(V=v) = P(U=vG). Index sets classify
positions by exact conditional entropy: high-entropy-given-state positions
carry free bits at the encoder, low-entropy-given-tokens positions decode
reliably, and their intersection carries the message. Encoding samples the
constrained positions from the exact conditional law restricted to the
forced assignment, which realizes sampling from
P(V | S) 1{V consistent} / normalizer; when the restriction has zero mass the
encoder falls back to an unconstrained base-law sample for the block, so the
emitted tokens never leave the support.

Position i of a length-L vector maps to bit (L-1-i) of its integer index, so
a chain prefix is a contiguous slice of the weight vector.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .prob import JointLaw, Pmf, binary_entropy, entropy_bits

EXACT_L_CAP = 16
EXPAND_STATE_CAP = 20_000
ROW_TOL = 1e-9


class BlockLengthError(ValueError):
    """Blocklength outside the exact-enumeration regime."""


class KeyLengthError(ValueError):
    """Fewer key bits supplied than the spec requires."""


class EmissionError(ValueError):
    """Requested emission from a zero-mass (auxiliary, state) pair."""


def polar_transform(v):
    """Multiply a bit vector by the p-fold Kronecker power of [[1,0],[1,1]].

    O(L log L) butterfly; the transform is its own inverse over GF(2).
    """
    x = np.array(v, dtype=np.uint8) & 1
    n = x.size
    if n == 0 or n & (n - 1):
        raise BlockLengthError(f"length must be a power of two, got {n}")
    step = 2
    while step <= n:
        half = step // 2
        for j in range(0, n, step):
            x[j : j + half] ^= x[j + half : j + step]
        step *= 2
    return x


_TABLES = {}


def _tables(l: int):
    """Cached (bits, transform_index, u_bits) tables for blocklength l."""
    if l not in _TABLES:
        n = 1 << l
        idx = np.arange(n, dtype=np.int64)
        bits = (idx[:, None] >> np.arange(l - 1, -1, -1)[None, :]) & 1
        bits = bits.astype(np.uint8)
        u_bits = bits.copy()
        step = 2
        while step <= l:
            half = step // 2
            for j in range(0, l, step):
                u_bits[:, j : j + half] ^= u_bits[:, j + half : j + step]
            step *= 2
        weights = 1 << np.arange(l - 1, -1, -1, dtype=np.int64)
        transform_index = u_bits.astype(np.int64) @ weights
        _TABLES[l] = (bits, transform_index, u_bits)
    return _TABLES[l]


def chain_entropy_profile(weights) -> np.ndarray:
    """H(V_i | V^{i-1}) for i = 0..L-1 under one weight vector over 2^L."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValueError("weight vector has no mass")
    w = w / total
    l = w.size.bit_length() - 1
    prof = np.zeros(l)
    for i in range(l):
        grouped = w.reshape(1 << i, 2, -1).sum(axis=2)  # (prefix, bit)
        pref = grouped.sum(axis=1)
        live = pref > 0
        cond = grouped[live, 1] / pref[live]
        prof[i] = float(
            np.sum(pref[live] * np.array([binary_entropy(c) for c in cond]))
        )
    return prof


# ---------------------------------------------------------------------------
# block joints


class ProductBlockJoint:
    """Per-block law with i.i.d. positions sharing one single-letter triple
    (state prior, binary auxiliary, emission kernel). Block states are tuples
    of per-position state indices."""

    def __init__(self, l, state_ids, p_s, p_u1, w):
        self.l = int(l)
        self.state_ids = tuple(state_ids)
        self.p_s = np.asarray(p_s, dtype=float)
        self.p_u1 = np.asarray(p_u1, dtype=float)  # P(U=1 | s) per state
        self.w = np.asarray(w, dtype=float)        # (nS, 2, V)
        self.v = self.w.shape[2]

    @staticmethod
    def from_single_letter(joint: JointLaw, l: int) -> "ProductBlockJoint":
        if joint.u_ids != (0, 1):
            raise ValueError("product block joints need a binary auxiliary")
        return ProductBlockJoint(
            l, joint.s_ids, joint.p_s, joint.p_u_given_s[:, 1], joint.w
        )

    # -- state handling ----------------------------------------------------
    def enumerate_states(self, cap=EXPAND_STATE_CAP):
        n = len(self.state_ids)
        if n ** self.l > cap:
            raise BlockLengthError(
                f"{n ** self.l} block states exceed the exact enumeration cap"
            )
        for combo in itertools.product(range(n), repeat=self.l):
            prob = float(np.prod(self.p_s[list(combo)]))
            yield combo, prob

    def position_probs(self, state):
        p1 = self.p_u1[list(state)]
        return np.stack([1 - p1, p1], axis=1)  # (L, 2)

    def v_weights(self, state) -> np.ndarray:
        """P(V = v | block state), a vector over all 2^L pre-transform words."""
        _, _, u_bits = _tables(self.l)
        probs = self.position_probs(state)  # (L, 2)
        return np.prod(probs[np.arange(self.l)[None, :], u_bits], axis=1)

    # -- entropy profiles ----------------------------------------------------
    def _position_classes(self):
        """Classify per-position auxiliary rows as fixed or free (uniform)."""
        classes = np.full(len(self.state_ids), -1)
        for i, p1 in enumerate(self.p_u1):
            if p1 <= ROW_TOL or p1 >= 1 - ROW_TOL:
                classes[i] = 0  # u deterministic given state
            elif abs(p1 - 0.5) <= ROW_TOL:
                classes[i] = 1  # u uniform given state
        return classes

    def enc_entropy_profile(self) -> np.ndarray:
        classes = self._position_classes()
        if np.all(classes >= 0):
            q_free = float(self.p_s[classes == 1].sum())
            return _pivot_profile(self.l, q_free)
        return self.enc_profile_by_enumeration()

    def enc_profile_by_enumeration(self, cap=100_000) -> np.ndarray:
        """Direct average of per-state chain profiles; the slow exact route."""
        prof = np.zeros(self.l)
        for sid, p in self.enumerate_states(cap=cap):
            if p > 0:
                prof += p * chain_entropy_profile(self.v_weights(sid))
        return prof

    def dec_entropy_profile(self) -> np.ndarray:
        m = self.position_joint_ux()
        deterministic = all(
            np.count_nonzero(m[:, x] > ROW_TOL) <= 1 for x in range(self.v)
        )
        if deterministic:
            return np.zeros(self.l)
        return self.expand().dec_entropy_profile()

    def position_joint_ux(self) -> np.ndarray:
        """State-marginalized per-position joint P(u, x), shape (2, V)."""
        p_u_s = np.stack([1 - self.p_u1, self.p_u1], axis=1)  # (nS, 2)
        return np.einsum("s,su,sux->ux", self.p_s, p_u_s, self.w)

    def expand(self) -> "ExplicitBlockJoint":
        states = list(self.enumerate_states())
        z = np.array([p for _, p in states])
        candidates, w_u = [], []
        n = 1 << self.l
        bits, transform_index, _ = _tables(self.l)
        for sid, _ in states:
            per_pos_support = [
                [x for x in range(self.v) if self.w[s, :, x].max() > 0]
                for s in sid
            ]
            cands = list(itertools.product(*per_pos_support))
            mat = np.ones((n, len(cands)))
            for ci, cand in enumerate(cands):
                rows = np.stack(
                    [self.w[s, :, x] for s, x in zip(sid, cand)], axis=0
                )  # (L, 2)
                mat[:, ci] = np.prod(
                    rows[np.arange(self.l)[None, :], bits], axis=1
                )
            candidates.append(tuple(cands))
            w_u.append(mat)
        p_u_vec = np.stack([self.v_weights(sid) for sid, _ in states])
        # v_weights is indexed by v; convert to u-indexed law for the ctor
        p_u_idx = np.empty_like(p_u_vec)
        p_u_idx[:, transform_index] = p_u_vec  # P(U=u) = P(V = uG)
        return ExplicitBlockJoint(
            self.l, [sid for sid, _ in states], z, candidates, p_u_idx, w_u
        )

    # -- emission ------------------------------------------------------------
    def emission_rows(self, state, u_vec_index):
        bits, _, _ = _tables(self.l)
        ub = bits[u_vec_index]
        return [self.w[s, b, :] for s, b in zip(state, ub)]

    def sample_emission(self, state, u_vec_index, rng) -> tuple:
        out = []
        for row in self.emission_rows(state, u_vec_index):
            total = row.sum()
            if total <= 0:
                raise EmissionError("auxiliary block is infeasible for this state")
            out.append(int(rng.choice(self.v, p=row / total)))
        return tuple(out)

    def posterior_weights(self, x) -> np.ndarray:
        """Unnormalized P(V = v, X^L = x) under the state-marginalized law."""
        if len(x) != self.l or any(not 0 <= t < self.v for t in x):
            raise ValueError(f"token block {tuple(x)} is outside the declared support")
        m = self.position_joint_ux()  # (2, V)
        _, _, u_bits = _tables(self.l)
        rows = np.stack([m[:, t] for t in x], axis=0)  # (L, 2)
        return np.prod(rows[np.arange(self.l)[None, :], u_bits], axis=1)

    def base_position_law(self, s) -> np.ndarray:
        p_u = np.array([1 - self.p_u1[s], self.p_u1[s]])
        return p_u @ self.w[s]

    def key_rate_bits(self) -> float:
        """I(U^L ; X^L | S^L) = L * I(U;X|S) by position independence."""
        per = 0.0
        for s, ps in enumerate(self.p_s):
            p_u = np.array([1 - self.p_u1[s], self.p_u1[s]])
            h_x = entropy_bits(p_u @ self.w[s])
            h_x_u = sum(pu * entropy_bits(self.w[s, u]) for u, pu in enumerate(p_u))
            per += ps * (h_x - h_x_u)
        return self.l * per


class ExplicitBlockJoint:
    """Per-block law with explicitly enumerated block states.

    For each state: candidate token blocks and an emission matrix indexed by
    the auxiliary vector (all 2^L rows; rows for zero-probability u may be
    anything summing to 1 or to 0)."""

    def __init__(self, l, state_ids, z, candidates, p_u, w_u):
        self.l = int(l)
        self.state_ids = tuple(state_ids)
        self.z = np.asarray(z, dtype=float)
        self.candidates = [tuple(c) for c in candidates]
        self.p_u = np.asarray(p_u, dtype=float)  # (nS, 2^L), indexed by u
        self.w_u = [np.asarray(m, dtype=float) for m in w_u]  # (2^L, nC_s)
        self._index = {s: i for i, s in enumerate(self.state_ids)}
        self.x_ids = tuple(sorted({c for cs in self.candidates for c in cs}))
        self._x_pos = {x: i for i, x in enumerate(self.x_ids)}

    def enumerate_states(self, cap=EXPAND_STATE_CAP):
        for sid, p in zip(self.state_ids, self.z):
            yield sid, float(p)

    def v_weights(self, state) -> np.ndarray:
        i = self._index[state]
        _, transform_index, _ = _tables(self.l)
        return self.p_u[i][transform_index]  # P(V=v) = P(U = vG)

    def enc_entropy_profile(self) -> np.ndarray:
        prof = np.zeros(self.l)
        for sid, p in self.enumerate_states():
            if p > 0:
                prof += p * chain_entropy_profile(self.v_weights(sid))
        return prof

    def joint_vx(self) -> np.ndarray:
        """P(V = v, X = x) marginalized over states, shape (2^L, nX)."""
        n = 1 << self.l
        _, transform_index, _ = _tables(self.l)
        out = np.zeros((n, len(self.x_ids)))
        for i, sid in enumerate(self.state_ids):
            if self.z[i] <= 0:
                continue
            cols = [self._x_pos[c] for c in self.candidates[i]]
            contrib = self.z[i] * self.p_u[i][:, None] * self.w_u[i]
            v_rows = np.empty_like(contrib)
            v_rows[transform_index] = contrib  # reindex the u-law by v
            for k, col in enumerate(cols):
                out[:, col] += v_rows[:, k]
        return out

    def dec_entropy_profile(self) -> np.ndarray:
        vx = self.joint_vx()
        prof = np.zeros(self.l)
        for k in range(vx.shape[1]):
            mass = vx[:, k].sum()
            if mass > 0:
                prof += mass * chain_entropy_profile(vx[:, k])
        return prof

    def emission_rows(self, state, u_vec_index):
        i = self._index[state]
        row = self.w_u[i][u_vec_index]
        return row

    def sample_emission(self, state, u_vec_index, rng) -> tuple:
        i = self._index[state]
        row = self.w_u[i][u_vec_index]
        total = row.sum()
        if total <= 0:
            raise EmissionError("auxiliary block is infeasible for this state")
        choice = int(rng.choice(len(row), p=row / total))
        return self.candidates[i][choice]

    def posterior_weights(self, x) -> np.ndarray:
        x = tuple(x)
        if x not in self._x_pos:
            raise ValueError(f"token block {x} is outside the declared support")
        vx = self.joint_vx()
        return vx[:, self._x_pos[x]]

    def base_block_law(self, state) -> Pmf:
        i = self._index[state]
        induced = self.p_u[i] @ self.w_u[i]
        return Pmf(self.candidates[i], induced)

    def key_rate_bits(self) -> float:
        total = 0.0
        for i in range(len(self.state_ids)):
            if self.z[i] <= 0:
                continue
            pu = self.p_u[i]
            induced = pu @ self.w_u[i]
            h_x = entropy_bits(induced)
            h_x_u = sum(
                pu[u] * entropy_bits(self.w_u[i][u])
                for u in range(len(pu))
                if pu[u] > 0
            )
            total += self.z[i] * (h_x - h_x_u)
        return total


def _g_row_masks(l: int):
    """Row t of the transform as a bitmask (position i set iff i subset t)."""
    rows = []
    for t in range(l):
        mask = 0
        for i in range(l):
            if i & ~t == 0:
                mask |= 1 << (l - 1 - i)
        rows.append(mask)
    return rows


def _pivots(rows, l):
    piv = set()
    basis = []
    for r in rows:
        cur = r
        for b in basis:
            if cur & (1 << (b.bit_length() - 1)):
                cur ^= b
        if cur:
            basis.append(cur)
            basis.sort(reverse=True)
            piv.add(l - cur.bit_length())
    return piv


def _pivot_profile(l: int, q_free: float) -> np.ndarray:
    """Exact encoder entropy profile for fixed/free position structure.

    Conditioned on the block state, the pre-transform word is uniform on a
    coset of the span of transform rows at the free positions, so
    H(V_i | V^{i-1}, S^L) is the probability that i is a pivot of that span
    under the product law of free positions.
    """
    rows = _g_row_masks(l)
    prof = np.zeros(l)
    for free_mask in range(1 << l):
        prob = 1.0
        sel = []
        for t in range(l):
            if free_mask >> t & 1:
                prob *= q_free
                sel.append(rows[t])
            else:
                prob *= 1 - q_free
        if prob == 0.0:
            continue
        for i in _pivots(sel, l):
            prof[i] += prob
    return prof


# ---------------------------------------------------------------------------
# index sets and codec


@dataclass(frozen=True)
class PolarSpec:
    p: int
    l: int
    t_delta: float
    t_eps: float
    h_enc: tuple
    l_enc: tuple
    h_dec: tuple
    l_dec: tuple
    message_set: tuple
    r0_bits: int
    otp_bits: int
    enc_profile: tuple = ()
    dec_profile: tuple = ()

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "L": self.l,
            "T_delta": self.t_delta,
            "T_eps": self.t_eps,
            "H_enc": list(self.h_enc),
            "L_enc": list(self.l_enc),
            "H_dec": list(self.h_dec),
            "L_dec": list(self.l_dec),
            "M": list(self.message_set),
            "R0_bits": self.r0_bits,
            "otp_bits": self.otp_bits,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def compute_index_sets(joint, t_delta: float = 0.1, t_eps: float = 0.1) -> PolarSpec:
    """Build the four index sets from exact conditional entropies.

    Encoder side conditions on the block state, decoder side on the emitted
    tokens through the state-marginalized channel.
    """
    l = joint.l
    if l & (l - 1):
        raise BlockLengthError(f"blocklength must be a power of two, got {l}")
    if l > EXACT_L_CAP:
        raise BlockLengthError(
            f"L={l} exceeds the exact enumeration regime (L <= {EXACT_L_CAP}); "
            "larger blocklengths are out of scope"
        )
    enc = joint.enc_entropy_profile()
    dec = joint.dec_entropy_profile()
    h_enc = tuple(i for i in range(l) if enc[i] > 1 - t_eps)
    l_enc = tuple(i for i in range(l) if i not in h_enc)
    h_dec = tuple(i for i in range(l) if dec[i] >= t_delta)
    l_dec = tuple(i for i in range(l) if i not in h_dec)
    message = tuple(sorted(set(h_enc) & set(l_dec)))
    return PolarSpec(
        p=l.bit_length() - 1,
        l=l,
        t_delta=t_delta,
        t_eps=t_eps,
        h_enc=h_enc,
        l_enc=l_enc,
        h_dec=h_dec,
        l_dec=l_dec,
        message_set=message,
        r0_bits=len(h_enc) - len(message),
        otp_bits=math.ceil(joint.key_rate_bits() - 1e-9),
        enc_profile=tuple(enc),
        dec_profile=tuple(dec),
    )


@dataclass(frozen=True)
class KeySchedule:
    """Which positions consume key bits: OTP over leading message positions,
    optionally extra positions forced directly from key material."""

    otp_positions: tuple
    keyed_positions: tuple

    @property
    def total_bits(self) -> int:
        return len(self.otp_positions) + len(self.keyed_positions)


def default_schedule(spec: PolarSpec) -> KeySchedule:
    n = min(spec.otp_bits, len(spec.message_set))
    return KeySchedule(tuple(spec.message_set[:n]), ())


def sweep_schedule(spec: PolarSpec, key_bits: int) -> KeySchedule:
    """Schedule for the covertness-versus-key-bits sweep.

    The first key bits OTP message positions; bits beyond the message set
    force the remaining free positions and then the state-constrained
    positions in decreasing encoder-entropy order.
    """
    m = list(spec.message_set)
    otp = tuple(m[: min(key_bits, len(m))])
    extra_budget = key_bits - len(otp)
    pool = [i for i in spec.h_enc if i not in spec.message_set]
    if spec.enc_profile:
        pool += sorted(spec.l_enc, key=lambda i: -spec.enc_profile[i])
    else:
        pool += list(spec.l_enc)
    keyed = tuple(pool[:extra_budget])
    return KeySchedule(otp, keyed)


def otp(bits, key):
    """Bitwise XOR; an involution."""
    bits = list(bits)
    key = list(key)
    if len(bits) != len(key):
        raise ValueError(f"length mismatch: {len(bits)} bits vs {len(key)} key bits")
    return [b ^ k for b, k in zip(bits, key)]


def _forced_assignment(spec, msg, key, rng, schedule):
    """Forced (position -> bit) map plus which positions were rng-filled."""
    forced = {}
    key_iter = iter(key)
    otp_set = set(schedule.otp_positions)
    for j, pos in enumerate(spec.message_set):
        bit = int(msg[j])
        if pos in otp_set:
            bit ^= int(next(key_iter))
        forced[pos] = bit
    for pos in schedule.keyed_positions:
        forced[pos] = int(next(key_iter))
    for pos in spec.h_enc:
        if pos not in forced:
            forced[pos] = int(rng.integers(0, 2))
    return forced


def _restrict(weights, forced, l):
    bits, _, _ = _tables(l)
    w = weights.astype(float).copy()
    for pos, bit in forced.items():
        w[bits[:, pos] != bit] = 0.0
    return w


def _chain_sample(weights, forced, l, rng):
    """Successive sampling: forced bits are placed, the rest drawn from the
    exact conditional of the restricted law given the prefix."""
    prefix = 0
    for i in range(l):
        if i in forced:
            bit = forced[i]
        else:
            lo = prefix << (l - i)
            hi = (prefix + 1) << (l - i)
            seg = weights[lo:hi]
            half = seg.size // 2
            w0 = seg[:half].sum()
            w1 = seg[half:].sum()
            bit = int(rng.random() < w1 / (w0 + w1))
        prefix = (prefix << 1) | bit
    return prefix


def sc_encode(spec: PolarSpec, joint, state, msg, rng, key, schedule=None):
    """Encode one block: returns (v bits, u bits).

    Message bits are OTP'd and placed on the message set, remaining
    high-entropy positions take fresh uniform bits (the sub-bin randomness),
    and constrained positions are sampled from the conditional law restricted
    to every forced assignment, marginalized over unconstrained suffixes.
    """
    if schedule is None:
        schedule = default_schedule(spec)
        if len(key) < spec.otp_bits:
            raise KeyLengthError(
                f"need {spec.otp_bits} key bits, got {len(key)}"
            )
    elif len(key) < schedule.total_bits:
        raise KeyLengthError(
            f"schedule needs {schedule.total_bits} key bits, got {len(key)}"
        )
    if len(msg) != len(spec.message_set):
        raise ValueError(
            f"message must have {len(spec.message_set)} bits, got {len(msg)}"
        )
    weights = joint.v_weights(state)
    forced = _forced_assignment(spec, msg, key, rng, schedule)
    restricted = _restrict(weights, forced, spec.l)
    if restricted.sum() > 0:
        v_index = _chain_sample(restricted, forced, spec.l, rng)
    else:
        # infeasible forced assignment: emit an unwatermarked block
        v_index = _chain_sample(weights, {}, spec.l, rng)
    bits, transform_index, u_bits = _tables(spec.l)
    return list(bits[v_index]), list(u_bits[v_index])


def sampler_v_law(spec: PolarSpec, joint, state, msg, key, schedule=None) -> np.ndarray:
    """Exact output distribution of sc_encode over pre-transform words,
    averaged over the encoder's local randomness."""
    if schedule is None:
        schedule = default_schedule(spec)
    weights = joint.v_weights(state)
    base = weights / weights.sum()
    free = [
        pos
        for pos in spec.h_enc
        if pos not in spec.message_set and pos not in schedule.keyed_positions
    ]
    law = np.zeros_like(base)
    otp_set = set(schedule.otp_positions)
    key_iter = list(key)
    forced_fixed = {}
    ki = 0
    for j, pos in enumerate(spec.message_set):
        bit = int(msg[j])
        if pos in otp_set:
            bit ^= int(key_iter[ki])
            ki += 1
        forced_fixed[pos] = bit
    for pos in schedule.keyed_positions:
        forced_fixed[pos] = int(key_iter[ki])
        ki += 1
    for assignment in itertools.product((0, 1), repeat=len(free)):
        forced = dict(forced_fixed)
        forced.update(zip(free, assignment))
        restricted = _restrict(weights, forced, spec.l)
        mass = restricted.sum()
        out = restricted / mass if mass > 0 else base
        law += out / (1 << len(free))
    return law


def emit_tokens(joint, state, u_bits, rng) -> tuple:
    """Sample the token block from W(. | u, state)."""
    _, transform_index, table_u = _tables(joint.l)
    weights = 1 << np.arange(joint.l - 1, -1, -1, dtype=np.int64)
    u_index = int(np.asarray(u_bits, dtype=np.int64) @ weights)
    return joint.sample_emission(state, u_index, rng)


def map_decode(spec: PolarSpec, joint, x, key, schedule=None):
    """Successively select the most likely pre-transform bit from the exact
    token-conditioned posterior (ties toward 0), then extract and un-OTP the
    message positions."""
    if schedule is None:
        schedule = default_schedule(spec)
    weights = joint.posterior_weights(x)
    if weights.sum() <= 0:
        raise ValueError("token block has zero posterior mass")
    l = spec.l
    prefix = 0
    v_bits = []
    for i in range(l):
        lo = prefix << (l - i)
        hi = (prefix + 1) << (l - i)
        seg = weights[lo:hi]
        half = seg.size // 2
        w0 = seg[:half].sum()
        w1 = seg[half:].sum()
        bit = 0 if w0 >= w1 else 1
        v_bits.append(bit)
        prefix = (prefix << 1) | bit
    msg = [v_bits[pos] for pos in spec.message_set]
    otp_set = set(schedule.otp_positions)
    ki = 0
    for j, pos in enumerate(spec.message_set):
        if pos in otp_set:
            msg[j] ^= int(key[ki])
            ki += 1
    return msg


# ---------------------------------------------------------------------------
# standard block-joint constructions


def pair_partition_block_joint(v: int, l: int) -> ProductBlockJoint:
    """Balanced-partition auxiliary lifted to length-L blocks of the uniform
    pair-state source."""
    from .capacity import partition_joint

    return ProductBlockJoint.from_single_letter(partition_joint(v), l)


def candidate_split_joint(source, state_ids, z) -> ExplicitBlockJoint:
    """Marginal-preserving block auxiliary for explicitly enumerated states.

    Candidates of each state are split into two classes balancing base mass
    (greedy, heaviest first); the auxiliary is the class indicator embedded
    as the all-zeros / all-ones word, so exactly one pre-transform position
    can carry information.
    """
    l = source.l
    n = 1 << l
    ones_index = n - 1
    _, transform_index, _ = _tables(l)
    candidates, p_u, w_u = [], [], []
    for sid in state_ids:
        st = source.state(sid)
        order = sorted(
            range(len(st.candidates)), key=lambda i: (-st.weights[i], i)
        )
        mass = [0.0, 0.0]
        cls = [0] * len(st.candidates)
        for i in order:
            c = 0 if mass[0] <= mass[1] else 1
            cls[i] = c
            mass[c] += st.weights[i]
        pu = np.zeros(n)
        pu[0], pu[ones_index] = mass[0], mass[1]
        mat = np.zeros((n, len(st.candidates)))
        for u_idx, c in ((0, 0), (ones_index, 1)):
            if mass[c] > 0:
                sel = np.array([st.weights[i] if cls[i] == c else 0.0 for i in range(len(cls))])
                mat[u_idx] = sel / mass[c]
        candidates.append(st.candidates)
        p_u.append(pu)
        w_u.append(mat)
    return ExplicitBlockJoint(l, state_ids, z, candidates, np.stack(p_u), w_u)
