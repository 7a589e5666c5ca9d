"""Exact finite-alphabet probability objects and information measures.

All information quantities are in bits (base-2 logs) and all laws are exact
tables, never sample estimates. The convention 0*log(0) = 0 applies
throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# A law is renormalized on construction if its mass is within this of 1,
# rejected otherwise (file-loaded laws carry rounding).
RENORM_TOL = 1e-6
# Post-construction invariant tolerance.
MASS_TOL = 1e-9


class AlphabetMismatchError(ValueError):
    """Two distributions were combined over incompatible alphabets."""


class SupportError(ValueError):
    """A support condition was violated (e.g. KL with P not dominated by Q)."""


def _clean_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1:
        raise ValueError("probability vector must be one-dimensional")
    if np.any(p < -1e-12):
        raise ValueError(f"negative probability: min={p.min()}")
    p = np.clip(p, 0.0, None)
    s = p.sum()
    if abs(s - 1.0) > RENORM_TOL:
        raise ValueError(f"probabilities sum to {s}, not 1")
    return p / s


@dataclass(frozen=True)
class Pmf:
    """Probability mass function over a finite alphabet of symbol ids.

    Ids are arbitrary hashable values (ints, tuples); probs align with ids.
    """

    ids: tuple
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate symbol ids")
        p = _clean_probs(self.probs)
        if len(p) != len(self.ids):
            raise ValueError("ids/probs length mismatch")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def prob(self, symbol) -> float:
        return float(self.probs[self.index(symbol)])

    def index(self, symbol) -> int:
        try:
            return self._index[symbol]
        except AttributeError:
            object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.ids)})
            return self._index[symbol]

    def support(self) -> tuple:
        """Ids with strictly positive probability."""
        return tuple(s for s, p in zip(self.ids, self.probs) if p > 0)

    def sample(self, rng: np.random.Generator):
        return self.ids[int(rng.choice(len(self.ids), p=self.probs))]

    @staticmethod
    def point_mass(symbol, ids=None) -> "Pmf":
        ids = (symbol,) if ids is None else tuple(ids)
        return Pmf(ids, [1.0 if s == symbol else 0.0 for s in ids])

    @staticmethod
    def uniform(ids) -> "Pmf":
        ids = tuple(ids)
        return Pmf(ids, np.full(len(ids), 1.0 / len(ids)))


@dataclass(frozen=True)
class CondPmf:
    """One Pmf per conditioning symbol. Rows may have distinct supports."""

    given_ids: tuple
    rows: tuple  # of Pmf, aligned with given_ids

    def __post_init__(self):
        object.__setattr__(self, "given_ids", tuple(self.given_ids))
        object.__setattr__(self, "rows", tuple(self.rows))
        if len(self.given_ids) != len(self.rows):
            raise ValueError("given_ids/rows length mismatch")
        if len(set(self.given_ids)) != len(self.given_ids):
            raise ValueError("duplicate conditioning ids")

    def row(self, given) -> Pmf:
        try:
            return self._index[given]
        except AttributeError:
            object.__setattr__(self, "_index", dict(zip(self.given_ids, self.rows)))
            return self._index[given]


def _aligned(p: Pmf, q: Pmf):
    if p.ids != q.ids:
        if set(p.ids) != set(q.ids):
            raise AlphabetMismatchError(f"alphabets differ: {p.ids} vs {q.ids}")
        q = Pmf(p.ids, [q.prob(s) for s in p.ids])
    return p.probs, q.probs


def tv_distance(p: Pmf, q: Pmf) -> float:
    """Total variation distance (1/2) * sum |P - Q|, in [0, 1]."""
    a, b = _aligned(p, q)
    return 0.5 * float(np.abs(a - b).sum())


def kl_divergence(p: Pmf, q: Pmf) -> float:
    """KL divergence D(P || Q) in bits. Requires supp(P) within supp(Q)."""
    a, b = _aligned(p, q)
    mask = a > 0
    if np.any(b[mask] <= 0):
        raise SupportError("supp(P) not contained in supp(Q): divergence is infinite")
    return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))


def entropy_bits(probs) -> float:
    """Shannon entropy in bits of a probability vector, 0*log(0) = 0."""
    p = np.asarray(probs, dtype=float)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def entropy(p: Pmf) -> float:
    return entropy_bits(p.probs)


_AXIS = {"S": 0, "U": 1, "X": 2}


@dataclass(frozen=True)
class JointLaw:
    """Factorized joint law P_S(s) * P(u|s) * W(x|u,s) over finite alphabets.

    Stored factorized so the marginal constraint of the covert-rate problem
    and the exact state-distribution update can be evaluated without
    re-factorization.
    """

    s_ids: tuple
    u_ids: tuple
    x_ids: tuple
    p_s: np.ndarray = field(repr=False)          # (nS,)
    p_u_given_s: np.ndarray = field(repr=False)  # (nS, nU), rows sum to 1
    w: np.ndarray = field(repr=False)            # (nS, nU, nX); rows sum to 1
    # except all-zero rows at infeasible (s, u) pairs

    def __post_init__(self):
        object.__setattr__(self, "s_ids", tuple(self.s_ids))
        object.__setattr__(self, "u_ids", tuple(self.u_ids))
        object.__setattr__(self, "x_ids", tuple(self.x_ids))
        p_s = np.asarray(self.p_s, dtype=float)
        p_us = np.asarray(self.p_u_given_s, dtype=float)
        w = np.asarray(self.w, dtype=float)
        ns, nu, nx = len(self.s_ids), len(self.u_ids), len(self.x_ids)
        if p_s.shape != (ns,) or p_us.shape != (ns, nu) or w.shape != (ns, nu, nx):
            raise ValueError("factor shape mismatch")
        total = float((p_s[:, None, None] * p_us[:, :, None] * w).sum())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"joint mass {total} differs from 1 beyond tolerance")
        for arr in (p_s, p_us, w):
            arr.setflags(write=False)
        object.__setattr__(self, "p_s", p_s)
        object.__setattr__(self, "p_u_given_s", p_us)
        object.__setattr__(self, "w", w)

    @staticmethod
    def from_components(s_pmf: Pmf, u_rows: dict, w_rows: dict) -> "JointLaw":
        """Assemble from a state Pmf, per-state U rows and per-(s,u) X rows.

        `u_rows[s]` is a Pmf over auxiliary symbols, `w_rows[(s, u)]` a Pmf
        over tokens; alphabets are the unions over rows, missing entries get
        probability zero.
        """
        s_ids = s_pmf.ids
        u_ids = tuple(sorted({u for r in u_rows.values() for u in r.ids}, key=repr))
        x_ids = tuple(sorted({x for r in w_rows.values() for x in r.ids}, key=repr))
        u_pos = {u: j for j, u in enumerate(u_ids)}
        x_pos = {x: k for k, x in enumerate(x_ids)}
        ns, nu, nx = len(s_ids), len(u_ids), len(x_ids)
        p_us = np.zeros((ns, nu))
        # rows for zero-probability (s, u) pairs stay all-zero, marking the
        # auxiliary value infeasible at that state
        w = np.zeros((ns, nu, nx))
        for i, s in enumerate(s_ids):
            row = u_rows[s]
            for u, pu in zip(row.ids, row.probs):
                p_us[i, u_pos[u]] = pu
                if pu > 0 or (s, u) in w_rows:
                    wr = w_rows[(s, u)]
                    for x, px in zip(wr.ids, wr.probs):
                        w[i, u_pos[u], x_pos[x]] = px
        return JointLaw(s_ids, u_ids, x_ids, s_pmf.probs, p_us, w)

    def table(self) -> np.ndarray:
        """Dense joint tensor indexed (s, u, x), memoized."""
        try:
            return self._table
        except AttributeError:
            t = self.p_s[:, None, None] * self.p_u_given_s[:, :, None] * self.w
            t.setflags(write=False)
            object.__setattr__(self, "_table", t)
            return t

    def marginal(self, axes: str) -> np.ndarray:
        """Marginal over the named axes, e.g. "UX" -> array (nU, nX)."""
        keep = sorted(_AXIS[a] for a in axes)
        drop = tuple(i for i in range(3) if i not in keep)
        return self.table().sum(axis=drop)

    def entropy_of(self, axes: str) -> float:
        return entropy_bits(self.marginal(axes).ravel())

    def conditional_entropy(self, target: str, given: str) -> float:
        """H(target | given) computed from the marginalized joint."""
        joint = self.entropy_of("".join(sorted(set(target + given), key=_AXIS.get)))
        return joint - self.entropy_of(given)

    def mutual_information(self, a: str, b: str) -> float:
        """I(A;B) = H(A) + H(B) - H(A,B), nonnegative up to roundoff."""
        ab = "".join(sorted(a + b, key=_AXIS.get))
        return self.entropy_of(a) + self.entropy_of(b) - self.entropy_of(ab)

    def conditional_mutual_information(self, a: str, b: str, given: str) -> float:
        """I(A;B | C) via H(A,C) + H(B,C) - H(A,B,C) - H(C)."""
        key = lambda axes: "".join(sorted(set(axes), key=_AXIS.get))
        return (
            self.entropy_of(key(a + given))
            + self.entropy_of(key(b + given))
            - self.entropy_of(key(a + b + given))
            - self.entropy_of(key(given))
        )

    def check_marginal(self, base_s: Pmf, base_x_given_s: CondPmf) -> float:
        """Max abs deviation of sum_u P(s,u,x) from the reference P_S(s)*P(x|s)."""
        if base_s.ids != self.s_ids:
            raise AlphabetMismatchError("state alphabets differ")
        induced = (self.p_u_given_s[:, :, None] * self.w).sum(axis=1)  # (nS, nX)
        induced *= self.p_s[:, None]
        x_pos = {x: k for k, x in enumerate(self.x_ids)}
        ref = np.zeros_like(induced)
        for i, s in enumerate(self.s_ids):
            row = base_x_given_s.row(s)
            for x, px in zip(row.ids, row.probs):
                ref[i, x_pos[x]] = base_s.probs[i] * px
        return float(np.abs(induced - ref).max())


def mutual_information(joint: JointLaw, a: str, b: str) -> float:
    return joint.mutual_information(a, b)


def conditional_entropy(joint: JointLaw, target: str, given: str) -> float:
    return joint.conditional_entropy(target, given)


def check_marginal(joint: JointLaw, base_s: Pmf, base_x_given_s: CondPmf) -> float:
    return joint.check_marginal(base_s, base_x_given_s)


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)
