"""Block-autoregressive cover sources.

A cover source produces per-block states; each state carries a law over
candidate token blocks of length L, and a transition law mapping the realized
block to the next state. Two concrete sources are provided: the synthetic
pair source (uniform two-point token distributions, i.i.d. across positions
and blocks) and a source loaded from a block-law file emitted by a model
adapter.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .prob import CondPmf, Pmf

WEIGHT_TOL = 1e-6
SCHEMA_VERSION = 1


class BlockLawSchemaError(ValueError):
    """The block-law file does not match the expected structure."""


class WeightSumError(BlockLawSchemaError):
    """Candidate weights of a state do not sum to one."""


class DanglingStateError(BlockLawSchemaError):
    """A candidate references a state id that does not exist."""


@dataclass(frozen=True)
class BlockState:
    """One state of the cover process: candidate blocks and their weights."""

    id: object
    candidates: tuple          # token tuples of length L
    weights: np.ndarray
    next_states: tuple         # next state id per candidate, None at last depth

    def block_law(self) -> Pmf:
        return Pmf(self.candidates, self.weights)


class PairSource:
    """Uniform pair-state source: every per-token state is an unordered token
    pair carrying probability 1/2 on each member; block states are L-fold
    products of i.i.d. per-token states, resampled independently per block."""

    def __init__(self, v: int, l: int, b: int = 1):
        if v < 2:
            raise ValueError(f"vocabulary size must be at least 2, got {v}")
        if l < 1:
            raise ValueError(f"block length must be at least 1, got {l}")
        self.v = v
        self.l = l
        self.b = b
        self.pairs = tuple(itertools.combinations(range(v), 2))
        self.cross_prob = None  # set by capacity helpers when needed

    # block-state ids are tuples of pair indices, one per position
    def sample_initial_state(self, rng: np.random.Generator):
        return tuple(int(i) for i in rng.integers(0, len(self.pairs), size=self.l))

    def state(self, state_id) -> BlockState:
        per_pos = [self.pairs[i] for i in state_id]
        candidates = tuple(itertools.product(*per_pos))
        n = len(candidates)
        return BlockState(state_id, candidates, np.full(n, 1.0 / n), (None,) * n)

    def token_pair(self, pair_index):
        return self.pairs[pair_index]

    def next_state(self, state_id, block, rng: np.random.Generator):
        # memoryless: states are redrawn i.i.d. each block
        return self.sample_initial_state(rng)

    def single_letter_base(self):
        """Per-token state prior and token law, for capacity evaluation."""
        n = len(self.pairs)
        prior = Pmf(self.pairs, np.full(n, 1.0 / n))
        rows = CondPmf(self.pairs, tuple(Pmf.uniform(p) for p in self.pairs))
        return prior, rows


def pair_source(v: int, l: int, b: int = 1) -> PairSource:
    """Construct the uniform pair-state source."""
    return PairSource(v, l, b)


class FileSource:
    """Cover source backed by an explicit depth-B candidate tree."""

    def __init__(self, v, l, b, q, states: dict, initial: Pmf):
        self.v = v
        self.l = l
        self.b = b
        self.q = q
        self.states = states      # id -> BlockState
        self.initial = initial

    def sample_initial_state(self, rng: np.random.Generator):
        return self.initial.sample(rng)

    def state(self, state_id) -> BlockState:
        return self.states[state_id]

    def next_state(self, state_id, block, rng: np.random.Generator):
        st = self.states[state_id]
        return st.next_states[st.candidates.index(tuple(block))]

    def states_at_depth(self, depth: int):
        """State ids reachable at a given block index (1-based)."""
        ids = set(self.initial.support())
        for _ in range(depth - 1):
            ids = {
                ns
                for sid in ids
                for ns in self.states[sid].next_states
                if ns is not None
            }
        return sorted(ids)


def _require(cond, err_cls, msg):
    if not cond:
        raise err_cls(msg)


def load_source(path) -> FileSource:
    """Load and validate a block-law file (see file format in export_source)."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise BlockLawSchemaError(f"not valid JSON: {exc}") from exc
    return parse_source(doc)


def parse_source(doc) -> FileSource:
    _require(isinstance(doc, dict), BlockLawSchemaError, "top level must be an object")
    for key in ("version", "V", "L", "B", "Q", "states", "initial"):
        _require(key in doc, BlockLawSchemaError, f"missing key {key!r}")
    unknown = set(doc) - {"version", "V", "L", "B", "Q", "states", "initial"}
    _require(not unknown, BlockLawSchemaError, f"unknown keys {sorted(unknown)}")
    v, l, b, q = doc["V"], doc["L"], doc["B"], doc["Q"]
    for name, val in (("V", v), ("L", l), ("B", b), ("Q", q)):
        _require(
            isinstance(val, int) and val >= 1,
            BlockLawSchemaError,
            f"{name} must be a positive integer",
        )

    states = {}
    for entry in doc["states"]:
        _require(
            isinstance(entry, dict) and set(entry) == {"id", "candidates"},
            BlockLawSchemaError,
            "state entries must have exactly keys id, candidates",
        )
        sid = entry["id"]
        _require(sid not in states, BlockLawSchemaError, f"duplicate state id {sid}")
        cands, weights, nexts = [], [], []
        _require(
            1 <= len(entry["candidates"]) <= q,
            BlockLawSchemaError,
            f"state {sid}: candidate count outside [1, Q]",
        )
        for c in entry["candidates"]:
            _require(
                isinstance(c, dict) and set(c) == {"tokens", "weight", "next_state"},
                BlockLawSchemaError,
                "candidates must have exactly keys tokens, weight, next_state",
            )
            toks = tuple(c["tokens"])
            _require(
                len(toks) == l and all(isinstance(t, int) and 0 <= t < v for t in toks),
                BlockLawSchemaError,
                f"state {sid}: tokens must be {l} ints in [0, {v})",
            )
            cands.append(toks)
            weights.append(float(c["weight"]))
            nexts.append(c["next_state"])
        _require(
            len(set(cands)) == len(cands),
            BlockLawSchemaError,
            f"state {sid}: duplicate candidate token blocks",
        )
        wsum = sum(weights)
        _require(
            abs(wsum - 1.0) <= WEIGHT_TOL,
            WeightSumError,
            f"state {sid}: weights sum to {wsum}",
        )
        states[sid] = BlockState(sid, tuple(cands), np.asarray(weights), tuple(nexts))

    init_ids, init_probs = [], []
    for entry in doc["initial"]:
        _require(
            isinstance(entry, dict) and set(entry) == {"state", "prob"},
            BlockLawSchemaError,
            "initial entries must have exactly keys state, prob",
        )
        init_ids.append(entry["state"])
        init_probs.append(float(entry["prob"]))
    _require(bool(init_ids), BlockLawSchemaError, "empty initial distribution")
    psum = sum(init_probs)
    _require(abs(psum - 1.0) <= WEIGHT_TOL, WeightSumError, f"initial probs sum to {psum}")
    initial = Pmf(init_ids, init_probs)

    # transitions must be total: every referenced child exists, and depth
    # bookkeeping holds (next_state null exactly at depth B)
    for sid in init_ids:
        _require(sid in states, DanglingStateError, f"initial state {sid} undefined")
    depth = {sid: 1 for sid in init_ids}
    frontier = list(init_ids)
    seen = set(frontier)
    while frontier:
        nxt = []
        for sid in frontier:
            st = states[sid]
            for ns in st.next_states:
                if depth[sid] == b:
                    _require(
                        ns is None,
                        BlockLawSchemaError,
                        f"state {sid} at depth {b} must have null next_state",
                    )
                    continue
                _require(
                    ns is not None,
                    BlockLawSchemaError,
                    f"state {sid} at depth {depth[sid]} has null next_state",
                )
                _require(ns in states, DanglingStateError, f"next_state {ns} undefined")
                if ns not in seen:
                    seen.add(ns)
                    depth[ns] = depth[sid] + 1
                    nxt.append(ns)
        frontier = nxt

    return FileSource(v, l, b, q, states, initial)


def _fmt(x: float) -> float:
    # 17 significant digits round-trips any double exactly
    return float(f"{x:.17g}")


def source_document(src: FileSource) -> dict:
    states = []
    for sid in sorted(src.states, key=repr):
        st = src.states[sid]
        states.append(
            {
                "id": sid,
                "candidates": [
                    {
                        "tokens": list(c),
                        "weight": _fmt(float(w)),
                        "next_state": ns,
                    }
                    for c, w, ns in zip(st.candidates, st.weights, st.next_states)
                ],
            }
        )
    return {
        "version": SCHEMA_VERSION,
        "V": src.v,
        "L": src.l,
        "B": src.b,
        "Q": src.q,
        "states": states,
        "initial": [
            {"state": sid, "prob": _fmt(src.initial.prob(sid))}
            for sid in src.initial.ids
        ],
    }


def canonical_dumps(doc: dict) -> str:
    """Canonical block-law serialization: sorted keys, 17-digit reals."""
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def export_source(src: FileSource, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_dumps(source_document(src)))


def sample_trajectory(src, seed, blocks=None):
    """State ids visited over one run under the base (unwatermarked) law."""
    rng = np.random.default_rng(seed)
    b = src.b if blocks is None else blocks
    path = []
    state_id = src.sample_initial_state(rng)
    for _ in range(b):
        path.append(state_id)
        block = src.state(state_id).block_law().sample(rng)
        state_id = src.next_state(state_id, block, rng)
    return path
