"""End-to-end multi-block embedding, detection and the evaluation loops:
bit error rate versus embedding rate, and covertness (total variation)
versus number of key bits."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .polar import (
    KeySchedule,
    compute_index_sets,
    default_schedule,
    emit_tokens,
    map_decode,
    sampler_v_law,
    sc_encode,
    sweep_schedule,
)

TV_STATE_CAP = 20_000


class SourceMismatchError(ValueError):
    """Observed tokens are impossible under the configured source."""


@dataclass
class WatermarkConfig:
    source: object
    joints: list        # block joint per block
    specs: list         # PolarSpec per block
    seed: int = 0
    key_bits: int | None = None  # per-block sweep override; None = OTP only

    def __post_init__(self):
        if len(self.joints) != len(self.specs):
            raise ValueError("need one index-set spec per block joint")
        if len(self.joints) > self.source.b:
            raise ValueError("more blocks configured than the source depth")
        for joint, spec in zip(self.joints, self.specs):
            if joint.l != spec.l:
                raise ValueError("index-set spec blocklength differs from joint")

    @property
    def blocks(self) -> int:
        return len(self.joints)

    def schedule(self, block: int) -> KeySchedule:
        if self.key_bits is None:
            return default_schedule(self.specs[block])
        return sweep_schedule(self.specs[block], self.key_bits)

    def message_bits(self) -> int:
        return sum(len(s.message_set) for s in self.specs)

    def key_bits_required(self) -> int:
        if self.key_bits is None:
            return sum(s.otp_bits for s in self.specs)
        return sum(self.schedule(b).total_bits for b in range(self.blocks))

    def rate_bits_per_token(self) -> float:
        return self.message_bits() / (self.blocks * self.source.l)


@dataclass
class RunReport:
    ber: float
    rate_bits_per_token: float
    avg_tv: float
    trials: int
    logloss_proxy: float = float("nan")

    def __post_init__(self):
        if not 0.0 <= self.ber <= 1.0:
            raise ValueError(f"bit error rate {self.ber} outside [0, 1]")


def _key_slices(cfg: WatermarkConfig):
    slices, offset = [], 0
    for b in range(cfg.blocks):
        if cfg.key_bits is None:
            n = cfg.specs[b].otp_bits
        else:
            n = cfg.schedule(b).total_bits
        slices.append((offset, offset + n))
        offset += n
    return slices


def embed(cfg: WatermarkConfig, msg, key, rng=None):
    """Embed a message across blocks; returns (tokens, realized state path)."""
    if len(msg) != cfg.message_bits():
        raise ValueError(f"message must have {cfg.message_bits()} bits")
    if len(key) < cfg.key_bits_required():
        raise ValueError(f"key must have at least {cfg.key_bits_required()} bits")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    src = cfg.source
    tokens, path = [], []
    state = src.sample_initial_state(rng)
    m_off = 0
    for b, (k_lo, k_hi) in enumerate(_key_slices(cfg)):
        spec, joint = cfg.specs[b], cfg.joints[b]
        n_msg = len(spec.message_set)
        sched = cfg.schedule(b)
        _, u = sc_encode(
            spec, joint, state, msg[m_off : m_off + n_msg], rng,
            key[k_lo:k_hi], schedule=sched,
        )
        x = emit_tokens(joint, state, u, rng)
        tokens.extend(x)
        path.append(state)
        m_off += n_msg
        if b + 1 < cfg.blocks:
            state = src.next_state(state, x, rng)
    return tokens, path


def detect(cfg: WatermarkConfig, tokens, key):
    """Recover the message from tokens with the shared per-block joints."""
    expected = cfg.blocks * cfg.source.l
    if len(tokens) != expected:
        raise ValueError(f"expected {expected} tokens, got {len(tokens)}")
    out = []
    for b, (k_lo, k_hi) in enumerate(_key_slices(cfg)):
        spec, joint = cfg.specs[b], cfg.joints[b]
        x = tuple(tokens[b * cfg.source.l : (b + 1) * cfg.source.l])
        try:
            out.extend(
                map_decode(spec, joint, x, key[k_lo:k_hi], schedule=cfg.schedule(b))
            )
        except ValueError as exc:
            raise SourceMismatchError(str(exc)) from exc
    return out


# ---------------------------------------------------------------------------
# covertness measurement


def _emission_table(joint, sid):
    """(candidate tuples, matrix P(x | V=v, state) of shape (2^L, nC))."""
    if hasattr(joint, "w_u"):  # explicit joint
        from .polar import _tables

        i = joint._index[sid]
        _, transform_index, _ = _tables(joint.l)
        return joint.candidates[i], joint.w_u[i][transform_index]
    supports = []
    for s in sid:
        support = [x for x in range(joint.v) if joint.w[s, :, x].max() > 0]
        supports.append(support)
    cands = list(itertools.product(*supports))
    n = 1 << joint.l
    mat = np.empty((n, len(cands)))
    for v_idx in range(n):
        rows = joint.emission_rows(sid, _u_index(joint.l, v_idx))
        for ci, cand in enumerate(cands):
            mat[v_idx, ci] = math.prod(r[x] for r, x in zip(rows, cand))
    return cands, mat


def _u_index(l, v_idx):
    from .polar import _tables

    _, transform_index, _ = _tables(l)
    return int(transform_index[v_idx])


def induced_tv(cfg: WatermarkConfig, msg, key_bit_count: int, mode: str = "exact",
               trials: int = 20_000, seed: int = 0) -> float:
    """TV between the key-averaged induced (state, tokens) joint for a fixed
    message and the base joint. Exact mode enumerates states, keys and the
    encoder's local randomness; Monte Carlo mode uses the plug-in estimate
    over the enumerated block support."""
    if cfg.blocks != 1:
        raise ValueError("covertness is measured one block at a time")
    spec, joint = cfg.specs[0], cfg.joints[0]
    sched = sweep_schedule(spec, key_bit_count)
    if len(msg) != len(spec.message_set):
        raise ValueError(f"message must have {len(spec.message_set)} bits")
    if mode == "exact":
        return _exact_tv(cfg, spec, joint, msg, sched)
    if mode == "mc":
        return _mc_tv(cfg, spec, joint, msg, sched, trials, seed)
    raise ValueError(f"unknown mode {mode!r}")


def _exact_tv(cfg, spec, joint, msg, sched) -> float:
    src = cfg.source
    n_keys = 1 << sched.total_bits
    total = 0.0
    for sid, p_s in joint.enumerate_states(cap=TV_STATE_CAP):
        if p_s == 0:
            continue
        cands, emat = _emission_table(joint, sid)
        base_law = src.state(sid).block_law()
        cells = list(cands) + [c for c in base_law.ids if c not in set(cands)]
        cand_pos = {c: i for i, c in enumerate(cells)}
        induced = np.zeros(len(cells))
        acc = np.zeros(len(cands))
        for key_val in range(n_keys):
            key = [(key_val >> i) & 1 for i in range(sched.total_bits)]
            v_law = sampler_v_law(spec, joint, sid, msg, key, schedule=sched)
            acc += v_law @ emat
        induced[: len(cands)] = acc / n_keys
        base = np.zeros(len(cells))
        for c, w in zip(base_law.ids, base_law.probs):
            base[cand_pos[c]] += w
        total += p_s * 0.5 * np.abs(induced - base).sum()
    return float(total)


def _mc_tv(cfg, spec, joint, msg, sched, trials, seed) -> float:
    src = cfg.source
    counts = {}
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        sid = src.sample_initial_state(rng)
        key = list(rng.integers(0, 2, size=sched.total_bits))
        _, u = sc_encode(spec, joint, sid, msg, rng, key, schedule=sched)
        x = emit_tokens(joint, sid, u, rng)
        counts[(sid, x)] = counts.get((sid, x), 0) + 1
    # plug-in TV against the exact base joint over observed and base cells
    base_cells = {}
    for sid, p_s in joint.enumerate_states(cap=TV_STATE_CAP):
        law = src.state(sid).block_law()
        for c, w in zip(law.ids, law.probs):
            if p_s * w > 0:
                base_cells[(sid, c)] = p_s * w
    cells = set(counts) | set(base_cells)
    return 0.5 * sum(
        abs(counts.get(c, 0) / trials - base_cells.get(c, 0.0)) for c in cells
    )


# ---------------------------------------------------------------------------
# sweeps


def run_trials(cfg: WatermarkConfig, trials: int, seed: int) -> RunReport:
    """Monte Carlo embed/detect round trips with fresh messages and keys."""
    n_msg = cfg.message_bits()
    n_key = cfg.key_bits_required()
    errors = 0
    logloss = []
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        msg = list(rng.integers(0, 2, size=n_msg))
        key = list(rng.integers(0, 2, size=n_key))
        tokens, path = embed(cfg, msg, key, rng=rng)
        est = detect(cfg, tokens, key)
        errors += sum(a != b for a, b in zip(msg, est))
        ll = 0.0
        for b, sid in enumerate(path):
            law = cfg.source.state(sid).block_law()
            x = tuple(tokens[b * cfg.source.l : (b + 1) * cfg.source.l])
            ll -= math.log2(law.prob(x))
        logloss.append(ll / (cfg.blocks * cfg.source.l))
    total_bits = trials * n_msg
    ber = errors / total_bits if total_bits else 0.0
    return RunReport(
        ber=ber,
        rate_bits_per_token=cfg.rate_bits_per_token(),
        avg_tv=float("nan"),
        trials=trials,
        logloss_proxy=float(math.fsum(logloss) / len(logloss)) if logloss else float("nan"),
    )


def _binomial_ci95(p: float, n: int) -> float:
    if n == 0:
        return 0.0
    return 1.96 * math.sqrt(max(p * (1 - p), 0.0) / n)


def ber_sweep(source, joint_builder, t_eps_ladder, blocks: int,
              t_delta: float = 0.1, trials: int = 2000, seed: int = 0):
    """Rows (rate, ber, ci95, report) across an encoder-threshold ladder."""
    rows = []
    for point, t_eps in enumerate(t_eps_ladder):
        joints = [joint_builder(b) for b in range(blocks)]
        specs = [compute_index_sets(j, t_delta=t_delta, t_eps=t_eps) for j in joints]
        cfg = WatermarkConfig(source=source, joints=joints, specs=specs, seed=seed)
        report = run_trials(cfg, trials, seed=(seed, point))
        ci = _binomial_ci95(report.ber, trials * cfg.message_bits())
        rows.append((cfg.rate_bits_per_token(), report.ber, ci, report))
    return rows


def tv_sweep(cfg: WatermarkConfig, key_bit_counts, mode: str = "exact",
             trials: int = 20_000, seed: int = 0, max_messages: int = 64):
    """Rows (key_bits, avg_tv, ci95) averaging the per-message exact or
    Monte Carlo TV over the message set."""
    spec = cfg.specs[0]
    n_msg = len(spec.message_set)
    if 1 << n_msg <= max_messages:
        messages = [list(bits) for bits in itertools.product((0, 1), repeat=n_msg)]
    else:
        rng = np.random.default_rng(seed)
        messages = [list(rng.integers(0, 2, size=n_msg)) for _ in range(max_messages)]
    rows = []
    for k in key_bit_counts:
        tvs = [
            induced_tv(cfg, msg, k, mode=mode, trials=trials, seed=(seed, k, i))
            for i, msg in enumerate(messages)
        ]
        avg = float(math.fsum(tvs) / len(tvs))
        if mode == "exact":
            ci = 0.0
        else:
            sd = float(np.std(tvs, ddof=1)) if len(tvs) > 1 else 0.0
            ci = 1.96 * sd / math.sqrt(len(tvs))
        rows.append((int(k), avg, ci))
    return rows


# ---------------------------------------------------------------------------
# reproducible outputs


def format_float(x: float) -> str:
    return repr(float(x))


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(
                str(v) if isinstance(v, int) else format_float(v) for v in row
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def git_blob_sha1(data: bytes) -> str:
    h = hashlib.sha1()
    h.update(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


def config_sha256(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(path, command: str, config: dict, seed, input_paths=(), outputs=()):
    inputs = {}
    for p in input_paths:
        with open(p, "rb") as fh:
            inputs[str(p)] = git_blob_sha1(fh.read())
    out_hashes = {}
    for p in outputs:
        with open(p, "rb") as fh:
            out_hashes[str(p).rsplit("/", 1)[-1]] = hashlib.sha256(fh.read()).hexdigest()
    doc = {
        "command": command,
        "config": config,
        "config_sha256": config_sha256(config),
        "seed": seed,
        "inputs": inputs,
        "outputs": out_hashes,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return doc
