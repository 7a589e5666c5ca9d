"""Pre-sampling block-law extraction.

For each context the adapter samples a pool of length-L continuations with
temperature and top-K filtering, deduplicates them, scores every candidate by
its exact log-likelihood under the base (untempered) model, retains the top
Q, and turns the scores into softmax weights. Recursing block by block yields
a depth-B candidate tree serialized in the block-law JSON format consumed by
the watermarking library.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch


@dataclass(frozen=True)
class AdapterConfig:
    model_id: str
    temperature: float = 0.8
    top_k: int = 50
    pool_size: int = 64          # candidates sampled per context before dedup
    retain: int = 20             # Q, candidates kept after scoring
    block_len: int = 8           # L
    blocks: int = 2              # B
    prompts_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.retain > self.pool_size:
            raise ValueError("cannot retain more candidates than the pool holds")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.block_len < 1 or self.blocks < 1:
            raise ValueError("block length and depth must be positive")


def softmax_weights(log_likelihoods) -> np.ndarray:
    """Normalized softmax over raw (natural-log) likelihood scores."""
    scores = np.asarray(log_likelihoods, dtype=float)
    e = np.exp(scores - scores.max())
    return e / e.sum()


class ModelAdapter:
    """Wraps a causal LM for pool sampling, scoring and tree export.

    `model` and `tokenize` may be injected (tests use a tiny randomly
    initialized model); otherwise they are loaded from `cfg.model_id` via
    transformers.
    """

    def __init__(self, cfg: AdapterConfig, model=None, tokenize=None):
        self.cfg = cfg
        if model is None:
            from transformers import AutoModelForCausalLM

            model = AutoModelForCausalLM.from_pretrained(cfg.model_id)
        self.model = model.eval()
        if tokenize is None:
            from transformers import AutoTokenizer

            tok = AutoTokenizer.from_pretrained(cfg.model_id)
            tokenize = lambda text: tok.encode(text)
        self.tokenize = tokenize
        self.vocab_size = int(self.model.config.vocab_size)
        n_positions = getattr(self.model.config, "n_positions", None)
        if n_positions is not None:
            # every depth-B path must fit the context window
            budget = cfg.blocks * cfg.block_len
            if budget >= n_positions:
                raise ValueError(
                    f"B*L = {budget} exceeds the model context of {n_positions}"
                )

    # -- sampling ------------------------------------------------------------
    def build_pool(self, context_ids, seed: int | None = None):
        """Sample pool_size length-L continuations independently with
        temperature + top-K, then deduplicate (identity is the token tuple)."""
        cfg = self.cfg
        gen = torch.Generator().manual_seed(cfg.seed if seed is None else seed)
        ctx = torch.tensor([list(context_ids)], dtype=torch.long)
        batch = ctx.repeat(cfg.pool_size, 1)
        try:
            for _ in range(cfg.block_len):
                with torch.no_grad():
                    logits = self.model(batch).logits[:, -1, :]
                logits = logits / cfg.temperature
                k = min(cfg.top_k, logits.shape[-1])
                top_vals, top_idx = torch.topk(logits, k, dim=-1)
                probs = torch.softmax(top_vals, dim=-1)
                pick = torch.multinomial(probs, 1, generator=gen)
                nxt = torch.gather(top_idx, 1, pick)
                batch = torch.cat([batch, nxt], dim=1)
        except RuntimeError as exc:
            raise RuntimeError(
                f"sampling failed for model {cfg.model_id!r}: {exc}"
            ) from exc
        pool = [tuple(int(t) for t in row[len(context_ids):]) for row in batch]
        seen, unique = set(), []
        for cand in pool:
            if cand not in seen:
                seen.add(cand)
                unique.append(cand)
        return unique

    # -- scoring -------------------------------------------------------------
    def log_likelihoods(self, context_ids, candidates) -> np.ndarray:
        """Sum of per-token log-probabilities under the untempered model."""
        ctx_len = len(context_ids)
        rows = [list(context_ids) + list(c) for c in candidates]
        batch = torch.tensor(rows, dtype=torch.long)
        with torch.no_grad():
            logits = self.model(batch).logits
        logprobs = torch.log_softmax(logits, dim=-1)
        out = []
        for i, cand in enumerate(candidates):
            total = 0.0
            for t, tok in enumerate(cand):
                total += float(logprobs[i, ctx_len - 1 + t, tok])
            out.append(total)
        return np.array(out)

    def score_and_retain(self, pool, context_ids):
        """Top-Q candidates by log-likelihood with softmax weights."""
        if not pool:
            raise ValueError("empty candidate pool")
        scores = self.log_likelihoods(context_ids, pool)
        order = sorted(range(len(pool)), key=lambda i: (-scores[i], pool[i]))
        keep = order[: self.cfg.retain]
        cands = [pool[i] for i in keep]
        weights = softmax_weights(scores[keep])
        return cands, weights

    # -- tree export ----------------------------------------------------------
    def build_tree(self, prompts):
        """Depth-B candidate tree over all prompts; returns the block-law
        document (dict) in the watermarking library's file format."""
        cfg = self.cfg
        states = []
        initial = []
        counter = 0

        def next_id():
            nonlocal counter
            counter += 1
            return counter - 1

        def expand(context_ids, depth, salt):
            sid = next_id()
            pool = self.build_pool(context_ids, seed=cfg.seed + salt)
            cands, weights = self.score_and_retain(pool, context_ids)
            entries = []
            for j, (cand, w) in enumerate(zip(cands, weights)):
                child = None
                if depth < cfg.blocks:
                    child = expand(
                        list(context_ids) + list(cand), depth + 1,
                        salt * 131 + j + 1,
                    )
                entries.append(
                    {"tokens": list(cand), "weight": float(w), "next_state": child}
                )
            states.append({"id": sid, "candidates": entries})
            return sid

        for p_idx, prompt in enumerate(prompts):
            ctx = list(self.tokenize(prompt))
            if not ctx:
                raise ValueError(f"prompt {p_idx} tokenized to nothing")
            root = expand(ctx, 1, p_idx + 1)
            initial.append({"state": root, "prob": 1.0 / len(prompts)})

        states.sort(key=lambda s: s["id"])
        return {
            "version": 1,
            "V": self.vocab_size,
            "L": cfg.block_len,
            "B": cfg.blocks,
            "Q": cfg.retain,
            "states": states,
            "initial": initial,
        }

    def export_tree(self, out_path, prompts=None):
        """Build the tree and write it atomically in canonical form."""
        cfg = self.cfg
        if prompts is None:
            if cfg.prompts_path is None:
                raise ValueError("no prompts given and no prompts_path configured")
            with open(cfg.prompts_path, encoding="utf-8") as fh:
                prompts = [line.rstrip("\n") for line in fh if line.strip()]
        doc = self.build_tree(prompts)
        _self_check(doc)
        payload = canonical_dumps(doc)
        out_path = Path(out_path)
        fd, tmp = tempfile.mkstemp(dir=out_path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, out_path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return doc


def canonical_dumps(doc: dict) -> str:
    """Canonical block-law serialization: sorted keys, 17-digit reals."""

    def fmt(obj):
        if isinstance(obj, float):
            return float(f"{obj:.17g}")
        if isinstance(obj, list):
            return [fmt(v) for v in obj]
        if isinstance(obj, dict):
            return {k: fmt(v) for k, v in obj.items()}
        return obj

    return json.dumps(fmt(doc), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _self_check(doc):
    """Abort before writing if the document violates the file contract."""
    ids = {s["id"] for s in doc["states"]}
    if len(ids) != len(doc["states"]):
        raise AssertionError("duplicate state ids in export")
    for s in doc["states"]:
        total = math.fsum(c["weight"] for c in s["candidates"])
        if abs(total - 1.0) > 1e-6:
            raise AssertionError(f"state {s['id']}: weights sum to {total}")
        if len(s["candidates"]) > doc["Q"]:
            raise AssertionError(f"state {s['id']}: more than Q candidates")
        for c in s["candidates"]:
            if len(c["tokens"]) != doc["L"]:
                raise AssertionError("candidate length differs from L")
            if c["next_state"] is not None and c["next_state"] not in ids:
                raise AssertionError(f"dangling child {c['next_state']}")
    if abs(math.fsum(e["prob"] for e in doc["initial"]) - 1.0) > 1e-6:
        raise AssertionError("initial probabilities do not sum to 1")
