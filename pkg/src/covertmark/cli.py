"""Command-line entry point: capacity evaluation, policy training, code
construction and the BER / covertness sweeps.

Structured options come from a JSON config (validated against a strict
schema, unknown keys rejected); flags cover paths, seeds and worker counts.
Exit codes: 0 success, 2 config error, 3 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from jsonschema import Draft202012Validator

from . import capacity as cap
from .cmdp import CmdpConfig, primal_dual_train
from .pipeline import (
    WatermarkConfig,
    _binomial_ci95,
    run_trials,
    tv_sweep,
    write_csv,
    write_manifest,
)
from .polar import (
    ProductBlockJoint,
    candidate_split_joint,
    compute_index_sets,
    pair_partition_block_joint,
)
from .sources import FileSource, PairSource, load_source


class ConfigError(ValueError):
    pass


_SOURCE = {
    "type": "object",
    "oneOf": [
        {
            "properties": {"kind": {"const": "pair"}, "v": {"type": "integer", "minimum": 2}},
            "required": ["kind", "v"],
            "additionalProperties": False,
        },
        {
            "properties": {"kind": {"const": "file"}, "path": {"type": "string"}},
            "required": ["kind", "path"],
            "additionalProperties": False,
        },
    ],
}

_AUX = {
    "type": "object",
    "oneOf": [
        {
            "properties": {"kind": {"const": "partition"}},
            "required": ["kind"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "soft"},
                "q": {"type": "array", "items": {"type": "number"}},
            },
            "required": ["kind", "q"],
            "additionalProperties": False,
        },
    ],
}

_COMMON = {
    "seed": {"type": "integer"},
    "outdir": {"type": "string"},
}

SCHEMAS = {
    "capacity": {
        "type": "object",
        "properties": {
            "source": _SOURCE,
            "u_size": {"type": "integer", "minimum": 2},
            "restarts": {"type": "integer", "minimum": 0},
            **_COMMON,
        },
        "required": ["source"],
        "additionalProperties": False,
    },
    "train": {
        "type": "object",
        "properties": {
            "source": _SOURCE,
            "l": {"type": "integer", "minimum": 1},
            "b": {"type": "integer", "minimum": 1},
            "u_block_size": {"type": "integer", "minimum": 2},
            "gamma": {"type": "number"},
            "epsilon": {"type": "number"},
            "eta_phi": {"type": "number"},
            "eta_beta": {"type": "number"},
            "iters": {"type": "integer", "minimum": 1},
            **_COMMON,
        },
        "required": ["source", "outdir"],
        "additionalProperties": False,
    },
    "build-code": {
        "type": "object",
        "properties": {
            "source": _SOURCE,
            "l": {"type": "integer", "minimum": 1},
            "b": {"type": "integer", "minimum": 1},
            "t_delta": {"type": "number"},
            "t_eps": {"type": "number"},
            "aux": _AUX,
            **_COMMON,
        },
        "required": ["source", "outdir"],
        "additionalProperties": False,
    },
    "run-ber": {
        "type": "object",
        "properties": {
            "source": _SOURCE,
            "l": {"type": "integer", "minimum": 1},
            "b": {"type": "integer", "minimum": 1},
            "t_delta": {"type": "number"},
            "t_eps_ladder": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            "trials": {"type": "integer", "minimum": 1},
            "aux": _AUX,
            **_COMMON,
        },
        "required": ["source", "t_eps_ladder", "outdir"],
        "additionalProperties": False,
    },
    "run-tv": {
        "type": "object",
        "properties": {
            "source": _SOURCE,
            "l": {"type": "integer", "minimum": 1},
            "t_delta": {"type": "number"},
            "t_eps": {"type": "number"},
            "key_bits": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "mode": {"enum": ["exact", "mc"]},
            "trials": {"type": "integer", "minimum": 1},
            "aux": _AUX,
            **_COMMON,
        },
        "required": ["source", "key_bits", "outdir"],
        "additionalProperties": False,
    },
}

DEFAULTS = {
    "u_size": 2,
    "restarts": 4,
    "l": 8,
    "b": 2,
    "u_block_size": 2,
    "gamma": 1.0,
    "epsilon": 0.1,
    "eta_phi": 10.0,
    "eta_beta": 2.0,
    "iters": 500,
    "t_delta": 0.1,
    "t_eps": 0.1,
    "trials": 2000,
    "mode": "exact",
    "seed": 0,
    "aux": {"kind": "partition"},
}


def _load_config(command: str, args) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if "config" in cfg and "command" in cfg:  # resume from a manifest
            cfg = cfg["config"]
    if args.pair is not None:
        cfg["source"] = {"kind": "pair", "v": args.pair}
    if getattr(args, "outdir", None):
        cfg["outdir"] = args.outdir
    if args.seed is not None:
        cfg["seed"] = args.seed
    if "COVERTMARK_SEED" in os.environ:
        try:
            cfg["seed"] = int(os.environ["COVERTMARK_SEED"])
        except ValueError as exc:
            raise ConfigError("COVERTMARK_SEED must be an integer") from exc
    schema = SCHEMAS[command]
    errors = sorted(
        Draft202012Validator(schema).iter_errors(cfg), key=lambda e: e.json_path
    )
    if errors:
        raise ConfigError(
            "; ".join(f"{e.json_path}: {e.message}" for e in errors)
        )
    merged = {k: DEFAULTS[k] for k in schema["properties"] if k in DEFAULTS}
    merged.update(cfg)
    return merged


def _build_source(cfg, l=None, b=None):
    spec = cfg["source"]
    if spec["kind"] == "pair":
        return PairSource(spec["v"], l or cfg.get("l", 8), b or cfg.get("b", 1))
    src = load_source(spec["path"])
    return src


def _input_paths(cfg):
    if cfg["source"]["kind"] == "file":
        return [cfg["source"]["path"]]
    return []


def _block_joints(src, cfg, blocks):
    aux = cfg.get("aux", {"kind": "partition"})
    if isinstance(src, PairSource):
        if aux["kind"] == "partition":
            joint = pair_partition_block_joint(src.v, src.l)
        else:
            single = cap.stochastic_map_joint(src.v, aux["q"])
            joint = ProductBlockJoint.from_single_letter(single, src.l)
        return [joint] * blocks
    joints = []
    z = {sid: src.initial.prob(sid) for sid in src.initial.ids}
    for b in range(blocks):
        sids = sorted(z, key=repr)
        joints.append(
            candidate_split_joint(src, sids, [z[s] for s in sids])
        )
        if b + 1 < blocks:
            nxt = {}
            for sid, p in z.items():
                st = src.states[sid]
                for cand, w, ns in zip(st.candidates, st.weights, st.next_states):
                    if ns is not None and p * w > 0:
                        nxt[ns] = nxt.get(ns, 0.0) + p * w
            z = nxt
    return joints


def cmd_capacity(cfg) -> int:
    src_spec = cfg["source"]
    if src_spec["kind"] == "pair":
        prior, rows = PairSource(src_spec["v"], 1).single_letter_base()
    else:
        src = load_source(src_spec["path"])
        prior = src.initial
        from .prob import CondPmf

        rows = CondPmf(
            prior.ids, tuple(src.states[s].block_law() for s in prior.ids)
        )
    result = cap.brute_force_capacity(
        prior, rows, u_size=cfg["u_size"], restarts=cfg["restarts"], seed=cfg["seed"]
    )
    print(f"rate {result.rate:.4f} key_rate {result.key_rate:.4f}")
    if "outdir" in cfg:
        outdir = Path(cfg["outdir"])
        outdir.mkdir(parents=True, exist_ok=True)
        out = outdir / "capacity.json"
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(
                {"rate": result.rate, "key_rate": result.key_rate},
                fh, sort_keys=True, indent=2,
            )
            fh.write("\n")
        write_manifest(
            outdir / "manifest.json", "capacity", cfg, cfg["seed"],
            input_paths=_input_paths(cfg), outputs=[out],
        )
    return 0


def cmd_train(cfg) -> int:
    src = _build_source(cfg, l=cfg["l"], b=cfg["b"])
    blocks = min(cfg["b"], src.b)
    train_cfg = CmdpConfig(
        gamma=cfg["gamma"], epsilon=cfg["epsilon"], eta_phi=cfg["eta_phi"],
        eta_beta=cfg["eta_beta"], iters=cfg["iters"], blocks=blocks,
        u_block_size=cfg["u_block_size"],
    )
    result = primal_dual_train(src, train_cfg, seed=cfg["seed"])
    outdir = Path(cfg["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "training.csv"
    write_csv(
        csv_path, ("iter", "reward_sum", "cost_sum", "beta"),
        [(it, r, c, b) for it, r, c, b in result.log],
    )
    laws_path = outdir / "block_laws.json"
    with open(laws_path, "w", encoding="utf-8") as fh:
        json.dump(
            [_law_to_dict(law) for law in result.block_laws],
            fh, sort_keys=True, indent=2,
        )
        fh.write("\n")
    policy_path = outdir / "policy.json"
    with open(policy_path, "w", encoding="utf-8") as fh:
        json.dump(
            {"dim": result.policy.dim, "phi": list(result.policy.phi)},
            fh, sort_keys=True, indent=2,
        )
        fh.write("\n")
    write_manifest(
        outdir / "manifest.json", "train", cfg, cfg["seed"],
        input_paths=_input_paths(cfg),
        outputs=[csv_path, laws_path, policy_path],
    )
    final = result.log[-1]
    print(f"final reward {final[1]:.6f} cost {final[2]:.6f} beta {final[3]:.6f}")
    return 0


def _law_to_dict(law):
    return {
        "s_ids": [list(s) if isinstance(s, tuple) else s for s in law.s_ids],
        "u_ids": [list(u) if isinstance(u, tuple) else u for u in law.u_ids],
        "x_ids": [list(x) if isinstance(x, tuple) else x for x in law.x_ids],
        "p_s": list(law.p_s),
        "p_u_given_s": [list(r) for r in law.p_u_given_s],
        "w": [[list(r) for r in block] for block in law.w],
    }


def cmd_build_code(cfg) -> int:
    src = _build_source(cfg, l=cfg["l"], b=cfg["b"])
    blocks = min(cfg["b"], src.b)
    joints = _block_joints(src, cfg, blocks)
    outdir = Path(cfg["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for b, joint in enumerate(joints):
        spec = compute_index_sets(joint, t_delta=cfg["t_delta"], t_eps=cfg["t_eps"])
        path = outdir / f"polar_spec_block{b}.json"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(spec.dumps() + "\n")
        outputs.append(path)
        print(
            f"block {b}: |M|={len(spec.message_set)} rate "
            f"{len(spec.message_set) / spec.l:.4f} otp_bits={spec.otp_bits}"
        )
    write_manifest(
        outdir / "manifest.json", "build-code", cfg, cfg["seed"],
        input_paths=_input_paths(cfg), outputs=outputs,
    )
    return 0


def cmd_run_ber(cfg, threads: int = 1) -> int:
    src = _build_source(cfg, l=cfg["l"], b=cfg["b"])
    blocks = min(cfg["b"], src.b)
    joints = _block_joints(src, cfg, blocks)

    def point(idx_teps):
        idx, t_eps = idx_teps
        specs = [
            compute_index_sets(j, t_delta=cfg["t_delta"], t_eps=t_eps)
            for j in joints
        ]
        wm = WatermarkConfig(source=src, joints=joints, specs=specs, seed=cfg["seed"])
        report = run_trials(wm, cfg["trials"], seed=(cfg["seed"], idx))
        ci = _binomial_ci95(report.ber, cfg["trials"] * wm.message_bits())
        return (wm.rate_bits_per_token(), report.ber, ci, report.logloss_proxy)

    points = list(enumerate(cfg["t_eps_ladder"]))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(point, points))
    else:
        rows = [point(p) for p in points]
    outdir = Path(cfg["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "ber.csv"
    write_csv(csv_path, ("rate", "ber", "ci95"), [r[:3] for r in rows])
    manifest = dict(cfg)
    write_manifest(
        outdir / "manifest.json", "run-ber", manifest, cfg["seed"],
        input_paths=_input_paths(cfg), outputs=[csv_path],
    )
    # distortion proxy: mean log-loss of emitted blocks under the base law
    proxy_path = outdir / "logloss_proxy.json"
    with open(proxy_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "note": "mean log-loss (bits/token) of emitted blocks under the base block law; a distortion proxy, not perplexity",
                "rows": [{"rate": r[0], "logloss_proxy": r[3]} for r in rows],
            },
            fh, sort_keys=True, indent=2,
        )
        fh.write("\n")
    for r in rows:
        print(f"rate {r[0]:.4f} ber {r[1]:.5f} ci95 {r[2]:.5f}")
    return 0


def cmd_run_tv(cfg, threads: int = 1) -> int:
    src = _build_source(cfg, l=cfg["l"], b=1)
    if isinstance(src, FileSource) and src.b != 1:
        raise ConfigError("covertness sweeps need a depth-1 source")
    joints = _block_joints(src, cfg, 1)
    spec = compute_index_sets(joints[0], t_delta=cfg["t_delta"], t_eps=cfg["t_eps"])
    wm = WatermarkConfig(source=src, joints=joints, specs=[spec], seed=cfg["seed"])

    def point(k):
        return tv_sweep(
            wm, [k], mode=cfg["mode"], trials=cfg["trials"], seed=cfg["seed"]
        )[0]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(point, cfg["key_bits"]))
    else:
        rows = [point(k) for k in cfg["key_bits"]]
    outdir = Path(cfg["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "tv.csv"
    write_csv(csv_path, ("key_bits", "avg_tv", "ci95"), rows)
    write_manifest(
        outdir / "manifest.json", "run-tv", cfg, cfg["seed"],
        input_paths=_input_paths(cfg), outputs=[csv_path],
    )
    for r in rows:
        print(f"key_bits {r[0]} avg_tv {r[1]:.6f} ci95 {r[2]:.6f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="covertmark",
        description="covert multi-bit watermarking experiments",
    )
    parser.add_argument("--threads", type=int, default=1, help="worker cap for sweeps")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("capacity", "train", "build-code", "run-ber", "run-tv"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config (or a manifest to resume)")
        p.add_argument("--pair", type=int, metavar="V", help="pair source shortcut")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--outdir", default=None)
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.command, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "capacity":
            return cmd_capacity(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "build-code":
            return cmd_build_code(cfg)
        if args.command == "run-ber":
            return cmd_run_ber(cfg, threads=args.threads)
        if args.command == "run-tv":
            return cmd_run_tv(cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/numeric failure
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
