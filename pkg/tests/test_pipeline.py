import math

import numpy as np
import pytest

from covertmark.pipeline import (
    RunReport,
    SourceMismatchError,
    WatermarkConfig,
    ber_sweep,
    config_sha256,
    detect,
    embed,
    git_blob_sha1,
    induced_tv,
    run_trials,
    tv_sweep,
    write_csv,
    write_manifest,
)
from covertmark.polar import compute_index_sets, pair_partition_block_joint
from covertmark.sources import PairSource


def copy_cfg(l=2, b=1, seed=0, t_delta=0.1):
    """Vocabulary-2 configuration: single per-position state, U = X."""
    src = PairSource(2, l, b=b)
    joint = pair_partition_block_joint(2, l)
    spec = compute_index_sets(joint, t_delta=t_delta)
    return WatermarkConfig(source=src, joints=[joint] * b, specs=[spec] * b, seed=seed)


def v6_cfg(b=2, t_eps=0.1, seed=0):
    src = PairSource(6, 8, b=b)
    joint = pair_partition_block_joint(6, 8)
    spec = compute_index_sets(joint, t_delta=0.1, t_eps=t_eps)
    return WatermarkConfig(source=src, joints=[joint] * b, specs=[spec] * b, seed=seed)


class TestEmbedDetect:
    def test_b1_round_trip(self):
        cfg = copy_cfg(l=4)
        rng = np.random.default_rng(1)
        msg = list(rng.integers(0, 2, size=cfg.message_bits()))
        key = list(rng.integers(0, 2, size=cfg.key_bits_required()))
        tokens, path = embed(cfg, msg, key)
        assert len(tokens) == 4 and len(path) == 1
        assert detect(cfg, tokens, key) == msg

    def test_deterministic_given_seed(self):
        cfg = copy_cfg(l=4, seed=7)
        msg = [1, 0, 1, 1]
        key = [0, 1, 1, 0]
        t1, p1 = embed(cfg, msg, key)
        t2, p2 = embed(cfg, msg, key)
        assert t1 == t2 and p1 == p2

    def test_zero_rate_empty_output(self):
        # decoder-side threshold zero declares every position high-entropy
        # at the decoder, emptying the message set
        cfg = copy_cfg(l=2, t_delta=0.0)
        assert cfg.message_bits() == 0
        tokens, _ = embed(cfg, [], [0, 0])
        assert detect(cfg, tokens, [0, 0]) == []

    def test_round_trip_rate_0375(self):
        cfg = v6_cfg()
        assert cfg.rate_bits_per_token() == pytest.approx(0.375)
        errors = 0
        total = 0
        for t in range(200):
            rng = np.random.default_rng((3, t))
            msg = list(rng.integers(0, 2, size=cfg.message_bits()))
            key = list(rng.integers(0, 2, size=cfg.key_bits_required()))
            tokens, _ = embed(cfg, msg, key, rng=rng)
            est = detect(cfg, tokens, key)
            errors += sum(a != b for a, b in zip(msg, est))
            total += len(msg)
        assert errors / total < 0.10

    def test_wrong_key_half_ber(self):
        cfg = copy_cfg(l=8)
        errs, total = 0, 0
        for t in range(300):
            rng = np.random.default_rng((5, t))
            msg = list(rng.integers(0, 2, size=cfg.message_bits()))
            key = list(rng.integers(0, 2, size=cfg.key_bits_required()))
            wrong = list(rng.integers(0, 2, size=cfg.key_bits_required()))
            tokens, _ = embed(cfg, msg, key, rng=rng)
            est = detect(cfg, tokens, wrong)
            errs += sum(a != b for a, b in zip(msg, est))
            total += len(msg)
        assert abs(errs / total - 0.5) < 0.05

    def test_token_count_mismatch(self):
        cfg = copy_cfg(l=2)
        with pytest.raises(ValueError):
            detect(cfg, [0], [0, 0])

    def test_tokens_outside_support(self):
        cfg = copy_cfg(l=2)
        with pytest.raises(SourceMismatchError):
            detect(cfg, [0, 5], [0, 0])


class TestInducedTv:
    def test_full_entropy_cover_is_exact_zero(self):
        # empty message set, all positions high entropy: the encoder
        # reproduces the base law and TV vanishes identically
        cfg = copy_cfg(l=2, t_delta=0.0)
        assert induced_tv(cfg, [], 0) == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed_small_instance(self):
        # single state, two positions, U = X: forcing both message bits
        # pins the block; one key bit randomizes the first position only
        cfg = copy_cfg(l=2)
        msg = [0, 0]
        assert induced_tv(cfg, msg, 0) == pytest.approx(0.75, abs=1e-12)
        assert induced_tv(cfg, msg, 1) == pytest.approx(0.5, abs=1e-12)
        assert induced_tv(cfg, msg, 2) == pytest.approx(0.0, abs=1e-12)

    def test_biased_embedding_positive_tv(self):
        cfg = copy_cfg(l=2)
        assert induced_tv(cfg, [1, 1], 0) > 0.1

    def test_monte_carlo_converges_to_exact(self):
        cfg = copy_cfg(l=2)
        msg = [0, 1]
        exact = induced_tv(cfg, msg, 1)
        errs = []
        for trials in (1000, 100_000):
            mc = induced_tv(cfg, msg, 1, mode="mc", trials=trials, seed=9)
            errs.append(abs(mc - exact))
        assert errs[-1] <= 0.01
        assert errs[-1] <= errs[0] + 1e-9

    def test_soft_covering_non_increasing_to_minimum(self):
        cfg = copy_cfg(l=2)
        msg = [1, 0]
        for seed in range(5):
            vals = [
                induced_tv(cfg, msg, k, mode="mc", trials=4000, seed=seed)
                for k in (0, 1, 2)
            ]
            assert vals[0] >= vals[1] - 0.05
            assert vals[1] >= vals[2] - 0.05


class TestSweeps:
    def test_ber_sweep_shape_and_rate_zero(self):
        src = PairSource(6, 8, b=2)
        joint = pair_partition_block_joint(6, 8)
        rows = ber_sweep(
            src, lambda b: joint, t_eps_ladder=[-0.1, 0.1], blocks=2,
            trials=30, seed=0,
        )
        assert len(rows) == 2
        # negative threshold empties the encoder set: rate 0, BER 0
        assert rows[0][0] == 0.0 and rows[0][1] == 0.0
        assert rows[1][0] == pytest.approx(0.375)

    def test_tv_hard_partition_full_otp_is_exactly_covert(self):
        # the hard partition joint is uniform on a coset given the state, so a
        # fully OTP'd encoder with base-law fallback reproduces the base joint
        # exactly, and over-keying stays at zero
        src = PairSource(4, 4, b=1)
        joint = pair_partition_block_joint(4, 4)
        spec = compute_index_sets(joint, t_delta=0.1, t_eps=0.4)
        assert spec.message_set == (0, 1, 2)
        cfg = WatermarkConfig(source=src, joints=[joint], specs=[spec], seed=0)
        msg = [1, 0, 1]
        assert induced_tv(cfg, msg, 0) > 0.3
        assert induced_tv(cfg, msg, 3) == pytest.approx(0.0, abs=1e-12)

    def test_tv_sweep_u_shape_soft_joint(self):
        # soft auxiliary (trained-policy regime): covertness is minimized at
        # the key-rate threshold and degrades when state-constrained
        # positions are keyed
        from covertmark.capacity import stochastic_map_joint
        from covertmark.polar import ProductBlockJoint

        src = PairSource(4, 4, b=1)
        joint = ProductBlockJoint.from_single_letter(
            stochastic_map_joint(4, (0.01, 0.06, 0.94, 0.99)), 4
        )
        assert math.ceil(joint.key_rate_bits() - 1e-9) == 3
        spec = compute_index_sets(joint, t_delta=0.6, t_eps=0.4)
        assert spec.message_set == (0, 1, 2)
        cfg = WatermarkConfig(source=src, joints=[joint], specs=[spec], seed=0)
        msg = [1, 0, 1]
        tvs = [induced_tv(cfg, msg, k) for k in range(6)]
        assert tvs[0] > tvs[1] > tvs[2] > tvs[3]
        assert 0 < tvs[3] < 0.1
        assert tvs[4] > tvs[3] + 0.05
        assert tvs[5] == pytest.approx(tvs[4], abs=1e-12)

    def test_run_trials_report(self):
        cfg = copy_cfg(l=4)
        report = run_trials(cfg, trials=50, seed=2)
        assert report.ber == 0.0
        assert report.rate_bits_per_token == 1.0
        assert report.trials == 50
        assert math.isfinite(report.logloss_proxy)
        # vocabulary-2 blocks carry one bit per token under the base law
        assert report.logloss_proxy == pytest.approx(1.0, abs=1e-9)


class TestRunReport:
    def test_rejects_bad_ber(self):
        with pytest.raises(ValueError):
            RunReport(ber=1.5, rate_bits_per_token=0.5, avg_tv=0.0, trials=1)


class TestOutputs:
    def test_write_csv_deterministic(self, tmp_path):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        rows = [(0.5, 0.021, 0.003), (1.0, 0.5, 0.01)]
        write_csv(p1, ("rate", "ber", "ci95"), rows)
        write_csv(p2, ("rate", "ber", "ci95"), rows)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_text().splitlines()[0] == "rate,ber,ci95"

    def test_git_blob_sha1_matches_git(self):
        # sha1 of the empty blob is a well-known constant
        assert git_blob_sha1(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"

    def test_manifest_round_trip(self, tmp_path):
        out = tmp_path / "out.csv"
        write_csv(out, ("a",), [(1.0,)])
        m1 = tmp_path / "m1.json"
        m2 = tmp_path / "m2.json"
        cfgdoc = {"trials": 5, "seed": 3}
        write_manifest(m1, "run-ber", cfgdoc, 3, outputs=[out])
        write_manifest(m2, "run-ber", cfgdoc, 3, outputs=[out])
        assert m1.read_bytes() == m2.read_bytes()
        assert config_sha256(cfgdoc) in m1.read_text()
