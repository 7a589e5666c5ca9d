import numpy as np
import pytest

from covertmark.capacity import (
    brute_force_capacity,
    converse_probe,
    corollary_rate,
    gp_rate,
    key_rate,
    partition_joint,
    _probe_rate,
)
from covertmark.prob import CondPmf, JointLaw, Pmf
from covertmark.sources import PairSource


def independent_joint():
    s = Pmf((0, 1), [0.5, 0.5])
    u_rows = {sid: Pmf((0, 1), [0.5, 0.5]) for sid in s.ids}
    w_rows = {(sid, u): Pmf((0, 1), [0.4, 0.6]) for sid in s.ids for u in (0, 1)}
    return JointLaw.from_components(s, u_rows, w_rows)


class TestGpRate:
    def test_independent_u(self):
        assert gp_rate(independent_joint()) == pytest.approx(0.0, abs=1e-12)

    def test_partition_v4(self):
        assert gp_rate(partition_joint(4)) == pytest.approx(2 / 3, abs=1e-12)

    def test_partition_v2(self):
        assert gp_rate(partition_joint(2)) == pytest.approx(1.0, abs=1e-12)


class TestKeyRate:
    def test_equals_rate_on_partition_joints(self):
        for v in (2, 3, 4, 5, 6):
            j = partition_joint(v)
            assert key_rate(j) == pytest.approx(gp_rate(j), abs=1e-12)

    def test_independent_given_s(self):
        assert key_rate(independent_joint()) == pytest.approx(0.0, abs=1e-12)

    def test_v4_value(self):
        assert key_rate(partition_joint(4)) == pytest.approx(2 / 3, abs=1e-12)


class TestCorollaryRate:
    def test_known_values(self):
        assert corollary_rate(2) == 1.0
        assert corollary_rate(4) == pytest.approx(2 / 3, abs=1e-15)
        assert corollary_rate(5) == pytest.approx(3 / 5, abs=1e-15)

    def test_rejects_v1(self):
        with pytest.raises(ValueError):
            corollary_rate(1)

    def test_monotone_toward_half(self):
        rates = [corollary_rate(v) for v in range(2, 1001)]
        assert all(a >= b - 1e-15 for a, b in zip(rates, rates[1:]))
        assert rates[-1] == pytest.approx(0.5005005005005005, abs=1e-12)
        assert rates[-1] > 0.5


class TestPartitionJoint:
    def test_v2_is_copy(self):
        j = partition_joint(2)
        assert j.conditional_entropy("U", "X") == pytest.approx(0.0, abs=1e-12)
        assert gp_rate(j) == pytest.approx(1.0, abs=1e-12)

    def test_v4_entropies(self):
        j = partition_joint(4)
        assert j.conditional_entropy("U", "S") == pytest.approx(2 / 3, abs=1e-12)
        assert j.conditional_entropy("U", "X") == pytest.approx(0.0, abs=1e-12)

    def test_v5_rate(self):
        assert gp_rate(partition_joint(5)) == pytest.approx(3 / 5, abs=1e-12)

    def test_feasible_and_exact_up_to_64(self):
        for v in range(2, 65):
            j = partition_joint(v)
            prior, rows = PairSource(v, 1).single_letter_base()
            assert j.check_marginal(prior, rows) <= 1e-12
            assert abs(gp_rate(j) - corollary_rate(v)) <= 1e-12

    def test_identity_rate_le_key_rate_consistency(self):
        # I(U;X|S) = I(U;XS) - I(U;S), checked numerically
        for v in (3, 4, 6):
            j = partition_joint(v)
            lhs = key_rate(j)
            rhs = j.mutual_information("U", "SX") - j.mutual_information("U", "S")
            assert lhs == pytest.approx(rhs, abs=1e-9)


class TestBruteForce:
    def test_v2_copy_auxiliary(self):
        prior, rows = PairSource(2, 1).single_letter_base()
        res = brute_force_capacity(prior, rows, restarts=2, seed=0)
        assert res.rate == pytest.approx(1.0, abs=1e-9)
        assert res.key_rate == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("v", [3, 4, 5, 6])
    def test_matches_corollary(self, v):
        prior, rows = PairSource(v, 1).single_letter_base()
        res = brute_force_capacity(prior, rows, restarts=0, seed=0)
        assert res.rate == pytest.approx(corollary_rate(v), abs=1e-6)

    def test_deterministic_base_gives_zero(self):
        s = Pmf((0, 1), [0.5, 0.5])
        rows = CondPmf((0, 1), (Pmf.point_mass(0, ids=(0, 1)), Pmf.point_mass(1, ids=(0, 1))))
        res = brute_force_capacity(s, rows, restarts=2, seed=1)
        assert res.rate == pytest.approx(0.0, abs=1e-9)

    def test_rejects_unary_auxiliary(self):
        prior, rows = PairSource(3, 1).single_letter_base()
        with pytest.raises(ValueError):
            brute_force_capacity(prior, rows, u_size=1)

    def test_result_invariants(self):
        prior, rows = PairSource(4, 1).single_letter_base()
        res = brute_force_capacity(prior, rows, restarts=1, seed=3)
        assert res.rate == pytest.approx(gp_rate(res.argmax), abs=1e-9)
        assert res.key_rate == pytest.approx(key_rate(res.argmax), abs=1e-9)
        assert res.argmax.check_marginal(prior, rows) <= 1e-9

    def test_stochastic_refinement_runs(self):
        # a non-pair base where the refinement path is exercised
        s = Pmf((0,), [1.0])
        rows = CondPmf((0,), (Pmf((0, 1, 2), [0.5, 0.3, 0.2]),))
        res = brute_force_capacity(s, rows, restarts=2, seed=4)
        # single state: the rate is H(U|S) <= H(X) and the best deterministic
        # binary auxiliary yields H of the best mass split
        assert res.rate == pytest.approx(
            max(
                -p * np.log2(p) - (1 - p) * np.log2(1 - p)
                for p in (0.5, 0.3, 0.2, 0.8, 0.7)
            ),
            abs=1e-6,
        )


class TestConverseProbe:
    def test_all_zero_map(self):
        assert _probe_rate(np.zeros(4), [(0, 1)], 4) == 0.0

    def test_partition_indicator_achieves(self):
        import itertools

        for v in (3, 4, 5):
            q = np.array([0.0] * (v // 2) + [1.0] * (v - v // 2))
            pairs = list(itertools.combinations(range(v), 2))
            assert _probe_rate(q, pairs, v) == pytest.approx(
                corollary_rate(v), abs=1e-12
            )

    def test_never_exceeds_closed_form(self):
        for seed in (0, 1, 2):
            assert converse_probe(4, 2000, seed=seed) <= corollary_rate(4) + 1e-9
