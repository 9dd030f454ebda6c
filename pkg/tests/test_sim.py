from datetime import datetime

import numpy as np
import pytest

from bktkit.core import BktParams
from bktkit.data import build_sequences
from bktkit.sim import SimConfig, SimResult, assign_groups_by_block, simulate

LISTING_PARAMS = BktParams(learn=0.04, forget=0.01, guess=0.1, slip=0.05, pi_know=0.4)


class TestSimConfig:
    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            SimConfig(n_students=5, n_problems=10, params=LISTING_PARAMS, fraction=1.5)

    def test_zero_retention_rejected(self):
        with pytest.raises(ValueError):
            SimConfig(n_students=5, n_problems=10, params=LISTING_PARAMS, fraction=0.05)

    def test_params_required(self):
        with pytest.raises(ValueError):
            SimConfig(n_students=5, n_problems=10)


class TestSimulate:
    def test_worked_example_shape(self):
        config = SimConfig(
            n_students=100, n_problems=30, n_kcs=1,
            params=LISTING_PARAMS, fraction=0.8, seed=1234,
        )
        result = simulate(config)
        assert len(result.records) == 100 * 24
        ss = build_sequences(result.records)
        assert len(ss.sequences) == 100
        assert all(len(s) == 24 for s in ss.sequences)

    def test_timestamps_follow_problem_index(self):
        config = SimConfig(n_students=2, n_problems=5, params=LISTING_PARAMS, seed=3)
        result = simulate(config)
        for r in result.records:
            t = int(r.problem.split("_")[1])
            assert r.order_key == datetime(2024, 1, 1, 0, t)

    def test_deterministic(self):
        config = SimConfig(
            n_students=20, n_problems=10, params=LISTING_PARAMS, fraction=0.7, seed=99
        )
        a, b = simulate(config), simulate(config)
        assert [(r.student, r.problem, r.correct) for r in a.records] == [
            (r.student, r.problem, r.correct) for r in b.records
        ]
        for key in a.latent:
            assert (a.latent[key] == b.latent[key]).all()

    def test_degenerate_params_all_correct(self):
        params = BktParams(learn=0.3, forget=0.0, guess=0.1, slip=0.0, pi_know=1.0)
        result = simulate(SimConfig(n_students=10, n_problems=8, params=params, seed=1))
        assert all(r.correct == 1 for r in result.records)

    def test_retention_subset_in_order(self):
        config = SimConfig(
            n_students=30, n_problems=20, params=LISTING_PARAMS, fraction=0.55, seed=5
        )
        result = simulate(config)
        n_keep = int(0.55 * 20)
        by_student = {}
        for r in result.records:
            by_student.setdefault(r.student, []).append(int(r.problem.split("_")[1]))
        assert len(by_student) == 30
        for indices in by_student.values():
            assert len(indices) == n_keep
            assert indices == sorted(indices)
            assert len(set(indices)) == n_keep
            assert all(0 <= i < 20 for i in indices)

    def test_transition_frequency(self):
        # empirical 0 -> 1 rate within 3 binomial standard errors of learn
        params = BktParams(learn=0.3, forget=0.01, guess=0.1, slip=0.05, pi_know=0.2)
        result = simulate(
            SimConfig(n_students=50_000, n_problems=2, params=params, seed=11)
        )
        from0 = 0
        to1 = 0
        for chain in result.latent.values():
            if chain[0] == 0:
                from0 += 1
                to1 += int(chain[1])
        rate = to1 / from0
        se = np.sqrt(0.3 * 0.7 / from0)
        assert abs(rate - 0.3) < 3 * se

    def test_emission_consistency(self):
        params = BktParams(learn=0.1, forget=0.02, guess=0.15, slip=0.08, pi_know=0.5)
        result = simulate(
            SimConfig(n_students=2_000, n_problems=10, params=params, seed=21)
        )
        latent = result.latent_for_records()
        correct = np.array([r.correct for r in result.records])
        mastered = latent == 1
        assert mastered.sum() >= 10_000
        slip_rate = 1 - correct[mastered].mean()
        se = np.sqrt(0.08 * 0.92 / mastered.sum())
        assert abs(slip_rate - 0.08) < 3 * se
        guess_rate = correct[~mastered].mean()
        se_g = np.sqrt(0.15 * 0.85 / (~mastered).sum())
        assert abs(guess_rate - 0.15) < 3 * se_g

    def test_group_params(self):
        assignment = assign_groups_by_block(100, ["lo", "hi"])
        params = {
            "lo": BktParams(learn=0.05, forget=0.01, guess=0.05, slip=0.05, pi_know=0.2),
            "hi": BktParams(learn=0.05, forget=0.01, guess=0.45, slip=0.05, pi_know=0.2),
        }
        result = simulate(
            SimConfig(
                n_students=100, n_problems=12, params=params,
                group_assignment=assignment, seed=8,
            )
        )
        assert {r.group for r in result.records} == {"lo", "hi"}
        latent = result.latent_for_records()
        correct = np.array([r.correct for r in result.records])
        groups = np.array([r.group for r in result.records])
        unmastered = latent == 0
        lo_rate = correct[unmastered & (groups == "lo")].mean()
        hi_rate = correct[unmastered & (groups == "hi")].mean()
        assert hi_rate - lo_rate > 0.2

    def test_multi_kc_chains_independent_shapes(self):
        result = simulate(
            SimConfig(n_students=4, n_problems=6, n_kcs=3, params=LISTING_PARAMS, seed=2)
        )
        assert len(result.latent) == 12
        assert len({r.kc for r in result.records}) == 3
