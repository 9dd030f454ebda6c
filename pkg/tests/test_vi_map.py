import numpy as np
import pytest

from bktkit.bayes import GaussianPrior, LogPosterior, ModelSpec, PriorSpec
from bktkit.core import BktParams
from bktkit.data import SequenceSet, build_sequences
from bktkit.em import EmOptions, fit_em
from bktkit.nuts import FitError
from bktkit.optimize import MapOptions, fit_map
from bktkit.sim import SimConfig, simulate
from bktkit.vi import ViOptions, fit_vi

TRUTH = BktParams(learn=0.04, forget=0.01, guess=0.1, slip=0.05, pi_know=0.4)


@pytest.fixture(scope="module")
def sim_sequences():
    result = simulate(
        SimConfig(n_students=100, n_problems=30, params=TRUTH, fraction=0.8, seed=1234)
    )
    return build_sequences(result.records)


class TestVi:
    def test_prior_only_recovers_gaussian(self):
        priors = PriorSpec(
            learn=(0.3, 1.2), forget=(-0.7, 0.6), guess=(0.0, 2.0),
            slip=(0.5, 1.0), pi_know=(-1.0, 0.9),
        )
        draws = fit_vi(
            SequenceSet(sequences=[]),
            ModelSpec(),
            priors,
            ViOptions(seed=5, max_iter=4000, n_draws=4000),
            allow_empty_data=True,
        )
        flat = draws.flat()
        mus = [0.3, -0.7, 0.0, 0.5, -1.0]
        stds = [1.2, 0.6, 2.0, 1.0, 0.9]
        for j in range(5):
            # the variational optimum is the prior itself; 2% tolerance
            assert flat[:, j].mean() == pytest.approx(mus[j], abs=0.02 * stds[j] + 0.02)
            assert flat[:, j].std() == pytest.approx(stds[j], rel=0.03)

    def test_deterministic(self, sim_sequences):
        opts = ViOptions(seed=9, max_iter=300)
        a = fit_vi(sim_sequences, ModelSpec(), PriorSpec(), opts)
        b = fit_vi(sim_sequences, ModelSpec(), PriorSpec(), opts)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_means_near_truth(self, sim_sequences):
        draws = fit_vi(sim_sequences, ModelSpec(), PriorSpec(), ViOptions(seed=1))
        names, vals = draws.constrained()
        means = dict(zip(names, vals.reshape(-1, len(names)).mean(axis=0)))
        assert means["pi_know"] == pytest.approx(0.4, abs=0.08)
        assert means["learn"] == pytest.approx(0.04, abs=0.05)
        assert means["guess"] == pytest.approx(0.1, abs=0.05)

    def test_empty_rejected_without_flag(self):
        with pytest.raises(FitError):
            fit_vi(SequenceSet(sequences=[]), ModelSpec(), PriorSpec())


class TestMap:
    def test_matches_em_with_flat_priors(self, sim_sequences):
        em_params, em_trace = fit_em(sim_sequences, EmOptions(seed=0))
        result = fit_map(sim_sequences, ModelSpec(), PriorSpec(), MapOptions(seed=0))
        map_params = result.params()
        for name in ("learn", "forget", "guess", "slip", "pi_know"):
            assert getattr(map_params, name) == pytest.approx(
                getattr(em_params, name), abs=1e-2
            )
        lp = LogPosterior(sim_sequences, ModelSpec(), PriorSpec())
        from bktkit.core import unconstrain

        u_em = unconstrain(em_params)
        em_ll = lp.loglik(
            np.array([u_em.z_learn, u_em.z_forget, u_em.z_guess, u_em.z_slip, u_em.z_pi])
        )
        assert abs(result.objective - em_ll) <= 1e-3

    def test_tight_prior_pins_solution(self, sim_sequences):
        priors = PriorSpec(
            learn=GaussianPrior(-1.0, 1e-3),
            forget=GaussianPrior(-2.0, 1e-3),
            guess=GaussianPrior(0.5, 1e-3),
            slip=GaussianPrior(-0.5, 1e-3),
            pi_know=GaussianPrior(1.0, 1e-3),
        )
        result = fit_map(sim_sequences, ModelSpec(), priors, MapOptions(seed=0))
        from bktkit.core import UnconstrainedParams, constrain

        target = constrain(UnconstrainedParams(-1.0, -2.0, 0.5, -0.5, 1.0))
        got = result.params()
        for name in ("learn", "forget", "guess", "slip", "pi_know"):
            assert getattr(got, name) == pytest.approx(getattr(target, name), abs=1e-3)

    def test_deterministic(self, sim_sequences):
        a = fit_map(sim_sequences, ModelSpec(), PriorSpec(), MapOptions(seed=2))
        b = fit_map(sim_sequences, ModelSpec(), PriorSpec(), MapOptions(seed=2))
        np.testing.assert_array_equal(a.point, b.point)

    def test_zero_free_params_rejected(self, sim_sequences):
        from bktkit.core import ParameterFixes

        spec = ModelSpec(
            fixes=ParameterFixes(learn=0.1, forget=0.0, guess=0.2, slip=0.1, pi_know=0.4)
        )
        with pytest.raises(FitError):
            fit_map(sim_sequences, spec, PriorSpec())
