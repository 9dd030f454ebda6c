import numpy as np
import pytest

from bktkit.bayes import ModelSpec, PriorSpec
from bktkit.core import BktParams, ParameterFixes
from bktkit.data import SequenceSet, build_sequences
from bktkit.nuts import FitError, NutsOptions, _warmup_schedule, fit_nuts
from bktkit.sim import SimConfig, simulate

TRUTH = BktParams(learn=0.04, forget=0.01, guess=0.1, slip=0.05, pi_know=0.4)


@pytest.fixture(scope="module")
def sim_sequences():
    result = simulate(
        SimConfig(n_students=100, n_problems=30, params=TRUTH, fraction=0.8, seed=1234)
    )
    return build_sequences(result.records)


class TestWarmupSchedule:
    def test_listing_shape(self):
        init, windows, term = _warmup_schedule(500)
        assert init == 75 and term == 50
        assert windows == [25, 50, 100, 200]
        assert init + sum(windows) + term == 500

    def test_small_warmup_all_stepsize(self):
        init, windows, term = _warmup_schedule(20)
        assert init == 20 and windows == [] and term == 0

    def test_midsize_window_absorbs_remainder(self):
        init, windows, term = _warmup_schedule(200)
        assert init == 30 and term == 20
        assert windows == [25, 125]

    def test_zero(self):
        assert _warmup_schedule(0) == (0, [], 0)


class TestPriorOnlyTarget:
    def test_recovers_gaussian_prior(self):
        priors = PriorSpec(
            learn=(0.5, 1.0), forget=(-1.0, 0.5), guess=(0.0, 2.0),
            slip=(1.0, 1.5), pi_know=(-0.5, 0.8),
        )
        draws = fit_nuts(
            SequenceSet(sequences=[]),
            ModelSpec(),
            priors,
            NutsOptions(chains=4, warmup=500, sampling=500, seed=42),
            allow_empty_data=True,
        )
        assert draws.draws.shape == (4, 500, 5)
        flat = draws.flat()
        mus = [0.5, -1.0, 0.0, 1.0, -0.5]
        stds = [1.0, 0.5, 2.0, 1.5, 0.8]
        for j, (mu, std) in enumerate(zip(mus, stds)):
            mcse = std / np.sqrt(len(flat)) * 4  # generous allowance for autocorrelation
            assert flat[:, j].mean() == pytest.approx(mu, abs=5 * mcse)
            assert flat[:, j].std() == pytest.approx(std, rel=0.1)

    def test_divergence_free_on_gaussian(self):
        draws = fit_nuts(
            SequenceSet(sequences=[]),
            ModelSpec(),
            PriorSpec.weakly_informative(),
            NutsOptions(chains=2, warmup=300, sampling=300, seed=7),
            allow_empty_data=True,
        )
        assert draws.divergence_count() == 0


class TestDeterminism:
    def test_same_seed_identical(self, sim_sequences):
        opts = NutsOptions(chains=2, warmup=150, sampling=100, seed=11)
        a = fit_nuts(sim_sequences, ModelSpec(), PriorSpec(), opts)
        b = fit_nuts(sim_sequences, ModelSpec(), PriorSpec(), opts)
        np.testing.assert_array_equal(a.draws, b.draws)
        np.testing.assert_array_equal(a.stats["accept_stat"], b.stats["accept_stat"])

    def test_threaded_chains_identical(self, sim_sequences):
        serial = fit_nuts(
            sim_sequences, ModelSpec(), PriorSpec(),
            NutsOptions(chains=2, warmup=150, sampling=100, seed=11, threads=1),
        )
        threaded = fit_nuts(
            sim_sequences, ModelSpec(), PriorSpec(),
            NutsOptions(chains=2, warmup=150, sampling=100, seed=11, threads=2),
        )
        np.testing.assert_array_equal(serial.draws, threaded.draws)


class TestFitErrors:
    def test_zero_free_parameters(self, sim_sequences):
        spec = ModelSpec(
            fixes=ParameterFixes(learn=0.1, forget=0.0, guess=0.2, slip=0.1, pi_know=0.4)
        )
        with pytest.raises(FitError, match="fixed"):
            fit_nuts(sim_sequences, spec, PriorSpec())

    def test_empty_data_rejected_by_default(self):
        with pytest.raises(FitError, match="empty"):
            fit_nuts(SequenceSet(sequences=[]), ModelSpec(), PriorSpec())


class TestRecovery:
    def test_worked_example_posterior_means(self, sim_sequences):
        draws = fit_nuts(
            sim_sequences,
            ModelSpec(),
            PriorSpec(),
            NutsOptions(chains=4, warmup=500, sampling=500, seed=1234),
        )
        assert draws.draws.shape == (4, 500, 5)
        names, values = draws.constrained()
        flat = values.reshape(-1, len(names))
        means = dict(zip(names, flat.mean(axis=0)))
        # alignment with the known generative values (reference run gives
        # roughly 0.452, 0.047, 0.022, 0.091, 0.036)
        assert means["pi_know"] == pytest.approx(0.452, abs=0.05)
        assert means["learn"] == pytest.approx(0.047, abs=0.05)
        assert means["forget"] == pytest.approx(0.022, abs=0.05)
        assert means["guess"] == pytest.approx(0.091, abs=0.05)
        assert means["slip"] == pytest.approx(0.036, abs=0.05)
        assert draws.divergence_count() == 0
