"""Mean-field Gaussian variational inference over the unconstrained vector.

Maximizes the evidence lower bound with reparameterized Monte-Carlo
gradients and an Adam step-size schedule.  The fitted approximation tends
to underestimate posterior spread (draws are tagged ``method="vi"`` so
downstream consumers can tell them apart from MCMC).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bayes import LogPosterior, ModelSpec, PriorSpec
from .data import SequenceSet
from .draws import PosteriorDraws
from .nuts import FitError

LOG_2PI_E = math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class ViOptions:
    mc_samples: int = 8
    max_iter: int = 10_000
    step_size: float = 0.05
    decay_horizon: float = 500.0  # iterations until the step starts shrinking ~ 1/sqrt(t)
    rel_tol: float = 1e-4
    check_window: int = 100
    n_draws: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.mc_samples < 1 or self.max_iter < 1 or self.n_draws < 1:
            raise ValueError("mc_samples, max_iter, and n_draws must be positive")
        if self.step_size <= 0 or self.rel_tol <= 0 or self.decay_horizon <= 0:
            raise ValueError("step_size, rel_tol, and decay_horizon must be positive")


class _Adam:
    def __init__(self, dim, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr = lr
        self.b1 = b1
        self.b2 = b2
        self.eps = eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def fit_vi(
    sequences: SequenceSet,
    spec: ModelSpec | None = None,
    priors: PriorSpec | None = None,
    options: ViOptions | None = None,
    covariate_names=None,
    allow_empty_data: bool = False,
) -> PosteriorDraws:
    """Fit q(u) = Normal(m, diag(exp(2 w))) by stochastic ELBO ascent.

    Convergence is declared when the mean ELBO over the last
    ``check_window`` iterations changes by less than ``rel_tol`` relative
    to the previous window.  A non-finite ELBO aborts with the last finite
    iterate reported in the raised :class:`FitError`.
    """
    spec = spec or ModelSpec()
    priors = priors or PriorSpec()
    options = options or ViOptions()
    if not sequences.sequences and not allow_empty_data:
        raise FitError("sequence set is empty")
    lp = LogPosterior(sequences, spec, priors, covariate_names)
    if lp.dim == 0:
        raise FitError(
            "all parameters are fixed; nothing to infer - use the fixed values "
            "directly for prediction"
        )
    rng = np.random.default_rng(options.seed)
    dim = lp.dim
    m = np.zeros(dim)
    w = np.zeros(dim)  # log standard deviations
    adam = _Adam(2 * dim, options.step_size)
    last_finite = (m.copy(), w.copy())

    # Polyak-style averaging: the stochastic iterates random-walk around the
    # optimum, so the reported solution is a bias-corrected moving average
    ema_decay = 0.995
    ema = np.zeros(2 * dim)
    ema_norm = 0.0

    window_elbos = []
    prev_window_mean = None
    for it in range(options.max_iter):
        sigma = np.exp(w)
        g_m = np.zeros(dim)
        g_w = np.zeros(dim)
        elbo_lik = 0.0
        for _ in range(options.mc_samples):
            eps = rng.normal(size=dim)
            z = m + sigma * eps
            val, grad = lp.value_grad(z)
            elbo_lik += val
            g_m += grad
            g_w += grad * sigma * eps
        k = options.mc_samples
        entropy = float(np.sum(w)) + 0.5 * dim * LOG_2PI_E
        elbo = elbo_lik / k + entropy
        if not math.isfinite(elbo):
            raise FitError(
                f"ELBO became non-finite at iteration {it}; "
                f"last finite iterate: mean={last_finite[0]}, log_sd={last_finite[1]}"
            )
        last_finite = (m.copy(), w.copy())
        grad_vec = np.concatenate([g_m / k, g_w / k + 1.0])  # +1 from the entropy term
        scale = math.sqrt(options.decay_horizon / (options.decay_horizon + it))
        delta = scale * adam.step(grad_vec)
        m = m + delta[:dim]
        w = w + delta[dim:]
        ema = ema_decay * ema + (1 - ema_decay) * np.concatenate([m, w])
        ema_norm = ema_decay * ema_norm + (1 - ema_decay)

        window_elbos.append(elbo)
        if len(window_elbos) == options.check_window:
            mean_elbo = float(np.mean(window_elbos))
            window_elbos = []
            if prev_window_mean is not None:
                denom = max(abs(prev_window_mean), 1.0)
                if abs(mean_elbo - prev_window_mean) / denom < options.rel_tol:
                    break
            prev_window_mean = mean_elbo

    averaged = ema / ema_norm
    m, w = averaged[:dim], averaged[dim:]
    sigma = np.exp(w)
    draws = m + sigma * rng.normal(size=(options.n_draws, dim))
    return PosteriorDraws(
        draws=draws[None, :, :],
        names=list(lp.layout.names),
        warmup=0,
        seed=options.seed,
        method="vi",
        stats={},
        layout=lp.layout,
    )
