"""Two-state knowledge-tracing model: parameters, transforms, filtering,
smoothing, and sequence likelihood.

The model tracks a binary mastery state per opportunity.  Transitions are
governed by a learn rate and a forget rate, emissions by guess (correct
while unlearned) and slip (incorrect while learned), and the chain starts
at the initial-mastery probability ``pi_know``.  Guess and slip live in
[0, 0.5]; on the unconstrained scale they use a half-scaled logistic
transform so the hard bound is structural rather than prior-enforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import _kernels

PARAM_NAMES = ("learn", "forget", "guess", "slip", "pi_know")

# parameters mapped through 0.5 * sigmoid instead of plain sigmoid
HALF_SCALED = frozenset({"guess", "slip"})


def sigmoid(z: float) -> float:
    """Standard logistic function, stable for large |z|."""
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


class NumericalEventCounter:
    """Tally of defined numerical fallbacks (degenerate Bayes denominators)."""

    def __init__(self):
        self.degenerate_filter_updates = 0

    def reset(self):
        self.degenerate_filter_updates = 0


numerical_events = NumericalEventCounter()


@dataclass(frozen=True)
class BktParams:
    """Probability-scale parameter set.

    Free parameters live in the open intervals (0,1) / (0,0.5); the closed
    boundaries are representable so fixed-value overrides (e.g. forget = 0)
    can flow through prediction and likelihood code.
    """

    learn: float
    forget: float
    guess: float
    slip: float
    pi_know: float

    def __post_init__(self):
        for name in ("learn", "forget", "pi_know"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or not math.isfinite(v):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("guess", "slip"):
            v = getattr(self, name)
            if not (0.0 <= v <= 0.5) or not math.isfinite(v):
                raise ValueError(f"{name} must lie in [0, 0.5], got {v}")

    def as_array(self) -> np.ndarray:
        """Values in the fixed kernel order (learn, forget, guess, slip, pi_know)."""
        return np.array([self.learn, self.forget, self.guess, self.slip, self.pi_know])


@dataclass(frozen=True)
class UnconstrainedParams:
    """Logit-scale counterpart of :class:`BktParams` (all components free reals)."""

    z_learn: float
    z_forget: float
    z_guess: float
    z_slip: float
    z_pi: float

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")


@dataclass(frozen=True)
class MasteryState:
    """Current mastery probability and opportunity index."""

    p_know: float
    t: int = 1

    def __post_init__(self):
        if not (0.0 <= self.p_know <= 1.0):
            raise ValueError(f"p_know must lie in [0, 1], got {self.p_know}")


def constrain(u: UnconstrainedParams) -> BktParams:
    """Map logit-scale parameters to the probability scale.

    learn, forget, pi_know pass through the logistic function; guess and
    slip through 0.5 * logistic so they cannot exceed 0.5.
    """
    return BktParams(
        learn=sigmoid(u.z_learn),
        forget=sigmoid(u.z_forget),
        guess=0.5 * sigmoid(u.z_guess),
        slip=0.5 * sigmoid(u.z_slip),
        pi_know=sigmoid(u.z_pi),
    )


def unconstrain(p: BktParams) -> UnconstrainedParams:
    """Inverse of :func:`constrain`; requires parameters strictly inside their bounds."""
    for name in ("learn", "forget", "pi_know"):
        v = getattr(p, name)
        if not (0.0 < v < 1.0):
            raise ValueError(f"{name}={v} is on a closed bound; only fixed overrides may sit there")
    for name in ("guess", "slip"):
        v = getattr(p, name)
        if not (0.0 < v < 0.5):
            raise ValueError(f"{name}={v} is on a closed bound; only fixed overrides may sit there")
    return UnconstrainedParams(
        z_learn=logit(p.learn),
        z_forget=logit(p.forget),
        z_guess=logit(2.0 * p.guess),
        z_slip=logit(2.0 * p.slip),
        z_pi=logit(p.pi_know),
    )


def filter_update(state: MasteryState, y: int, params: BktParams) -> tuple[float, MasteryState]:
    """One Bayes update followed by the mastery transition.

    Returns ``(conditional, next_state)`` where ``conditional`` is
    P(L_t | Y_t) given the prior ``state.p_know`` and ``next_state`` holds
    P(L_{t+1}).  A zero denominator (only reachable with degenerate fixed
    parameters) falls back to ``conditional = p_know`` and bumps the
    module-level numerical-event counter.
    """
    if y not in (0, 1):
        raise ValueError(f"response must be 0 or 1, got {y!r}")
    p = state.p_know
    if y == 1:
        num = p * (1.0 - params.slip)
        den = num + (1.0 - p) * params.guess
    else:
        num = p * params.slip
        den = num + (1.0 - p) * (1.0 - params.guess)
    if den == 0.0:
        conditional = p
        numerical_events.degenerate_filter_updates += 1
    else:
        conditional = num / den
    next_p = conditional * (1.0 - params.forget) + (1.0 - conditional) * params.learn
    return conditional, MasteryState(p_know=next_p, t=state.t + 1)


def predict_correct(state: MasteryState, params: BktParams) -> float:
    """One-step-ahead probability of a correct response."""
    return state.p_know * (1.0 - params.slip) + (1.0 - state.p_know) * params.guess


def _as_batch(y) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(y, dtype=np.int8)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("response sequence must be a non-empty 1-d array")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("responses must be binary")
    return arr.reshape(1, -1), np.array([arr.size], dtype=np.int64)


def _param_arrays(params: BktParams):
    return tuple(np.array([v]) for v in params.as_array())


def log_likelihood(y, params: BktParams) -> float:
    """ln P(Y_{1:T}) with latent states marginalized out (log-space forward pass)."""
    y2, lengths = _as_batch(y)
    arrs = _param_arrays(params)
    ll = _kernels.forward_loglik(y2, lengths, arrs[4], arrs[0], arrs[1], arrs[2], arrs[3])
    return float(ll[0])


def filter_sequence(y, params: BktParams) -> list[tuple[float, float]]:
    """Per-step prior mastery P(L_t | Y_{1:t-1}) and its predictive correctness.

    Entry 0 carries pi_know (nothing observed yet); later entries chain
    :func:`filter_update` over the observed responses.
    """
    y2, _ = _as_batch(y)
    state = MasteryState(p_know=params.pi_know, t=1)
    out = []
    for yt in y2[0]:
        out.append((state.p_know, predict_correct(state, params)))
        _, state = filter_update(state, int(yt), params)
    return out


def smooth_sequence(y, params: BktParams) -> np.ndarray:
    """Smoothed marginals P(L_t = 1 | Y_{1:T}) via log-space forward-backward."""
    y2, lengths = _as_batch(y)
    arrs = _param_arrays(params)
    sm, ll = _kernels.smooth_batch(y2, lengths, arrs[4], arrs[0], arrs[1], arrs[2], arrs[3])
    if not math.isfinite(ll[0]):
        raise ValueError("sequence has probability zero under the given parameters")
    return sm[0, : y2.shape[1]].copy()


@dataclass(frozen=True)
class ParameterFixes:
    """Optional fixed values; a fixed parameter is excluded from inference
    and conditioned on everywhere downstream."""

    learn: float | None = None
    forget: float | None = None
    guess: float | None = None
    slip: float | None = None
    pi_know: float | None = None

    def __post_init__(self):
        for name in ("learn", "forget", "pi_know"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise ValueError(f"fixed {name} must lie in [0, 1], got {v}")
        for name in ("guess", "slip"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 0.5):
                raise ValueError(f"fixed {name} must lie in [0, 0.5], got {v}")

    def value(self, name: str) -> float | None:
        return getattr(self, name)

    def is_fixed(self, name: str) -> bool:
        return getattr(self, name) is not None

    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n in PARAM_NAMES if not self.is_fixed(n))

    def fixed_items(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in PARAM_NAMES if self.is_fixed(n)}

    def complete_params(self) -> BktParams | None:
        """Full parameter set when all five values are fixed, else None."""
        if self.free_names():
            return None
        return BktParams(**{n: getattr(self, n) for n in PARAM_NAMES})


def fix_parameters(**values: float) -> ParameterFixes:
    """Build a fixed-parameter mask, e.g. ``fix_parameters(forget=0.0)``."""
    unknown = set(values) - set(PARAM_NAMES)
    if unknown:
        raise ValueError(f"unknown parameter(s): {sorted(unknown)}")
    return ParameterFixes(**values)
