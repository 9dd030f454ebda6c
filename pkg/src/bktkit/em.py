"""Baum-Welch point estimation for the standard (single parameter set) model.

Serves as the classical baseline and as an independent cross-check on
MAP-with-uniform-priors: both maximize the same marginal likelihood, so
their optima must coincide on well-identified data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import PARAM_NAMES, BktParams, ParameterFixes
from .data import SequenceSet

# guess/slip are projected into [EPS, 0.5] after every M-step; the other
# probabilities into [EPS, 1 - EPS]
EPS = 1e-6


@dataclass(frozen=True)
class EmOptions:
    max_iter: int = 200
    tol: float = 1e-6
    restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")


def pack_sequences(sequences: SequenceSet | list):
    """Pad sequences into the (y, lengths) batch layout the kernels expect."""
    seqs = sequences.sequences if isinstance(sequences, SequenceSet) else list(sequences)
    if not seqs:
        raise ValueError("sequence set is empty")
    t_max = max(len(s) for s in seqs)
    y = np.zeros((len(seqs), t_max), dtype=np.int8)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    for i, s in enumerate(seqs):
        y[i, : len(s)] = s.y
        lengths[i] = len(s)
    return y, lengths


_DEFAULT_START = BktParams(learn=0.2, forget=0.05, guess=0.2, slip=0.1, pi_know=0.5)


def _random_start(rng) -> BktParams:
    return BktParams(
        learn=rng.uniform(0.05, 0.95),
        forget=rng.uniform(0.05, 0.95),
        guess=rng.uniform(0.05, 0.45),
        slip=rng.uniform(0.05, 0.45),
        pi_know=rng.uniform(0.05, 0.95),
    )


def _apply_fixes(params: BktParams, fixed: ParameterFixes) -> BktParams:
    values = {n: getattr(params, n) for n in PARAM_NAMES}
    values.update(fixed.fixed_items())
    return BktParams(**values)


def _clip(name: str, value: float) -> float:
    hi = 0.5 if name in ("guess", "slip") else 1.0 - EPS
    return min(max(value, EPS), hi)


def _run_em(y, lengths, start: BktParams, fixed: ParameterFixes, options: EmOptions):
    params = _apply_fixes(start, fixed)
    trace = []
    n = np.ones(y.shape[0])
    for _ in range(options.max_iter):
        arrs = params.as_array()
        ll, stats = _kernels.em_accumulate(
            y, lengths, n * arrs[4], n * arrs[0], n * arrs[1], n * arrs[2], n * arrs[3]
        )
        trace.append(ll)
        updates = {}
        if stats[1] > 0:
            updates["pi_know"] = stats[0] / stats[1]
        if stats[3] > 0:
            updates["learn"] = stats[2] / stats[3]
        if stats[5] > 0:
            updates["forget"] = stats[4] / stats[5]
        if stats[7] > 0:
            updates["guess"] = stats[6] / stats[7]
        if stats[9] > 0:
            updates["slip"] = stats[8] / stats[9]
        values = {name: _clip(name, v) for name, v in updates.items()}
        for name in PARAM_NAMES:
            values.setdefault(name, getattr(params, name))
        new_params = _apply_fixes(BktParams(**values), fixed)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < options.tol:
            params = new_params
            break
        params = new_params
    # final log-likelihood at the returned parameters
    arrs = params.as_array()
    ll, _ = _kernels.em_accumulate(
        y, lengths, n * arrs[4], n * arrs[0], n * arrs[1], n * arrs[2], n * arrs[3]
    )
    trace.append(ll)
    return params, trace


def fit_em(
    sequences: SequenceSet,
    options: EmOptions | None = None,
    fixed: ParameterFixes | None = None,
) -> tuple[BktParams, list[float]]:
    """Fit by Baum-Welch from one default start plus ``options.restarts``
    random starts; returns the best run's parameters and its
    log-likelihood trace.

    Fixed parameters are never updated; guess/slip estimates are projected
    into [1e-6, 0.5] after each M-step (the projection is still the
    constrained M-step maximizer, so the trace stays non-decreasing).
    """
    options = options or EmOptions()
    fixed = fixed or ParameterFixes()
    y, lengths = pack_sequences(sequences)
    rng = np.random.default_rng(options.seed)
    starts = [_DEFAULT_START] + [_random_start(rng) for _ in range(options.restarts)]
    best = None
    for start in starts:
        params, trace = _run_em(y, lengths, start, fixed, options)
        if best is None or trace[-1] > best[1][-1]:
            best = (params, trace)
    return best
