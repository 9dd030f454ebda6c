"""Independent reference computations used to pin expected test values.

Everything here is deliberately brute force (path enumeration, pairwise
counts, finite differences) and never calls the implementation paths it
checks.
"""

import itertools

import numpy as np


def enum_joint(y, params):
    """P(Y_{1:T}) by summing the joint over all 2^T latent paths."""
    learn, forget, guess, slip, pi = (
        params.learn,
        params.forget,
        params.guess,
        params.slip,
        params.pi_know,
    )
    T = len(y)
    total = 0.0
    for path in itertools.product((0, 1), repeat=T):
        p = pi if path[0] == 1 else 1.0 - pi
        for t in range(1, T):
            prev, cur = path[t - 1], path[t]
            if prev == 0:
                p *= learn if cur == 1 else 1.0 - learn
            else:
                p *= 1.0 - forget if cur == 1 else forget
        for t in range(T):
            if path[t] == 1:
                p *= 1.0 - slip if y[t] == 1 else slip
            else:
                p *= guess if y[t] == 1 else 1.0 - guess
        total += p
    return total


def enum_smoothed(y, params):
    """P(L_t = 1 | Y_{1:T}) for every t, by path enumeration."""
    learn, forget, guess, slip, pi = (
        params.learn,
        params.forget,
        params.guess,
        params.slip,
        params.pi_know,
    )
    T = len(y)
    num = np.zeros(T)
    total = 0.0
    for path in itertools.product((0, 1), repeat=T):
        p = pi if path[0] == 1 else 1.0 - pi
        for t in range(1, T):
            prev, cur = path[t - 1], path[t]
            if prev == 0:
                p *= learn if cur == 1 else 1.0 - learn
            else:
                p *= 1.0 - forget if cur == 1 else forget
        for t in range(T):
            if path[t] == 1:
                p *= 1.0 - slip if y[t] == 1 else slip
            else:
                p *= guess if y[t] == 1 else 1.0 - guess
        total += p
        for t in range(T):
            if path[t] == 1:
                num[t] += p
    return num / total


def auc_pairwise(scores, labels):
    """Mann-Whitney AUC by explicit O(n^2) pair counting with half-credit ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def central_diff_grad(fun, x, h=1e-5):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def random_params(rng, lo=0.02, hi=0.98):
    """Random valid probability-scale parameters, bounded away from the edges."""
    from bktkit.core import BktParams

    return BktParams(
        learn=rng.uniform(lo, hi),
        forget=rng.uniform(lo, hi),
        guess=rng.uniform(lo / 2, 0.5 - lo / 2),
        slip=rng.uniform(lo / 2, 0.5 - lo / 2),
        pi_know=rng.uniform(lo, hi),
    )
