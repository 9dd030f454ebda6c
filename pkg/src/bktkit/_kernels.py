"""Compiled sequence recursions shared by the likelihood, EM, and prediction code.

All kernels operate on a padded batch: ``y`` is an ``(n_seq, t_max)`` int8
array of responses, ``lengths`` gives the valid prefix of each row, and the
five parameter arrays hold one probability-scale value per sequence (so
grouped and individualized models reuse the same kernels).

Gradient components follow the fixed order (learn, forget, guess, slip,
pi_know), indices 0..4, on the probability scale; callers apply transform
chain rules.
"""

import numba as nb
import numpy as np

# gradient component indices
L, F, G, S, P = 0, 1, 2, 3, 4

NEG_INF = -np.inf


@nb.njit(cache=True, nogil=True, inline="always")
def _lse2(u, v):
    # log(exp(u) + exp(v)) with -inf handled exactly
    if u == NEG_INF:
        return v
    if v == NEG_INF:
        return u
    m = u if u > v else v
    return m + np.log(np.exp(u - m) + np.exp(v - m))


@nb.njit(cache=True, nogil=True)
def forward_loglik(y, lengths, pi, learn, forget, guess, slip):
    """Marginal log-likelihood of each sequence via the log-space forward pass."""
    n = y.shape[0]
    out = np.empty(n)
    for i in range(n):
        p = pi[i]
        le1c = np.log(1.0 - slip[i])   # emit correct   | learned
        le1w = np.log(slip[i])         # emit incorrect | learned
        le0c = np.log(guess[i])        # emit correct   | unlearned
        le0w = np.log(1.0 - guess[i])  # emit incorrect | unlearned
        la11 = np.log(1.0 - forget[i])
        la10 = np.log(forget[i])
        la01 = np.log(learn[i])
        la00 = np.log(1.0 - learn[i])

        if y[i, 0] == 1:
            a1 = np.log(p) + le1c
            a0 = np.log(1.0 - p) + le0c
        else:
            a1 = np.log(p) + le1w
            a0 = np.log(1.0 - p) + le0w
        for t in range(1, lengths[i]):
            x1 = _lse2(a1 + la11, a0 + la01)
            x0 = _lse2(a1 + la10, a0 + la00)
            if y[i, t] == 1:
                a1 = x1 + le1c
                a0 = x0 + le0c
            else:
                a1 = x1 + le1w
                a0 = x0 + le0w
        out[i] = _lse2(a1, a0)
    return out


@nb.njit(cache=True, nogil=True)
def forward_loglik_grad(y, lengths, pi, learn, forget, guess, slip):
    """Per-sequence log-likelihood and its gradient on the probability scale.

    Differentiates the same log-space recursion used by ``forward_loglik``
    (forward-pass sensitivity); returns ``(ll (n,), grad (n, 5))``.
    Branches with zero posterior weight are skipped so fixed boundary
    parameters (e.g. forget = 0) never produce inf * 0.
    """
    n = y.shape[0]
    ll = np.empty(n)
    grad = np.zeros((n, 5))
    da1 = np.empty(5)
    da0 = np.empty(5)
    dx1 = np.empty(5)
    dx0 = np.empty(5)
    for i in range(n):
        p = pi[i]
        l_ = learn[i]
        f_ = forget[i]
        g_ = guess[i]
        s_ = slip[i]
        le1c = np.log(1.0 - s_)
        le1w = np.log(s_)
        le0c = np.log(g_)
        le0w = np.log(1.0 - g_)
        la11 = np.log(1.0 - f_)
        la10 = np.log(f_)
        la01 = np.log(l_)
        la00 = np.log(1.0 - l_)

        for k in range(5):
            da1[k] = 0.0
            da0[k] = 0.0
        if y[i, 0] == 1:
            a1 = np.log(p) + le1c
            a0 = np.log(1.0 - p) + le0c
            if s_ < 1.0:
                da1[S] = -1.0 / (1.0 - s_)
            if g_ > 0.0:
                da0[G] = 1.0 / g_
        else:
            a1 = np.log(p) + le1w
            a0 = np.log(1.0 - p) + le0w
            if s_ > 0.0:
                da1[S] = 1.0 / s_
            if g_ < 1.0:
                da0[G] = -1.0 / (1.0 - g_)
        if p > 0.0:
            da1[P] += 1.0 / p
        if p < 1.0:
            da0[P] -= 1.0 / (1.0 - p)

        for t in range(1, lengths[i]):
            u1 = a1 + la11
            v1 = a0 + la01
            x1 = _lse2(u1, v1)
            u0 = a1 + la10
            v0 = a0 + la00
            x0 = _lse2(u0, v0)
            # softmax weights of each incoming branch; skip zero-weight ones
            for k in range(5):
                dx1[k] = 0.0
                dx0[k] = 0.0
            if x1 > NEG_INF:
                wu = np.exp(u1 - x1)
                wv = np.exp(v1 - x1)
                if wu > 0.0:
                    for k in range(5):
                        dx1[k] += wu * da1[k]
                    dx1[F] -= wu / (1.0 - f_)
                if wv > 0.0:
                    for k in range(5):
                        dx1[k] += wv * da0[k]
                    dx1[L] += wv / l_
            if x0 > NEG_INF:
                wu = np.exp(u0 - x0)
                wv = np.exp(v0 - x0)
                if wu > 0.0:
                    for k in range(5):
                        dx0[k] += wu * da1[k]
                    dx0[F] += wu / f_
                if wv > 0.0:
                    for k in range(5):
                        dx0[k] += wv * da0[k]
                    dx0[L] -= wv / (1.0 - l_)
            if y[i, t] == 1:
                a1 = x1 + le1c
                a0 = x0 + le0c
                for k in range(5):
                    da1[k] = dx1[k]
                    da0[k] = dx0[k]
                if s_ < 1.0:
                    da1[S] -= 1.0 / (1.0 - s_)
                if g_ > 0.0:
                    da0[G] += 1.0 / g_
            else:
                a1 = x1 + le1w
                a0 = x0 + le0w
                for k in range(5):
                    da1[k] = dx1[k]
                    da0[k] = dx0[k]
                if s_ > 0.0:
                    da1[S] += 1.0 / s_
                if g_ < 1.0:
                    da0[G] -= 1.0 / (1.0 - g_)

        tot = _lse2(a1, a0)
        ll[i] = tot
        if tot > NEG_INF:
            w1 = np.exp(a1 - tot)
            w0 = np.exp(a0 - tot)
            if w1 > 0.0:
                for k in range(5):
                    grad[i, k] += w1 * da1[k]
            if w0 > 0.0:
                for k in range(5):
                    grad[i, k] += w0 * da0[k]
    return ll, grad


@nb.njit(cache=True, nogil=True)
def filter_batch(y, lengths, pi, learn, forget, guess, slip):
    """Filtered mastery and one-step-ahead correctness for each step.

    ``pl[i, t]`` is P(L_t | Y_{1:t-1}) (pi_know at t = 0) and ``pc[i, t]``
    the matching predictive correctness.  A zero Bayes denominator falls
    back to an uninformative update (posterior = prior) and is counted in
    the returned event tally.
    """
    n, t_max = y.shape
    pl = np.full((n, t_max), np.nan)
    pc = np.full((n, t_max), np.nan)
    events = 0
    for i in range(n):
        p = pi[i]
        for t in range(lengths[i]):
            pl[i, t] = p
            pc[i, t] = p * (1.0 - slip[i]) + (1.0 - p) * guess[i]
            if y[i, t] == 1:
                num = p * (1.0 - slip[i])
                den = num + (1.0 - p) * guess[i]
            else:
                num = p * slip[i]
                den = num + (1.0 - p) * (1.0 - guess[i])
            if den == 0.0:
                cond = p
                events += 1
            else:
                cond = num / den
            p = cond * (1.0 - forget[i]) + (1.0 - cond) * learn[i]
    return pl, pc, events


@nb.njit(cache=True, nogil=True)
def smooth_batch(y, lengths, pi, learn, forget, guess, slip):
    """Smoothed marginals P(L_t = 1 | Y_{1:T}) via log-space forward-backward.

    Returns ``(sm (n, t_max), ll (n,))``; rows with zero-probability data
    give ll = -inf and NaN marginals (callers decide how to surface that).
    """
    n, t_max = y.shape
    sm = np.full((n, t_max), np.nan)
    ll = np.empty(n)
    for i in range(n):
        T = lengths[i]
        le1c = np.log(1.0 - slip[i])
        le1w = np.log(slip[i])
        le0c = np.log(guess[i])
        le0w = np.log(1.0 - guess[i])
        la11 = np.log(1.0 - forget[i])
        la10 = np.log(forget[i])
        la01 = np.log(learn[i])
        la00 = np.log(1.0 - learn[i])

        a1 = np.empty(T)
        a0 = np.empty(T)
        if y[i, 0] == 1:
            a1[0] = np.log(pi[i]) + le1c
            a0[0] = np.log(1.0 - pi[i]) + le0c
        else:
            a1[0] = np.log(pi[i]) + le1w
            a0[0] = np.log(1.0 - pi[i]) + le0w
        for t in range(1, T):
            x1 = _lse2(a1[t - 1] + la11, a0[t - 1] + la01)
            x0 = _lse2(a1[t - 1] + la10, a0[t - 1] + la00)
            if y[i, t] == 1:
                a1[t] = x1 + le1c
                a0[t] = x0 + le0c
            else:
                a1[t] = x1 + le1w
                a0[t] = x0 + le0w
        tot = _lse2(a1[T - 1], a0[T - 1])
        ll[i] = tot
        if tot == NEG_INF:
            continue

        b1 = 0.0
        b0 = 0.0
        sm[i, T - 1] = np.exp(a1[T - 1] - tot)
        for t in range(T - 2, -1, -1):
            if y[i, t + 1] == 1:
                e1 = le1c + b1
                e0 = le0c + b0
            else:
                e1 = le1w + b1
                e0 = le0w + b0
            nb1 = _lse2(la11 + e1, la10 + e0)
            nb0 = _lse2(la01 + e1, la00 + e0)
            b1 = nb1
            b0 = nb0
            sm[i, t] = np.exp(a1[t] + b1 - tot)
    return sm, ll


@nb.njit(cache=True, nogil=True)
def em_accumulate(y, lengths, pi, learn, forget, guess, slip):
    """One Baum-Welch E-step over the batch, reduced to sufficient statistics.

    Returns ``(total_ll, stats)`` with

    stats[0] = sum of gamma_1(learned)          stats[1] = number of sequences
    stats[2] = sum of xi(unlearned->learned)    stats[3] = sum of gamma_t(unlearned), t < T
    stats[4] = sum of xi(learned->unlearned)    stats[5] = sum of gamma_t(learned), t < T
    stats[6] = sum of gamma_t(unlearned) * y_t  stats[7] = sum of gamma_t(unlearned)
    stats[8] = sum of gamma_t(learned) * (1-y)  stats[9] = sum of gamma_t(learned)
    """
    n, t_max = y.shape
    stats = np.zeros(10)
    total_ll = 0.0
    for i in range(n):
        T = lengths[i]
        le1c = np.log(1.0 - slip[i])
        le1w = np.log(slip[i])
        le0c = np.log(guess[i])
        le0w = np.log(1.0 - guess[i])
        la11 = np.log(1.0 - forget[i])
        la10 = np.log(forget[i])
        la01 = np.log(learn[i])
        la00 = np.log(1.0 - learn[i])

        a1 = np.empty(T)
        a0 = np.empty(T)
        if y[i, 0] == 1:
            a1[0] = np.log(pi[i]) + le1c
            a0[0] = np.log(1.0 - pi[i]) + le0c
        else:
            a1[0] = np.log(pi[i]) + le1w
            a0[0] = np.log(1.0 - pi[i]) + le0w
        for t in range(1, T):
            x1 = _lse2(a1[t - 1] + la11, a0[t - 1] + la01)
            x0 = _lse2(a1[t - 1] + la10, a0[t - 1] + la00)
            if y[i, t] == 1:
                a1[t] = x1 + le1c
                a0[t] = x0 + le0c
            else:
                a1[t] = x1 + le1w
                a0[t] = x0 + le0w
        ll = _lse2(a1[T - 1], a0[T - 1])
        total_ll += ll

        b1 = np.empty(T)
        b0 = np.empty(T)
        b1[T - 1] = 0.0
        b0[T - 1] = 0.0
        for t in range(T - 2, -1, -1):
            if y[i, t + 1] == 1:
                e1 = le1c + b1[t + 1]
                e0 = le0c + b0[t + 1]
            else:
                e1 = le1w + b1[t + 1]
                e0 = le0w + b0[t + 1]
            b1[t] = _lse2(la11 + e1, la10 + e0)
            b0[t] = _lse2(la01 + e1, la00 + e0)

        for t in range(T):
            g1 = np.exp(a1[t] + b1[t] - ll)
            g0 = np.exp(a0[t] + b0[t] - ll)
            if t == 0:
                stats[0] += g1
            if t < T - 1:
                if y[i, t + 1] == 1:
                    e1 = le1c + b1[t + 1]
                    e0 = le0c + b0[t + 1]
                else:
                    e1 = le1w + b1[t + 1]
                    e0 = le0w + b0[t + 1]
                # transition responsibilities out of each state
                if a0[t] > NEG_INF:
                    stats[2] += np.exp(a0[t] + la01 + e1 - ll)
                    stats[3] += g0
                if a1[t] > NEG_INF:
                    stats[4] += np.exp(a1[t] + la10 + e0 - ll)
                    stats[5] += g1
            if y[i, t] == 1:
                stats[6] += g0
            else:
                stats[8] += g1
            stats[7] += g0
            stats[9] += g1
        stats[1] += 1.0
    return total_ll, stats
