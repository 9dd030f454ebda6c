"""No-U-Turn sampler with dual-averaging step size and windowed diagonal
mass-matrix adaptation.

The tree is grown by binary doubling with multinomial sampling of the
proposal (biased toward the fresh subtree at the top level), and stopping
uses the generalized U-turn criterion on mass-weighted momentum-position
inner products, checked across merged subtrees as well as on the full
trajectory.  Warmup splits into an initial step-size phase, expanding
variance-estimation windows (25, 50, 100, ... with the last window
absorbing the remainder), and a final step-size phase.

Every chain draws from its own generator spawned from the fit seed, so
results are reproducible and independent of how chains are scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bayes import LogPosterior, ModelSpec, PriorSpec
from .data import SequenceSet
from .draws import PosteriorDraws

# energy error beyond which a leapfrog step counts as divergent
DIVERGENCE_THRESHOLD = 1000.0


class FitError(RuntimeError):
    """Inference could not produce a usable result."""


@dataclass(frozen=True)
class NutsOptions:
    chains: int = 4
    warmup: int = 1000
    sampling: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    threads: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.sampling < 1 or self.warmup < 0:
            raise ValueError("chains and sampling must be positive, warmup non-negative")
        if not (0.0 < self.target_accept < 1.0):
            raise ValueError("target_accept must lie in (0, 1)")


class _Point:
    __slots__ = ("u", "r", "val", "grad", "psharp")

    def __init__(self, u, r, val, grad, psharp):
        self.u = u
        self.r = r
        self.val = val
        self.grad = grad
        self.psharp = psharp


class _Tree:
    """A contiguous trajectory segment in traversal order."""

    __slots__ = ("beg", "end", "rho", "prop", "log_w", "alpha", "n_alpha", "ok", "n_div")

    def __init__(self, beg, end, rho, prop, log_w, alpha, n_alpha, ok, n_div):
        self.beg = beg
        self.end = end
        self.rho = rho
        self.prop = prop
        self.log_w = log_w
        self.alpha = alpha
        self.n_alpha = n_alpha
        self.ok = ok
        self.n_div = n_div

    def flipped(self) -> "_Tree":
        t = _Tree(self.end, self.beg, self.rho, self.prop, self.log_w,
                  self.alpha, self.n_alpha, self.ok, self.n_div)
        return t


def _criterion(psharp_a, psharp_b, rho) -> bool:
    return float(rho @ psharp_a) > 0.0 and float(rho @ psharp_b) > 0.0


class _ChainSampler:
    def __init__(self, logpost: LogPosterior, options: NutsOptions, rng):
        self.lp = logpost
        self.opt = options
        self.rng = rng
        self.inv_mass = np.ones(logpost.dim)

    # -- hamiltonian pieces --------------------------------------------------

    def _kinetic(self, r) -> float:
        return 0.5 * float(self.inv_mass @ (r * r))

    def _momentum(self):
        return self.rng.normal(size=self.lp.dim) / np.sqrt(self.inv_mass)

    def _leapfrog(self, u, r, grad, eps):
        r1 = r + 0.5 * eps * grad
        u1 = u + eps * self.inv_mass * r1
        val1, grad1 = self.lp.value_grad(u1)
        r1 = r1 + 0.5 * eps * grad1
        return u1, r1, val1, grad1

    # -- tree construction ----------------------------------------------------

    def _leaf(self, point: _Point, v: int, eps: float, h0: float) -> _Tree:
        u1, r1, val1, grad1 = self._leapfrog(point.u, point.r, point.grad, v * eps)
        h = val1 - self._kinetic(r1)
        dh = h - h0
        if not math.isfinite(dh):
            dh = -math.inf
        divergent = dh < -DIVERGENCE_THRESHOLD
        alpha = min(1.0, math.exp(dh)) if dh < 0 else 1.0
        p = _Point(u1, r1, val1, grad1, self.inv_mass * r1)
        return _Tree(
            beg=p, end=p, rho=r1.copy(), prop=p, log_w=dh,
            alpha=alpha, n_alpha=1, ok=not divergent, n_div=int(divergent),
        )

    def _merge(self, first: _Tree, second: _Tree) -> _Tree:
        """Combine adjacent segments given in traversal order (multinomial)."""
        log_w = np.logaddexp(first.log_w, second.log_w)
        take_second = math.log(self.rng.random()) < second.log_w - log_w
        prop = second.prop if take_second else first.prop
        rho = first.rho + second.rho
        ok = (
            _criterion(first.beg.psharp, second.end.psharp, rho)
            and _criterion(first.beg.psharp, second.beg.psharp, first.rho + second.beg.r)
            and _criterion(first.end.psharp, second.end.psharp, first.end.r + second.rho)
        )
        return _Tree(
            beg=first.beg, end=second.end, rho=rho, prop=prop, log_w=log_w,
            alpha=first.alpha + second.alpha, n_alpha=first.n_alpha + second.n_alpha,
            ok=ok, n_div=first.n_div + second.n_div,
        )

    def _build(self, depth: int, point: _Point, v: int, eps: float, h0: float) -> _Tree:
        if depth == 0:
            return self._leaf(point, v, eps, h0)
        t1 = self._build(depth - 1, point, v, eps, h0)
        if not t1.ok:
            return t1
        t2 = self._build(depth - 1, t1.end, v, eps, h0)
        merged = self._merge(t1, t2)
        merged.alpha = t1.alpha + t2.alpha
        merged.n_alpha = t1.n_alpha + t2.n_alpha
        merged.n_div = t1.n_div + t2.n_div
        merged.ok = merged.ok and t2.ok
        return merged

    def _transition(self, u, val, grad, eps):
        """One NUTS draw; returns (point, accept_stat, tree_depth, divergent)."""
        r0 = self._momentum()
        h0 = val - self._kinetic(r0)
        start = _Point(u, r0, val, grad, self.inv_mass * r0)
        tree = _Tree(beg=start, end=start, rho=r0.copy(), prop=start,
                     log_w=0.0, alpha=0.0, n_alpha=0, ok=True, n_div=0)
        alpha_sum = 0.0
        n_alpha = 0
        n_div = 0
        depth = 0
        while depth < self.opt.max_tree_depth:
            v = 1 if self.rng.random() < 0.5 else -1
            grow_from = tree.end if v == 1 else tree.beg
            sub = self._build(depth, grow_from, v, eps, h0)
            alpha_sum += sub.alpha
            n_alpha += sub.n_alpha
            n_div += sub.n_div
            if not sub.ok:
                break
            # biased progressive sampling: favor the fresh subtree
            if math.log(self.rng.random()) < sub.log_w - tree.log_w:
                tree.prop = sub.prop
            tree.log_w = np.logaddexp(tree.log_w, sub.log_w)
            sub_time = sub if v == 1 else sub.flipped()
            first, second = (tree, sub_time) if v == 1 else (sub_time, tree)
            rho = first.rho + second.rho
            ok = (
                _criterion(first.beg.psharp, second.end.psharp, rho)
                and _criterion(first.beg.psharp, second.beg.psharp, first.rho + second.beg.r)
                and _criterion(first.end.psharp, second.end.psharp, first.end.r + second.rho)
            )
            tree.beg = first.beg
            tree.end = second.end
            tree.rho = rho
            depth += 1
            if not ok:
                break
        accept = alpha_sum / n_alpha if n_alpha else 0.0
        return tree.prop, accept, depth, n_div > 0

    # -- step-size heuristics ---------------------------------------------------

    def _find_reasonable_eps(self, u, val, grad, eps=1.0) -> float:
        r = self._momentum()
        h0 = val - self._kinetic(r)

        def energy_change(e):
            _, r1, val1, _ = self._leapfrog(u, r, grad, e)
            h = val1 - self._kinetic(r1)
            return h - h0 if math.isfinite(h) else -math.inf

        dh = energy_change(eps)
        direction = 1 if dh > math.log(0.5) else -1
        for _ in range(100):
            eps_next = eps * (2.0 ** direction)
            if not (1e-10 < eps_next < 1e7):
                break
            dh = energy_change(eps_next)
            if direction == 1 and dh <= math.log(0.5):
                break
            if direction == -1 and dh >= math.log(0.5):
                eps = eps_next
                break
            eps = eps_next
        return eps

    # -- adaptation schedule ----------------------------------------------------

    def run(self):
        opt = self.opt
        lp = self.lp
        u = val = grad = None
        for _ in range(100):
            cand = self.rng.uniform(-opt.init_radius, opt.init_radius, size=lp.dim)
            v, g = lp.value_grad(cand)
            if math.isfinite(v):
                u, val, grad = cand, v, g
                break
        if u is None:
            raise FitError("no finite starting point found in 100 attempts")

        init_len, windows, term_len = _warmup_schedule(opt.warmup)
        eps = self._find_reasonable_eps(u, val, grad)
        da = _DualAveraging(eps, opt.target_accept)

        warmup_div = 0
        welford = _Welford(lp.dim)
        window_iter = iter(windows)
        window_left = next(window_iter, None)
        in_windows_phase = False

        for it in range(opt.warmup):
            point, accept, _, divergent = self._transition(u, val, grad, eps)
            u, val, grad = point.u, point.val, point.grad
            warmup_div += int(divergent)
            eps = da.update(accept)
            phase_pos = it + 1
            if phase_pos > init_len and window_left is not None:
                in_windows_phase = True
                welford.add(u)
                window_left -= 1
                if window_left == 0:
                    if welford.count >= 2:
                        self.inv_mass = welford.regularized_variance()
                    welford = _Welford(lp.dim)
                    eps = self._find_reasonable_eps(u, val, grad, da.eps_bar())
                    da = _DualAveraging(eps, opt.target_accept)
                    window_left = next(window_iter, None)
        if opt.warmup:
            if warmup_div == opt.warmup:
                raise FitError(
                    "every warmup iteration diverged; the posterior is "
                    "numerically intractable at this scale"
                )
            eps = da.eps_bar()

        draws = np.empty((opt.sampling, lp.dim))
        stats = {
            "step_size": np.full(opt.sampling, eps),
            "tree_depth": np.empty(opt.sampling),
            "divergent": np.empty(opt.sampling),
            "accept_stat": np.empty(opt.sampling),
        }
        for it in range(opt.sampling):
            point, accept, depth, divergent = self._transition(u, val, grad, eps)
            u, val, grad = point.u, point.val, point.grad
            draws[it] = u
            stats["tree_depth"][it] = depth
            stats["divergent"][it] = float(divergent)
            stats["accept_stat"][it] = accept
        return draws, stats


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, eps0: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.count = 0
        self.h_bar = 0.0
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0

    def update(self, accept: float) -> float:
        self.count += 1
        m = self.count
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept)
        self.log_eps = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        w = m ** (-self.kappa)
        self.log_eps_bar = (1 - w) * self.log_eps_bar + w * self.log_eps
        return math.exp(self.log_eps)

    def eps_bar(self) -> float:
        return math.exp(self.log_eps_bar) if self.count else math.exp(self.log_eps)


class _Welford:
    """Streaming mean/variance accumulator for mass-matrix estimation."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def regularized_variance(self):
        n = self.count
        var = self.m2 / (n - 1)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _warmup_schedule(warmup: int):
    """Split warmup into (initial step-size, variance windows, final step-size)."""
    if warmup <= 0:
        return 0, [], 0
    init = int(0.15 * warmup)
    term = int(0.10 * warmup)
    middle = warmup - init - term
    if middle < 20:
        return warmup, [], 0
    windows = []
    pos, w = 0, 25
    while pos < middle:
        if pos + 3 * w > middle:
            windows.append(middle - pos)
            break
        windows.append(w)
        pos += w
        w *= 2
    return init, windows, term


def fit_nuts(
    sequences: SequenceSet,
    spec: ModelSpec | None = None,
    priors: PriorSpec | None = None,
    options: NutsOptions | None = None,
    covariate_names=None,
    allow_empty_data: bool = False,
) -> PosteriorDraws:
    """Sample the posterior for one KC's sequences.

    Deterministic given (options.seed, options.chains): each chain uses an
    independent spawned generator, so threading never changes the draws.
    Raises :class:`FitError` when no finite start exists, when warmup
    diverges everywhere, or when the model has no free parameters.
    """
    spec = spec or ModelSpec()
    priors = priors or PriorSpec()
    options = options or NutsOptions()
    if not sequences.sequences and not allow_empty_data:
        raise FitError("sequence set is empty")
    lp = LogPosterior(sequences, spec, priors, covariate_names)
    if lp.dim == 0:
        raise FitError(
            "all parameters are fixed; nothing to infer - use the fixed values "
            "directly for prediction"
        )
    seeds = np.random.SeedSequence(options.seed).spawn(options.chains)

    def run_chain(c):
        sampler = _ChainSampler(lp, options, np.random.default_rng(seeds[c]))
        return sampler.run()

    if options.threads > 1 and options.chains > 1:
        with ThreadPoolExecutor(max_workers=options.threads) as pool:
            results = list(pool.map(run_chain, range(options.chains)))
    else:
        results = [run_chain(c) for c in range(options.chains)]

    draws = np.stack([r[0] for r in results])
    stats = {
        key: np.stack([r[1][key] for r in results]) for key in results[0][1]
    }
    return PosteriorDraws(
        draws=draws,
        names=list(lp.layout.names),
        warmup=options.warmup,
        seed=options.seed,
        method="nuts",
        stats=stats,
        layout=lp.layout,
    )
