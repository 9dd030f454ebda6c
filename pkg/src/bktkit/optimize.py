"""Gradient-based MAP/MLE point estimation.

With flat priors the optimum is the maximum-likelihood estimate; with
priors it is the posterior mode.  Uses L-BFGS-B on the negative log
posterior with the analytic gradient, from one zero start plus random
restarts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize as sp_optimize

from .bayes import LogPosterior, ModelSpec, PriorSpec
from .core import PARAM_NAMES, BktParams
from .data import SequenceSet
from .nuts import FitError


@dataclass(frozen=True)
class MapOptions:
    max_iter: int = 500
    grad_tol: float = 1e-6
    restarts: int = 4
    init_radius: float = 2.0
    seed: int = 0


@dataclass
class MapResult:
    """Optimum on the unconstrained scale plus its constrained view."""

    point: np.ndarray
    names: list[str]
    objective: float
    layout: object

    def constrained(self) -> dict[str, float]:
        values = self.layout.constrain_matrix(self.point[None, :])[0]
        return dict(zip(self.layout.constrained_names(), values))

    def params(self) -> BktParams:
        """Full parameter set (standard shared model only), fixes included."""
        values = self.constrained()
        fixes = self.layout.spec.fixes
        out = {}
        for name in PARAM_NAMES:
            if fixes.is_fixed(name):
                out[name] = fixes.value(name)
            elif name in values:
                out[name] = float(values[name])
            else:
                raise ValueError(
                    f"{name} is not a single shared parameter in this model; "
                    "read .constrained() instead"
                )
        return BktParams(**out)


def fit_map(
    sequences: SequenceSet,
    spec: ModelSpec | None = None,
    priors: PriorSpec | None = None,
    options: MapOptions | None = None,
    covariate_names=None,
    allow_empty_data: bool = False,
) -> MapResult:
    """Maximize the log posterior; returns the best restart by objective."""
    spec = spec or ModelSpec()
    priors = priors or PriorSpec()
    options = options or MapOptions()
    if not sequences.sequences and not allow_empty_data:
        raise FitError("sequence set is empty")
    lp = LogPosterior(sequences, spec, priors, covariate_names)
    if lp.dim == 0:
        raise FitError(
            "all parameters are fixed; nothing to infer - use the fixed values "
            "directly for prediction"
        )

    def neg(u):
        val, grad = lp.value_grad(u)
        if not np.isfinite(val):
            return 1e300, np.zeros_like(u)
        return -val, -grad

    rng = np.random.default_rng(options.seed)
    starts = [np.zeros(lp.dim)] + [
        rng.uniform(-options.init_radius, options.init_radius, size=lp.dim)
        for _ in range(options.restarts)
    ]
    best = None
    for u0 in starts:
        if not np.isfinite(lp.value(u0)):
            continue
        res = sp_optimize.minimize(
            neg,
            u0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": options.max_iter, "gtol": options.grad_tol, "ftol": 1e-14},
        )
        if best is None or -res.fun > best.objective:
            best = MapResult(
                point=np.asarray(res.x, dtype=float),
                names=list(lp.layout.names),
                objective=float(-res.fun),
                layout=lp.layout,
            )
    if best is None:
        raise FitError("no finite starting point found for optimization")
    return best
