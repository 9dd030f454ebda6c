"""Model variants, prior specification, and the unconstrained log posterior.

The free parameters of every variant are packed into one flat real vector:

* standard: one logit-scale coordinate per free parameter;
* multi: one coordinate per (parameter, group);
* hierarchical: a global coordinate, one standardized deviation per group
  (non-centered), and a log standard deviation per free parameter, with
  the per-group effective value ``z_global + sigma * eta_g``;
* pi_know may instead vary per student (one coordinate per student) or be
  a linear function of student covariates plus an intercept.

Gaussian priors are declared directly on the logit-scale coordinates, so
they need no Jacobian term; absent priors mean an implicit flat prior.
The deviation scale sigma gets a half-normal prior (including the
log-scale Jacobian, so the prior really is half-normal on sigma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import HALF_SCALED, PARAM_NAMES, ParameterFixes
from .data import SequenceSet

VARIANTS = ("standard", "multi", "hierarchical")
PI_MODES = ("shared", "per_student", "covariate")

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# half-normal normalizing constant: log(sqrt(2/pi))
LOG_HALF_NORMAL = 0.5 * math.log(2.0 / math.pi)


@dataclass(frozen=True)
class GaussianPrior:
    mu: float
    std: float

    def __post_init__(self):
        if not (self.std > 0) or not math.isfinite(self.std) or not math.isfinite(self.mu):
            raise ValueError(f"prior std must be positive and finite, got {self}")

    def logpdf(self, z):
        return -LOG_SQRT_2PI - math.log(self.std) - 0.5 * ((z - self.mu) / self.std) ** 2

    def dlogpdf(self, z):
        return -(z - self.mu) / self.std**2

    def sample(self, rng, size=None):
        return rng.normal(self.mu, self.std, size=size)


def _as_prior(value) -> GaussianPrior | None:
    if value is None or isinstance(value, GaussianPrior):
        return value
    mu, std = value
    return GaussianPrior(float(mu), float(std))


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian (mu, std) pairs on the logit scale; None means flat.

    ``hier_scales`` overrides the half-normal scale of a parameter's
    group-deviation sigma (default 1.0).  ``coef`` is the shared prior for
    covariate coefficients.
    """

    learn: object = None
    forget: object = None
    guess: object = None
    slip: object = None
    pi_know: object = None
    hier_scales: dict = field(default_factory=dict)
    coef: object = GaussianPrior(0.0, 2.0)

    def __post_init__(self):
        for name in PARAM_NAMES:
            object.__setattr__(self, name, _as_prior(getattr(self, name)))
        object.__setattr__(self, "coef", _as_prior(self.coef))
        for name, scale in self.hier_scales.items():
            if name not in PARAM_NAMES:
                raise ValueError(f"unknown parameter in hier_scales: {name!r}")
            if not scale > 0:
                raise ValueError(f"hier scale for {name!r} must be positive")

    @classmethod
    def weakly_informative(cls) -> "PriorSpec":
        """Normal(0, 2) on every logit-scale parameter."""
        return cls(
            learn=(0, 2), forget=(0, 2), guess=(0, 2), slip=(0, 2), pi_know=(0, 2)
        )

    def for_param(self, name: str) -> GaussianPrior | None:
        return getattr(self, name)

    def hier_scale(self, name: str) -> float:
        return float(self.hier_scales.get(name, 1.0))


@dataclass(frozen=True)
class ModelSpec:
    """Which variant to fit and how pi_know is individualized."""

    variant: str = "standard"
    pi_mode: str = "shared"
    fixes: ParameterFixes = field(default_factory=ParameterFixes)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.pi_mode not in PI_MODES:
            raise ValueError(f"pi_mode must be one of {PI_MODES}, got {self.pi_mode!r}")
        if self.pi_mode == "covariate" and self.fixes.is_fixed("pi_know"):
            raise ValueError("pi_know cannot be both fixed and covariate-driven")


def _sigmoid_vec(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _transform(name: str, z):
    if np.ndim(z) == 0:
        s = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
        return 0.5 * s if name in HALF_SCALED else s
    s = _sigmoid_vec(np.asarray(z, dtype=float))
    return 0.5 * s if name in HALF_SCALED else s


def _dtransform(name: str, theta):
    # derivative of the constrained value w.r.t. its logit-scale coordinate
    if name in HALF_SCALED:
        return theta * (1.0 - 2.0 * theta)
    return theta * (1.0 - theta)


@dataclass
class _Block:
    name: str
    kind: str  # fixed | scalar | group | hier | student | coef
    value: float | None = None
    sl: slice | None = None        # main coordinates
    sl_eta: slice | None = None    # hierarchical deviations
    sl_logsig: slice | None = None  # hierarchical log scale


class ParamLayout:
    """Flat-vector layout for one KC's free parameters.

    Owns packing, per-sequence expansion to the probability scale, the
    chain rule back to the flat vector, prior terms, and the constrained
    view used for summaries.
    """

    def __init__(self, spec: ModelSpec, priors: PriorSpec, *, group_labels,
                 student_labels, covariate_names=None, n_covariates=0):
        self.spec = spec
        self.priors = priors
        self.group_labels = list(group_labels)
        self.student_labels = list(student_labels)
        self.covariate_names = list(
            covariate_names
            if covariate_names is not None
            else [f"x{i}" for i in range(n_covariates)]
        )
        self.n_coef = 1 + len(self.covariate_names) if spec.pi_mode == "covariate" else 0

        self.blocks: dict[str, _Block] = {}
        self.names: list[str] = []
        pos = 0

        def reserve(n):
            nonlocal pos
            sl = slice(pos, pos + n)
            pos += n
            return sl

        for name in PARAM_NAMES:
            if spec.fixes.is_fixed(name):
                self.blocks[name] = _Block(name, "fixed", value=spec.fixes.value(name))
                continue
            if name == "pi_know" and spec.pi_mode == "per_student":
                sl = reserve(len(self.student_labels))
                self.blocks[name] = _Block(name, "student", sl=sl)
                self.names += [f"pi_know[{s}]" for s in self.student_labels]
            elif name == "pi_know" and spec.pi_mode == "covariate":
                sl = reserve(self.n_coef)
                self.blocks[name] = _Block(name, "coef", sl=sl)
                self.names += ["beta_pi[intercept]"] + [
                    f"beta_pi[{c}]" for c in self.covariate_names
                ]
            elif spec.variant == "standard":
                sl = reserve(1)
                self.blocks[name] = _Block(name, "scalar", sl=sl)
                self.names.append(name)
            elif spec.variant == "multi":
                sl = reserve(len(self.group_labels))
                self.blocks[name] = _Block(name, "group", sl=sl)
                self.names += [f"{name}[{g}]" for g in self.group_labels]
            else:  # hierarchical
                sl = reserve(1)
                sl_eta = reserve(len(self.group_labels))
                sl_logsig = reserve(1)
                self.blocks[name] = _Block(
                    name, "hier", sl=sl, sl_eta=sl_eta, sl_logsig=sl_logsig
                )
                self.names.append(f"{name}_global")
                self.names += [f"{name}_raw[{g}]" for g in self.group_labels]
                self.names.append(f"{name}_log_sigma")
        self.dim = pos

    # -- per-sequence parameter expansion ---------------------------------

    def seq_theta(self, u: np.ndarray, ctx: "SeqContext"):
        """Probability-scale parameter arrays (one value per sequence)."""
        out = {}
        for name in PARAM_NAMES:
            b = self.blocks[name]
            if b.kind == "fixed":
                out[name] = np.full(ctx.n_seq, b.value)
            else:
                theta = _transform(name, self._z_eff(b, u, ctx))
                out[name] = np.full(ctx.n_seq, theta) if np.ndim(theta) == 0 else theta
        return out

    def seq_theta_cached(self, u: np.ndarray, ctx: "SeqContext"):
        """Like :meth:`seq_theta` but also returns the per-name constrained
        values in native (scalar or array) form for the backprop pass."""
        kernel_args = {}
        cache = {}
        for name in PARAM_NAMES:
            b = self.blocks[name]
            if b.kind == "fixed":
                kernel_args[name] = np.full(ctx.n_seq, b.value)
                continue
            z_eff = self._z_eff_native(b, u, ctx)
            theta = _transform(name, z_eff)
            cache[name] = theta
            kernel_args[name] = (
                np.full(ctx.n_seq, float(theta)) if np.ndim(theta) == 0 else theta
            )
        return kernel_args, cache

    def _z_eff_native(self, b: _Block, u, ctx):
        """Effective logit-scale value: scalar for shared blocks, else (n_seq,)."""
        if b.kind == "scalar":
            return u[b.sl.start]
        return self._z_eff(b, u, ctx)

    def _z_eff(self, b: _Block, u, ctx):
        if b.kind == "scalar":
            return np.full(ctx.n_seq, u[b.sl][0])
        if b.kind == "group":
            return u[b.sl][ctx.group_idx]
        if b.kind == "hier":
            sigma = math.exp(u[b.sl_logsig][0])
            return u[b.sl][0] + sigma * u[b.sl_eta][ctx.group_idx]
        if b.kind == "student":
            z = u[b.sl]
            out = np.empty(ctx.n_seq)
            known = ctx.student_idx >= 0
            out[known] = z[ctx.student_idx[known]]
            if (~known).any():
                # unseen students fall back to the population-average pi
                pop = _transform("pi_know", z).mean()
                out[~known] = math.log(pop / (1.0 - pop)) if 0 < pop < 1 else 0.0
            return out
        if b.kind == "coef":
            return ctx.design @ u[b.sl]
        raise AssertionError(b.kind)

    def backprop(self, u, ctx, dtheta: np.ndarray, cache: dict | None = None) -> np.ndarray:
        """Map d loglik / d theta (n_seq, 5) back to the flat vector.

        ``cache`` may carry constrained values from :meth:`seq_theta_cached`
        so the transforms are not recomputed.
        """
        grad = np.zeros(self.dim)
        for col, name in enumerate(PARAM_NAMES):
            b = self.blocks[name]
            if b.kind == "fixed":
                continue
            if cache is not None and name in cache:
                theta = cache[name]
            else:
                theta = _transform(name, self._z_eff_native(b, u, ctx))
            if b.kind == "scalar":
                grad[b.sl] += float(dtheta[:, col].sum()) * _dtransform(name, theta)
                continue
            dz = dtheta[:, col] * _dtransform(name, theta)
            if b.kind == "group":
                np.add.at(grad, np.arange(b.sl.start, b.sl.stop)[ctx.group_idx], dz)
            elif b.kind == "hier":
                sigma = math.exp(u[b.sl_logsig][0])
                eta = u[b.sl_eta]
                per_group = np.zeros(len(self.group_labels))
                np.add.at(per_group, ctx.group_idx, dz)
                grad[b.sl] += per_group.sum()
                grad[b.sl_eta] += sigma * per_group
                grad[b.sl_logsig] += sigma * float(eta @ per_group)
            elif b.kind == "student":
                known = ctx.student_idx >= 0
                np.add.at(
                    grad,
                    b.sl.start + ctx.student_idx[known],
                    dz[known],
                )
                # fallback values also depend on every student's coordinate,
                # but fitting data never contains unseen students
            elif b.kind == "coef":
                grad[b.sl] += ctx.design.T @ dz
        return grad

    # -- priors ------------------------------------------------------------

    def prior_value_grad(self, u) -> tuple[float, np.ndarray]:
        val = 0.0
        grad = np.zeros(self.dim)
        for name in PARAM_NAMES:
            b = self.blocks[name]
            prior = self.priors.for_param(name)
            if b.kind in ("scalar", "group", "student"):
                if prior is not None:
                    z = u[b.sl]
                    val += float(np.sum(prior.logpdf(z)))
                    grad[b.sl] += prior.dlogpdf(z)
            elif b.kind == "hier":
                if prior is not None:
                    z = u[b.sl][0]
                    val += prior.logpdf(z)
                    grad[b.sl] += prior.dlogpdf(z)
                eta = u[b.sl_eta]
                val += float(np.sum(-LOG_SQRT_2PI - 0.5 * eta**2))
                grad[b.sl_eta] += -eta
                scale = self.priors.hier_scale(name)
                logsig = u[b.sl_logsig][0]
                sigma = math.exp(logsig)
                # half-normal(scale) on sigma, plus the log-scale Jacobian
                val += (
                    LOG_HALF_NORMAL
                    - math.log(scale)
                    - 0.5 * (sigma / scale) ** 2
                    + logsig
                )
                grad[b.sl_logsig] += -(sigma / scale) ** 2 + 1.0
            elif b.kind == "coef":
                prior = self.priors.coef
                if prior is not None:
                    z = u[b.sl]
                    val += float(np.sum(prior.logpdf(z)))
                    grad[b.sl] += prior.dlogpdf(z)
        return val, grad

    # -- constrained view ---------------------------------------------------

    def constrained_names(self) -> list[str]:
        names = []
        for name in PARAM_NAMES:
            b = self.blocks[name]
            if b.kind == "fixed":
                continue
            if b.kind == "scalar":
                names.append(name)
            elif b.kind == "group":
                names += [f"{name}[{g}]" for g in self.group_labels]
            elif b.kind == "hier":
                names.append(f"{name}_global")
                names += [f"{name}[{g}]" for g in self.group_labels]
                names.append(f"{name}_sigma")
            elif b.kind == "student":
                names += [f"pi_know[{s}]" for s in self.student_labels]
            elif b.kind == "coef":
                names += ["beta_pi[intercept]"] + [
                    f"beta_pi[{c}]" for c in self.covariate_names
                ]
        return names

    def constrain_matrix(self, U: np.ndarray) -> np.ndarray:
        """Transform draws (rows) to the constrained view column-by-column."""
        cols = []
        for name in PARAM_NAMES:
            b = self.blocks[name]
            if b.kind == "fixed":
                continue
            if b.kind in ("scalar", "group", "student"):
                cols.append(_transform(name, U[:, b.sl]))
            elif b.kind == "hier":
                z_g = U[:, b.sl]
                sigma = np.exp(U[:, b.sl_logsig])
                eta = U[:, b.sl_eta]
                cols.append(_transform(name, z_g))
                cols.append(_transform(name, z_g + sigma * eta))
                cols.append(sigma)
            elif b.kind == "coef":
                cols.append(U[:, b.sl])
        return np.hstack(cols)


@dataclass
class SeqContext:
    """Index arrays aligning sequences with layout coordinates."""

    n_seq: int
    group_idx: np.ndarray
    student_idx: np.ndarray
    design: np.ndarray | None


def build_context(layout: ParamLayout, sequences: SequenceSet) -> SeqContext:
    """Map a sequence set onto a layout; unknown groups are an error,
    unknown students are flagged with index -1 (pi fallback)."""
    seqs = sequences.sequences
    n = len(seqs)
    group_pos = {g: i for i, g in enumerate(layout.group_labels)}
    student_pos = {s: i for i, s in enumerate(layout.student_labels)}
    group_idx = np.zeros(n, dtype=np.int64)
    student_idx = np.zeros(n, dtype=np.int64)
    for i, s in enumerate(seqs):
        if layout.spec.variant in ("multi", "hierarchical"):
            if s.group not in group_pos:
                raise ValueError(f"sequence group {s.group!r} not present in the fit")
            group_idx[i] = group_pos[s.group]
        student_idx[i] = student_pos.get(s.student, -1)
    design = None
    if layout.spec.pi_mode == "covariate":
        n_cov = len(layout.covariate_names)
        design = np.ones((n, 1 + n_cov))
        for i, s in enumerate(seqs):
            if s.covariates is None or len(s.covariates) != n_cov:
                raise ValueError(
                    f"student {s.student!r} lacks the {n_cov} covariates required by the model"
                )
            design[i, 1:] = s.covariates
    return SeqContext(n_seq=n, group_idx=group_idx, student_idx=student_idx, design=design)


def make_layout(spec: ModelSpec, priors: PriorSpec, sequences: SequenceSet,
                covariate_names=None) -> ParamLayout:
    """Build the layout for one KC's sequence set, validating the spec."""
    seqs = sequences.sequences
    if len(sequences.kcs) > 1:
        raise ValueError(f"expected sequences for a single KC, got {sequences.kcs}")
    group_labels = sequences.group_labels()
    if spec.variant in ("multi", "hierarchical"):
        if not group_labels or any(s.group is None for s in seqs):
            raise ValueError(f"{spec.variant} models require a group id on every record")
    else:
        group_labels = []
    student_labels = sorted({s.student for s in seqs})
    n_cov = 0
    if spec.pi_mode == "covariate":
        if not seqs:
            raise ValueError("covariate mode requires data")
        if seqs[0].covariates is None:
            raise ValueError("covariate mode requires covariate columns in the data")
        n_cov = len(seqs[0].covariates)
    return ParamLayout(
        spec,
        priors,
        group_labels=group_labels,
        student_labels=student_labels,
        covariate_names=covariate_names,
        n_covariates=n_cov,
    )


class LogPosterior:
    """Unnormalized log posterior and analytic gradient for one KC.

    The likelihood is the sum of per-sequence forward log-likelihoods at
    each sequence's effective parameters; the gradient is assembled from
    the kernel's probability-scale sensitivities via the transform chain
    rules.  Impossible parameter regions yield ``(-inf, 0)`` rather than
    raising.
    """

    def __init__(self, sequences: SequenceSet, spec: ModelSpec, priors: PriorSpec,
                 covariate_names=None):
        self.spec = spec
        self.priors = priors
        self.layout = make_layout(spec, priors, sequences, covariate_names)
        self.ctx = build_context(self.layout, sequences)
        seqs = sequences.sequences
        if seqs:
            t_max = max(len(s) for s in seqs)
            self.y = np.zeros((len(seqs), t_max), dtype=np.int8)
            self.lengths = np.zeros(len(seqs), dtype=np.int64)
            for i, s in enumerate(seqs):
                self.y[i, : len(s)] = s.y
                self.lengths[i] = len(s)
        else:
            self.y = np.zeros((0, 1), dtype=np.int8)
            self.lengths = np.zeros(0, dtype=np.int64)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def loglik(self, u: np.ndarray) -> float:
        """Likelihood part only (flat-prior posterior value)."""
        th = self.layout.seq_theta(np.asarray(u, dtype=float), self.ctx)
        ll = _kernels.forward_loglik(
            self.y, self.lengths,
            th["pi_know"], th["learn"], th["forget"], th["guess"], th["slip"],
        )
        return float(np.sum(ll))

    def value(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float)
        pv, _ = self.layout.prior_value_grad(u)
        return self.loglik(u) + pv

    def value_grad(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        u = np.asarray(u, dtype=float)
        th, cache = self.layout.seq_theta_cached(u, self.ctx)
        ll, dtheta = _kernels.forward_loglik_grad(
            self.y, self.lengths,
            th["pi_know"], th["learn"], th["forget"], th["guess"], th["slip"],
        )
        val = float(np.sum(ll))
        if not math.isfinite(val):
            return -math.inf, np.zeros(self.dim)
        grad = self.layout.backprop(u, self.ctx, dtheta, cache)
        pv, pg = self.layout.prior_value_grad(u)
        val += pv
        grad += pg
        if not math.isfinite(val) or not np.isfinite(grad).all():
            return -math.inf, np.zeros(self.dim)
        return val, grad
