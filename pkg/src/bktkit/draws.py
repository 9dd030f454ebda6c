"""Container for posterior draws plus per-draw sampler statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .bayes import ParamLayout


@dataclass
class PosteriorDraws:
    """Unconstrained draws arranged (chain, iteration, coordinate).

    ``stats`` holds per-draw sampler statistics (step_size, tree_depth,
    divergent, accept_stat) for MCMC; approximate methods leave it empty.
    ``layout`` (when present) defines the constrained view used by
    summaries and prediction.
    """

    draws: np.ndarray
    names: list[str]
    warmup: int
    seed: int
    method: str
    stats: dict = field(default_factory=dict)
    layout: ParamLayout | None = None

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3:
            raise ValueError("draws must have shape (chains, draws, dim)")
        if self.draws.shape[2] != len(self.names):
            raise ValueError("names must cover every coordinate exactly once")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate parameter names")
        for key, arr in self.stats.items():
            if arr.shape != self.draws.shape[:2]:
                raise ValueError(f"stat {key!r} must be shaped (chains, draws)")

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    @property
    def dim(self) -> int:
        return self.draws.shape[2]

    def flat(self) -> np.ndarray:
        """All draws stacked chain-major: (chains * draws, dim)."""
        return self.draws.reshape(-1, self.dim)

    def divergence_count(self) -> int:
        div = self.stats.get("divergent")
        return int(div.sum()) if div is not None else 0

    def constrained(self) -> tuple[list[str], np.ndarray]:
        """Constrained-view names and values, shape (chains, draws, k)."""
        if self.layout is None:
            return list(self.names), self.draws
        names = self.layout.constrained_names()
        flat = self.layout.constrain_matrix(self.flat())
        return names, flat.reshape(self.n_chains, self.n_draws, len(names))

    def param_draws(self, name: str, constrained: bool = True) -> np.ndarray:
        """Flat per-draw values of one parameter (constrained view by default)."""
        if constrained and self.layout is not None:
            names, vals = self.constrained()
        else:
            names, vals = list(self.names), self.draws
        if name not in names:
            raise KeyError(f"parameter {name!r} not in {names}")
        return vals[:, :, names.index(name)].reshape(-1)

    def save_csv(self, path) -> None:
        """One row per draw: chain, iteration, then raw coordinates."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["chain", "iteration"] + list(self.names))
            for c in range(self.n_chains):
                for i in range(self.n_draws):
                    writer.writerow(
                        [c, i] + [repr(v) for v in self.draws[c, i]]
                    )

    def save_stats_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            keys = sorted(self.stats)
            writer.writerow(["chain", "iteration"] + keys)
            for c in range(self.n_chains):
                for i in range(self.n_draws):
                    writer.writerow([c, i] + [repr(float(self.stats[k][c, i])) for k in keys])


def load_draws_csv(path, warmup: int, seed: int, method: str,
                   layout: ParamLayout | None = None) -> PosteriorDraws:
    """Rebuild a :class:`PosteriorDraws` from ``save_csv`` output."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[2:]
        per_chain: dict[int, list] = {}
        for row in reader:
            per_chain.setdefault(int(row[0]), []).append([float(v) for v in row[2:]])
    chains = sorted(per_chain)
    draws = np.array([per_chain[c] for c in chains])
    return PosteriorDraws(
        draws=draws, names=names, warmup=warmup, seed=seed, method=method, layout=layout
    )
