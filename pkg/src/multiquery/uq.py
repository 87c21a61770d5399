"""Forward uncertainty propagation: direct Monte Carlo and simplified BMFMC."""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from multiquery.designs import mc_design
from multiquery.surrogate import GPError, train_gp

_logger = logging.getLogger(__name__)

QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


class UQError(RuntimeError):
    """Not enough usable samples or training pairs."""


@dataclass
class OutputStatistics:
    n_samples: int
    n_failed: int
    mean: np.ndarray
    variance: np.ndarray
    quantiles: dict
    cdf_support: np.ndarray
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray

    def as_dict(self):
        return {
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "mean": self.mean,
            "variance": self.variance,
            "quantiles": {str(k): v for k, v in self.quantiles.items()},
            "cdf_support": self.cdf_support,
            "histogram_edges": self.histogram_edges,
            "histogram_counts": self.histogram_counts,
        }


@dataclass
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    info: dict = field(default_factory=dict)

    def normalization(self):
        return float(np.trapezoid(self.density, self.grid))

    def cdf(self):
        """Cumulative trapezoid integral on the grid."""
        inc = 0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.grid)
        return np.concatenate([[0.0], np.cumsum(inc)])

    def mean(self):
        return float(np.trapezoid(self.grid * self.density, self.grid))

    def as_dict(self):
        return {"grid": self.grid, "density": self.density, **self.info}


def output_statistics(outputs, statuses=None, bins=20):
    """Statistics over the completed rows of an ``(n, m)`` output matrix."""
    y = np.asarray(outputs, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    ok = np.all(np.isfinite(y), axis=1) if statuses is None else np.array(
        [s == "completed" for s in statuses]
    )
    good = y[ok]
    n_failed = int((~ok).sum())
    if good.shape[0] == 0:
        raise UQError("all model evaluations failed")
    mean = good.mean(axis=0)
    var = good.var(axis=0, ddof=1) if good.shape[0] > 1 else np.zeros(good.shape[1])
    q = np.quantile(good, QUANTILE_LEVELS, axis=0)
    quantiles = {lvl: q[i] for i, lvl in enumerate(QUANTILE_LEVELS)}
    counts, edges = np.histogram(good[:, 0], bins=bins)
    return OutputStatistics(
        n_samples=int(good.shape[0]),
        n_failed=n_failed,
        mean=mean,
        variance=var,
        quantiles=quantiles,
        cdf_support=np.sort(good[:, 0]),
        histogram_edges=edges,
        histogram_counts=counts,
    )


def propagate_mc(model, space, n, rng=None, return_samples=False):
    """Direct Monte Carlo: sample the inputs, evaluate, summarize completed rows."""
    if int(n) < 2:
        raise UQError("Monte Carlo propagation needs n >= 2")
    design = mc_design(space, n, rng)
    result = model.evaluate(design)
    stats = output_statistics(result.outputs, result.statuses)
    if return_samples:
        return stats, design, result
    return stats


def bmfmc_estimate(lf_outputs, pairs, gp_options=None, grid_size=1000, rng=None):
    """High-fidelity output density from low-fidelity samples and (LF, HF) pairs.

    A 1-D GP maps LF output to HF output. The density is the average of the
    GP predictive normals at every LF sample,
    ``p(y) = mean_j N(y | m(z_j), v(z_j) + noise)``, on a uniform grid that
    covers four predictive standard deviations around every component.
    """
    z = np.asarray(lf_outputs, dtype=float).ravel()
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2) if len(pairs) else np.zeros((0, 2))
    if pairs.shape[0] < 5:
        raise UQError("insufficient high-fidelity data: need at least 5 (LF, HF) pairs")
    if z.size < 100:
        raise UQError("need at least 100 low-fidelity samples")
    if pairs[:, 0].min() < z.min() or pairs[:, 0].max() > z.max():
        warnings.warn("training LF values extend beyond the LF sample range", RuntimeWarning, stacklevel=2)
    options = dict(gp_options or {})
    options.setdefault("optimize_noise", True)
    try:
        gp = train_gp(pairs[:, [0]], pairs[:, 1], rng=rng, **options)
    except GPError as exc:
        raise UQError(f"GP training failed: {exc}") from exc
    mean, var = gp.predict(z[:, None])
    var = var + gp.noise_variance()
    std = np.sqrt(var)
    grid_size = int(grid_size)
    span = float(np.max(mean + 4 * std) - np.min(mean - 4 * std))
    if span <= 0:
        span = 1.0
    # components narrower than two grid cells cannot be integrated on the grid;
    # the 10% margin keeps the floor above two cells after widening the grid
    std_eff = np.maximum(std, 2.2 * span / (grid_size - 1))
    lo = float(np.min(mean - 4 * std_eff))
    hi = float(np.max(mean + 4 * std_eff))
    grid = np.linspace(lo, hi, grid_size)
    density = _mixture_density(grid, mean, std_eff)
    info = {
        "mixture_mean": float(mean.mean()),
        "lengthscale": float(gp.hyper.lengthscales[0]),
        "noise_variance": float(gp.noise_variance()),
        "n_lf": int(z.size),
        "n_pairs": int(pairs.shape[0]),
    }
    return DensityEstimate(grid, density, info)


def _mixture_density(grid, means, stds, chunk=2048):
    out = np.zeros_like(grid)
    for start in range(0, means.size, chunk):
        m = means[start : start + chunk]
        s = stds[start : start + chunk]
        t = (grid[:, None] - m[None, :]) / s[None, :]
        out += np.sum(np.exp(-0.5 * t * t) / (s[None, :] * np.sqrt(2 * np.pi)), axis=1)
    return out / means.size


def mixture_cdf(grid, means, stds):
    t = (grid[:, None] - means[None, :]) / stds[None, :]
    return special.ndtr(t).mean(axis=1)
