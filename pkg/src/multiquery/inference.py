"""Bayesian inverse analysis: Gaussian likelihood, random-walk MH, tempered SMC."""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from multiquery import kernels
from multiquery.models import COMPLETED, FAILED, BatchResult, Model
from multiquery.parameters import as_generator, log_pdf, sample_space

_logger = logging.getLogger(__name__)


class InferenceError(RuntimeError):
    """Invalid sampler input or an unrecoverable sampler state."""


# --------------------------------------------------------------------------
# observations and likelihood
# --------------------------------------------------------------------------


@dataclass
class ObservationSet:
    values: np.ndarray
    noise_variance: float
    coordinates: np.ndarray = None
    coordinate_names: tuple = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size < 1:
            raise InferenceError("need at least one observation")
        if not self.noise_variance > 0:
            raise InferenceError("noise variance must be positive")
        if self.coordinates is None:
            self.coordinates = np.zeros((self.values.size, 0))
        self.coordinates = np.asarray(self.coordinates, dtype=float).reshape(self.values.size, -1)

    @property
    def m(self):
        return self.values.size


def load_observations(path, noise_variance):
    """Read ``coord_*`` columns and a ``value`` column from a CSV file, keeping row order."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InferenceError(f"{path}: empty observation file") from None
        if "value" not in header:
            raise InferenceError(f"{path}: missing column value")
        coord_cols = [i for i, h in enumerate(header) if h.startswith("coord_")]
        value_col = header.index("value")
        coords, values = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            parsed = []
            for i in coord_cols + [value_col]:
                cell = row[i].strip() if i < len(row) else ""
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise InferenceError(
                        f"{path}: non-numeric cell {cell!r} in row {lineno}, column {header[i]}"
                    ) from None
            coords.append(parsed[:-1])
            values.append(parsed[-1])
    names = tuple(header[i][len("coord_") :] for i in coord_cols)
    return ObservationSet(
        np.array(values), noise_variance, np.array(coords).reshape(len(values), len(coord_cols)), names
    )


def write_observations(path, observations):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"coord_{n}" for n in observations.coordinate_names] + ["value"])
        for c, v in zip(observations.coordinates, observations.values):
            writer.writerow([repr(float(t)) for t in c] + [repr(float(v))])


def gaussian_log_likelihood_values(residuals, noise_variance):
    r = np.atleast_2d(residuals)
    m = r.shape[1]
    return -0.5 * m * math.log(2 * math.pi * noise_variance) - 0.5 * np.sum(r * r, axis=1) / noise_variance


class GaussianLikelihood(Model):
    """Log-likelihood of a forward model under i.i.d. Gaussian noise of fixed variance.

    Rows whose forward evaluation fails come back as failed rows; the
    sampler-facing :meth:`log_likelihood` maps them to ``-inf``.
    """

    def __init__(self, forward, observations, name="likelihood"):
        if forward.output_dim != observations.m:
            raise InferenceError(
                f"forward model has {forward.output_dim} outputs but there are {observations.m} observations"
            )
        self.forward = forward
        self.observations = observations
        self.input_dim = forward.input_dim
        self.input_names = getattr(forward, "input_names", None)
        self.output_dim = 1
        self.name = name
        self.n_failed = 0

    def _evaluate_rows(self, values):
        res = self.forward.evaluate(values)
        ll = gaussian_log_likelihood_values(
            res.outputs - self.observations.values[None, :], self.observations.noise_variance
        )
        ok = res.completed
        ll[~ok] = np.nan
        failed = int((~ok).sum())
        if failed:
            self.n_failed += failed
            for i in np.flatnonzero(~ok):
                _logger.warning("forward evaluation failed (%s); likelihood set to -inf", res.diagnostics[i])
        statuses = [COMPLETED if s else FAILED for s in ok]
        return BatchResult(ll[:, None], statuses, list(res.diagnostics))

    def log_likelihood(self, x):
        """Batch or single-point log-likelihood with ``-inf`` for failed forward runs."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = loglike_batch(self, np.atleast_2d(x))
        return float(out[0]) if single else out


def gaussian_loglike(lik, x):
    return lik.log_likelihood(np.asarray(x, dtype=float).ravel())


def loglike_batch(loglike, x):
    """Evaluate a likelihood Model or vectorized callable; failures become ``-inf``."""
    if x.shape[0] == 0:
        return np.zeros(0)
    if isinstance(loglike, Model):
        res = loglike.evaluate(x)
        out = res.outputs[:, 0].copy()
        out[~res.completed] = -np.inf
    else:
        out = np.asarray(loglike(x), dtype=float).reshape(x.shape[0])
    out = np.where(np.isnan(out), -np.inf, out)
    return out


# --------------------------------------------------------------------------
# weights and tempering
# --------------------------------------------------------------------------


def ess(weights, tol=1e-9):
    """Effective sample size ``1 / sum(w^2)`` of normalized weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > tol:
        raise InferenceError("weights must be non-negative and sum to one")
    return 1.0 / float(np.sum(w * w))


def _reweight(logw, loglikes, dphi):
    if dphi == 0:
        inc = np.zeros_like(loglikes)
    else:
        inc = dphi * loglikes
    lw = logw + inc
    total = logsumexp(lw)
    return lw - total, total


def _ess_after(logw, loglikes, dphi):
    lw, _ = _reweight(logw, loglikes, dphi)
    return 1.0 / float(np.sum(np.exp(2.0 * lw)))


def adapt_temperature(weights, loglikes, phi_prev, tau, tol=1e-6):
    """Largest next temperature keeping the reweighted ESS at or above ``tau * N``.

    Bisection on ``(phi_prev, 1]`` to ``tol``; returns ``1`` if the full step
    already satisfies the bound.
    """
    if not 0 < tau < 1:
        raise InferenceError("tau must lie in (0, 1)")
    if not phi_prev < 1:
        raise InferenceError("temperature is already 1")
    loglikes = np.asarray(loglikes, dtype=float)
    if not np.any(np.isfinite(loglikes)):
        raise InferenceError("all particles have non-finite log-likelihood")
    w = np.asarray(weights, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    n = w.size
    target = tau * n
    if _ess_after(logw, loglikes, 1.0 - phi_prev) >= target:
        return 1.0
    lo, hi = phi_prev, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _ess_after(logw, loglikes, mid - phi_prev) >= target:
            lo = mid
        else:
            hi = mid
    return lo if lo > phi_prev else hi


# --------------------------------------------------------------------------
# Metropolis–Hastings
# --------------------------------------------------------------------------


@dataclass
class Chain:
    states: np.ndarray
    log_posterior: np.ndarray
    accepted: int

    @property
    def acceptance_rate(self):
        steps = self.states.shape[0] - 1
        return self.accepted / steps if steps else 0.0


def metropolis_hastings(log_posterior, x0, steps, scale, rng=None):
    """Gaussian random-walk Metropolis–Hastings.

    ``scale`` is a per-dimension proposal standard deviation (scalar or
    vector). The returned chain includes ``x0`` as its first state.
    """
    x = np.asarray(x0, dtype=float).ravel().copy()
    d = x.size
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (d,)).copy()
    if np.any(~(scale > 0)):
        raise InferenceError("proposal scale must be positive")
    lp = float(log_posterior(x))
    if not math.isfinite(lp):
        raise InferenceError("log-posterior at the initial state is not finite")
    gen = as_generator(rng)
    steps = int(steps)
    noise = gen.standard_normal((steps, d)) * scale
    log_u = np.log(gen.random(steps))
    states = np.empty((steps + 1, d))
    lps = np.empty(steps + 1)
    states[0], lps[0] = x, lp
    accepted = 0
    for t in range(steps):
        cand = x + noise[t]
        lp_cand = float(log_posterior(cand))
        if lp_cand >= lp or log_u[t] < lp_cand - lp:
            x, lp = cand, lp_cand
            accepted += 1
        states[t + 1] = x
        lps[t + 1] = lp
    return Chain(states, lps, accepted)


# --------------------------------------------------------------------------
# Sequential Monte Carlo
# --------------------------------------------------------------------------


@dataclass
class ParticleEnsemble:
    particles: np.ndarray
    weights: np.ndarray
    temperature: float
    loglikes: np.ndarray

    def mean(self):
        return self.weights @ self.particles

    def cov(self):
        c = self.particles - self.mean()
        return (self.weights[:, None] * c).T @ c

    def std(self):
        return np.sqrt(np.diag(self.cov()))

    def quantile(self, q):
        """Weighted marginal quantiles, shape ``(d,)`` for scalar ``q``."""
        out = []
        for j in range(self.particles.shape[1]):
            order = np.argsort(self.particles[:, j])
            cw = np.cumsum(self.weights[order])
            k = min(np.searchsorted(cw, q), cw.size - 1)
            out.append(self.particles[order[k], j])
        return np.array(out)


@dataclass
class SMCResult:
    ensemble: ParticleEnsemble
    log_evidence: float
    temperatures: list = field(default_factory=list)
    ess_history: list = field(default_factory=list)
    acceptance_rates: list = field(default_factory=list)
    resampled: list = field(default_factory=list)
    n_failed: int = 0
    n_loglike_evaluations: int = 0

    def __iter__(self):
        yield self.ensemble
        yield self.log_evidence


def systematic_resample(weights, rng=None):
    gen = as_generator(rng)
    return kernels.systematic_resample(np.asarray(weights, dtype=float), gen.random())


def smc_run(
    prior,
    loglike,
    n_particles=1000,
    tau=0.5,
    rejuvenation_steps=5,
    rng=None,
    scale_factor=0.5,
    max_stages=1000,
):
    """Likelihood-tempered SMC from the prior (temperature 0) to the posterior (1).

    Each stage picks the next temperature adaptively, reweights, resamples
    systematically and applies ``rejuvenation_steps`` random-walk MH moves
    per particle targeting ``prior(x) * exp(phi * loglike(x))``. All
    likelihood evaluations of one move are issued as a single batch.

    Args:
        prior: :class:`ParameterSpace` holding the prior marginals.
        loglike: Scalar-output :class:`Model` or vectorized callable.
        n_particles: Ensemble size, at least 10.
        tau: Target ESS fraction for tempering and resampling.
        rejuvenation_steps: MH moves per particle and stage.
        scale_factor: Proposal std as a multiple of the weighted ensemble std.
    """
    n = int(n_particles)
    if n < 10:
        raise InferenceError("need at least 10 particles")
    if not 0 < tau < 1:
        raise InferenceError("tau must lie in (0, 1)")
    if int(rejuvenation_steps) < 1:
        raise InferenceError("need at least one rejuvenation step")
    gen = as_generator(rng)
    x = sample_space(prior, n, gen).values
    lprior = log_pdf(prior, x)
    ll = loglike_batch(loglike, x)
    n_evals = n
    n_failed = int(np.sum(~np.isfinite(ll)))
    if not np.any(np.isfinite(ll)):
        raise InferenceError("all particles have -inf log-likelihood")
    logw = np.full(n, -math.log(n))
    phi = 0.0
    log_z = 0.0
    result = SMCResult(None, 0.0, temperatures=[0.0])
    stage = 0
    while phi < 1.0:
        stage += 1
        if stage > max_stages:
            raise InferenceError(f"SMC did not reach temperature 1 within {max_stages} stages (phi={phi:.3g})")
        w = np.exp(logw)
        w /= w.sum()
        phi_next = adapt_temperature(w, ll, phi, tau)
        logw, log_inc = _reweight(logw, ll, phi_next - phi)
        log_z += log_inc
        phi = phi_next
        w = np.exp(logw)
        w /= w.sum()
        cur_ess = ess(w)
        result.temperatures.append(phi)
        result.ess_history.append(cur_ess)
        # the ESS-limited step lands on the threshold itself, so every
        # intermediate stage resamples; the final one only when degenerate
        do_resample = cur_ess < tau * n or phi < 1.0
        result.resampled.append(bool(do_resample))
        if do_resample:
            idx = systematic_resample(w, gen)
            x, ll, lprior = x[idx], ll[idx], lprior[idx]
            logw = np.full(n, -math.log(n))
            w = np.full(n, 1.0 / n)
        mean = w @ x
        std = np.sqrt(np.maximum(w @ (x - mean) ** 2, 0.0))
        spread = prior_spread(prior)
        scale = scale_factor * np.where(std > 0, std, 1e-3 * spread)
        accepted = 0
        for _ in range(int(rejuvenation_steps)):
            prop = x + scale * gen.standard_normal(x.shape)
            lp_prop = log_pdf(prior, prop)
            inside = np.isfinite(lp_prop)
            ll_prop = np.full(n, -np.inf)
            if inside.any():
                ll_prop[inside] = loglike_batch(loglike, prop[inside])
                n_evals += int(inside.sum())
                n_failed += int(np.sum(~np.isfinite(ll_prop[inside])))
            with np.errstate(invalid="ignore"):
                cur = lprior + _tempered(phi, ll)
                new = lp_prop + _tempered(phi, ll_prop)
                log_alpha = new - cur
            log_alpha = np.where(np.isnan(log_alpha), -np.inf, log_alpha)
            acc = np.log(gen.random(n)) < log_alpha
            x[acc], ll[acc], lprior[acc] = prop[acc], ll_prop[acc], lp_prop[acc]
            accepted += int(acc.sum())
        result.acceptance_rates.append(accepted / (n * int(rejuvenation_steps)))
        _logger.info(
            "SMC stage %d: phi=%.6g ess=%.1f acceptance=%.3f", stage, phi, cur_ess, result.acceptance_rates[-1]
        )
    w = np.exp(logw)
    w /= w.sum()
    result.ensemble = ParticleEnsemble(x, w, 1.0, ll)
    result.log_evidence = float(log_z)
    result.n_failed = n_failed
    result.n_loglike_evaluations = n_evals
    return result


def _tempered(phi, ll):
    if phi == 0:
        return np.zeros_like(ll)
    return phi * ll


def prior_spread(prior):
    return np.array([d.std() for d in prior.distributions])
