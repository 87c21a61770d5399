"""Gaussian-process regression with an anisotropic squared-exponential kernel."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from multiquery import kernels
from multiquery.models import COMPLETED, BatchResult, Model
from multiquery.optimize import StochasticOptimizerConfig, stochastic_minimize
from multiquery.parameters import as_generator

_logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
REFINE_SWEEPS = 4
LENGTHSCALE_SPAN_CAP = 10.0


class GPError(RuntimeError):
    """Training data or kernel factorization problem."""


@dataclass
class GPHyperparameters:
    signal_variance: float = 1.0
    lengthscales: np.ndarray = None
    noise_variance: float = 0.0

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if not self.signal_variance > 0:
            raise GPError("signal variance must be positive")
        if np.any(~(self.lengthscales > 0)):
            raise GPError("lengthscales must be positive")
        if not self.noise_variance >= 0:
            raise GPError("noise variance must be non-negative")

    def to_log(self, with_noise=False):
        theta = [math.log(self.signal_variance), *np.log(self.lengthscales)]
        if with_noise:
            theta.append(math.log(self.noise_variance))
        return np.array(theta)

    @classmethod
    def from_log(cls, theta, d, noise_variance=0.0):
        theta = np.asarray(theta, dtype=float)
        noise = math.exp(theta[1 + d]) if theta.size > 1 + d else noise_variance
        return cls(math.exp(theta[0]), np.exp(theta[1 : 1 + d]), noise)


def _cholesky_with_jitter(k_se, noise_variance, signal_variance):
    """Cholesky factor of ``K + (noise + c * signal) I`` with ``c`` escalating x10."""
    n = k_se.shape[0]
    c = JITTER_START
    while c <= JITTER_MAX * (1 + 1e-12):
        jitter = c * signal_variance
        kk = k_se.copy()
        kk[np.diag_indices(n)] += noise_variance + jitter
        chol, info = lapack.dpotrf(kk, lower=1, clean=1, overwrite_a=1)
        if info == 0:
            return chol, jitter
        c *= 10.0
    raise GPError("kernel matrix factorization failed after maximal jitter escalation")


def log_marginal_likelihood(X, y, hyper, with_noise_gradient=False, return_gradient=True):
    """Exact log marginal likelihood and its gradient w.r.t. log-hyperparameters.

    Gradient order: ``log signal_variance``, ``log lengthscale_j`` for each
    dimension, and ``log noise_variance`` if requested.

    Raises:
        GPError: if the kernel matrix cannot be factorized.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    k_se = kernels.se_kernel(X, X, hyper.lengthscales, hyper.signal_variance)
    chol, jitter = _cholesky_with_jitter(k_se, hyper.noise_variance, hyper.signal_variance)
    alpha = linalg.cho_solve((chol, True), y, check_finite=False)
    value = -0.5 * float(y @ alpha) - float(np.log(np.diag(chol)).sum()) - 0.5 * n * math.log(2 * math.pi)
    if not return_gradient:
        return value, None
    kinv, info = lapack.dpotri(chol, lower=1)
    if info != 0:  # pragma: no cover - dpotri after a successful dpotrf
        raise GPError("kernel inverse failed")
    kinv = np.tril(kinv) + np.tril(kinv, -1).T
    w = np.outer(alpha, alpha) - kinv
    trace_w = float(np.trace(w))
    grad = np.empty(1 + d + (1 if with_noise_gradient else 0))
    # jitter is proportional to the signal variance, so it shares that derivative
    grad[0] = 0.5 * float(np.sum(w * k_se)) + 0.5 * jitter * trace_w
    grad[1 : 1 + d] = kernels.se_lengthscale_traces(X, k_se, w, hyper.lengthscales)
    if with_noise_gradient:
        grad[1 + d] = 0.5 * hyper.noise_variance * trace_w
    return value, grad


class GPModel:
    """A trained GP; immutable after construction and safe to share for prediction.

    Targets are standardized internally; :meth:`predict` returns mean and
    variance in the original units.
    """

    def __init__(self, X, y, hyper, y_mean=0.0, y_scale=1.0, info=None):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float).ravel()
        self.hyper = hyper
        self.y_mean = float(y_mean)
        self.y_scale = float(y_scale)
        self.info = info or {}
        z = (self.y - self.y_mean) / self.y_scale
        k_se = kernels.se_kernel(self.X, self.X, hyper.lengthscales, hyper.signal_variance)
        self._chol, self.jitter = _cholesky_with_jitter(k_se, hyper.noise_variance, hyper.signal_variance)
        self._alpha = self._refined_solve(k_se, z)

    def _refined_solve(self, k_se, z):
        """Solve against ``K + noise I`` using the jittered factor as preconditioner.

        Jitter acts as a nugget that biases the mean by ``jitter * alpha``;
        a few refinement sweeps remove that bias when the system allows it.
        Sweeps that do not halve the residual (inconsistent duplicates) stop.
        """
        kk = k_se.copy()
        kk[np.diag_indices_from(kk)] += self.hyper.noise_variance
        alpha = linalg.cho_solve((self._chol, True), z, check_finite=False)
        resid = np.linalg.norm(z - kk @ alpha)
        for _ in range(REFINE_SWEEPS):
            cand = alpha + linalg.cho_solve((self._chol, True), z - kk @ alpha, check_finite=False)
            cand_resid = np.linalg.norm(z - kk @ cand)
            if not cand_resid < 0.5 * resid:
                break
            alpha, resid = cand, cand_resid
        return alpha

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def signal_variance(self):
        """Prior variance in original target units."""
        return self.hyper.signal_variance * self.y_scale**2

    def predict(self, Xstar, full_output=False):
        """Posterior mean and variance (latent function, noise excluded)."""
        Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
        if Xstar.shape[1] != self.dim:
            raise GPError(f"dimension mismatch: GP has {self.dim} inputs, query has {Xstar.shape[1]}")
        kstar = kernels.se_kernel(Xstar, self.X, self.hyper.lengthscales, self.hyper.signal_variance)
        mean = kstar @ self._alpha
        v = linalg.solve_triangular(self._chol, kstar.T, lower=True, check_finite=False)
        var = self.hyper.signal_variance - np.sum(v * v, axis=0)
        np.maximum(var, 0.0, out=var)
        return self.y_mean + self.y_scale * mean, var * self.y_scale**2

    def noise_variance(self):
        return self.hyper.noise_variance * self.y_scale**2


def _initial_hyper(X, noise_variance):
    spread = X.std(axis=0)
    spread[spread <= 0] = 1.0
    return GPHyperparameters(1.0, spread, noise_variance)


def train_gp(
    X,
    y,
    hyper0=None,
    restarts=5,
    steps=500,
    step_size=0.05,
    rng=None,
    optimize_noise=False,
    noise_variance=0.0,
):
    """Fit hyperparameters by maximizing the log marginal likelihood.

    Adam runs in log-hyperparameter space from ``restarts`` starting points
    (the first is ``hyper0`` or a data-driven default, the rest are random
    perturbations of it); the best visited point wins. Lengthscales are
    capped at ``LENGTHSCALE_SPAN_CAP`` times the training span per dimension.

    Raises:
        GPError: fewer than two points, non-finite targets, or a
            factorization failure at the selected hyperparameters.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise GPError("X and y differ in length")
    n, d = X.shape
    if n < 2:
        raise GPError("need at least 2 training points")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise GPError("non-finite training data")
    y_mean = float(y.mean())
    y_scale = float(y.std())
    if y_scale <= 0:
        y_scale = 1.0
    z = (y - y_mean) / y_scale
    gen = as_generator(rng)
    if hyper0 is None:
        hyper0 = _initial_hyper(X, noise_variance if noise_variance > 0 else 1e-2)
    if optimize_noise and hyper0.noise_variance <= 0:
        hyper0 = GPHyperparameters(hyper0.signal_variance, hyper0.lengthscales, 1e-2)
    fixed_noise = noise_variance if not optimize_noise else None
    theta0 = hyper0.to_log(with_noise=optimize_noise)
    # lengthscales far beyond the data span make K numerically singular while
    # the likelihood of near-linear data keeps creeping upward; cap them
    upper = np.full(theta0.size, np.inf)
    span = np.ptp(X, axis=0)
    upper[1 : 1 + d] = np.log(LENGTHSCALE_SPAN_CAP * np.where(span > 0, span, 1.0))
    theta0 = np.minimum(theta0, upper)

    def objective(theta):
        clipped = np.minimum(theta, upper)
        h = GPHyperparameters.from_log(clipped, d, fixed_noise if fixed_noise is not None else 0.0)
        try:
            value, grad = log_marginal_likelihood(X, z, h, with_noise_gradient=optimize_noise)
        except GPError:
            return math.inf, np.zeros_like(theta)
        # no pull beyond the cap, so iterates stay near it
        grad = np.where((theta >= upper) & (grad > 0), 0.0, grad)
        return -value, -grad

    config = StochasticOptimizerConfig("adam", step_size=step_size, max_iter=int(steps), grad_tol=1e-6)
    best_theta, best_value = None, math.inf
    history = []
    for k in range(max(1, int(restarts))):
        start = theta0 if k == 0 else theta0 + gen.uniform(-1.0, 1.0, size=theta0.size)
        if steps > 0:
            res = stochastic_minimize(objective, start, config, jac=True, record_trace=False)
            cand_theta, cand_value = res.info["best_x"], res.info["best_f"]
        else:
            cand_theta, cand_value = start, objective(start)[0]
        history.append(float(-cand_value))
        if cand_value < best_value:
            best_theta, best_value = cand_theta, cand_value
    if best_theta is None:
        raise GPError("kernel matrix factorization failed for every restart")
    best_theta = np.minimum(best_theta, upper)
    hyper = GPHyperparameters.from_log(best_theta, d, fixed_noise if fixed_noise is not None else 0.0)
    info = {"log_marginal_likelihood": float(-best_value), "restart_values": history}
    _logger.info("GP trained on %d points: lml=%.4g, lengthscales=%s", n, -best_value, hyper.lengthscales)
    return GPModel(X, y, hyper, y_mean, y_scale, info)


def predict(gp, Xstar):
    return gp.predict(Xstar)


class SurrogateModel(Model):
    """A GP (one per output column) standing in for another model.

    The training design and target model are recorded at construction;
    :meth:`train` evaluates the target on the design and fits the GPs.
    """

    def __init__(self, space, target=None, design=None, gp_options=None, name="surrogate"):
        self.space = space
        self.target = target
        self.design = design
        self.gp_options = dict(gp_options or {})
        self.input_dim = space.dim
        self.input_names = space.names
        self.output_dim = target.output_dim if target is not None else 1
        self.name = name
        self.gps = None
        self.training_result = None

    @property
    def trained(self):
        return self.gps is not None

    def train(self, rng=None):
        if self.target is None or self.design is None:
            raise GPError(f"surrogate '{self.name}' has no training design or target model")
        result = self.target.evaluate(self.design)
        self.training_result = result
        ok = result.completed
        if ok.sum() < 2:
            raise GPError(f"surrogate '{self.name}': fewer than 2 completed training evaluations")
        if not ok.all():
            _logger.warning("surrogate '%s': dropping %d failed training rows", self.name, int((~ok).sum()))
        self.fit(self.design.values[ok], result.outputs[ok], rng=rng)
        return result

    def fit(self, X, Y, rng=None):
        Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
        self.output_dim = Y.shape[1]
        gen = as_generator(rng)
        self.gps = [train_gp(X, Y[:, j], rng=gen, **self.gp_options) for j in range(Y.shape[1])]
        return self

    def predict(self, Xstar):
        if not self.trained:
            raise GPError(f"surrogate '{self.name}' is not trained")
        pairs = [gp.predict(Xstar) for gp in self.gps]
        return np.column_stack([p[0] for p in pairs]), np.column_stack([p[1] for p in pairs])

    def _evaluate_rows(self, values):
        mean, _ = self.predict(values)
        return BatchResult(mean, [COMPLETED] * values.shape[0])

    def rmse(self, X, Y):
        mean, _ = self.predict(X)
        return np.sqrt(np.mean((mean - np.asarray(Y).reshape(mean.shape)) ** 2, axis=0))
