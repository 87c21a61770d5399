"""Levenberg–Marquardt least squares and first-order stochastic optimizers."""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from multiquery.models import (
    COMPLETED,
    FunctionModel,
    GradientSpec,
    Model,
    fd_gradient,
)

_logger = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    """Objective or residual evaluation failed, or the gradient is unusable."""


@dataclass
class OptimResult:
    """Final iterate plus the per-iteration trace.

    ``trace_x`` and ``trace_f`` have ``iterations + 1`` entries, the first
    being the starting point.
    """

    x: np.ndarray
    fun: float
    iterations: int
    reason: str
    trace_x: list = field(default_factory=list)
    trace_f: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# Levenberg–Marquardt
# --------------------------------------------------------------------------


def _as_model(residual, d, m=None):
    if isinstance(residual, Model):
        return residual
    if m is None:
        m = np.atleast_1d(residual(np.zeros(d))).size
    return FunctionModel(residual, d, m)


def _residual(model, x):
    res = model.evaluate(x[None, :])
    if res.statuses[0] != COMPLETED:
        raise OptimizationError(f"residual evaluation {res.statuses[0]} at {x}: {res.diagnostics[0]}")
    return res.outputs[0]


def levenberg_marquardt(
    residual,
    x0,
    grad_tol=1e-8,
    step_tol=1e-10,
    max_iter=200,
    jacobian=None,
    gradient_spec=None,
    lambda_max=1e12,
):
    """Minimize ``0.5 * ||r(x)||^2`` with Marquardt's diagonal damping.

    Each iteration first tries the damping divided by 10; on failure the
    damping is multiplied by 10 until a step lowers the objective. Jacobians
    come from ``jacobian(x)`` (layout ``(d, m)``) or from a finite-difference
    batch.

    Args:
        residual: A :class:`Model` or callable ``x -> r(x)``.
        x0: Starting point.
        grad_tol: Stop when ``||J^T r||_inf < grad_tol``.
        step_tol: Stop when ``||delta|| < step_tol * (||x|| + step_tol)``.
        max_iter: Iteration cap.
        jacobian: Optional analytic Jacobian, ``(d, m)`` layout.
        gradient_spec: :class:`GradientSpec` for the finite-difference route.
        lambda_max: Damping beyond this ends the run with reason ``stalled``.
    """
    x = np.asarray(x0, dtype=float).ravel().copy()
    d = x.size
    model = _as_model(residual, d)
    if model.output_dim < d:
        warnings.warn(
            f"fewer residuals ({model.output_dim}) than unknowns ({d})", RuntimeWarning, stacklevel=2
        )
    spec = gradient_spec or GradientSpec()

    def jac_t(x):
        if jacobian is not None:
            return np.asarray(jacobian(x), dtype=float).reshape(d, -1)
        return fd_gradient(model, x, spec)

    r = _residual(model, x)
    f = 0.5 * float(r @ r)
    trace_x, trace_f = [x.copy()], [f]
    lam = None
    reason = "max_iter"
    it = 0
    while True:
        jt = jac_t(x)  # (d, m)
        g = jt @ r
        if np.max(np.abs(g)) < grad_tol:
            reason = "gradient_tol"
            break
        if it >= max_iter:
            reason = "max_iter"
            break
        h = jt @ jt.T
        diag = np.diag(h).copy()
        diag[diag <= 0] = 1.0
        if lam is None:
            lam = 1e-3 * float(np.max(np.diag(h)))
            if lam <= 0:
                lam = 1e-3
        trial_lam = lam / 10.0
        accepted = False
        while not accepted:
            try:
                delta = np.linalg.solve(h + trial_lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                x_new = x + delta
                r_new = _residual(model, x_new)
                f_new = 0.5 * float(r_new @ r_new)
                if f_new <= f:
                    accepted = True
                    break
            trial_lam = trial_lam * 10.0 if trial_lam >= lam else lam
            if trial_lam > lambda_max:
                break
        if not accepted:
            reason = "stalled"
            break
        lam = trial_lam
        it += 1
        step_small = np.linalg.norm(delta) < step_tol * (np.linalg.norm(x) + step_tol)
        x, r, f = x_new, r_new, f_new
        trace_x.append(x.copy())
        trace_f.append(f)
        if step_small:
            reason = "step_tol"
            break
    return OptimResult(x, f, it, reason, trace_x, trace_f, {"lambda": lam})


# --------------------------------------------------------------------------
# stochastic first-order methods
# --------------------------------------------------------------------------

_DEFAULTS = {
    "adam": dict(step_size=1e-3, beta1=0.9, beta2=0.999, eps=1e-8),
    "adamax": dict(step_size=2e-3, beta1=0.9, beta2=0.999, eps=1e-8),
    "rmsprop": dict(step_size=1e-3, rho=0.9, eps=1e-8),
}


@dataclass
class StochasticOptimizerConfig:
    kind: str = "adam"
    step_size: float = None
    beta1: float = None
    beta2: float = None
    rho: float = None
    eps: float = None
    max_iter: int = 10000
    grad_tol: float = 1e-8

    def __post_init__(self):
        if self.kind not in _DEFAULTS:
            raise OptimizationError(f"unknown optimizer '{self.kind}', expected one of {sorted(_DEFAULTS)}")
        for key, val in _DEFAULTS[self.kind].items():
            if getattr(self, key) is None:
                setattr(self, key, val)
        if not self.step_size > 0:
            raise OptimizationError("step size must be positive")
        if not self.eps > 0:
            raise OptimizationError("eps must be positive")
        for key in ("beta1", "beta2", "rho"):
            val = getattr(self, key)
            if val is not None and not 0 < val < 1:
                raise OptimizationError(f"{key} must lie in (0, 1)")


class _Adam:
    def __init__(self, cfg, d):
        self.cfg = cfg
        self.m = np.zeros(d)
        self.v = np.zeros(d)
        self.t = 0

    def step(self, g):
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        m_hat = self.m / (1 - c.beta1**self.t)
        v_hat = self.v / (1 - c.beta2**self.t)
        return -c.step_size * m_hat / (np.sqrt(v_hat) + c.eps)


class _Adamax:
    def __init__(self, cfg, d):
        self.cfg = cfg
        self.m = np.zeros(d)
        self.u = np.zeros(d)
        self.t = 0

    def step(self, g):
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.u = np.maximum(c.beta2 * self.u, np.abs(g))
        return -(c.step_size / (1 - c.beta1**self.t)) * self.m / (self.u + c.eps)


class _RMSProp:
    def __init__(self, cfg, d):
        self.cfg = cfg
        self.v = np.zeros(d)

    def step(self, g):
        c = self.cfg
        self.v = c.rho * self.v + (1 - c.rho) * g * g
        return -c.step_size * g / np.sqrt(self.v + c.eps)


_STEPPERS = {"adam": _Adam, "adamax": _Adamax, "rmsprop": _RMSProp}


def make_stepper(config, d):
    return _STEPPERS[config.kind](config, d)


def _objective_functions(objective, d, gradient, jac, gradient_spec):
    if jac is True:
        return lambda x: objective(x)
    if isinstance(objective, Model):
        model = objective

        def value(x):
            res = model.evaluate(x[None, :])
            if res.statuses[0] != COMPLETED:
                raise OptimizationError(f"objective evaluation {res.statuses[0]}: {res.diagnostics[0]}")
            return float(res.outputs[0, 0])

    else:
        def value(x):
            return float(objective(x))

        model = None
    if gradient is None:
        gradient = getattr(objective, "gradient", None)
    if gradient is None:
        if model is None:
            model = FunctionModel(objective, d, 1)
        spec = gradient_spec or GradientSpec()

        def gradient(x):
            return fd_gradient(model, x, spec)[:, 0]

    return lambda x: (value(x), np.asarray(gradient(x), dtype=float).ravel())


def stochastic_minimize(objective, x0, config=None, gradient=None, jac=False, gradient_spec=None, record_trace=True):
    """Minimize with Adam, Adamax or RMSProp.

    The objective is a callable or scalar :class:`Model`. The gradient comes
    from ``gradient(x)``, from the objective itself when ``jac=True`` (the
    objective then returns ``(value, gradient)``), from a model's analytic
    ``gradient`` attribute, or from finite differences.

    Each iteration evaluates the gradient at the current point, applies one
    update and stops with ``gradient_tol`` once that gradient's norm is below
    ``config.grad_tol``.
    """
    config = config or StochasticOptimizerConfig()
    x = np.asarray(x0, dtype=float).ravel().copy()
    fg = _objective_functions(objective, x.size, gradient, jac, gradient_spec)
    stepper = make_stepper(config, x.size)
    f, g = fg(x)
    trace_x, trace_f = [x.copy()], [f]
    reason = "max_iter"
    it = 0
    best_x, best_f = x.copy(), f
    for it in range(1, config.max_iter + 1):
        if not np.all(np.isfinite(g)):
            raise OptimizationError(f"non-finite gradient at iteration {it}")
        x = x + stepper.step(g)
        converged = np.linalg.norm(g) < config.grad_tol
        f, g = fg(x)
        if record_trace:
            trace_x.append(x.copy())
            trace_f.append(f)
        if np.isfinite(f) and f < best_f:
            best_x, best_f = x.copy(), f
        if converged:
            reason = "gradient_tol"
            break
    return OptimResult(x, f, it, reason, trace_x, trace_f, {"best_x": best_x, "best_f": best_f})
