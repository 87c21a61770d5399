"""Model abstraction, batch evaluation with per-row status, finite-difference gradients."""

import logging
from dataclasses import dataclass, field

import numpy as np

from multiquery.designs import DesignMatrix

_logger = logging.getLogger(__name__)

COMPLETED = "completed"
FAILED = "failed"
TIMED_OUT = "timed_out"
STATUSES = (COMPLETED, FAILED, TIMED_OUT)


class ModelError(RuntimeError):
    """Model construction or evaluation contract violation."""


class GradientError(ModelError):
    """A perturbed evaluation needed for a finite-difference gradient failed."""


@dataclass
class BatchResult:
    """Row-aligned outputs of one batch evaluation.

    Rows of failed evaluations hold ``nan`` in every output column.
    """

    outputs: np.ndarray
    statuses: list
    diagnostics: list = None

    def __post_init__(self):
        self.outputs = np.asarray(self.outputs, dtype=float)
        if self.outputs.ndim == 1:
            self.outputs = self.outputs.reshape(-1, 1)
        self.statuses = list(self.statuses)
        if self.diagnostics is None:
            self.diagnostics = [""] * len(self.statuses)
        if len(self.statuses) != self.outputs.shape[0]:
            raise ModelError("statuses and outputs differ in length")

    @property
    def n(self):
        return len(self.statuses)

    @property
    def completed(self):
        return np.array([s == COMPLETED for s in self.statuses], dtype=bool)

    @property
    def n_failed(self):
        return int(self.n - self.completed.sum())

    def counts(self):
        return {s: self.statuses.count(s) for s in STATUSES}

    def take(self, idx):
        idx = np.asarray(idx, dtype=int)
        return BatchResult(
            self.outputs[idx],
            [self.statuses[i] for i in idx],
            [self.diagnostics[i] for i in idx],
        )

    @classmethod
    def empty(cls, m):
        return cls(np.zeros((0, m)), [], [])


@dataclass(frozen=True)
class GradientSpec:
    """Finite-difference settings: ``forward`` or ``central``, relative step ``h_rel``."""

    scheme: str = "forward"
    h_rel: float = 1.49e-8

    def __post_init__(self):
        if self.scheme not in ("forward", "central"):
            raise ModelError(f"unknown finite-difference scheme '{self.scheme}'")
        if not self.h_rel > 0:
            raise ModelError("h_rel must be positive")


class Model:
    """Abstract mapping from a d-vector of parameters to an m-vector of outputs.

    Subclasses implement :meth:`_evaluate_rows`, receiving a validated
    ``(n, d)`` array and returning a :class:`BatchResult`.
    """

    input_dim = None
    output_dim = 1
    input_names = None

    def evaluate(self, design):
        values = design.values if isinstance(design, DesignMatrix) else np.asarray(design, float)
        if values.ndim == 1:
            values = values.reshape(-1, 1) if self.input_dim == 1 else values.reshape(1, -1)
        if values.shape[0] == 0:
            return BatchResult.empty(self.output_dim)
        if self.input_dim is not None and values.shape[1] != self.input_dim:
            raise ModelError(
                f"dimension mismatch: model expects {self.input_dim} inputs, design has {values.shape[1]}"
            )
        result = self._evaluate_rows(values)
        if result.n != values.shape[0]:
            raise ModelError("model returned a result that is not row-aligned with its input")
        return result

    def _evaluate_rows(self, values):
        raise NotImplementedError

    def __call__(self, x):
        """Evaluate a single point; raises if the evaluation did not complete."""
        res = self.evaluate(np.atleast_2d(np.asarray(x, dtype=float)))
        if res.statuses[0] != COMPLETED:
            raise ModelError(f"evaluation {res.statuses[0]}: {res.diagnostics[0]}")
        return res.outputs[0]


def _row_result(value, m):
    out = np.atleast_1d(np.asarray(value, dtype=float)).ravel()
    if out.shape[0] != m:
        raise ModelError(f"expected {m} outputs, got {out.shape[0]}")
    return out


class FunctionModel(Model):
    """In-process model around a Python callable.

    Args:
        func: Callable mapping a d-vector to a scalar or m-vector. With
            ``vectorized=True`` it maps an ``(n, d)`` array to ``(n,)`` or
            ``(n, m)`` instead; an exception then falls back to row-wise calls.
        input_dim: Number of inputs d.
        output_dim: Number of outputs m.
    """

    def __init__(self, func, input_dim, output_dim=1, vectorized=False, name=None, gradient=None):
        self.func = func
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.vectorized = vectorized
        self.name = name or getattr(func, "__name__", "function")
        self.gradient = gradient

    def __repr__(self):
        return f"FunctionModel({self.name!r}, d={self.input_dim}, m={self.output_dim})"

    def _evaluate_rows(self, values):
        n, m = values.shape[0], self.output_dim
        if self.vectorized:
            try:
                out = np.asarray(self.func(values), dtype=float).reshape(n, m)
            except Exception as exc:  # noqa: BLE001 - fall back to isolating the faulty row
                _logger.debug("vectorized call of %s failed (%s); evaluating row-wise", self.name, exc)
            else:
                bad = ~np.all(np.isfinite(out), axis=1)
                statuses = [COMPLETED] * n
                diagnostics = [""] * n
                for i in np.flatnonzero(bad):
                    out[i] = np.nan
                    statuses[i] = FAILED
                    diagnostics[i] = "non-finite model output"
                return BatchResult(out, statuses, diagnostics)
        outputs = np.full((n, m), np.nan)
        statuses, diagnostics = [], []
        for i in range(n):
            try:
                row = _row_result(self.func(values[i].copy()), m)
            except Exception as exc:  # noqa: BLE001 - a failing row must not abort the batch
                statuses.append(FAILED)
                diagnostics.append(f"{type(exc).__name__}: {exc}")
                continue
            if not np.all(np.isfinite(row)):
                statuses.append(FAILED)
                diagnostics.append("non-finite model output")
                continue
            outputs[i] = row
            statuses.append(COMPLETED)
            diagnostics.append("")
        return BatchResult(outputs, statuses, diagnostics)


def fd_steps(x, spec):
    x = np.asarray(x, dtype=float)
    return spec.h_rel * np.maximum(1.0, np.abs(x))


def fd_gradient(model, x, spec=None):
    """Finite-difference Jacobian transposed, shape ``(d, m)``.

    All perturbed points are submitted to the model as one batch.

    Raises:
        GradientError: if any required evaluation does not complete; the
            message names the failed perturbation.
    """
    spec = spec or GradientSpec()
    x = np.asarray(x, dtype=float).ravel()
    d = x.shape[0]
    h = fd_steps(x, spec)
    eye = np.eye(d) * h
    if spec.scheme == "forward":
        points = np.vstack([x[None, :], x[None, :] + eye])
        labels = ["x"] + [f"x+h*e{i}" for i in range(d)]
    else:
        points = np.vstack([x[None, :] + eye, x[None, :] - eye])
        labels = [f"x+h*e{i}" for i in range(d)] + [f"x-h*e{i}" for i in range(d)]
    res = model.evaluate(points)
    for i, status in enumerate(res.statuses):
        if status != COMPLETED:
            raise GradientError(
                f"gradient evaluation failed at perturbation {labels[i]} ({status}): {res.diagnostics[i]}"
            )
    f = res.outputs
    # exact step actually taken, after rounding of x + h
    if spec.scheme == "forward":
        steps = points[1:] - x[None, :]
        return (f[1:] - f[0]) / np.diag(steps)[:, None]
    steps = points[:d] - points[d:]
    return (f[:d] - f[d:]) / np.diag(steps)[:, None]


# --------------------------------------------------------------------------
# built-in test functions
# --------------------------------------------------------------------------

ISHIGAMI_A = 7.0
ISHIGAMI_B = 0.1

# observation coordinates shared by the cantilever builtin and the mock solver's beam mode
CANTILEVER_COORDS = tuple(round(0.1 * k, 1) for k in range(1, 11))


def _sum(x):
    return np.sum(x, axis=-1)


def _sphere(x):
    return np.sum(np.asarray(x) ** 2, axis=-1)


def _sphere_grad(x):
    return 2.0 * np.asarray(x, dtype=float)


def _rosenbrock_residuals(x):
    x = np.atleast_2d(x)
    return np.column_stack([1.0 - x[:, 0], 10.0 * (x[:, 1] - x[:, 0] ** 2)])


def _rosenbrock_jacobian(x):
    # d x m, consistent with fd_gradient's layout
    return np.array([[-1.0, -20.0 * x[0]], [0.0, 10.0]])


def _ishigami(x):
    x = np.atleast_2d(x)
    return (
        np.sin(x[:, 0])
        + ISHIGAMI_A * np.sin(x[:, 1]) ** 2
        + ISHIGAMI_B * x[:, 2] ** 4 * np.sin(x[:, 0])
    )


def _ishigami_grad(x):
    x1, x2, x3 = x
    return np.array(
        [
            np.cos(x1) * (1.0 + ISHIGAMI_B * x3**4),
            2.0 * ISHIGAMI_A * np.sin(x2) * np.cos(x2),
            4.0 * ISHIGAMI_B * x3**3 * np.sin(x1),
        ]
    )


def cantilever(x, coords=CANTILEVER_COORDS):
    """Deflection-like response ``1000 * c**2 / stiffness + ratio * c`` at each coordinate."""
    x = np.atleast_2d(x)
    c = np.asarray(coords, dtype=float)
    return 1000.0 * c[None, :] ** 2 / x[:, [0]] + x[:, [1]] * c[None, :]


def _cantilever_grad(x):
    c = np.asarray(CANTILEVER_COORDS)
    return np.vstack([-1000.0 * c**2 / x[0] ** 2, c])


BUILTINS = {
    "sum": dict(func=_sum, input_dim=None, output_dim=1, gradient=lambda x: np.ones_like(x)),
    "sphere": dict(func=_sphere, input_dim=None, output_dim=1, gradient=_sphere_grad),
    "rosenbrock_residuals": dict(
        func=_rosenbrock_residuals, input_dim=2, output_dim=2, gradient=_rosenbrock_jacobian
    ),
    "ishigami": dict(func=_ishigami, input_dim=3, output_dim=1, gradient=_ishigami_grad),
    "cantilever": dict(
        func=cantilever, input_dim=2, output_dim=len(CANTILEVER_COORDS), gradient=_cantilever_grad
    ),
}


def register_function_model(name, input_dim=None, func=None):
    """Look up a builtin by name, or wrap ``func`` under ``name``.

    ``sum`` and ``sphere`` accept any dimension and need ``input_dim``
    (default 2).
    """
    if func is not None:
        return FunctionModel(func, input_dim, name=name)
    if name not in BUILTINS:
        raise ModelError(f"unknown builtin model '{name}'; available: {', '.join(sorted(BUILTINS))}")
    entry = BUILTINS[name]
    d = entry["input_dim"]
    if d is None:
        d = 2 if input_dim is None else int(input_dim)
    elif input_dim is not None and int(input_dim) != d:
        raise ModelError(f"builtin '{name}' has {d} inputs, not {input_dim}")
    return FunctionModel(
        entry["func"],
        d,
        entry["output_dim"],
        vectorized=True,
        name=name,
        gradient=entry["gradient"],
    )


def analytic_or_fd_gradient(model, x, spec=None):
    """Analytic gradient when the model carries one, otherwise finite differences."""
    grad = getattr(model, "gradient", None)
    if grad is not None:
        g = np.asarray(grad(np.asarray(x, dtype=float)), dtype=float)
        return g.reshape(len(x), model.output_dim)
    return fd_gradient(model, x, spec)
