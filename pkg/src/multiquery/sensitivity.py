"""Global sensitivity analysis: elementary effects (Morris) and Sobol indices."""

import logging
from dataclasses import dataclass, field

import numpy as np

from multiquery.designs import DesignMatrix, sobol_unit
from multiquery.parameters import as_generator, from_unit_cube

_logger = logging.getLogger(__name__)


class SensitivityError(ValueError):
    """Invalid design request or unusable outputs."""


@dataclass
class MorrisDesign:
    """Stacked one-at-a-time trajectories.

    Attributes:
        unit: Unit-cube points, shape ``(r * (d + 1), d)``.
        design: The same points mapped onto the parameter space.
        trajectory: Trajectory id of every row.
        varied: Dimension changed when arriving at a row (``-1`` for the
            first row of a trajectory).
    """

    r: int
    levels: int
    delta: float
    unit: np.ndarray
    design: DesignMatrix
    trajectory: np.ndarray
    varied: np.ndarray


@dataclass
class SaltelliDesign:
    """Row blocks ``A``, ``B``, then ``A_B^(i)`` for ``i = 1..d``."""

    n_base: int
    unit: np.ndarray
    design: DesignMatrix

    @property
    def dim(self):
        return self.unit.shape[1]

    def block(self, k):
        n = self.n_base
        return self.unit[k * n : (k + 1) * n]


@dataclass
class SensitivityIndices:
    names: tuple
    values: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def as_dict(self):
        out = {k: np.asarray(v).tolist() for k, v in self.values.items()}
        out["names"] = list(self.names)
        out.update(self.info)
        return out


def morris_design(space, r=20, levels=4, rng=None):
    """Random one-at-a-time trajectories on the ``levels``-point unit grid.

    The step is ``delta = levels / (2 (levels - 1))``; each trajectory starts
    at a random grid point from which every coordinate can move by ``delta``
    and visits the dimensions in random order.
    """
    r, p = int(r), int(levels)
    if p < 2 or p % 2:
        raise SensitivityError("number of levels must be even and at least 2")
    if r < 1:
        raise SensitivityError("need at least one trajectory")
    gen = as_generator(rng)
    d = space.dim
    delta = p / (2.0 * (p - 1))
    grid = np.arange(p) / (p - 1)
    rows, traj, varied = [], [], []
    for t in range(r):
        x = grid[gen.integers(0, p, size=d)]
        rows.append(x.copy())
        traj.append(t)
        varied.append(-1)
        for i in gen.permutation(d):
            up_ok = x[i] + delta <= 1.0 + 1e-12
            down_ok = x[i] - delta >= -1e-12
            if up_ok and down_ok:
                step = delta if gen.random() < 0.5 else -delta
            else:
                step = delta if up_ok else -delta
            x = x.copy()
            x[i] = min(max(x[i] + step, 0.0), 1.0)
            rows.append(x)
            traj.append(t)
            varied.append(i)
    unit = np.array(rows)
    design = from_unit_cube(space, unit).with_provenance(
        generator="morris", trajectories=r, levels=p
    )
    return MorrisDesign(r, p, delta, unit, design, np.array(traj), np.array(varied))


def elementary_effects(morris, outputs):
    """Per-trajectory elementary effects, shape ``(r_kept, d)``, plus kept ids."""
    y = _output_column(outputs)
    ok = _completed_mask(outputs)
    d = morris.unit.shape[1]
    effects, kept = [], []
    for t in range(morris.r):
        rows = np.flatnonzero(morris.trajectory == t)
        if not ok[rows].all():
            continue
        ee = np.empty(d)
        for a, b in zip(rows[:-1], rows[1:]):
            i = morris.varied[b]
            ee[i] = (y[b] - y[a]) / (morris.unit[b, i] - morris.unit[a, i])
        effects.append(ee)
        kept.append(t)
    return np.array(effects).reshape(-1, d), kept


def morris_indices(morris, outputs, names=None):
    """Mean ``mu``, mean absolute ``mu_star`` and std ``sigma`` of elementary effects.

    Trajectories containing a failed row are discarded whole.
    """
    effects, kept = elementary_effects(morris, outputs)
    discarded = morris.r - len(kept)
    if not kept:
        raise SensitivityError("all trajectories discarded because of failed evaluations")
    if discarded:
        _logger.warning("Morris: discarded %d of %d trajectories with failed rows", discarded, morris.r)
    sigma = effects.std(axis=0, ddof=1) if len(kept) > 1 else np.zeros(effects.shape[1])
    names = tuple(names or morris.design.names)
    return SensitivityIndices(
        names,
        {"mu": effects.mean(axis=0), "mu_star": np.abs(effects).mean(axis=0), "sigma": sigma},
        {"trajectories_used": len(kept), "trajectories_discarded": discarded},
    )


def saltelli_design(space, n_base, skip=1):
    """A/B from one ``2d``-dimensional Sobol block, then column-substituted ``A_B^(i)``."""
    n = int(n_base)
    if n < 2:
        raise SensitivityError("base sample count N must be at least 2")
    d = space.dim
    base = sobol_unit(n, 2 * d, skip)
    a, b = base[:, :d], base[:, d:]
    blocks = [a, b]
    for i in range(d):
        ab = a.copy()
        ab[:, i] = b[:, i]
        blocks.append(ab)
    unit = np.vstack(blocks)
    design = from_unit_cube(space, unit).with_provenance(generator="saltelli", n_base=n, skip=int(skip))
    return SaltelliDesign(n, unit, design)


def sobol_estimates(f_a, f_b, f_ab):
    """First-order (Saltelli 2010) and total-effect (Jansen) estimates.

    ``f_ab`` has shape ``(N, d)``; column ``i`` holds ``f(A_B^(i))``.
    """
    var = np.var(np.concatenate([f_a, f_b]), ddof=1)
    if not var > 0:
        raise SensitivityError("output variance is zero; Sobol indices are undefined")
    first = np.mean(f_b[:, None] * (f_ab - f_a[:, None]), axis=0) / var
    total = 0.5 * np.mean((f_a[:, None] - f_ab) ** 2, axis=0) / var
    return first, total, var


def sobol_indices(saltelli, outputs, names=None):
    """First-order ``S`` and total-effect ``ST`` indices from a Saltelli design."""
    ok = _completed_mask(outputs)
    if not ok.all():
        raise SensitivityError(
            f"Sobol indices need complete data; {int((~ok).sum())} failed row(s), resample upstream"
        )
    y = _output_column(outputs)
    n, d = saltelli.n_base, saltelli.dim
    if y.shape[0] != n * (d + 2):
        raise SensitivityError("outputs are not row-aligned with the Saltelli design")
    f_a, f_b = y[:n], y[n : 2 * n]
    f_ab = y[2 * n :].reshape(d, n).T
    first, total, var = sobol_estimates(f_a, f_b, f_ab)
    names = tuple(names or saltelli.design.names)
    return SensitivityIndices(names, {"S": first, "ST": total}, {"variance": float(var), "n_base": n})


def _output_column(outputs):
    y = outputs.outputs if hasattr(outputs, "outputs") else np.asarray(outputs, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        if y.shape[1] != 1:
            raise SensitivityError("sensitivity indices need a scalar model output")
        y = y[:, 0]
    return y


def _completed_mask(outputs):
    if hasattr(outputs, "completed"):
        return outputs.completed
    return np.isfinite(_output_column(outputs))
