"""Design-of-experiments generators: grid, Monte Carlo, Latin hypercube, Sobol sequence."""

import functools
import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from multiquery import kernels
from multiquery.parameters import (
    ParameterError,
    RandomStream,
    as_generator,
    from_unit_cube,
    sample_space,
)

SOBOL_BITS = 32
SOBOL_MAX_DIM = 1111


class DesignError(ValueError):
    """Invalid design request."""


@dataclass
class DesignMatrix:
    """An ``(n, d)`` matrix of parameter realizations with column names.

    Attributes:
        values: Array of shape ``(n, d)``.
        names: Column names, in parameter-space order.
        provenance: Generator name plus seed/skip metadata.
    """

    values: np.ndarray
    names: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values.reshape(-1, len(self.names))
        self.names = tuple(self.names)
        if self.values.shape[1] != len(self.names):
            raise DesignError(
                f"design has {self.values.shape[1]} columns but {len(self.names)} names"
            )

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def __len__(self):
        return self.n

    def rows(self):
        for row in self.values:
            yield dict(zip(self.names, row.tolist()))

    def with_provenance(self, **meta):
        return DesignMatrix(self.values, self.names, {**self.provenance, **meta})


def _grid_axis(dist, count):
    lo, hi = dist.bounds
    if count == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, count)


def grid_design(space, points_per_axis):
    """Full-factorial grid; the last axis varies fastest.

    Each axis carries ``count`` equispaced points including both bounds; an
    axis with a single point uses the interval midpoint.
    """
    counts = [int(c) for c in np.atleast_1d(points_per_axis)]
    if len(counts) != space.dim:
        raise DesignError(f"need one point count per dimension ({space.dim}), got {len(counts)}")
    for name, c in zip(space.names, counts):
        if c < 1:
            raise DesignError(f"grid count for '{name}' must be at least 1")
    for name, dist in zip(space.names, space.distributions):
        if not dist.bounded:
            raise DesignError(f"grid design requires bounded marginals; '{name}' is unbounded")
    axes = [_grid_axis(d, c) for d, c in zip(space.distributions, counts)]
    values = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, space.dim)
    return DesignMatrix(values, space.names, {"generator": "grid", "points_per_axis": counts})


def grid_axes(space, points_per_axis):
    return [_grid_axis(d, int(c)) for d, c in zip(space.distributions, points_per_axis)]


def mc_design(space, n, rng=None):
    """Plain Monte Carlo design (i.i.d. draws from the marginals)."""
    if int(n) < 1:
        raise DesignError("sample count must be at least 1")
    design = sample_space(space, n, rng)
    return design.with_provenance(generator="monte_carlo")


def lhs_unit(n, d, generator):
    """Latin hypercube on the unit cube with random placement inside each stratum."""
    strata = np.column_stack([generator.permutation(n) for _ in range(d)])
    return (strata + generator.uniform(size=(n, d))) / n


def lhs_design(space, n, rng=None):
    """Latin hypercube design mapped through the marginals' inverse CDFs."""
    n = int(n)
    if n < 1:
        raise DesignError("sample count must be at least 1")
    gen = as_generator(rng)
    u = lhs_unit(n, space.dim, gen)
    # guard against u == 1.0 from floating rounding of (n-1 + 1.0)/n
    u = np.minimum(u, np.nextafter(1.0, 0.0))
    design = from_unit_cube(space, u)
    meta = {"generator": "latin_hypercube", "n": n}
    if isinstance(rng, RandomStream):
        meta.update(seed=rng.seed, stream=rng.stream)
    return design.with_provenance(**meta)


# --------------------------------------------------------------------------
# Sobol sequence
# --------------------------------------------------------------------------


def _direction_table_path():
    import scipy.stats

    return os.path.join(os.path.dirname(scipy.stats.__file__), "_sobol_direction_numbers.npz")


@functools.lru_cache(maxsize=1)
def _raw_direction_table():
    data = np.load(_direction_table_path())
    return data["poly"][:SOBOL_MAX_DIM].astype(np.int64), data["vinit"][:SOBOL_MAX_DIM].astype(
        np.int64
    )


@functools.lru_cache(maxsize=64)
def sobol_directions(dim, bits=SOBOL_BITS):
    """Direction numbers ``V[j, k] = m_{j,k} * 2**(bits - 1 - k)`` for ``dim`` dimensions.

    Uses the Joe–Kuo primitive polynomials and initial values. Dimension 0 is
    the van der Corput sequence in base 2.
    """
    if dim > SOBOL_MAX_DIM:
        raise DesignError(f"Sobol dimension {dim} exceeds the direction-number table ({SOBOL_MAX_DIM})")
    poly, vinit = _raw_direction_table()
    v = np.zeros((dim, bits), dtype=np.uint64)
    for k in range(bits):
        v[0, k] = 1 << (bits - 1 - k)
    for j in range(1, dim):
        p = int(poly[j])
        s = p.bit_length() - 1
        m = [0] * bits
        for k in range(min(s, bits)):
            m[k] = int(vinit[j, k])
        for k in range(s, bits):
            new = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if (p >> (s - i)) & 1:
                    new ^= m[k - i] << i
            m[k] = new
        for k in range(bits):
            v[j, k] = m[k] << (bits - 1 - k)
    v.setflags(write=False)
    return v


def sobol_unit(n, d, skip=1):
    """Points ``skip .. skip+n-1`` of the unscrambled base-2 Sobol sequence in ``[0, 1)^d``."""
    if n < 0 or skip < 0:
        raise DesignError("n and skip must be non-negative")
    if d > SOBOL_MAX_DIM:
        raise DesignError(f"Sobol dimension {d} exceeds the direction-number table ({SOBOL_MAX_DIM})")
    if skip + n > 2**SOBOL_BITS:
        raise DesignError("requested Sobol points exceed 2**32")
    ints = kernels.sobol_ints(sobol_directions(d), skip, n)
    return ints.astype(np.float64) / float(2**SOBOL_BITS)


def sobol_design(space, n, skip=1):
    """Deterministic Sobol-sequence design mapped through the marginals."""
    n = int(n)
    if n < 1:
        raise DesignError("sample count must be at least 1")
    if space.dim > SOBOL_MAX_DIM:
        raise DesignError(
            f"Sobol dimension {space.dim} exceeds the direction-number table ({SOBOL_MAX_DIM})"
        )
    u = sobol_unit(n, space.dim, skip)
    try:
        design = from_unit_cube(space, u)
    except ParameterError as exc:  # pragma: no cover - sobol points are always in [0, 1)
        raise DesignError(str(exc)) from None
    return design.with_provenance(generator="sobol", n=n, skip=int(skip))


DESIGNS = ("grid", "monte_carlo", "latin_hypercube", "sobol")


def make_design(kind, space, n=None, rng=None, skip=1, points_per_axis=None):
    if kind == "grid":
        return grid_design(space, points_per_axis)
    if kind == "monte_carlo":
        return mc_design(space, n, rng)
    if kind == "latin_hypercube":
        return lhs_design(space, n, rng)
    if kind == "sobol":
        return sobol_design(space, n, skip)
    raise DesignError(f"unknown design '{kind}', expected one of {DESIGNS}")
