"""Parameter spaces: marginal distributions, sampling, densities, unit-cube maps."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

SUPPORTED_KINDS = ("uniform", "normal", "lognormal", "beta")


class ParameterError(ValueError):
    """Invalid parameter block or distribution specification."""


class RandomStream:
    """Counter-based, splittable random stream.

    A stream is identified by a master ``seed`` and a ``stream`` index. The
    underlying bit generator is Philox keyed through ``numpy.random.SeedSequence``
    with the stream index as spawn key, so distinct indices give independent
    substreams and identical pairs replay identical draws.
    """

    def __init__(self, seed=0, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def substream(self, index):
        """A new stream with the same master seed and another index."""
        return RandomStream(self.seed, index)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream={self.stream})"


def as_generator(rng):
    if rng is None:
        return RandomStream(0).generator
    if isinstance(rng, RandomStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return RandomStream(int(rng)).generator


@dataclass(frozen=True)
class Distribution:
    """One marginal distribution.

    ``params`` holds the kind-specific values: uniform (lower, upper), normal
    (mean, std), lognormal (mu, sigma) of the underlying normal, beta
    (a, b, lower, upper).
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in SUPPORTED_KINDS:
            raise ParameterError(
                f"unsupported distribution kind '{self.kind}', expected one of {SUPPORTED_KINDS}"
            )
        p = self.params
        if self.kind == "uniform":
            if not p[0] <= p[1]:
                raise ParameterError("uniform: lower must not exceed upper")
        elif self.kind in ("normal", "lognormal"):
            if not p[1] > 0:
                raise ParameterError("standard deviation must be positive")
        elif self.kind == "beta":
            if not (p[0] > 0 and p[1] > 0):
                raise ParameterError("beta: shape parameters a and b must be positive")
            if not p[2] < p[3]:
                raise ParameterError("beta: lower must be smaller than upper")
        if not all(math.isfinite(v) for v in p):
            raise ParameterError(f"{self.kind}: parameters must be finite")

    @property
    def bounds(self):
        p = self.params
        if self.kind == "uniform":
            return p[0], p[1]
        if self.kind == "beta":
            return p[2], p[3]
        if self.kind == "lognormal":
            return 0.0, math.inf
        return -math.inf, math.inf

    @property
    def bounded(self):
        lo, hi = self.bounds
        return math.isfinite(lo) and math.isfinite(hi)

    def mean(self):
        p = self.params
        if self.kind == "uniform":
            return 0.5 * (p[0] + p[1])
        if self.kind == "normal":
            return p[0]
        if self.kind == "lognormal":
            return math.exp(p[0] + 0.5 * p[1] ** 2)
        return p[2] + (p[3] - p[2]) * p[0] / (p[0] + p[1])

    def std(self):
        p = self.params
        if self.kind == "uniform":
            return (p[1] - p[0]) / math.sqrt(12.0)
        if self.kind == "normal":
            return p[1]
        if self.kind == "lognormal":
            return math.sqrt((math.exp(p[1] ** 2) - 1.0) * math.exp(2 * p[0] + p[1] ** 2))
        a, b = p[0], p[1]
        return (p[3] - p[2]) * math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        out = np.full(x.shape, -np.inf)
        if self.kind == "uniform":
            lo, hi = p
            inside = (x >= lo) & (x <= hi)
            if hi > lo:
                out[inside] = -math.log(hi - lo)
            else:
                # point mass; the density is infinite on the atom
                out[inside] = np.inf
        elif self.kind == "normal":
            z = (x - p[0]) / p[1]
            out = -0.5 * z * z - math.log(p[1]) - 0.5 * math.log(2 * math.pi)
        elif self.kind == "lognormal":
            pos = x > 0
            lx = np.log(x[pos])
            z = (lx - p[0]) / p[1]
            out[pos] = -0.5 * z * z - lx - math.log(p[1]) - 0.5 * math.log(2 * math.pi)
        else:
            a, b, lo, hi = p
            inside = (x > lo) & (x < hi)
            t = (x[inside] - lo) / (hi - lo)
            out[inside] = (
                (a - 1) * np.log(t)
                + (b - 1) * np.log1p(-t)
                - special.betaln(a, b)
                - math.log(hi - lo)
            )
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "uniform":
            lo, hi = p
            if hi == lo:
                return (x >= lo).astype(float)
            return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        if self.kind == "normal":
            return special.ndtr((x - p[0]) / p[1])
        if self.kind == "lognormal":
            with np.errstate(divide="ignore"):
                z = (np.log(np.maximum(x, 0.0)) - p[0]) / p[1]
            return np.where(x > 0, special.ndtr(z), 0.0)
        a, b, lo, hi = p
        return special.betainc(a, b, np.clip((x - lo) / (hi - lo), 0.0, 1.0))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        p = self.params
        if self.kind == "uniform":
            return p[0] + u * (p[1] - p[0])
        if self.kind == "normal":
            return p[0] + p[1] * special.ndtri(u)
        if self.kind == "lognormal":
            return np.exp(p[0] + p[1] * special.ndtri(u))
        a, b, lo, hi = p
        return lo + (hi - lo) * special.betaincinv(a, b, u)

    def sample(self, n, generator):
        p = self.params
        if self.kind == "uniform":
            if p[0] == p[1]:
                return np.full(n, float(p[0]))
            return generator.uniform(p[0], p[1], size=n)
        if self.kind == "normal":
            return generator.normal(p[0], p[1], size=n)
        if self.kind == "lognormal":
            return generator.lognormal(p[0], p[1], size=n)
        a, b, lo, hi = p
        return lo + (hi - lo) * generator.beta(a, b, size=n)


_KIND_FIELDS = {
    "uniform": ("lower", "upper"),
    "normal": ("mean", "std"),
    "lognormal": ("mu", "sigma"),
    "beta": ("a", "b", "lower", "upper"),
}

_FIELD_ALIASES = {
    "lower_bound": "lower",
    "upper_bound": "upper",
    "sd": "std",
    "stdev": "std",
    "standard_deviation": "std",
    "mu": "mu",
    "sigma": "sigma",
}


def distribution_from_spec(name, spec):
    """Build a :class:`Distribution` from a config mapping such as ``{"type": "uniform", ...}``."""
    if isinstance(spec, Distribution):
        return spec
    if not isinstance(spec, dict):
        raise ParameterError(f"parameter '{name}': specification must be a mapping")
    spec = dict(spec)
    kind = spec.pop("type", spec.pop("kind", None))
    if kind is None:
        raise ParameterError(f"parameter '{name}': missing distribution type")
    if kind not in _KIND_FIELDS:
        raise ParameterError(
            f"parameter '{name}': unsupported distribution '{kind}', expected one of {SUPPORTED_KINDS}"
        )
    fields = _KIND_FIELDS[kind]
    values = {}
    for key, val in spec.items():
        key = _FIELD_ALIASES.get(key, key)
        if kind == "normal" and key == "sigma":
            key = "std"
        if key not in fields:
            raise ParameterError(f"parameter '{name}': unknown field '{key}' for {kind}")
        values[key] = val
    missing = [f for f in fields if f not in values]
    if kind == "beta":
        values.setdefault("lower", 0.0)
        values.setdefault("upper", 1.0)
        missing = [f for f in fields if f not in values]
    if missing:
        raise ParameterError(f"parameter '{name}': missing field(s) {missing} for {kind}")
    try:
        params = tuple(float(values[f]) for f in fields)
    except (TypeError, ValueError):
        raise ParameterError(f"parameter '{name}': non-numeric distribution parameter") from None
    try:
        return Distribution(kind, params)
    except ParameterError as exc:
        raise ParameterError(f"parameter '{name}': {exc}") from None


def spec_from_distribution(dist):
    out = {"type": dist.kind}
    for f, v in zip(_KIND_FIELDS[dist.kind], dist.params):
        out[f] = v
    return out


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered, named collection of independent marginals."""

    names: tuple
    distributions: tuple = field(repr=False)

    def __post_init__(self):
        if len(self.names) == 0:
            raise ParameterError("empty parameter block")
        if len(self.names) != len(self.distributions):
            raise ParameterError("names and distributions differ in length")
        seen = set()
        for n in self.names:
            if not isinstance(n, str) or not n:
                raise ParameterError("parameter names must be non-empty strings")
            if n in seen:
                raise ParameterError(f"duplicate parameter name '{n}'")
            seen.add(n)

    @property
    def dim(self):
        return len(self.names)

    def __len__(self):
        return self.dim

    def __getitem__(self, name):
        return self.distributions[self.names.index(name)]

    @property
    def bounds(self):
        return np.array([d.bounds for d in self.distributions], dtype=float)

    def to_spec(self):
        return {n: spec_from_distribution(d) for n, d in zip(self.names, self.distributions)}


def build_space(config):
    """Build a :class:`ParameterSpace` from ``{name: distribution spec}`` in declaration order.

    Raises:
        ParameterError: for an empty block, duplicate names or invalid
            distribution parameters; messages name the offending parameter.
    """
    if config is None or len(config) == 0:
        raise ParameterError("empty parameter block")
    if isinstance(config, dict):
        items = list(config.items())
    else:
        items = list(config)
    names = [n for n, _ in items]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ParameterError(f"duplicate parameter name '{sorted(dup)[0]}'")
    dists = tuple(distribution_from_spec(n, s) for n, s in items)
    return ParameterSpace(tuple(names), dists)


def sample_space(space, n, rng=None):
    """Draw ``n`` i.i.d. rows, column ``j`` from marginal ``j``."""
    from multiquery.designs import DesignMatrix

    n = int(n)
    if n < 1:
        raise ParameterError("sample count must be at least 1")
    gen = as_generator(rng)
    values = np.column_stack([d.sample(n, gen) for d in space.distributions])
    meta = {"generator": "monte_carlo", "n": n}
    if isinstance(rng, RandomStream):
        meta.update(seed=rng.seed, stream=rng.stream)
    return DesignMatrix(values, space.names, meta)


def log_pdf(space, x):
    """Sum of marginal log-densities; ``-inf`` outside the support.

    ``x`` may be a single d-vector (returns a float) or an ``(n, d)`` matrix.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != space.dim:
        raise ParameterError(f"dimension mismatch: expected {space.dim} values, got {x2.shape[1]}")
    total = np.zeros(x2.shape[0])
    for j, dist in enumerate(space.distributions):
        total = total + dist.logpdf(x2[:, j])
    return float(total[0]) if single else total


def from_unit_cube(space, u):
    """Componentwise inverse-CDF map of unit-cube points onto the marginals."""
    from multiquery.designs import DesignMatrix

    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] != space.dim:
        raise ParameterError(f"dimension mismatch: expected {space.dim} columns, got {u.shape[1]}")
    if np.any(~np.isfinite(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        raise ParameterError("unit-cube violation: entries must lie in [0, 1]")
    values = np.column_stack([d.ppf(u[:, j]) for j, d in enumerate(space.distributions)])
    return DesignMatrix(values, space.names, {"generator": "unit_cube"})


def to_unit_cube(space, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.column_stack([d.cdf(x[:, j]) for j, d in enumerate(space.distributions)])
