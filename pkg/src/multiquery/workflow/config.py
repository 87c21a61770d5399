"""Run configuration: block-structured documents, schema checks, cross-references."""

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from multiquery.parameters import ParameterError, build_space


class ConfigError(ValueError):
    """The configuration document is malformed or inconsistent."""


RESERVED = ("global_settings", "parameters")

MODEL_TYPES = ("function", "driver", "surrogate", "likelihood")
SCHEDULER_TYPES = ("local",)
METHOD_TYPES = (
    "grid",
    "monte_carlo",
    "latin_hypercube",
    "sobol_sequence",
    "elementary_effects",
    "sobol_indices",
    "bmfmc",
    "metropolis_hastings",
    "smc",
    "levenberg_marquardt",
    "adam",
    "adamax",
    "rmsprop",
)
BLOCK_TYPES = MODEL_TYPES + SCHEDULER_TYPES + METHOD_TYPES

_GRADIENT = {"gradient": None}
_STOCHASTIC = {
    "model": ...,
    "x0": None,
    "step_size": None,
    "beta1": None,
    "beta2": None,
    "rho": None,
    "eps": None,
    "max_iter": 10000,
    "grad_tol": 1e-8,
    **_GRADIENT,
}

# Per type: key -> default; ``...`` marks a required key.
SCHEMAS = {
    "function": {"function": ..., "input_dim": None, "output_dim": None, "vectorized": False},
    "driver": {
        "executable": ...,
        "template": ...,
        "output_file": "output.csv",
        "extractor": "csv_scalar_column",
        "timeout": 3600.0,
        "extra_args": [],
        "output_dim": None,
        "scheduler": None,
    },
    "surrogate": {"training": None, "gp": {}},
    "likelihood": {"forward_model": ..., "observations": ..., "noise_variance": ...},
    "local": {"max_concurrent": 1, "retries": 0, "workspace": None},
    "grid": {"model": ..., "points_per_axis": ...},
    "monte_carlo": {"model": ..., "n": ..., "bins": 20},
    "latin_hypercube": {"model": ..., "n": ...},
    "sobol_sequence": {"model": ..., "n": ..., "skip": 1},
    "elementary_effects": {"model": ..., "trajectories": 20, "levels": 4},
    "sobol_indices": {"model": ..., "n_base": ..., "skip": 1},
    "bmfmc": {
        "model": ...,
        "low_fidelity_model": ...,
        "n_lf": 1000,
        "n_pairs": 50,
        "grid_size": 1000,
        "gp": {},
    },
    "metropolis_hastings": {"model": ..., "steps": ..., "scale": ..., "x0": None},
    "smc": {"model": ..., "n_particles": 1000, "tau": 0.5, "rejuvenation_steps": 5},
    "levenberg_marquardt": {
        "model": ...,
        "x0": None,
        "grad_tol": 1e-8,
        "step_tol": 1e-10,
        "max_iter": 200,
        **_GRADIENT,
    },
    "adam": _STOCHASTIC,
    "adamax": _STOCHASTIC,
    "rmsprop": _STOCHASTIC,
}

TRAINING_SCHEMA = {"model": ..., "design": "sobol", "n": ..., "skip": 1}
GLOBAL_SCHEMA = {"run_name": "run", "output_dir": "output", "seed": 0}

# (key path, kind of block it must point at)
_REFERENCES = {
    "driver": [(("scheduler",), "scheduler")],
    "surrogate": [(("training", "model"), "model")],
    "likelihood": [(("forward_model",), "model")],
    "bmfmc": [(("model",), "model"), (("low_fidelity_model",), "model")],
}
for _t in METHOD_TYPES:
    _REFERENCES.setdefault(_t, [(("model",), "model")])


def block_kind(block_type):
    if block_type in MODEL_TYPES:
        return "model"
    if block_type in SCHEDULER_TYPES:
        return "scheduler"
    return "method"


@dataclass
class RunConfig:
    """A validated, normalized configuration.

    ``blocks`` maps block names to normalized mappings (defaults filled in)
    in document order. Relative file paths resolve against ``base_dir``.
    """

    blocks: dict
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    @property
    def global_settings(self):
        return self.blocks["global_settings"]

    @property
    def parameters(self):
        return self.blocks["parameters"]

    @property
    def method_name(self):
        return next(n for n, b in self.user_blocks().items() if block_kind(b["type"]) == "method")

    @property
    def method(self):
        return self.blocks[self.method_name]

    @property
    def seed(self):
        return int(self.global_settings["seed"])

    def user_blocks(self):
        return {k: v for k, v in self.blocks.items() if k not in RESERVED}

    def references(self, name):
        """Names referenced by block ``name``."""
        block = self.blocks[name]
        out = []
        for path, _ in _REFERENCES.get(block["type"], []):
            target = _lookup(block, path)
            if target is not None:
                out.append(target)
        return out

    def resolve_path(self, value):
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def copy(self):
        return RunConfig(copy.deepcopy(self.blocks), self.base_dir)


def _lookup(block, path):
    cur = block
    for key in path:
        if not isinstance(cur, dict) or key not in cur:
            return None
        cur = cur[key]
    return cur


class _UniqueKeyLoader(yaml.SafeLoader):
    pass


def _construct_unique_mapping(loader, node, deep=False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise ConfigError(f"duplicate block name '{key}'")
        seen.add(key)
    return loader.construct_mapping(node, deep=deep)


_UniqueKeyLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_unique_mapping)


def _no_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise ConfigError(f"duplicate block name '{key}'")
        out[key] = value
    return out


def load_document(text):
    """Parse JSON, falling back to YAML; duplicate keys are rejected in both."""
    try:
        return json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError:
        pass
    try:
        return yaml.load(text, Loader=_UniqueKeyLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration is neither valid JSON nor YAML: {exc}") from None


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    return parse_config(text, base_dir=path.resolve().parent)


def _check_schema(where, block, schema):
    unknown = [k for k in block if k not in schema and k != "type"]
    if unknown:
        raise ConfigError(f"block '{where}': unknown key(s) {sorted(unknown)}")
    out = {}
    for key, default in schema.items():
        if key in block:
            out[key] = copy.deepcopy(block[key])
        elif default is ...:
            raise ConfigError(f"block '{where}': missing required key '{key}'")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _normalize_block(name, block):
    if not isinstance(block, dict):
        raise ConfigError(f"block '{name}' must be a mapping")
    btype = block.get("type")
    if btype is None:
        raise ConfigError(f"block '{name}' has no type")
    if btype not in BLOCK_TYPES:
        if name == "method" or "model" in block:
            raise ConfigError(
                f"unknown method '{btype}' in block '{name}'; available methods: {', '.join(METHOD_TYPES)}"
            )
        raise ConfigError(
            f"unknown block type '{btype}' in block '{name}'; expected one of: {', '.join(BLOCK_TYPES)}"
        )
    out = {"type": btype, **_check_schema(name, block, SCHEMAS[btype])}
    if btype == "surrogate" and out["training"] is not None:
        if not isinstance(out["training"], dict):
            raise ConfigError(f"block '{name}': training must be a mapping")
        out["training"] = _check_schema(f"{name}.training", out["training"], TRAINING_SCHEMA)
    return out


def find_cycle(graph):
    """Return one cycle as a list of names, or ``None``."""
    color = {}
    stack = []

    def visit(node):
        color[node] = 1
        stack.append(node)
        for nxt in graph.get(node, ()):
            if color.get(nxt) == 1:
                return stack[stack.index(nxt) :] + [nxt]
            if color.get(nxt) is None:
                found = visit(nxt)
                if found:
                    return found
        stack.pop()
        color[node] = 2
        return None

    for node in sorted(graph):
        if color.get(node) is None:
            found = visit(node)
            if found:
                return found
    return None


def parse_config(document, base_dir=None):
    """Validate a configuration mapping or JSON/YAML text into a :class:`RunConfig`.

    Raises:
        ConfigError: unknown block type or method, missing or unknown keys,
            dangling references, reference cycles, more or fewer than one
            method block, or an invalid parameter block.
    """
    if isinstance(document, (str, bytes)):
        document = load_document(document)
    if not isinstance(document, dict):
        raise ConfigError("configuration must be a mapping of named blocks")
    if "parameters" not in document:
        raise ConfigError("missing 'parameters' block")
    try:
        build_space(document["parameters"])
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    gs = document.get("global_settings") or {}
    if not isinstance(gs, dict):
        raise ConfigError("global_settings must be a mapping")
    gs = _check_schema("global_settings", gs, GLOBAL_SCHEMA)
    if isinstance(gs["seed"], bool) or not isinstance(gs["seed"], int) or gs["seed"] < 0:
        raise ConfigError("global_settings: seed must be a non-negative integer")
    blocks = {"global_settings": gs, "parameters": copy.deepcopy(document["parameters"])}
    for name, block in document.items():
        if name in RESERVED:
            continue
        blocks[name] = _normalize_block(name, block)
    config = RunConfig(blocks, Path(base_dir) if base_dir is not None else Path.cwd())
    methods = [n for n, b in config.user_blocks().items() if block_kind(b["type"]) == "method"]
    if len(methods) != 1:
        raise ConfigError(f"exactly one method block required, found {len(methods)}")
    graph = {}
    for name, block in config.user_blocks().items():
        graph[name] = []
        for path, kind in _REFERENCES.get(block["type"], []):
            target = _lookup(block, path)
            if target is None:
                continue
            if not isinstance(target, str) or target not in config.blocks or target in RESERVED:
                raise ConfigError(f"dangling reference: {target} (block '{name}', key '{'.'.join(path)}')")
            if block_kind(config.blocks[target]["type"]) != kind:
                raise ConfigError(f"block '{name}': '{target}' is not a {kind} block")
            graph[name].append(target)
    cycle = find_cycle(graph)
    if cycle:
        raise ConfigError(f"cycle detected: {' -> '.join(cycle)}")
    return config


def to_document(config):
    """Plain mapping form of a config (normalized blocks)."""
    return copy.deepcopy(config.blocks)


def serialize(config):
    """Canonical JSON text; ``parse_config(serialize(c))`` reproduces ``c``."""
    return json.dumps(to_document(config), indent=2)
