"""Dependency-ordered instantiation of configuration blocks."""

import importlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from multiquery.driver import DriverConfig, DriverError, mock_solver_command
from multiquery.inference import GaussianLikelihood, InferenceError, load_observations
from multiquery.models import FunctionModel, ModelError, register_function_model
from multiquery.parameters import build_space
from multiquery.scheduler import WORKSPACE_ENV, DriverModel, Scheduler, SchedulerConfig, SchedulerError
from multiquery.surrogate import SurrogateModel
from multiquery.workflow.config import ConfigError, RunConfig, block_kind, find_cycle, parse_config

MOCK_EXECUTABLE = "mock"
_DEFAULT_SCHEDULER = "<default scheduler>"


@dataclass
class AnalysisPlan:
    """Wired object graph ready to execute.

    Attributes:
        config: The validated configuration.
        space: Parameter space built from the ``parameters`` block.
        order: Block names in instantiation order (dependencies first).
        nodes: Instantiated schedulers and models by block name.
        surrogates: Training sub-plans ``{name: training block}`` still to
            be executed, in dependency order.
        output_dir: Where results and plot data go.
    """

    config: RunConfig
    space: object
    order: list
    nodes: dict
    surrogates: dict = field(default_factory=dict)
    output_dir: Path = None

    @property
    def method_name(self):
        return self.config.method_name

    @property
    def method(self):
        return self.config.method

    @property
    def seed(self):
        return self.config.seed

    def model(self, name):
        return self.nodes[name]

    def describe(self):
        """Structural summary ``{block: {"type", "depends_on"}}`` for models and the method."""
        out = {}
        for name in self.order:
            block = self.config.blocks[name]
            if block_kind(block["type"]) == "scheduler":
                continue
            out[name] = {"type": block["type"], "depends_on": sorted(self.config.references(name))}
        return out


def _topological_order(config):
    graph = {n: config.references(n) for n in config.user_blocks()}
    cycle = find_cycle(graph)
    if cycle:
        raise ConfigError(f"cycle detected: {' -> '.join(cycle)}")
    rank = {"scheduler": 0, "model": 1, "method": 2}
    order, done = [], set()

    def visit(name):
        if name in done:
            return
        for dep in sorted(graph[name]):
            visit(dep)
        done.add(name)
        order.append(name)

    # sorting makes the order independent of block order in the document
    for name in sorted(graph, key=lambda n: (rank[block_kind(config.blocks[n]["type"])], n)):
        visit(name)
    return order


def _resolve_workspace(config, block, output_dir):
    env = os.environ.get(WORKSPACE_ENV)
    if env:
        return env
    if block and block.get("workspace"):
        return str(config.resolve_path(block["workspace"]))
    return str(output_dir / "workspace")


def _load_callable(spec):
    module_name, _, attr = spec.partition(":")
    try:
        obj = importlib.import_module(module_name)
        for part in attr.split("."):
            obj = getattr(obj, part)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot import function '{spec}': {exc}") from None
    return obj


def _function_model(name, block, space):
    func = block["function"]
    d = block["input_dim"] if block["input_dim"] is not None else space.dim
    try:
        if ":" in func:
            model = FunctionModel(
                _load_callable(func), d, block["output_dim"] or 1, vectorized=bool(block["vectorized"]), name=name
            )
        else:
            model = register_function_model(func, input_dim=d)
    except ModelError as exc:
        raise ConfigError(f"block '{name}': {exc}") from None
    return model


def _driver_model(config, name, block, space, schedulers):
    exe = block["executable"]
    if exe == MOCK_EXECUTABLE:
        exe = mock_solver_command()
    elif isinstance(exe, str):
        resolved = config.resolve_path(exe)
        exe = str(resolved) if resolved.exists() else exe
    try:
        driver = DriverConfig(
            executable=exe,
            template=str(config.resolve_path(block["template"])),
            output_file=block["output_file"],
            extractor=block["extractor"],
            timeout=float(block["timeout"]),
            extra_args=block["extra_args"],
            output_dim=block["output_dim"],
        )
    except DriverError as exc:
        raise ConfigError(f"block '{name}': {exc}") from None
    missing = [p for p in space.names if p not in driver.placeholders]
    if missing:
        raise ConfigError(f"block '{name}': template has no placeholder for parameter(s) {missing}")
    sched = schedulers[block["scheduler"] or _DEFAULT_SCHEDULER]
    return DriverModel(driver, sched, space)


def build_plan(config, output_dir=None, max_concurrent=None, seed=None):
    """Instantiate every block of ``config`` in dependency order.

    No model is evaluated here; surrogate training is recorded as a
    sub-plan for :func:`run`. The optional arguments override the
    corresponding configuration values.

    Raises:
        ConfigError: cyclic references, a surrogate without a training
            block, or a block that cannot be instantiated.
    """
    if not isinstance(config, RunConfig):
        config = parse_config(config)
    config = config.copy()
    if seed is not None:
        config.blocks["global_settings"]["seed"] = int(seed)
    if output_dir is None:
        output_dir = config.resolve_path(config.global_settings["output_dir"])
    output_dir = Path(output_dir).resolve()
    space = build_space(config.parameters)
    order = _topological_order(config)
    nodes, surrogates = {}, {}
    schedulers = {}

    def make_scheduler(block):
        try:
            return Scheduler(
                SchedulerConfig(
                    max_concurrent=max_concurrent or (block or {}).get("max_concurrent", 1),
                    retries=(block or {}).get("retries", 0),
                    workspace=_resolve_workspace(config, block, output_dir),
                )
            )
        except SchedulerError as exc:
            raise ConfigError(str(exc)) from None

    schedulers[_DEFAULT_SCHEDULER] = make_scheduler(None)
    for name in order:
        block = config.blocks[name]
        btype = block["type"]
        if btype == "local":
            schedulers[name] = make_scheduler(block)
            nodes[name] = schedulers[name]
        elif btype == "function":
            nodes[name] = _function_model(name, block, space)
        elif btype == "driver":
            nodes[name] = _driver_model(config, name, block, space, schedulers)
        elif btype == "likelihood":
            try:
                obs = load_observations(
                    config.resolve_path(block["observations"]), float(block["noise_variance"])
                )
                nodes[name] = GaussianLikelihood(nodes[block["forward_model"]], obs, name=name)
            except (InferenceError, OSError) as exc:
                raise ConfigError(f"block '{name}': {exc}") from None
        elif btype == "surrogate":
            training = block["training"]
            if training is None:
                raise ConfigError(f"surrogate '{name}' has no training block")
            target = nodes[training["model"]]
            nodes[name] = SurrogateModel(space, target, None, block["gp"], name=name)
            surrogates[name] = training
        if name in nodes and block_kind(btype) == "model":
            dim = getattr(nodes[name], "input_dim", None)
            if dim is not None and dim != space.dim:
                raise ConfigError(f"block '{name}': model takes {dim} inputs but there are {space.dim} parameters")
    return AnalysisPlan(config, space, order, nodes, surrogates, output_dir)
