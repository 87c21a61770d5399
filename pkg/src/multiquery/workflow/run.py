"""Execute an :class:`AnalysisPlan`: offline surrogate training, then the method."""

import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from multiquery import __version__
from multiquery.designs import grid_axes, grid_design, lhs_design, make_design, mc_design, sobol_design
from multiquery.inference import loglike_batch, metropolis_hastings, smc_run
from multiquery.models import COMPLETED, FAILED, GradientSpec
from multiquery.optimize import StochasticOptimizerConfig, levenberg_marquardt, stochastic_minimize
from multiquery.parameters import RandomStream, log_pdf
from multiquery.scheduler import RUN_LOG_NAME, attach_run_log, detach_run_log
from multiquery.sensitivity import morris_design, morris_indices, saltelli_design, sobol_indices
from multiquery.uq import UQError, bmfmc_estimate, output_statistics
from multiquery.workflow.config import serialize
from multiquery.workflow.results import ResultArtifact, atomic_write_text, csv_text, write_results

_logger = logging.getLogger("multiquery.workflow")

# stream ids under the master seed
METHOD_STREAM = 0
SURROGATE_STREAM = 1


class RunError(RuntimeError):
    """A method failed; the message names the method block."""


@dataclass
class MethodOutcome:
    samples: np.ndarray
    outputs: np.ndarray
    statuses: list
    results: dict
    sample_names: list = None
    plots: dict = field(default_factory=dict)


def _design_outcome(model, design, extra=None):
    res = model.evaluate(design)
    results = {"counts": res.counts(), "n_failed": res.n_failed}
    if res.completed.any():
        results["statistics"] = output_statistics(res.outputs, res.statuses).as_dict()
    results.update(extra or {})
    return res, MethodOutcome(design.values, res.outputs, list(res.statuses), results)


def _grid(plan, model, block, rng):
    counts = block["points_per_axis"]
    if np.ndim(counts) == 0:
        counts = [int(counts)] * plan.space.dim
    design = grid_design(plan.space, counts)
    axes = grid_axes(plan.space, counts)
    res, out = _design_outcome(model, design, {"axes": {n: a for n, a in zip(plan.space.names, axes)}})
    if plan.space.dim == 2:
        shape = (axes[0].size, axes[1].size)
        qoi = res.outputs[:, 0].reshape(shape)
        status = res.completed.astype(int).reshape(shape)
        header = [f"{plan.space.names[0]}\\{plan.space.names[1]}", *map(float, axes[1])]
        out.plots["grid_qoi.csv"] = (header, [[float(a), *row] for a, row in zip(axes[0], qoi.tolist())])
        out.plots["grid_status.csv"] = (header, [[float(a), *row] for a, row in zip(axes[0], status.tolist())])
    return out


def _monte_carlo(plan, model, block, rng):
    design = mc_design(plan.space, block["n"], rng)
    res, out = _design_outcome(model, design)
    if not res.completed.any():
        raise UQError("all model evaluations failed")
    stats = output_statistics(res.outputs, res.statuses, bins=block["bins"])
    out.results["statistics"] = stats.as_dict()
    edges, counts = stats.histogram_edges, stats.histogram_counts
    out.plots["histogram.csv"] = (
        ["left_edge", "right_edge", "count"],
        [[float(a), float(b), int(c)] for a, b, c in zip(edges[:-1], edges[1:], counts)],
    )
    return out


def _lhs(plan, model, block, rng):
    return _design_outcome(model, lhs_design(plan.space, block["n"], rng))[1]


def _sobol_sequence(plan, model, block, rng):
    return _design_outcome(model, sobol_design(plan.space, block["n"], block["skip"]))[1]


def _indices_plot(indices):
    keys = list(indices.values)
    rows = [[n, *(float(indices.values[k][j]) for k in keys)] for j, n in enumerate(indices.names)]
    return ["parameter", *keys], rows


def _elementary_effects(plan, model, block, rng):
    morris = morris_design(plan.space, block["trajectories"], block["levels"], rng)
    res = model.evaluate(morris.design)
    idx = morris_indices(morris, res)
    out = MethodOutcome(morris.design.values, res.outputs, list(res.statuses), {"indices": idx.as_dict()})
    out.plots["indices.csv"] = _indices_plot(idx)
    return out


def _sobol_indices(plan, model, block, rng):
    saltelli = saltelli_design(plan.space, block["n_base"], block["skip"])
    res = model.evaluate(saltelli.design)
    idx = sobol_indices(saltelli, res)
    out = MethodOutcome(saltelli.design.values, res.outputs, list(res.statuses), {"indices": idx.as_dict()})
    out.plots["indices.csv"] = _indices_plot(idx)
    return out


def _bmfmc(plan, model, block, rng):
    lf_model = plan.model(block["low_fidelity_model"])
    design = mc_design(plan.space, block["n_lf"], rng)
    lf = lf_model.evaluate(design)
    ok = np.flatnonzero(lf.completed)
    n_pairs = min(int(block["n_pairs"]), ok.size)
    chosen = np.sort(rng.choice(ok, size=n_pairs, replace=False)) if n_pairs else np.zeros(0, int)
    hf = model.evaluate(design.values[chosen])
    good = hf.completed
    pairs = np.column_stack([lf.outputs[chosen[good], 0], hf.outputs[good, 0]])
    density = bmfmc_estimate(lf.outputs[ok, 0], pairs, block["gp"], block["grid_size"], rng)
    results = {
        "density": density.as_dict(),
        "normalization": density.normalization(),
        "hf_rows": chosen,
        "hf_outputs": hf.outputs[:, 0],
        "hf_statuses": list(hf.statuses),
        "lf_counts": lf.counts(),
    }
    out = MethodOutcome(design.values, lf.outputs, list(lf.statuses), results)
    out.plots["density.csv"] = (["y", "density"], np.column_stack([density.grid, density.density]).tolist())
    return out


def _x0(plan, block):
    if block.get("x0") is not None:
        x0 = np.asarray(block["x0"], dtype=float).ravel()
        if x0.size != plan.space.dim:
            raise RunError(f"x0 has {x0.size} entries, expected {plan.space.dim}")
        return x0
    return np.array([d.mean() for d in plan.space.distributions])


def _metropolis_hastings(plan, model, block, rng):
    space = plan.space

    def log_post(x):
        lp = log_pdf(space, x)
        if not np.isfinite(lp):
            return -np.inf
        return lp + loglike_batch(model, x[None, :])[0]

    chain = metropolis_hastings(log_post, _x0(plan, block), block["steps"], block["scale"], rng)
    results = {
        "acceptance_rate": chain.acceptance_rate,
        "mean": chain.states.mean(axis=0),
        "std": chain.states.std(axis=0, ddof=1),
    }
    out = MethodOutcome(chain.states, chain.log_posterior[:, None], [COMPLETED] * chain.states.shape[0], results)
    out.plots["chain.csv"] = ([*space.names, "log_posterior"], np.column_stack([chain.states, chain.log_posterior]).tolist())
    return out


def _smc(plan, model, block, rng):
    res = smc_run(plan.space, model, block["n_particles"], block["tau"], block["rejuvenation_steps"], rng)
    ens = res.ensemble
    results = {
        "log_evidence": res.log_evidence,
        "weights": ens.weights,
        "mean": ens.mean(),
        "std": ens.std(),
        "quantile_025": ens.quantile(0.025),
        "quantile_975": ens.quantile(0.975),
        "temperatures": res.temperatures,
        "ess": res.ess_history,
        "acceptance_rates": res.acceptance_rates,
        "n_failed": res.n_failed,
        "n_loglike_evaluations": res.n_loglike_evaluations,
    }
    statuses = [COMPLETED if np.isfinite(v) else FAILED for v in ens.loglikes]
    out = MethodOutcome(ens.particles, ens.loglikes[:, None], statuses, results)
    out.plots["posterior_samples.csv"] = (
        [*plan.space.names, "weight"],
        np.column_stack([ens.particles, ens.weights]).tolist(),
    )
    return out


def _gradient_spec(block):
    spec = block.get("gradient") or {}
    return GradientSpec(**spec)


def _optim_outcome(plan, result):
    trace_x = np.array(result.trace_x)
    trace_f = np.array(result.trace_f, dtype=float)
    results = {"x": result.x, "fun": result.fun, "iterations": result.iterations, "reason": result.reason}
    out = MethodOutcome(trace_x, trace_f[:, None], [COMPLETED] * trace_x.shape[0], results)
    out.plots["trace.csv"] = (
        ["iteration", *plan.space.names, "objective"],
        [[i, *x, f] for i, (x, f) in enumerate(zip(trace_x.tolist(), trace_f.tolist()))],
    )
    return out


def _levenberg_marquardt(plan, model, block, rng):
    result = levenberg_marquardt(
        model,
        _x0(plan, block),
        grad_tol=block["grad_tol"],
        step_tol=block["step_tol"],
        max_iter=block["max_iter"],
        jacobian=getattr(model, "gradient", None),
        gradient_spec=_gradient_spec(block),
    )
    return _optim_outcome(plan, result)


def _stochastic(plan, model, block, rng):
    keys = ("step_size", "beta1", "beta2", "rho", "eps")
    config = StochasticOptimizerConfig(
        block["type"],
        max_iter=int(block["max_iter"]),
        grad_tol=float(block["grad_tol"]),
        **{k: block[k] for k in keys if block[k] is not None},
    )
    result = stochastic_minimize(model, _x0(plan, block), config, gradient_spec=_gradient_spec(block))
    return _optim_outcome(plan, result)


METHODS = {
    "grid": _grid,
    "monte_carlo": _monte_carlo,
    "latin_hypercube": _lhs,
    "sobol_sequence": _sobol_sequence,
    "elementary_effects": _elementary_effects,
    "sobol_indices": _sobol_indices,
    "bmfmc": _bmfmc,
    "metropolis_hastings": _metropolis_hastings,
    "smc": _smc,
    "levenberg_marquardt": _levenberg_marquardt,
    "adam": _stochastic,
    "adamax": _stochastic,
    "rmsprop": _stochastic,
}


def train_surrogates(plan):
    """Offline phase: build each surrogate's initial design, evaluate the target, fit."""
    reports = {}
    for k, (name, training) in enumerate(plan.surrogates.items()):
        surrogate = plan.model(name)
        stream = RandomStream(plan.seed, SURROGATE_STREAM).substream(k)
        design = make_design(training["design"], plan.space, n=training["n"], rng=stream, skip=training["skip"])
        surrogate.design = design
        t0 = time.perf_counter()
        _logger.info("training surrogate '%s' on %d %s points", name, design.n, training["design"])
        result = surrogate.train(rng=stream.substream(0))
        reports[name] = {
            "n_training": design.n,
            "n_failed": result.n_failed,
            "train_time": time.perf_counter() - t0,
            "log_marginal_likelihood": [gp.info["log_marginal_likelihood"] for gp in surrogate.gps],
        }
    return reports


def run(plan, persist=True):
    """Run the plan and (by default) persist results and plot data to ``plan.output_dir``.

    Files are written under temporary names and renamed once complete, so a
    failed run leaves no partial result files behind.

    Raises:
        RunError: the method or a surrogate training failed; the message
            names the block.
    """
    out_dir = plan.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / RUN_LOG_NAME
    attach_run_log(log_path)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    name = plan.method_name
    block = plan.method
    try:
        _logger.info("run '%s' started: method %s (%s), seed %d", plan.config.global_settings["run_name"],
                     name, block["type"], plan.seed)
        try:
            surrogate_reports = train_surrogates(plan)
        except Exception as exc:
            raise RunError(f"surrogate training failed: {exc}") from exc
        rng = RandomStream(plan.seed, METHOD_STREAM).generator
        model = plan.model(block["model"])
        try:
            outcome = METHODS[block["type"]](plan, model, block, rng)
        except RunError:
            raise
        except Exception as exc:
            raise RunError(f"method '{name}' ({block['type']}) failed: {exc}") from exc
        if surrogate_reports:
            outcome.results["surrogates"] = surrogate_reports
        statuses = list(outcome.statuses)
        counts = {s: statuses.count(s) for s in sorted(set(statuses))}
        meta = {
            "run_name": plan.config.global_settings["run_name"],
            "method": block["type"],
            "seed": plan.seed,
            "config": plan.config.blocks,
            "version": __version__,
            "started": started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "wall_time": time.perf_counter() - t0,
            "counts": counts,
        }
        artifact = ResultArtifact(
            meta=meta,
            parameters=plan.space.to_spec(),
            sample_names=list(outcome.sample_names or plan.space.names),
            samples=np.asarray(outcome.samples, dtype=float),
            outputs=np.asarray(outcome.outputs, dtype=float).reshape(len(statuses), -1),
            statuses=statuses,
            method_results=outcome.results,
        )
        if persist:
            write_results(artifact, out_dir)
            for fname, (header, rows) in outcome.plots.items():
                atomic_write_text(out_dir / fname, csv_text(header, rows))
            atomic_write_text(out_dir / "config.json", serialize(plan.config))
        _logger.info("run finished in %.3f s: %s", meta["wall_time"], counts)
        return artifact
    except Exception:
        _logger.exception("run failed")
        raise
    finally:
        detach_run_log(log_path)
