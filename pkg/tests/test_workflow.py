import copy
import json
import math
from pathlib import Path

import numpy as np
import pytest

from multiquery.inference import ObservationSet, write_observations
from multiquery.models import cantilever
from multiquery.workflow import (
    ConfigError,
    RunError,
    ResultsError,
    artifacts_equal,
    build_plan,
    load_config,
    parse_config,
    read_results,
    run,
    serialize,
    write_results,
)
from multiquery.workflow.results import ResultArtifact

from conftest import GRID_FAIL_CORNER, write_config, write_template

UNIFORM2 = {
    "x1": {"type": "uniform", "lower": 0, "upper": 1},
    "x2": {"type": "uniform", "lower": 0, "upper": 1},
}


def mc_document(out="out", n=1000):
    return {
        "global_settings": {"run_name": "mc", "output_dir": out, "seed": 1},
        "parameters": copy.deepcopy(UNIFORM2),
        "f": {"type": "function", "function": "sum"},
        "method": {"type": "monte_carlo", "model": "f", "n": n},
    }


# parsing -------------------------------------------------------------------


def test_minimal_monte_carlo_config():
    cfg = parse_config(mc_document())
    assert cfg.method_name == "method" and cfg.method["n"] == 1000
    assert cfg.method["bins"] == 20 and cfg.seed == 1
    assert cfg.references("method") == ["f"]


def test_dangling_reference_named():
    doc = mc_document()
    doc["method"]["model"] = "fem"
    with pytest.raises(ConfigError, match="dangling reference: fem"):
        parse_config(doc)


def test_method_typo_lists_available_methods():
    doc = mc_document()
    doc["method"]["type"] = "montecarlo_typo"
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    for name in ("monte_carlo", "smc", "sobol_indices", "rmsprop"):
        assert name in str(err.value)


def test_unknown_block_type_and_keys():
    doc = mc_document()
    doc["pool"] = {"type": "slurm"}
    with pytest.raises(ConfigError, match="unknown block type 'slurm'"):
        parse_config(doc)
    doc = mc_document()
    doc["method"]["sampels"] = 3
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(doc)


def test_duplicate_block_names_rejected():
    text = '{"parameters": {"x": {"type": "uniform", "lower": 0, "upper": 1}}, "f": {"type": "function", "function": "sum"}, "f": {"type": "function", "function": "sum"}}'
    with pytest.raises(ConfigError, match="duplicate block name 'f'"):
        parse_config(text)
    yaml_text = "parameters:\n  x: {type: uniform, lower: 0, upper: 1}\nf: {type: function, function: sum}\nf: {type: function, function: sum}\n"
    with pytest.raises(ConfigError, match="duplicate block name 'f'"):
        parse_config(yaml_text)


def test_yaml_config_equivalent_to_json():
    yaml_text = """
global_settings: {run_name: mc, output_dir: out, seed: 1}
parameters:
  x1: {type: uniform, lower: 0, upper: 1}
  x2: {type: uniform, lower: 0, upper: 1}
f: {type: function, function: sum}
method: {type: monte_carlo, model: f, n: 1000}
"""
    assert parse_config(yaml_text).blocks == parse_config(json.dumps(mc_document())).blocks


def test_self_reference_is_a_cycle(tmp_path):
    doc = mc_document()
    doc["lik"] = {"type": "likelihood", "forward_model": "lik", "observations": "o.csv", "noise_variance": 1}
    with pytest.raises(ConfigError, match="cycle detected: lik -> lik"):
        parse_config(doc)


def test_method_count_enforced():
    doc = mc_document()
    doc["second"] = {"type": "latin_hypercube", "model": "f", "n": 4}
    with pytest.raises(ConfigError, match="exactly one method block"):
        parse_config(doc)
    doc = mc_document()
    del doc["method"]
    with pytest.raises(ConfigError, match="exactly one method block"):
        parse_config(doc)


def test_serialize_round_trip():
    cfg = parse_config(mc_document())
    again = parse_config(serialize(cfg))
    assert again.blocks == cfg.blocks
    assert serialize(again) == serialize(cfg)


# calibration chain ---------------------------------------------------------


def calibration_document(tmp_path, n_train=20, particles=50):
    obs = ObservationSet(cantilever([[1000.0, 0.3]])[0], 0.01, np.arange(1, 11)[:, None] / 10, ("x",))
    write_observations(tmp_path / "obs.csv", obs)
    write_template(tmp_path / "beam.tmpl", ("E", "nu"), solver_mode="beam")
    return {
        "global_settings": {"run_name": "calib", "output_dir": "out", "seed": 5},
        "parameters": {
            "E": {"type": "uniform", "lower": 500, "upper": 2000},
            "nu": {"type": "uniform", "lower": 0.1, "upper": 0.45},
        },
        "fem": {"type": "driver", "executable": "mock", "template": "beam.tmpl", "output_dim": 10,
                "scheduler": "pool"},
        "pool": {"type": "local", "max_concurrent": 4},
        "lik": {"type": "likelihood", "forward_model": "fem", "observations": "obs.csv", "noise_variance": 0.01},
        "gp": {"type": "surrogate", "training": {"model": "lik", "design": "sobol", "n": n_train},
               "gp": {"restarts": 1, "steps": 40}},
        "method": {"type": "smc", "model": "gp", "n_particles": particles, "rejuvenation_steps": 2},
    }


def test_calibration_plan_has_four_wired_nodes(tmp_path):
    plan = build_plan(parse_config(calibration_document(tmp_path), base_dir=tmp_path))
    assert plan.describe() == {
        "fem": {"type": "driver", "depends_on": ["pool"]},
        "lik": {"type": "likelihood", "depends_on": ["fem"]},
        "gp": {"type": "surrogate", "depends_on": ["lik"]},
        "method": {"type": "smc", "depends_on": ["gp"]},
    }
    assert plan.order.index("pool") < plan.order.index("fem") < plan.order.index("lik") < plan.order.index("gp")
    assert list(plan.surrogates) == ["gp"] and not plan.model("gp").trained
    # construction evaluates nothing
    assert not (tmp_path / "out" / "workspace").exists() or not any((tmp_path / "out" / "workspace").iterdir())


def test_block_order_does_not_matter(tmp_path):
    doc = calibration_document(tmp_path)
    shuffled = dict(reversed(list(doc.items())))
    a = build_plan(parse_config(doc, base_dir=tmp_path))
    b = build_plan(parse_config(shuffled, base_dir=tmp_path))
    assert a.order == b.order and a.describe() == b.describe()


def test_surrogate_without_training_rejected(tmp_path):
    doc = calibration_document(tmp_path)
    doc["gp"] = {"type": "surrogate"}
    with pytest.raises(ConfigError, match="surrogate 'gp' has no training block"):
        build_plan(parse_config(doc, base_dir=tmp_path))


def test_calibration_runs_end_to_end(tmp_path):
    plan = build_plan(parse_config(calibration_document(tmp_path), base_dir=tmp_path))
    art = run(plan)
    res = art.method_results
    assert math.isfinite(res["log_evidence"]) and abs(res["weights"].sum() - 1) < 1e-12
    assert res["surrogates"]["gp"]["n_training"] == 20
    assert art.samples.shape == (50, 2)
    assert (tmp_path / "out" / "posterior_samples.csv").exists()


def test_template_must_cover_parameters(tmp_path):
    doc = calibration_document(tmp_path)
    write_template(tmp_path / "beam.tmpl", ("E",), solver_mode="beam")
    with pytest.raises(ConfigError, match="no placeholder"):
        build_plan(parse_config(doc, base_dir=tmp_path))


# grid run and persistence --------------------------------------------------


def test_grid_artifact(grid_case, tmp_path):
    cfg_path, _ = grid_case
    art = run(build_plan(load_config(cfg_path)))
    assert art.samples.shape == (100, 2) and len(art.statuses) == 100
    failed = (art.samples[:, 0] > GRID_FAIL_CORNER[0]) & (art.samples[:, 1] < GRID_FAIL_CORNER[1])
    assert [s == "failed" for s in art.statuses] == failed.tolist()
    assert np.all(np.isnan(art.outputs[failed]))
    np.testing.assert_array_equal(art.outputs[~failed, 0], art.samples[~failed].sum(axis=1))
    out = tmp_path / "out"
    lines = (out / "samples.csv").read_text().splitlines()
    assert len(lines) == 101 and lines[0] == "k,r"
    status = np.loadtxt(out / "grid_status.csv", delimiter=",", skiprows=1)[:, 1:]
    assert status.shape == (10, 10) and status.sum() == 100 - failed.sum()
    assert (out / "queens_run.log").read_text().count("completed after") >= 1
    assert json.loads((out / "config.json").read_text())["method"]["type"] == "grid"


def test_write_read_round_trip(tmp_path):
    art = ResultArtifact(
        meta={"seed": 1, "nested": {"a": [1, 2.5, None, True]}, "inf": math.inf},
        parameters={"x": {"type": "uniform", "lower": 0.0, "upper": 1.0}},
        sample_names=["x"],
        samples=np.array([[0.1], [1 / 3]]),
        outputs=np.array([[np.nan], [-np.inf]]),
        statuses=["failed", "completed"],
        method_results={"ints": np.arange(3), "v": np.float64(0.1 + 0.2), "names": ["a"]},
    )
    write_results(art, tmp_path)
    back = read_results(tmp_path / "results.json")
    assert artifacts_equal(art, back, ignore_meta=())
    assert back.method_results["ints"].dtype.kind == "i"


def test_truncated_file_detected(tmp_path):
    art = ResultArtifact({}, {}, ["x"], np.zeros((2, 1)), np.zeros((2, 1)), ["completed"] * 2, {})
    path = write_results(art, tmp_path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ResultsError, match="checksum mismatch"):
        read_results(path)
    doc = json.loads(text)
    doc["samples"]["__ndarray__"][0] = 5.0
    path.write_text(json.dumps(doc))
    with pytest.raises(ResultsError, match="checksum mismatch"):
        read_results(path)


def test_schema_version_checked(tmp_path):
    art = ResultArtifact({}, {}, ["x"], np.zeros((1, 1)), np.zeros((1, 1)), ["completed"], {})
    path = write_results(art, tmp_path)
    doc = json.loads(path.read_text())
    doc["schema_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ResultsError, match="schema version"):
        read_results(path)


def test_seed_determines_results(tmp_path):
    arts, csv_bytes = [], []
    for _ in range(2):
        arts.append(run(build_plan(parse_config(mc_document(str(tmp_path / "run"), n=200)))))
        csv_bytes.append((tmp_path / "run" / "samples.csv").read_bytes())
    assert csv_bytes[0] == csv_bytes[1]
    assert artifacts_equal(arts[0], arts[1])
    other = run(build_plan(parse_config(mc_document(str(tmp_path / "run2"), n=200)), seed=2))
    assert not np.array_equal(other.samples, arts[0].samples)


def test_workspace_environment_override(tmp_path, monkeypatch, grid_case):
    cfg_path, doc = grid_case
    ws = tmp_path / "env_ws"
    monkeypatch.setenv("QUEENS_WORKSPACE", str(ws))
    doc["pool"]["workspace"] = str(tmp_path / "block_ws")
    doc["method"]["points_per_axis"] = 2
    plan = build_plan(parse_config(doc, base_dir=tmp_path))
    run(plan)
    assert len(list(ws.glob("job_*"))) == 4
    assert not (tmp_path / "block_ws").exists()


def test_failed_method_leaves_no_result_files(tmp_path):
    doc = mc_document(str(tmp_path / "bad"))
    doc["method"] = {"type": "sobol_indices", "model": "f", "n_base": 8}
    doc["f"] = {"type": "function", "function": "numpy:ones_like", "output_dim": 1}
    with pytest.raises(RunError, match="method 'method' \\(sobol_indices\\) failed"):
        run(build_plan(parse_config(doc)))
    leftovers = sorted(p.name for p in (tmp_path / "bad").iterdir())
    assert leftovers == ["queens_run.log"]


# every method type ---------------------------------------------------------


def _obs_file(tmp_path):
    obs = ObservationSet(cantilever([[1000.0, 0.3]])[0], 0.01)
    write_observations(tmp_path / "obs.csv", obs)


CANTILEVER_PARAMS = {
    "E": {"type": "uniform", "lower": 500, "upper": 2000},
    "nu": {"type": "uniform", "lower": 0.1, "upper": 0.45},
}

METHOD_CASES = {
    "grid": ({"points_per_axis": [3, 4]}, "f", UNIFORM2, "grid_qoi.csv"),
    "monte_carlo": ({"n": 50}, "f", UNIFORM2, "histogram.csv"),
    "latin_hypercube": ({"n": 20}, "f", UNIFORM2, None),
    "sobol_sequence": ({"n": 16}, "f", UNIFORM2, None),
    "elementary_effects": ({"trajectories": 5}, "f", UNIFORM2, "indices.csv"),
    "sobol_indices": ({"n_base": 64}, "f", UNIFORM2, "indices.csv"),
    "bmfmc": ({"low_fidelity_model": "lf", "n_lf": 200, "n_pairs": 10, "gp": {"restarts": 1, "steps": 50}},
              "f", UNIFORM2, "density.csv"),
    "metropolis_hastings": ({"steps": 200, "scale": [50.0, 0.02]}, "lik", CANTILEVER_PARAMS, "chain.csv"),
    "smc": ({"n_particles": 100, "rejuvenation_steps": 2}, "lik", CANTILEVER_PARAMS, "posterior_samples.csv"),
    "levenberg_marquardt": ({"x0": [-1.2, 1.0]}, "rosen", UNIFORM2, "trace.csv"),
    "adam": ({"x0": [0.5, 0.5], "max_iter": 200}, "sphere", UNIFORM2, "trace.csv"),
    "adamax": ({"x0": [0.5, 0.5], "max_iter": 200}, "sphere", UNIFORM2, "trace.csv"),
    "rmsprop": ({"x0": [0.5, 0.5], "max_iter": 200}, "sphere", UNIFORM2, "trace.csv"),
}


@pytest.mark.parametrize("method", sorted(METHOD_CASES))
def test_every_method_runs_and_round_trips(method, tmp_path):
    extra, model, params, plot = METHOD_CASES[method]
    _obs_file(tmp_path)
    doc = {
        "global_settings": {"output_dir": "out", "seed": 4},
        "parameters": copy.deepcopy(params),
        "f": {"type": "function", "function": "sum"},
        "lf": {"type": "function", "function": "numpy:sum"},
        "sphere": {"type": "function", "function": "sphere"},
        "rosen": {"type": "function", "function": "rosenbrock_residuals"},
        "beam": {"type": "function", "function": "cantilever"},
        "method": {"type": method, "model": model, **extra},
    }
    if params is CANTILEVER_PARAMS:
        for key in ("f", "lf", "sphere", "rosen"):
            del doc[key]
        doc["lik"] = {"type": "likelihood", "forward_model": "beam", "observations": "obs.csv",
                      "noise_variance": 0.01}
    else:
        del doc["beam"]
    art = run(build_plan(parse_config(doc, base_dir=tmp_path)))
    out = tmp_path / "out"
    assert artifacts_equal(art, read_results(out))
    assert len(art.statuses) == art.samples.shape[0] == art.outputs.shape[0]
    if plot:
        assert (out / plot).stat().st_size > 0
