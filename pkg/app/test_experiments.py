"""실험 예제 전체 실행 (느림): pytest -m slow"""
import asyncio

import numpy as np
import pytest
import scipy.sparse as sp
import yaml

from app.components.diagnostics import acf
from app.components.varsel import ModelScorer, VSData, exact_inclusion_probabilities, run_varsel
from app.service.experiment_config import load_experiment_config, validate_config
from app.service.experiment_service import ExperimentService
from app.utils.settings import APP_DIR

pytestmark = pytest.mark.slow

EXPERIMENTS = APP_DIR / 'experiments'


def _config(name: str, tmp_path, /, drop=(), **updates):
    document = yaml.safe_load((EXPERIMENTS / name).read_text(encoding="utf-8"))
    for key in drop:
        document.pop(key, None)
    document.update(updates)
    document["output"] = {"directory": str(tmp_path / document["name"])}
    return validate_config(document)


def _run(config):
    result = ExperimentService().run_sync(config)
    assert result.get("success"), result.get("error")
    return result["summary"]["diagnostics"]


def test_example3_moves_between_modes(tmp_path):
    geometric = _run(_config("example3.yaml", tmp_path))
    assert geometric["basins_visited"] == 2
    assert all(0.35 < f < 0.65 for f in geometric["occupancy"])
    np.testing.assert_allclose(geometric["means"], [5.0, 5.0], atol=0.5)

    rw = _run(_config("example3.yaml", tmp_path, drop=("geometric",), name="example3-rw"))
    assert geometric["msjd"] / rw["msjd"] > 10.0


def test_sixmode_gibbs_visits_every_basin(tmp_path):
    geometric = _run(_config("sixmode_gibbs.yaml", tmp_path))
    assert geometric["basins_visited"] == 6
    rw = _run(_config("sixmode_rw_gibbs.yaml", tmp_path))
    assert rw["basins_visited"] == 1


def test_logistic_geometric_improves_ess(tmp_path):
    geometric = _run(_config("example5_logistic.yaml", tmp_path))
    rw = _run(_config("example5_logistic.yaml", tmp_path, drop=("geometric",), name="example5-rw"))
    assert np.mean(geometric["ess"]) >= 3.0 * np.mean(rw["ess"])


def _lag5_median(name: str, tmp_path) -> float:
    values = []
    for seed in range(1, 6):
        config = _config(name, tmp_path, seed=seed, name=f"{name[:-5]}-{seed}")
        result = ExperimentService().run_sync(config)
        assert result.get("success"), result.get("error")
        chain = np.loadtxt(result["paths"]["chain"], delimiter=",", skiprows=1, ndmin=2)
        values.append(acf(chain[:, 1], 5)[5])
    return float(np.median(values))


def test_example2_geometric_chains_decorrelate(tmp_path):
    assert _lag5_median("example2.yaml", tmp_path) < 0.1
    assert _lag5_median("example2_rw.yaml", tmp_path) < 0.1
    assert _lag5_median("example2_baseline.yaml", tmp_path) > 0.5


def test_example1_escapes_tail(tmp_path):
    escaped = 0
    for seed in range(100):
        config = _config("example1.yaml", tmp_path, iterations=10, seed=seed, name=f"example1-{seed}")
        result = ExperimentService().run_sync(config)
        assert result.get("success"), result.get("error")
        chain = np.loadtxt(result["paths"]["chain"], delimiter=",", skiprows=1, ndmin=2)
        escaped += int(np.any(np.abs(chain[:, 1]) < 3.0))
    assert escaped >= 95


def test_varsel_independent_hits_truth(tmp_path):
    config = load_experiment_config(EXPERIMENTS / "varsel_independent.yaml", output=tmp_path / "varsel")
    result = asyncio.run(ExperimentService().varsel(config))
    assert result.get("success"), result.get("error")
    hitting = result["summary"]["hitting"]
    assert hitting["success_rate"] >= 0.9
    assert hitting["best_model"] == [1, 2, 3, 4, 5]


def test_varsel_enumeration_agrees_over_long_chain():
    rng = np.random.default_rng(11)
    W = rng.standard_normal((50, 8))
    z = 1.2 * W[:, 1] - 0.8 * W[:, 4] + 0.6 * W[:, 6] + rng.standard_normal(50)
    data = VSData(sp.csc_matrix(W), z)
    scorer = ModelScorer(data)
    exact = exact_inclusion_probabilities(scorer)
    trace = run_varsel(scorer, 200_000, seed=12)
    visits = np.zeros(data.p)
    for gamma in trace.models:
        visits[list(gamma)] += 1.0
    assert np.max(np.abs(visits / len(trace.models) - exact)) < 0.02
