"""Tests for suite orchestration on small configurations."""

import csv
import json
from unittest.mock import patch

import pytest

from mv_maxprinciple.coeffs.problems import TP1_DEFAULTS, polynomial_model
from mv_maxprinciple.config import load_config
from mv_maxprinciple.exceptions import ArgumentError, CheckFailed, NonConvergenceError
from mv_maxprinciple.forward.controls import ConstantControl, FeedbackControl, LinearFeedback, ShiftedControl
from mv_maxprinciple.runner import ExperimentRunner, build_base_control, riccati_reference


def _config(tmp_path, **sections):
    data = {
        "problem": {"id": "tp1", "control": {"kind": "optimal"}},
        "simulation": {"particles": 60, "steps": 200, "x0": [1.0]},
        "spike": {"t0": 0.25, "eps": 0.05, "beta": {"kind": "shift", "value": 1.0}},
        "order_study": {"eps_grid": [0.2, 0.1, 0.05, 0.025, 0.0125], "steps": 80},
        "third": {"particles": 8},
        "maxprin": {"t_points": 5, "u_points": 9},
        "tolerances": {"eps_refinement": [0.1, 0.05]},
        "output": {"directory": str(tmp_path / "out")},
        "logging": {"level": "WARNING", "format": "text"},
    }
    data.update(sections)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return load_config(path)


def _run(config, *suites):
    """Run suites on one runner and return its report, failing or not."""
    runner = ExperimentRunner(config)
    for suite in suites:
        try:
            runner.run(suite)
        except CheckFailed:
            pass
    return runner.report


def _records(report):
    return {r.name: r for r in report.records}


def _read_csv(path):
    return list(csv.DictReader(line for line in path.read_text().splitlines() if not line.startswith("#")))


class TestBaseControl:
    def test_optimal_tp1_uses_riccati_feedback(self, tmp_path, tp1_model):
        config = _config(tmp_path)
        law = build_base_control(config, tp1_model, riccati_reference(config, tp1_model))
        assert isinstance(law, FeedbackControl)

    def test_problem_defaults(self, tmp_path, tp2_model, tp3_model):
        assert build_base_control(_config(tmp_path, problem={"id": "tp2"}), tp2_model) == ConstantControl(1.0)
        assert build_base_control(_config(tmp_path, problem={"id": "tp3"}), tp3_model) == LinearFeedback(0.5)

    def test_explicit_kinds_and_offset(self, tmp_path, tp1_model):
        config = _config(tmp_path, problem={"id": "tp1", "control": {"kind": "linear", "gain": 0.3, "offset": 0.1}})
        law = build_base_control(config, tp1_model)
        assert law == ShiftedControl(LinearFeedback(0.3), 0.1)
        config = _config(tmp_path, problem={"id": "tp1", "control": {"kind": "constant", "value": 2.0}})
        assert build_base_control(config, tp1_model) == ConstantControl(2.0)

    def test_no_riccati_for_non_lq_parameters(self, tmp_path, caplog):
        model = polynomial_model({**TP1_DEFAULTS, "e": 0.2}, name="tp1")
        assert riccati_reference(_config(tmp_path), model) is None
        assert "No Riccati reference" in caplog.text

    def test_no_riccati_off_tp1(self, tmp_path, tp3_model):
        assert riccati_reference(_config(tmp_path, problem={"id": "tp3"}), tp3_model) is None


class TestSuites:
    def test_check_derivatives(self, tmp_path):
        config = _config(tmp_path)
        report = ExperimentRunner(config).run("check-derivatives")
        names = set(_records(report))
        assert "derivatives.lions_fd" in names
        assert any(n.startswith("derivatives.psi.") for n in names)
        payload = json.loads((tmp_path / "out" / "report.json").read_text())
        assert payload["passed"] is True
        assert set(payload["header"]["runtimes"]) == {"check-derivatives"}

    def test_simulate_writes_paths(self, tmp_path):
        report = _run(_config(tmp_path), "simulate")
        assert (tmp_path / "out" / "paths.csv").exists()
        assert _records(report)["simulate.riccati_value"].passed

    def test_order_study_flags_degenerate_quantities(self, tmp_path):
        report = _run(_config(tmp_path), "order-study")
        records = _records(report)
        for q in ("Z", "delta_x_minus_Y", "K"):
            assert records[f"order.{q}"].details == {"degenerate": True}
        assert records["order.Y"].details["expected"] == 2
        assert (tmp_path / "out" / "slopes.csv").exists()
        assert json.loads((tmp_path / "out" / "order_study.json").read_text())["drift_only"] is True

    def test_adjoints_against_oracles(self, tmp_path):
        records = _records(_run(_config(tmp_path), "adjoints"))
        for name in ("adjoints.second_oracle", "adjoints.first_oracle", "adjoints.third.converged",
                     "adjoints.third_oracle"):
            assert records[name].passed, name
        assert "adjoints.third.contraction" in records

    def test_duality_table(self, tmp_path):
        records = _records(_run(_config(tmp_path), "duality"))
        rows = _read_csv(tmp_path / "out" / "duality.csv")
        assert [r["name"] for r in rows] == ["pY", "pZ", "PYY", "third"]
        assert records["duality.pZ"].passed
        assert float(rows[1]["complete"]) == 0.0

    def test_duality_refinement(self, tmp_path):
        records = _records(_run(_config(tmp_path), "duality"))
        refinement = records["duality.refinement"]
        assert refinement.passed, refinement.details
        assert refinement.details["steps"] == [200, 400]
        assert "discretization" in _read_csv(tmp_path / "out" / "duality.csv")[0]
        # The drift-control spike leaves the diffusion alone.
        assert "duality.ablation.PYY" not in records

    def test_diffusion_ablation(self, tmp_path):
        config = _config(
            tmp_path,
            problem={"id": "tp2"},
            simulation={"particles": 60, "steps": 100, "x0": [0.5]},
            spike={"t0": 0.2, "eps": 0.1, "beta": {"kind": "constant", "value": -1.0}},
        )
        records = _records(_run(config, "duality"))
        assert records["duality.ablation.PYY"].passed
        assert records["duality.ablation.third"].passed
        assert records["duality.ablation.third"].value == 0.0

    def test_mirror_check_for_symmetrized_variant(self, tmp_path):
        records = _records(_run(_config(tmp_path, third={"particles": 8, "variant": "symmetrized"}), "adjoints"))
        assert records["adjoints.third.symmetry"].passed
        assert "adjoints.third.symmetry" not in _records(_run(_config(tmp_path), "adjoints"))

    def test_expansion_table(self, tmp_path):
        records = _records(_run(_config(tmp_path), "expansion"))
        rows = _read_csv(tmp_path / "out" / "expansion.csv")
        assert [float(r["eps"]) for r in rows] == [0.1, 0.05]
        assert records["expansion.identity[0.1]"].passed
        assert records["expansion.identity[0.05]"].passed
        assert "expansion.optimality" in records
        assert "expansion.refinement" in records
        resolved = records["expansion.resolved"]
        assert resolved.passed
        assert len(resolved.details["inside_noise_band"]) == 2

    def test_maxprin_at_optimum(self, tmp_path):
        report = _run(_config(tmp_path), "maxprin")
        assert _records(report)["maxprin.min_v"].passed
        assert len(_read_csv(tmp_path / "out" / "maxprin.csv")) == 5 * 9

    def test_suboptimal_control_fails(self, tmp_path):
        config = _config(tmp_path, problem={"id": "tp1", "control": {"kind": "constant", "value": 0.0}})
        with pytest.raises(CheckFailed) as info:
            ExperimentRunner(config).run("maxprin")
        assert info.value.failing == ["maxprin.min_v"]
        assert json.loads((tmp_path / "out" / "report.json").read_text())["passed"] is False


class TestOrchestration:
    def test_all_stops_after_derivative_failure(self, tmp_path):
        config = _config(tmp_path)
        with patch("mv_maxprinciple.runner.check_derivatives", return_value={"A.dx": 1.0}):
            with pytest.raises(CheckFailed) as info:
                ExperimentRunner(config).run("all")
        assert info.value.failing == ["derivatives.A.dx"]
        payload = json.loads((tmp_path / "out" / "report.json").read_text())
        assert all(r["name"].startswith("derivatives.") for r in payload["records"])
        assert list(payload["header"]["runtimes"]) == ["check-derivatives"]

    def test_stalled_pair_adjoint_recorded_once(self, tmp_path):
        config = _config(tmp_path)
        stalled = NonConvergenceError("stalled", history=[1.0, 0.9])
        with patch("mv_maxprinciple.runner.solve_third_adjoint_picard", side_effect=stalled):
            report = _run(config, "adjoints", "duality")
        failing = [r for r in report.records if r.name == "adjoints.third.converged"]
        assert len(failing) == 1
        assert failing[0].details == {"history": [1.0, 0.9]}
        assert "duality.third" not in _records(report)

    def test_unknown_subcommand(self, tmp_path):
        with pytest.raises(ArgumentError, match="Unknown subcommand"):
            ExperimentRunner(_config(tmp_path)).run("bogus")


@pytest.mark.slow
class TestFullRun:
    def test_all_on_nonlinear_problem(self, tmp_path):
        config = _config(
            tmp_path,
            problem={"id": "tp3"},
            simulation={"particles": 300, "steps": 100, "x0": [0.8]},
            adjoint={"backend": "regression"},
            third={"particles": 40, "variant": "symmetrized", "tol": 1e-8},
            order_study={"eps_grid": [0.2, 0.1, 0.05, 0.025, 0.0125], "steps": 200},
        )
        report = _run(config, "all")
        names = set(_records(report))
        assert {"order.Y", "duality.pY", "duality.third", "adjoints.third.symmetry", "maxprin.min_v"} <= names
        assert _records(report)["adjoints.third.symmetry"].passed
        out = tmp_path / "out"
        for name in ("report.json", "slopes.csv", "duality.csv", "expansion.csv", "maxprin.csv"):
            assert (out / name).exists()


@pytest.mark.slow
class TestExpansionRefinement:
    def test_strictly_decreasing_on_diffusion_control(self, tmp_path):
        config = _config(
            tmp_path,
            problem={"id": "tp2"},
            simulation={"particles": 2000, "steps": 200, "x0": [0.5]},
            spike={"t0": 0.2, "eps": 0.05, "beta": {"kind": "constant", "value": -1.0}},
            tolerances={"eps_refinement": [0.1, 0.05, 0.025]},
        )
        record = _records(_run(config, "expansion"))["expansion.refinement"]
        assert record.passed, record.details
        assert record.details["residual_over_eps"][-1] < record.details["residual_over_eps"][0]
