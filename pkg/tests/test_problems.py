"""Tests for the built-in problems and the custom factory loader."""

import sys
import types

import numpy as np
import pytest

from mv_maxprinciple.coeffs.model import CoefficientModel
from mv_maxprinciple.coeffs.problems import (
    TP1_DEFAULTS,
    build_problem,
    load_factory,
    polynomial_model,
    tp1,
    tp2,
    tp3,
)
from mv_maxprinciple.config import ProblemConfig
from mv_maxprinciple.exceptions import ConfigError


@pytest.fixture
def factory_module(monkeypatch):
    module = types.ModuleType("fake_factories")
    module.linear = lambda **params: polynomial_model({"a": 1.0, **params}, name="fake")
    module.not_a_model = lambda **params: 42
    monkeypatch.setitem(sys.modules, "fake_factories", module)
    return module


class TestBuiltinProblems:
    def test_tp1_defaults(self):
        model = tp1()
        assert model.name == "tp1"
        assert model.K == 1
        assert model.state_affine
        assert model.params["b"] == TP1_DEFAULTS["b"]

    def test_tp1_overrides(self):
        assert tp1({"a": 0.1}).params["a"] == 0.1

    def test_unknown_parameter_raises(self):
        with pytest.raises(ConfigError, match="Unknown parameter"):
            tp1({"zeta": 1.0})

    def test_tp2_control_in_diffusion(self):
        model = tp2()
        x = np.zeros((2, 1))
        B = model.B.value(0.0, x, np.zeros(1), np.array([-1.0, 1.0]))
        assert B[0, 0, 0] == pytest.approx(-model.params["sigma_u"])
        assert model.control_set.kind == "finite"

    def test_tp3_is_not_state_affine(self):
        model = tp3()
        assert not model.state_affine
        assert model.K == 2

    def test_polynomial_state_affine_flag(self):
        assert not polynomial_model({"e": 0.5}).state_affine
        assert not polynomial_model({"h": 0.5}).state_affine


class TestBuildProblem:
    def test_builtin(self):
        assert build_problem(ProblemConfig(id="tp3", params={"gain": 0.1})).params["gain"] == 0.1

    def test_custom_factory(self, factory_module):
        model = build_problem(ProblemConfig(id="custom", factory="fake_factories:linear", params={"sigma": 0.2}))
        assert isinstance(model, CoefficientModel)
        assert model.params["sigma"] == 0.2

    def test_custom_factory_wrong_type(self, factory_module):
        with pytest.raises(ConfigError, match="did not return"):
            build_problem(ProblemConfig(id="custom", factory="fake_factories:not_a_model"))

    def test_missing_module(self):
        with pytest.raises(ConfigError, match="Cannot import"):
            load_factory("surely_missing_module_xyz:build")

    def test_missing_attribute(self, factory_module):
        with pytest.raises(ConfigError, match="not callable"):
            load_factory("fake_factories:nothing")

    def test_malformed_target(self):
        with pytest.raises(ConfigError, match="package.module:function"):
            load_factory("no_colon_here")
