"""Built-in test problems and the loader for user-supplied coefficient factories."""

from __future__ import annotations

import importlib
import logging
from collections.abc import Callable

import numpy as np

from ..config import ProblemConfig
from ..exceptions import ConfigError
from .model import CoefficientModel, CoefficientTerm, ControlSet
from .moments import identity_moments, power_moments

logger = logging.getLogger(__name__)

# Scalar-state pieces: (t, x: (N,), m: (K,), u: (N,)) -> (N,) / (N, K) / (N, K, K) / (N, K)
ScalarFn = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]

POLYNOMIAL_DEFAULTS: dict[str, float] = {
    "a0": 0.0, "a": 0.0, "abar": 0.0, "b": 0.0, "e": 0.0, "h": 0.0,
    "sigma": 0.0, "sigma_x": 0.0, "sigma_u": 0.0,
    "f0": 0.0, "r": 0.0, "c": 0.0, "cbar": 0.0, "k_u": 0.0,
    "s": 0.0, "sbar": 0.0, "g1": 0.0,
}

TP1_DEFAULTS: dict[str, float] = {
    "a": 0.5, "abar": 0.3, "b": 1.0, "sigma": 0.5,
    "r": 1.0, "c": 1.0, "cbar": 0.5, "s": 1.0, "sbar": 0.5,
}

TP2_DEFAULTS: dict[str, float] = {
    "a": 0.2, "abar": 0.2, "b": 0.5, "sigma_u": 0.4,
    "c": 1.0, "cbar": 0.5, "k_u": 0.1, "s": 1.0, "sbar": 0.5,
}

TP3_DEFAULTS: dict[str, float] = {
    "a": 0.3, "abar": 0.5, "b": 1.0, "eta": 0.5,
    "sigma": 0.3, "lam": 0.5, "nu": 0.4,
    "r": 1.0, "c": 1.0, "cbar": 0.5, "s": 1.0, "sbar": 0.5,
    "gain": 0.5,
}


def _zeros(n: int, *shape: int) -> np.ndarray:
    return np.zeros((n, *shape))


def scalar_term(
    shape: tuple[int, ...],
    K: int,
    value: ScalarFn,
    dx: ScalarFn | None = None,
    dxx: ScalarFn | None = None,
    dm: ScalarFn | None = None,
    dmm: ScalarFn | None = None,
    dxm: ScalarFn | None = None,
) -> CoefficientTerm:
    """Lift scalar-state formulas (d = 1) to the batched CoefficientTerm layout.

    Missing derivatives are identically zero.
    """

    def lift(fn: ScalarFn | None, extra: tuple[int, ...]) -> Callable:
        def evaluate(t: float, x: np.ndarray, m: np.ndarray, u: np.ndarray) -> np.ndarray:
            n = x.shape[0]
            if fn is None:
                return _zeros(n, *shape, *extra)
            out = np.asarray(fn(t, x[:, 0], np.asarray(m, dtype=float), u), dtype=float)
            return np.broadcast_to(out, (n,) + out.shape[1:]).reshape((n, *shape, *extra)).copy()

        return evaluate

    return CoefficientTerm(
        shape=shape,
        value=lift(value, ()),
        dx=lift(dx, (1,)),
        dxx=lift(dxx, (1, 1)),
        dm=lift(dm, (K,)),
        dmm=lift(dmm, (K, K)),
        dxm=lift(dxm, (1, K)),
    )


def _merge(defaults: dict[str, float], overrides: dict[str, float], problem: str) -> dict[str, float]:
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ConfigError(f"Unknown parameter(s) for {problem}: {', '.join(sorted(unknown))}")
    merged = dict(defaults)
    merged.update({k: float(v) for k, v in overrides.items()})
    return merged


def polynomial_model(
    params: dict[str, float] | None = None,
    control_set: ControlSet | None = None,
    name: str = "polynomial",
) -> CoefficientModel:
    """Scalar model with psi = id and polynomial coefficients.

    A = a0 + a x + abar m + b u + e x u + h x^2 / 2
    B = sigma + sigma_x x + sigma_u u
    f = f0 + (r u^2 + c x^2 + cbar m^2) / 2 + k_u u
    g = (s x^2 + sbar m^2) / 2 + g1 x
    """
    p = _merge(POLYNOMIAL_DEFAULTS, params or {}, name)
    one = lambda t, x, m, u: np.ones_like(x)  # noqa: E731

    def const(v: float) -> ScalarFn:
        return lambda t, x, m, u: v * np.ones_like(x)

    def mcol(fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]) -> ScalarFn:
        return lambda t, x, m, u: fn(x, m, u)[:, None]

    A = scalar_term(
        (1,), 1,
        value=lambda t, x, m, u: p["a0"] + p["a"] * x + p["abar"] * m[0] + p["b"] * u + p["e"] * x * u + 0.5 * p["h"] * x**2,
        dx=lambda t, x, m, u: p["a"] + p["e"] * u + p["h"] * x,
        dxx=const(p["h"]),
        dm=mcol(lambda x, m, u: p["abar"] * np.ones_like(x)),
    )
    B = scalar_term(
        (1, 1), 1,
        value=lambda t, x, m, u: p["sigma"] + p["sigma_x"] * x + p["sigma_u"] * u,
        dx=const(p["sigma_x"]),
    )
    f = scalar_term(
        (), 1,
        value=lambda t, x, m, u: p["f0"] + 0.5 * (p["r"] * u**2 + p["c"] * x**2 + p["cbar"] * m[0] ** 2) + p["k_u"] * u,
        dx=lambda t, x, m, u: p["c"] * x,
        dxx=const(p["c"]),
        dm=mcol(lambda x, m, u: p["cbar"] * m[0] * np.ones_like(x)),
        dmm=lambda t, x, m, u: p["cbar"] * one(t, x, m, u)[:, None, None],
    )
    g = scalar_term(
        (), 1,
        value=lambda t, x, m, u: 0.5 * (p["s"] * x**2 + p["sbar"] * m[0] ** 2) + p["g1"] * x,
        dx=lambda t, x, m, u: p["s"] * x + p["g1"],
        dxx=const(p["s"]),
        dm=mcol(lambda x, m, u: p["sbar"] * m[0] * np.ones_like(x)),
        dmm=lambda t, x, m, u: p["sbar"] * one(t, x, m, u)[:, None, None],
    )
    return CoefficientModel(
        name=name,
        d=1,
        momentmap=identity_moments(1),
        A=A, B=B, f=f, g=g,
        control_set=control_set or ControlSet(kind="interval"),
        state_affine=p["e"] == 0.0 and p["h"] == 0.0,
        params=p,
    )


def tp1(params: dict[str, float] | None = None) -> CoefficientModel:
    """Drift-controlled mean-field LQ problem with U = R."""
    merged = _merge(TP1_DEFAULTS, params or {}, "tp1")
    return polynomial_model(merged, ControlSet(kind="interval"), name="tp1")


def tp2(params: dict[str, float] | None = None) -> CoefficientModel:
    """Diffusion-controlled problem B = sigma_u u with U = {-1, +1}."""
    merged = _merge(TP2_DEFAULTS, params or {}, "tp2")
    return polynomial_model(merged, ControlSet(kind="finite", points=(-1.0, 1.0)), name="tp2")


def tp3(params: dict[str, float] | None = None) -> CoefficientModel:
    """Nonlinear measure dependence through tanh of the first two moments.

    psi = (x, x^2); A = a x + abar tanh(m1) + b u + eta sin x,
    B = sigma (1 + lam tanh(m2)) + nu u, f = (r u^2 + c x^2 + cbar m1^2) / 2,
    g = (s x^2 + sbar m1^2) / 2.
    """
    p = _merge(TP3_DEFAULTS, params or {}, "tp3")

    def sech2(v: float) -> float:
        return 1.0 - np.tanh(v) ** 2

    def first_moment(fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> ScalarFn:
        def evaluate(t, x, m, u):
            out = np.zeros((x.shape[0], 2))
            out[:, 0] = fn(x, m)
            return out
        return evaluate

    def moment_hessian(k: int, fn: Callable[[np.ndarray], float]) -> ScalarFn:
        def evaluate(t, x, m, u):
            out = np.zeros((x.shape[0], 2, 2))
            out[:, k, k] = fn(m)
            return out
        return evaluate

    A = scalar_term(
        (1,), 2,
        value=lambda t, x, m, u: p["a"] * x + p["abar"] * np.tanh(m[0]) + p["b"] * u + p["eta"] * np.sin(x),
        dx=lambda t, x, m, u: p["a"] + p["eta"] * np.cos(x),
        dxx=lambda t, x, m, u: -p["eta"] * np.sin(x),
        dm=first_moment(lambda x, m: p["abar"] * sech2(m[0]) * np.ones_like(x)),
        dmm=moment_hessian(0, lambda m: -2.0 * p["abar"] * np.tanh(m[0]) * sech2(m[0])),
    )

    def b_dm(t, x, m, u):
        out = np.zeros((x.shape[0], 2))
        out[:, 1] = p["sigma"] * p["lam"] * sech2(m[1])
        return out

    B = scalar_term(
        (1, 1), 2,
        value=lambda t, x, m, u: p["sigma"] * (1.0 + p["lam"] * np.tanh(m[1])) + p["nu"] * u,
        dm=b_dm,
        dmm=moment_hessian(1, lambda m: -2.0 * p["sigma"] * p["lam"] * np.tanh(m[1]) * sech2(m[1])),
    )
    f = scalar_term(
        (), 2,
        value=lambda t, x, m, u: 0.5 * (p["r"] * u**2 + p["c"] * x**2 + p["cbar"] * m[0] ** 2),
        dx=lambda t, x, m, u: p["c"] * x,
        dxx=lambda t, x, m, u: p["c"] * np.ones_like(x),
        dm=first_moment(lambda x, m: p["cbar"] * m[0] * np.ones_like(x)),
        dmm=moment_hessian(0, lambda m: p["cbar"]),
    )
    g = scalar_term(
        (), 2,
        value=lambda t, x, m, u: 0.5 * (p["s"] * x**2 + p["sbar"] * m[0] ** 2),
        dx=lambda t, x, m, u: p["s"] * x,
        dxx=lambda t, x, m, u: p["s"] * np.ones_like(x),
        dm=first_moment(lambda x, m: p["sbar"] * m[0] * np.ones_like(x)),
        dmm=moment_hessian(0, lambda m: p["sbar"]),
    )
    return CoefficientModel(
        name="tp3",
        d=1,
        momentmap=power_moments((1, 2)),
        A=A, B=B, f=f, g=g,
        control_set=ControlSet(kind="interval"),
        state_affine=False,
        params=p,
    )


BUILTIN_PROBLEMS: dict[str, Callable[[dict[str, float] | None], CoefficientModel]] = {
    "tp1": tp1,
    "tp2": tp2,
    "tp3": tp3,
}


def load_factory(target: str) -> Callable[..., CoefficientModel]:
    """Resolve 'package.module:function' to a callable."""
    module_name, _, attr = target.partition(":")
    if not module_name or not attr:
        raise ConfigError(f"Factory must look like 'package.module:function', got '{target}'")
    try:
        module = importlib.import_module(module_name)
    except ImportError as exc:
        raise ConfigError(f"Cannot import coefficient factory module '{module_name}': {exc}") from exc
    factory = getattr(module, attr, None)
    if not callable(factory):
        raise ConfigError(f"'{attr}' in module '{module_name}' is not callable")
    return factory


def build_problem(config: ProblemConfig) -> CoefficientModel:
    """Instantiate the configured coefficient model."""
    if config.id == "custom":
        model = load_factory(config.factory)(**dict(config.params))
        if not isinstance(model, CoefficientModel):
            raise ConfigError(f"Factory '{config.factory}' did not return a CoefficientModel")
    elif config.id in BUILTIN_PROBLEMS:
        model = BUILTIN_PROBLEMS[config.id](dict(config.params))
    else:
        raise ConfigError(f"Unknown problem id '{config.id}'")
    logger.info("Built problem %s (d=%d, K=%d)", model.name, model.d, model.K, extra={"problem": model.name})
    return model
