"""Suite orchestration: build the problem, run the requested checks, write the report."""

from __future__ import annotations

import logging
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .adjoint.dump import write_adjoints
from .adjoint.first import FirstOrderAdjoint, solve_first_adjoint
from .adjoint.second import SecondOrderAdjoint, solve_second_adjoint
from .adjoint.third import (
    CONTRACTION_BOUND,
    MIRROR_ATOL,
    SYMMETRIZED,
    PicardTrace,
    ProductAdjoint,
    mirror_gap,
    solve_third_adjoint_picard,
)
from .coeffs.lions import check_lions_fd, sine_functional
from .coeffs.model import CoefficientModel, check_derivatives
from .coeffs.moments import check_moment_map
from .coeffs.problems import build_problem
from .config import ExperimentConfig, config_hash
from .exceptions import ArgumentError, CheckFailed, NonConvergenceError
from .forward import ControlLaw
from .forward.chaos import propagation_of_chaos
from .forward.controls import (
    ConstantControl,
    FeedbackControl,
    LinearFeedback,
    ShiftedControl,
    SpikeVariation,
    make_beta,
)
from .forward.ensemble import ParticleEnsemble, simulate_mv_sde, write_paths
from .forward.grid import TimeGrid
from .forward.rng import derived_generator
from .output import SCHEMA_VERSION, write_csv, write_json
from .variational.processes import build_bundle, moves_diffusion
from .variational.study import DEFECT_EXCESS, QUANTITIES, SLOPE_BANDS, order_study
from .verify.cost import cost_functional, cost_stderr
from .verify.duality import (
    DualityResidual,
    check_duality_PYY,
    check_duality_pY,
    check_duality_pZ,
    check_duality_third,
)
from .verify.expansion import STAGES, ExpansionResult, check_expansion
from .verify.maxprin import check_max_principle
from .verify.report import CheckRecord, VerificationReport, within
from .verify.riccati import MeanFieldRiccati, discrete_mean_path, discrete_pair_order, discrete_second_order

logger = logging.getLogger(__name__)

SUITES = (
    "check-derivatives",
    "simulate",
    "order-study",
    "adjoints",
    "duality",
    "expansion",
    "maxprin",
)
ALL = "all"

LIONS_PARTICLES = 1000
# Namespaces of the two independent ensembles behind the pair adjoint; the base ensemble uses 0.
PAIR_NAMESPACES = (1, 2)
_DERIVATIVE_STREAM = 11

DUALITY_COLUMNS = [
    "name", "eps", "lhs", "rhs", "residual", "omitted", "discretization", "complete",
    "paired_stderr", "samples", "tolerance", "verdict",
]
# Accepted shrink factor of the duality discretization term when the step count doubles.
REFINEMENT_BAND = (1.5, 3.0)
# Multiplier applied to the spike increment of the diffusion by the ablation records.
ABLATION_SCALE = 2.0
EXPANSION_COLUMNS = [
    "eps", "lhs", "rhs", "residual", "residual_over_eps", "paired_stderr", "identity_gap", *STAGES,
]


def riccati_reference(config: ExperimentConfig, model: CoefficientModel) -> MeanFieldRiccati | None:
    """Riccati solution for an LQ parameter set, or None when the problem is not LQ."""
    if config.problem.id != "tp1":
        return None
    try:
        return MeanFieldRiccati.from_params(model.params, config.simulation.horizon)
    except ArgumentError as exc:
        logger.warning("No Riccati reference: %s", exc)
        return None


def build_base_control(
    config: ExperimentConfig,
    model: CoefficientModel,
    riccati: MeanFieldRiccati | None = None,
) -> ControlLaw:
    """The control every suite runs along, optionally shifted by ``control.offset``."""
    ctrl = config.problem.control
    law: ControlLaw
    if ctrl.kind == "constant":
        law = ConstantControl(ctrl.value)
    elif ctrl.kind == "linear":
        law = LinearFeedback(ctrl.gain)
    elif config.problem.id == "tp1" and riccati is not None:
        law = FeedbackControl(riccati.feedback, name="riccati")
    elif config.problem.id == "tp2":
        law = ConstantControl(1.0)
    elif config.problem.id == "tp3":
        law = LinearFeedback(model.params["gain"])
    else:
        law = ConstantControl(0.0)
    if ctrl.offset:
        law = ShiftedControl(law, ctrl.offset)
    return law


class ExperimentRunner:
    """Runs suites in order against one base ensemble and collects a VerificationReport.

    Ensembles and adjoints are computed on first use and shared by every
    later suite of the same run.
    """

    def __init__(self, config: ExperimentConfig):
        self._config = config
        self._hash = config_hash(config)
        self._model = build_problem(config.problem)
        self._grid = TimeGrid(config.simulation.horizon, config.simulation.steps)
        self._riccati = riccati_reference(config, self._model)
        self._control = build_base_control(config, self._model, self._riccati)
        self._out = Path(config.output.directory)
        self._report = VerificationReport(
            config_hash=self._hash, seeds={"simulation": config.simulation.seed}
        )
        self._runtimes: dict[str, float] = {}
        self._subcommand = ALL
        self._base: ParticleEnsemble | None = None
        self._adjoints: tuple[FirstOrderAdjoint, SecondOrderAdjoint] | None = None
        self._pair: tuple[ParticleEnsemble, ParticleEnsemble, ProductAdjoint] | None = None
        self._pair_failed = False
        self._pair_solutions: tuple | None = None

    @property
    def report(self) -> VerificationReport:
        return self._report

    @property
    def at_optimum(self) -> bool:
        """True when the base control is the Riccati feedback itself."""
        ctrl = self._config.problem.control
        return self._riccati is not None and ctrl.kind == "optimal" and ctrl.offset == 0.0

    def run(self, subcommand: str) -> VerificationReport:
        """Run one suite, or every suite for ``all``; raises CheckFailed after writing the report."""
        if subcommand != ALL and subcommand not in SUITES:
            raise ArgumentError(f"Unknown subcommand '{subcommand}'")
        self._subcommand = subcommand
        suites = SUITES if subcommand == ALL else (subcommand,)
        logger.info("Running %s on %s", subcommand, self._model.name, extra={"problem": self._model.name})

        for name in suites:
            self._phase(name)
            if name == "check-derivatives" and subcommand == ALL and not self._report.passed:
                logger.error("Derivative checks failed, skipping the remaining suites")
                break

        self._report.header = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "runtimes": dict(self._runtimes),
        }
        path = self._report.write(self._out)
        logger.info("Wrote %s", path)
        if not self._report.passed:
            raise CheckFailed(self._report.failing)
        return self._report

    def _phase(self, name: str) -> None:
        start = time.monotonic()
        handler = getattr(self, "_suite_" + name.replace("-", "_"))
        handler()
        elapsed = time.monotonic() - start
        self._runtimes[name] = round(elapsed, 3)
        logger.info(
            "Suite %s complete", name,
            extra={"check": name, "elapsed_seconds": round(elapsed, 2)},
        )

    # Shared state

    def _header(self) -> dict[str, str]:
        return {"config_hash": self._hash, "schema_version": SCHEMA_VERSION}

    def _simulate(self, grid: TimeGrid, particles: int, namespace: int) -> ParticleEnsemble:
        sim = self._config.simulation
        return simulate_mv_sde(
            self._model, grid, self._control, sim.x0, particles,
            seed=sim.seed, namespace=namespace, workers=sim.workers,
        )

    def _base_ensemble(self) -> ParticleEnsemble:
        if self._base is None:
            self._base = self._simulate(self._grid, self._config.simulation.particles, 0)
        return self._base

    def _solve(self, ensemble: ParticleEnsemble) -> tuple[FirstOrderAdjoint, SecondOrderAdjoint]:
        first = solve_first_adjoint(self._model, ensemble, self._config.adjoint)
        second = solve_second_adjoint(self._model, ensemble, first, self._config.adjoint)
        return first, second

    def _base_adjoints(self) -> tuple[FirstOrderAdjoint, SecondOrderAdjoint]:
        if self._adjoints is None:
            self._adjoints = self._solve(self._base_ensemble())
        return self._adjoints

    def _spike(self, eps: float) -> SpikeVariation:
        spike = self._config.spike
        beta = make_beta(spike.beta.kind, spike.beta.value, self._control)
        return SpikeVariation(t0=spike.t0, eps=eps, beta=beta)

    def _solve_pair(
        self,
        e1: ParticleEnsemble,
        e2: ParticleEnsemble,
        firsts: tuple[FirstOrderAdjoint, FirstOrderAdjoint],
        seconds: tuple[SecondOrderAdjoint, SecondOrderAdjoint],
    ) -> tuple[ProductAdjoint, PicardTrace]:
        third = self._config.third
        return solve_third_adjoint_picard(
            self._model, e1, e2, firsts, seconds,
            variant=third.variant, kappa=third.kappa, tol=third.tol, max_iter=third.max_iter,
            backend=self._config.adjoint.backend, adjoint=self._config.adjoint,
            subsample=third.subsample, workers=self._config.simulation.workers,
        )

    def _pair_adjoint(self) -> tuple[ParticleEnsemble, ParticleEnsemble, ProductAdjoint] | None:
        """Pair adjoint on two fresh independent ensembles; None (and a failing record) if Picard stalls."""
        if self._pair is not None or self._pair_failed:
            return self._pair
        third = self._config.third
        n = min(third.particles, self._config.simulation.particles)
        e1, e2 = (self._simulate(self._grid, n, ns) for ns in PAIR_NAMESPACES)
        self._pair_solutions = (self._solve(e1), self._solve(e2))
        (f1, s1), (f2, s2) = self._pair_solutions
        try:
            product, trace = self._solve_pair(e1, e2, (f1, f2), (s1, s2))
        except NonConvergenceError as exc:
            self._pair_failed = True
            last = exc.history[-1] if exc.history else float("nan")
            self._report.add(CheckRecord(
                "adjoints.third.converged", last, third.tol, False, {"history": exc.history},
            ))
            return None
        self._report.add(CheckRecord(
            "adjoints.third.converged", trace.rho[-1], third.tol, trace.converged, trace.to_dict(),
        ))
        worst = max(trace.ratios, default=0.0)
        self._report.add(CheckRecord(
            "adjoints.third.contraction", worst, CONTRACTION_BOUND, worst <= CONTRACTION_BOUND,
            {"ratios": trace.ratios, "kappa": trace.kappa},
        ))
        self._pair = (e1, e2, product)
        return self._pair

    def _mirror_record(self) -> None:
        """Re-solve the pair with the ensembles swapped; the symmetrized variant must give the mirror image."""
        if self._config.third.subsample:
            logger.info("Skipping the mirror check: subsampled pairs are not mirror images of each other")
            return
        e1, e2, product = self._pair
        (f1, s1), (f2, s2) = self._pair_solutions
        try:
            swapped, _ = self._solve_pair(e2, e1, (f2, f1), (s2, s1))
        except NonConvergenceError as exc:
            self._report.add(CheckRecord(
                "adjoints.third.symmetry", float("nan"), MIRROR_ATOL, False, {"history": exc.history},
            ))
            return
        self._report.add(within("adjoints.third.symmetry", mirror_gap(product, swapped), MIRROR_ATOL))

    # Suites

    def _suite_check_derivatives(self) -> None:
        tol = self._config.tolerances
        rng = derived_generator(self._config.simulation.seed, _DERIVATIVE_STREAM)
        errors = check_derivatives(self._model, rng, tol.fd_points, tol.fd_step)
        errors.update(
            {f"psi.{k}": v for k, v in check_moment_map(self._model.momentmap, rng, tol.fd_points, tol.fd_step).items()}
        )
        for key in sorted(errors):
            self._report.add(within(f"derivatives.{key}", errors[key], tol.fd_rtol))

        states = rng.normal(size=(LIONS_PARTICLES, self._model.d))
        direction = rng.normal(size=states.shape)
        lions = check_lions_fd(sine_functional(self._model.momentmap), states, direction, tol.fd_step)
        self._report.add(within("derivatives.lions_fd", lions, tol.lions_rtol, particles=LIONS_PARTICLES))

    def _suite_simulate(self) -> None:
        sim = self._config.simulation
        tol = self._config.tolerances
        base = self._base_ensemble()
        if self._subcommand == "simulate" or self._config.output.dump_paths:
            write_paths(base, self._out, self._hash)

        cost = cost_functional(self._model, base, self._control)
        stderr = cost_stderr(self._model, base, self._control)
        logger.info("Cost J=%.6g +/- %.2g", cost, stderr, extra={"problem": self._model.name})
        if self.at_optimum:
            value = self._riccati.value(float(sim.x0[0]))
            self._report.add(within(
                "simulate.riccati_value", cost - value, tol.oracle_rtol * abs(value) + tol.duality_sigmas * stderr,
                cost=cost, value=value, stderr=stderr,
            ))

        if sim.chaos_replicates > 0:
            if not self.at_optimum:
                logger.warning("Mean-path study needs the Riccati optimum; skipped")
                return
            reference = discrete_mean_path(self._riccati, float(sim.x0[0]), self._grid.knots)
            study = propagation_of_chaos(
                self._model, self._grid, self._control, sim.x0, reference, sim.seed,
                sizes=tuple(sim.chaos_sizes), replicates=sim.chaos_replicates, workers=sim.workers,
            )
            write_json(self._out / "chaos.json", {**self._header(), **study.to_dict()})
            self._report.add(within("simulate.chaos_slope", study.slope + 1.0, tol.chaos_margin, **study.to_dict()))

    def _suite_order_study(self) -> None:
        cfg = self._config.order_study
        sim = self._config.simulation
        steps = cfg.steps or sim.steps
        particles = cfg.particles or sim.particles
        if (steps, particles) == (sim.steps, sim.particles):
            ensemble = self._base_ensemble()
        else:
            ensemble = self._simulate(TimeGrid(sim.horizon, steps), particles, 0)

        spike = self._spike(self._config.spike.eps)
        study = order_study(
            self._model, ensemble, spike.t0, spike.beta, list(cfg.eps_grid), cfg.k, sim.workers
        )
        study.write(self._out, self._hash)

        slope_z = study.slopes["Z"]
        for q in QUANTITIES:
            fit = study.slopes[q]
            name = f"order.{q}"
            if fit.degenerate:
                self._report.add(CheckRecord(name, 0.0, 0.0, True, {"degenerate": True}))
                continue
            if q == "K":
                threshold = study.expected(q) + self._config.tolerances.slope_margin
                if not slope_z.degenerate:
                    threshold = max(threshold, slope_z.slope + DEFECT_EXCESS)
                self._report.add(CheckRecord(
                    name, fit.slope, threshold, fit.slope >= threshold, {"stderr": fit.stderr},
                ))
            else:
                self._report.add(within(
                    name, fit.slope - study.expected(q), SLOPE_BANDS[q] * cfg.k,
                    slope=fit.slope, expected=study.expected(q), stderr=fit.stderr,
                ))

    def _oracle_record(self, name: str, values: np.ndarray, discrete: np.ndarray, continuous: np.ndarray) -> None:
        """Relative gap to the exact recursion of the scheme; the gap to the ODE solution goes in details."""

        def gap(reference: np.ndarray) -> float:
            return float(np.max(np.abs(values - reference)) / max(1.0, float(np.max(np.abs(reference)))))

        self._report.add(within(
            name, gap(discrete), self._config.tolerances.discrete_oracle_rtol, ode_gap=gap(continuous),
        ))

    def _suite_adjoints(self) -> None:
        tol = self._config.tolerances
        base = self._base_ensemble()
        first, second = self._base_adjoints()
        knots = self._grid.knots

        if self._riccati is not None:
            self._oracle_record(
                "adjoints.second_oracle", second.P[:, :, 0, 0],
                discrete_second_order(self._riccati, knots), self._riccati.second_order(knots),
            )
        if self.at_optimum:
            reference = np.stack(
                [self._riccati.first_order(float(t), base.states[:, k], float(base.moments[k, 0]))
                 for k, t in enumerate(knots)],
                axis=1,
            )
            err = float(np.linalg.norm(first.p - reference) / max(np.linalg.norm(reference), 1e-300))
            self._report.add(within("adjoints.first_oracle", err, tol.oracle_rtol))

        pair = self._pair_adjoint()
        product = None
        if pair is not None:
            product = pair[2]
            if self._riccati is not None:
                self._oracle_record(
                    "adjoints.third_oracle", product.P[..., 0, 0],
                    discrete_pair_order(self._riccati, knots), self._riccati.pair_order(knots),
                )
            if self._config.third.variant == SYMMETRIZED:
                self._mirror_record()
        if self._config.output.dump_adjoints:
            write_adjoints(self._out, self._hash, first, second, product)

    def _duality_record(self, result: DualityResidual) -> CheckRecord:
        tol = self._config.tolerances
        bound = result.tolerance(tol.duality_sigmas, tol.duality_rel)
        passed = result.passes(tol.duality_sigmas, tol.duality_rel)
        return self._report.add(CheckRecord(f"duality.{result.name}", result.complete, bound, passed, result.to_dict()))

    def _suite_duality(self) -> None:
        base = self._base_ensemble()
        first, second = self._base_adjoints()
        spike = self._spike(self._config.spike.eps)
        bundle = build_bundle(self._model, base, spike, self._config.simulation.workers)
        pyy = check_duality_PYY(self._model, bundle, first, second)
        results = [
            check_duality_pY(self._model, bundle, first),
            check_duality_pZ(self._model, bundle, first),
            pyy,
        ]
        pair = self._pair_adjoint()
        pair_bundles = None
        if pair is not None:
            e1, e2, product = pair
            pair_bundles = (build_bundle(self._model, e1, spike), build_bundle(self._model, e2, spike))
            results.append(check_duality_third(self._model, *pair_bundles, product))

        rows = []
        for result in results:
            record = self._duality_record(result)
            rows.append([
                result.name, result.eps, result.lhs, result.rhs, result.residual, result.omitted,
                result.discretization, result.complete, result.paired_stderr, result.samples,
                record.tolerance, record.verdict,
            ])
        write_csv(self._out / "duality.csv", DUALITY_COLUMNS, rows, self._header())

        self._refinement_record(pyy, spike)
        if not moves_diffusion(self._model, base, spike):
            logger.info("Spike leaves the diffusion unchanged, skipping the dB ablation")
            return
        scaled = check_duality_PYY(self._model, bundle, first, second, db_scale=ABLATION_SCALE)
        change = abs(scaled.rhs - pyy.rhs)
        self._report.add(CheckRecord(
            "duality.ablation.PYY", change, pyy.paired_stderr, change > pyy.paired_stderr,
            {"db_scale": ABLATION_SCALE, "rhs": [pyy.rhs, scaled.rhs]},
        ))
        if pair_bundles is not None:
            product = pair[2]
            plain = results[-1]
            scaled = check_duality_third(self._model, *pair_bundles, product, db_scale=ABLATION_SCALE)
            change = abs(scaled.rhs - plain.rhs)
            self._report.add(CheckRecord(
                "duality.ablation.third", change, plain.paired_stderr, change <= plain.paired_stderr,
                {"db_scale": ABLATION_SCALE, "rhs": [plain.rhs, scaled.rhs]},
            ))

    def _refinement_record(self, coarse: DualityResidual, spike: SpikeVariation) -> None:
        """PYY again on a grid of half the step; its discretization part must shrink about twofold."""
        sim = self._config.simulation
        fine_grid = TimeGrid(sim.horizon, 2 * sim.steps)
        fine = self._simulate(fine_grid, sim.particles, 0)
        first, second = self._solve(fine)
        result = check_duality_PYY(self._model, build_bundle(self._model, fine, spike, sim.workers), first, second)
        ratio = coarse.discretization / result.discretization if result.discretization else float("nan")
        low, high = REFINEMENT_BAND
        self._report.add(CheckRecord(
            "duality.refinement", ratio, high, bool(low <= ratio <= high),
            {"band": [low, high], "steps": [sim.steps, fine_grid.steps],
             "discretization": [coarse.discretization, result.discretization]},
        ))

    def _suite_expansion(self) -> None:
        tol = self._config.tolerances
        base = self._base_ensemble()
        first, second = self._base_adjoints()
        results: list[ExpansionResult] = [
            check_expansion(self._model, build_bundle(self._model, base, self._spike(eps)), first, second)
            for eps in tol.eps_refinement
        ]
        write_csv(
            self._out / "expansion.csv", EXPANSION_COLUMNS,
            [
                [r.eps, r.lhs, r.rhs, r.residual, r.residual_over_eps, r.paired_stderr, r.identity_gap,
                 *(r.stages[s] for s in STAGES)]
                for r in results
            ],
            self._header(),
        )

        for r in results:
            scale = max(1.0, abs(r.stages["second_dualized"]))
            self._report.add(within(f"expansion.identity[{r.eps:g}]", r.identity_gap, tol.identity_atol * scale))

        ratios = [abs(r.residual_over_eps) for r in results]
        decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))
        self._report.add(CheckRecord(
            "expansion.refinement", ratios[-1], ratios[0], decreasing,
            {"eps": list(tol.eps_refinement), "residual_over_eps": ratios},
        ))
        # Informational: which residuals already sit inside the statistical band.
        inside = [
            abs(r.residual) <= tol.duality_sigmas * r.paired_stderr + tol.duality_rel * abs(r.lhs) for r in results
        ]
        self._report.add(CheckRecord(
            "expansion.resolved", float(sum(inside)), float(len(inside)), True,
            {"eps": list(tol.eps_refinement), "inside_noise_band": inside},
        ))
        if self.at_optimum:
            worst = min(r.lhs + tol.duality_sigmas * r.paired_stderr for r in results)
            self._report.add(CheckRecord(
                "expansion.optimality", worst, 0.0, worst >= 0.0, {"lhs": [r.lhs for r in results]},
            ))

    def _suite_maxprin(self) -> None:
        mp = self._config.maxprin
        first, second = self._base_adjoints()
        result = check_max_principle(
            self._model, self._base_ensemble(), first, second,
            u_points=mp.u_points, u_span=mp.u_span, relative=mp.relative,
            u_values=list(mp.u_values) or None, t_points=mp.t_points, tol=mp.tol,
        )
        result.write(self._out, self._hash)
        self._report.add(CheckRecord(
            "maxprin.min_v", result.min_value, -result.tol * result.scale, result.passed, result.to_dict(),
        ))
