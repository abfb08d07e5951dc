from __future__ import annotations

from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.stats import chisquare

import irs_seguro.baselines as baselines
from irs_seguro.baselines import (
    SCHEME_LABELS,
    SCHEME_SPECS,
    SCHEMES,
    SchemeError,
    SchemeSpec,
    parse_scheme,
    random_phases,
    run_scheme,
)
from irs_seguro.conic import solve
from irs_seguro.interior_point import OPTIMAL
from irs_seguro.optimizer import (
    CONVERGED,
    RANK_ONE_TOL,
    RUN_INFEASIBLE,
    RunRecord,
    initialize,
    mrt_directions,
)
from irs_seguro.perf_metrics import AUDIT_TOL, DesignSolution, audit, secrecy_rate
from irs_seguro.sca_builder import ProblemOptions, build_subproblem
from irs_seguro.sysconfig import SystemConfig, make_instance


def _solution(config: SystemConfig) -> DesignSolution:
    w = np.full((config.k_users, config.m_t), 0.1 + 0.0j)
    return DesignSolution(
        w=w,
        z_cov=np.zeros((config.m_t, config.m_t), dtype=complex),
        mode=np.ones(config.n_irs, dtype=int),
        theta=np.arange(config.n_irs) % config.phase_levels,
        phase_levels=config.phase_levels,
    )


def test_scheme_table_is_complete() -> None:
    assert len(SCHEMES) == 9
    assert set(SCHEME_LABELS) == set(SCHEMES)
    assert set(SCHEME_SPECS) == set(SCHEMES)
    assert SCHEME_SPECS["b1_no_irs_mrt"].label == SCHEME_LABELS["b1_no_irs_mrt"]


def test_parse_scheme() -> None:
    assert parse_scheme(" Proposed ") == "proposed"
    assert parse_scheme("UB2_NO_EVES") == "ub2_no_eves"
    with pytest.raises(SchemeError):
        parse_scheme("b9")


def test_random_phases_are_deterministic_and_uniform() -> None:
    config = SystemConfig()

    first = random_phases(config, seed=3)
    assert first.shape == (config.n_irs,)
    np.testing.assert_array_equal(first, random_phases(config, seed=3))

    draws = random_phases(config, seed=1, count=80_000)
    counts = np.bincount(draws, minlength=config.phase_levels)
    assert draws.min() >= 0 and draws.max() < config.phase_levels
    assert chisquare(counts).pvalue > 1e-4


def test_run_scheme_dispatches_and_scores_truth(monkeypatch: pytest.MonkeyPatch, tiny_config: SystemConfig) -> None:
    instance = make_instance(tiny_config, seed=5)
    calls = []

    def fake_run(estimate, config, seed, log):
        calls.append((estimate, seed))
        return RunRecord(status=CONVERGED, solution=_solution(config))

    monkeypatch.setitem(
        SCHEME_SPECS, "b4_random_phase", SchemeSpec("b4_random_phase", "fake", fake_run)
    )

    record = run_scheme("B4_random_phase", instance.estimate, instance.truth, tiny_config, 5)

    assert calls == [(instance.estimate, 5)]
    assert record.scheme == "b4_random_phase"
    expected = secrecy_rate(instance.truth, record.solution, tiny_config)
    assert (record.true_sum_rate, record.true_secrecy_rate) == pytest.approx(expected)


def test_run_scheme_without_solution_has_no_true_rates(
    monkeypatch: pytest.MonkeyPatch, tiny_config: SystemConfig
) -> None:
    instance = make_instance(tiny_config, seed=5)
    monkeypatch.setitem(
        SCHEME_SPECS,
        "proposed",
        SchemeSpec("proposed", "fake", lambda *args: RunRecord(status=RUN_INFEASIBLE, solution=None)),
    )

    record = run_scheme("proposed", instance.estimate, instance.truth, tiny_config)

    assert record.true_sum_rate is None
    with pytest.raises(SchemeError):
        run_scheme("nenhum", instance.estimate, None, tiny_config)


def test_variant_runners_adjust_inputs(monkeypatch: pytest.MonkeyPatch, tiny_config: SystemConfig) -> None:
    seen = {}

    def fake_run(estimate, config, seed=0, **kwargs):
        seen.clear()
        seen.update(kwargs, estimate=estimate)
        return RunRecord(status=CONVERGED, solution=None)

    monkeypatch.setattr(baselines, "run", fake_run)
    estimate = make_instance(tiny_config, seed=2).estimate

    baselines._run_ub1(estimate, tiny_config, 0, None)
    options = seen["options"]
    assert options.continuous_phases and not options.energy
    assert options.phase_levels == baselines.CONTINUOUS_LEVELS
    assert options.p_irs_w == 0.0

    baselines._run_ub2(estimate, tiny_config, 0, None)
    assert seen["estimate"].j_eves == 0

    baselines._run_b2(estimate, tiny_config, 0, None)
    assert seen["options"].fixed_directions.shape == (tiny_config.k_users, tiny_config.m_t)

    baselines._run_b3(estimate, tiny_config, 0, None)
    assert seen["estimate"].rho_g == 0.0
    assert seen["audit_estimate"] is estimate

    baselines._run_b5(estimate, tiny_config, 0, None)
    assert seen["options"].secrecy is False
    assert seen["audit_secrecy"] is True


def test_fixed_surface_schemes_choose_their_surface(
    monkeypatch: pytest.MonkeyPatch, tiny_config: SystemConfig
) -> None:
    seen = {}

    def fake_record(estimate, config, seed, mode, theta, **kwargs):
        seen.update(kwargs, mode=mode, theta=theta)
        return RunRecord(status=CONVERGED, solution=None)

    monkeypatch.setattr(baselines, "_fixed_surface_record", fake_record)
    config = replace(tiny_config, n_irs=4)
    estimate = make_instance(config, seed=2).estimate

    baselines._run_b1(estimate, config, 9, None)
    assert not seen["mode"].any()
    assert seen["fixed_directions"] is not None
    assert seen["p_irs_w"] == 0.0

    baselines._run_b4(estimate, config, 9, None)
    assert seen["mode"].all()
    np.testing.assert_array_equal(seen["theta"], random_phases(config, 9))
    assert seen["fixed_directions"] is None


@pytest.mark.slow
def test_no_irs_baseline_produces_audited_design(tiny_config: SystemConfig) -> None:
    instance = make_instance(tiny_config, seed=1)

    record = run_scheme("b1_no_irs_mrt", instance.estimate, instance.truth, tiny_config, 1)

    if record.status == RUN_INFEASIBLE:
        pytest.skip("instancia inviavel")
    assert record.solution is not None
    assert record.solution.n_reflect == 0
    assert record.audit is not None
    assert record.true_sum_rate is not None


def _fixed_surface_result(config: SystemConfig, objective: float = 1.0):
    # autovalores 4 e 1: razao de posto 0.25
    w_mat = np.stack([np.diag([4.0, 1.0] + [0.0] * (config.m_t - 2)).astype(complex)] * config.k_users)
    return SimpleNamespace(
        ok=True,
        w_mat=w_mat,
        z_mat=np.zeros((config.m_t, config.m_t), dtype=complex),
        objective_trace=[objective],
        solve_times=[0.01],
        solver_iterations=5,
        census={},
        status="optimal",
        message="",
    )


def test_fixed_surface_record_reports_rank_of_solved_beams(
    monkeypatch: pytest.MonkeyPatch, tiny_config: SystemConfig
) -> None:
    monkeypatch.setattr(
        baselines, "solve_fixed_surface", lambda *args, **kwargs: _fixed_surface_result(tiny_config)
    )
    monkeypatch.setattr(baselines, "audit_design", lambda *args, **kwargs: None)
    estimate = make_instance(tiny_config, seed=3).estimate

    record = baselines._run_b4(estimate, tiny_config, 3, None)

    np.testing.assert_allclose(record.rank_ratio, [0.25] * tiny_config.k_users)
    assert record.rank_ratio_max == pytest.approx(0.25)


def test_alternating_record_reports_rank_of_solved_beams(
    monkeypatch: pytest.MonkeyPatch, tiny_config: SystemConfig
) -> None:
    config = replace(tiny_config, algo=replace(tiny_config.algo, polish_iterations=0))
    monkeypatch.setattr(
        baselines, "solve_fixed_surface", lambda *args, **kwargs: _fixed_surface_result(config)
    )
    monkeypatch.setattr(baselines, "audit_design", lambda *args, **kwargs: None)
    estimate = make_instance(config, seed=3).estimate

    record = baselines.run_alternating(estimate, config, 3)

    assert record.status == CONVERGED
    np.testing.assert_allclose(record.rank_ratio, [0.25] * config.k_users)


def _subproblem_value(state, estimate, config, options) -> float | None:
    problem, handles = build_subproblem(state, estimate, config, options)
    sol = solve(problem)
    if sol.status != OPTIMAL:
        return None
    return float(sol.value(handles.rate_bound) - sol.value(handles.penalty))


@pytest.mark.slow
def test_scheme_relaxations_order_the_first_subproblem(tiny_config: SystemConfig) -> None:
    estimate = make_instance(tiny_config, seed=1).estimate
    options = ProblemOptions.from_config(tiny_config)
    start = initialize(estimate, tiny_config, options)

    proposed = _subproblem_value(start, estimate, tiny_config, options)
    no_eves = _subproblem_value(start, estimate.without_eves(), tiny_config, options)
    mrt = _subproblem_value(
        start,
        estimate,
        tiny_config,
        ProblemOptions.from_config(tiny_config, fixed_directions=mrt_directions(estimate)),
    )

    if proposed is None:
        pytest.skip("subproblema inicial sem solucao otima")
    tol = 1e-5 * max(1.0, abs(proposed))
    # sem C5 o conjunto viavel so cresce; direcoes MRT fixas so o restringem
    if no_eves is not None:
        assert no_eves >= proposed - tol
    if mrt is not None:
        assert proposed >= mrt - tol


def _robust_runs(config: SystemConfig, seed: int, schemes: tuple[str, ...]):
    instance = make_instance(config, seed)
    records = {
        scheme: run_scheme(scheme, instance.estimate, instance.truth, config, seed)
        for scheme in schemes
    }
    return instance.estimate, records


def _certified(record: RunRecord) -> bool:
    return (
        record.feasible
        and record.polish_status == OPTIMAL
        and record.rank_ratio_max <= RANK_ONE_TOL
    )


@pytest.mark.slow
def test_robust_design_passes_audit_where_non_robust_design_leaks(
    tiny_config: SystemConfig,
) -> None:
    config = replace(tiny_config, tau=1.0, ignore_c3=True)
    estimate, records = _robust_runs(config, 1, ("proposed", "b3_non_robust"))
    proposed, non_robust = records["proposed"], records["b3_non_robust"]

    if not (_certified(proposed) and _certified(non_robust)):
        pytest.skip("instancia inviavel ou polimento sem solucao")
    fresh = audit(proposed.solution, estimate, config, 2000, seed=99, check_energy=False)
    assert fresh.feasible, fresh.failures
    assert fresh.c1_ok

    nominal = audit(non_robust.solution, estimate, config, 1, check_energy=False)
    assert float(nominal.max_eve_capacity.max()) <= config.tau + 1e-4
    assert float(non_robust.audit.max_eve_capacity.max()) > float(nominal.max_eve_capacity.max())
    assert any(item.startswith("C5") for item in non_robust.audit.failures)
    assert non_robust.sum_rate == 0.0


@pytest.mark.slow
def test_robust_design_meets_energy_budget_on_fresh_samples(tiny_config: SystemConfig) -> None:
    estimate, records = _robust_runs(tiny_config, 2, ("proposed",))
    record = records["proposed"]

    if not _certified(record):
        pytest.skip("instancia inviavel ou polimento sem solucao")
    fresh = audit(record.solution, estimate, tiny_config, 2000, seed=7)
    assert fresh.c1_ok
    assert fresh.c3_margin_w >= -AUDIT_TOL
    assert fresh.feasible, fresh.failures


@pytest.mark.slow
def test_design_without_secrecy_violates_leakage_limit(tiny_config: SystemConfig) -> None:
    config = replace(tiny_config, tau=0.1, ignore_c3=True)
    _, records = _robust_runs(config, 1, ("b5_no_security",))
    record = records["b5_no_security"]

    if not record.feasible:
        pytest.skip("instancia inviavel")
    assert record.audit is not None
    assert float(record.audit.max_eve_capacity.max()) > config.tau
    assert any(item.startswith("C5") for item in record.audit.failures)
    assert not record.audit_feasible
