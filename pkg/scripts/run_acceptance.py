"""Script manual de aceitacao na escala de bancada (demorado, fora da suite de testes)."""

from dataclasses import replace
import sys

import numpy as np

from irs_seguro import Experiment, SystemConfig, aggregate, run_experiment, run_selftest, trial_row
from irs_seguro.optimizer import CONVERGED

TRIALS = 20
MONOTONE_SLACK = 1e-6


def _mean_by_scheme(rows, scheme, sweep_value=None):
    summary = aggregate([row for row in rows if row.scheme == scheme])
    for item in summary:
        if item.sweep_value == sweep_value:
            return item.mean_sum_rate
    raise KeyError((scheme, sweep_value))


def verificar_selftest() -> list[str]:
    results = run_selftest(["energia", "embedding", "solver", "s_procedure"], config=SystemConfig())
    return [f"{name}: {failure}" for name, failures in results.items() for failure in failures]


def verificar_sca(config: SystemConfig) -> list[str]:
    outcomes = run_experiment(Experiment(base_config=config, trials=TRIALS))
    records = [outcome.record for outcome in outcomes if outcome.record is not None]
    problems: list[str] = []
    converged = 0
    tight = 0
    for record in records:
        trace = np.asarray(record.merit_trace)
        if trace.size > 1 and np.any(np.diff(trace) < -MONOTONE_SLACK * np.maximum(1.0, np.abs(trace[1:]))):
            problems.append(f"merito decresce (status {record.status})")
        if record.status == CONVERGED:
            converged += 1
            if record.rank_ratio_max <= 1e-3:
                tight += 1
        if record.solution is not None and record.solution.total_power > config.p_max_w + 1e-9:
            problems.append("C1 violada apos a extracao de posto um")
    if converged < 0.9 * TRIALS:
        problems.append(f"convergencia em {converged}/{TRIALS} sementes")
    if converged and tight < 0.9 * converged:
        problems.append(f"posto um em {tight}/{converged} sementes convergidas")
    return problems


def verificar_ordem(config: SystemConfig) -> list[str]:
    schemes = ("proposed", "ub1_continuous_free_irs", "ub2_no_eves", "b1_no_irs_mrt", "b4_random_phase")
    outcomes = run_experiment(Experiment(base_config=config, schemes=schemes, trials=TRIALS))
    rows = [trial_row(outcome) for outcome in outcomes]
    proposed = _mean_by_scheme(rows, "proposed")
    problems: list[str] = []
    for upper in ("ub1_continuous_free_irs", "ub2_no_eves"):
        if _mean_by_scheme(rows, upper) < proposed:
            problems.append(f"{upper} abaixo do proposto")
    for lower in ("b1_no_irs_mrt", "b4_random_phase"):
        if _mean_by_scheme(rows, lower) > proposed:
            problems.append(f"{lower} acima do proposto")
    return problems


def verificar_tendencias(config: SystemConfig) -> list[str]:
    problems: list[str] = []
    for var, values, increasing in (("tau", (0.5, 1.5, 3.0), True), ("kappa2", (0.0, 0.05, 0.1), False)):
        outcomes = run_experiment(
            Experiment(base_config=config, trials=TRIALS, sweep_var=var, sweep_values=values)
        )
        rows = [trial_row(outcome) for outcome in outcomes]
        means = [_mean_by_scheme(rows, "proposed", value) for value in values]
        steps = np.diff(means)
        if (increasing and np.any(steps < 0.0)) or (not increasing and np.any(steps > 0.0)):
            problems.append(f"tendencia em {var} quebrada: {means}")
    return problems


def verificar_robustez(config: SystemConfig) -> list[str]:
    config = replace(config, kappa=float(np.sqrt(0.1)))
    outcomes = run_experiment(
        Experiment(base_config=config, schemes=("proposed", "b3_non_robust"), trials=TRIALS)
    )
    rows = [trial_row(outcome) for outcome in outcomes]
    b3_failures = sum(1 for row in rows if row.scheme == "b3_non_robust" and not row.audit_feasible)
    proposed_bad = sum(
        1
        for outcome in outcomes
        if outcome.spec.scheme == "proposed"
        and outcome.record is not None
        and outcome.record.status == CONVERGED
        and not outcome.record.audit_feasible
    )
    problems: list[str] = []
    if b3_failures < 1:
        problems.append("b3 aprovado na auditoria em todas as sementes")
    if proposed_bad:
        problems.append(f"proposto reprovado em {proposed_bad} sementes convergidas")
    return problems


def relatar_saturacao(config: SystemConfig) -> None:
    values = (4, 8, 12)
    outcomes = run_experiment(
        Experiment(base_config=config, trials=TRIALS, sweep_var="n_irs", sweep_values=values)
    )
    rows = [trial_row(outcome) for outcome in outcomes]
    means = [_mean_by_scheme(rows, "proposed", value) for value in values]
    gain_low, gain_high = means[1] - means[0], means[2] - means[1]
    status = "OK" if gain_low > gain_high else "AVISO"
    print(f"Saturacao em N: ganhos {gain_low:.4f} (4->8) e {gain_high:.4f} (8->12) [{status}]")


if __name__ == "__main__":
    base = SystemConfig()
    etapas = (
        ("selftest", lambda: verificar_selftest()),
        ("sca", lambda: verificar_sca(base)),
        ("ordem", lambda: verificar_ordem(base)),
        ("tendencias", lambda: verificar_tendencias(base)),
        ("robustez", lambda: verificar_robustez(base)),
    )
    falhas = 0
    for nome, etapa in etapas:
        problemas = etapa()
        print(f"{nome}: {'OK' if not problemas else 'FALHOU'}")
        for problema in problemas:
            print(f"  - {problema}")
        falhas += len(problemas)
    relatar_saturacao(base)
    sys.exit(1 if falhas else 0)
