import argparse
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
import sys
import time
from typing import Sequence

from irs_seguro import (
    SCHEME_LABELS,
    SCHEMES,
    ConfigError,
    Experiment,
    ExperimentError,
    SchemeError,
    SystemConfig,
    aggregate,
    load_config,
    load_solution,
    make_instance,
    parse_sweep,
    run_experiment,
    run_selftest,
    save_solution,
    secrecy_rate,
    trial_row,
    write_summary_xlsx,
    write_trace_csv,
    write_trial_csv,
)
from irs_seguro.baselines import parse_scheme
from irs_seguro.harness import (
    DEFAULT_TRIALS,
    SELFTEST_SUITES,
    TrialSpec,
    experiment_metadata,
    run_trial,
    trace_rows,
)
from irs_seguro.optimizer import audit_design
from irs_seguro.storage import SolutionFileError

_LOCAL_TZ = datetime.now().astimezone().tzinfo or timezone.utc
_DEFAULT_SWEEP_OUT = Path("resultados") / "sweep.csv"
_EXIT_USAGE = 2
_EXIT_INTERRUPTED = 130


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _now_local() -> datetime:
    return datetime.now(_LOCAL_TZ)


def _log(message: str) -> None:
    timestamp = _now_local().strftime("%H:%M:%S")
    print(f"[{timestamp}] {message}", flush=True)


def _log_stage(step: int, total: int, message: str) -> None:
    _log(f"Etapa {step}/{total} - {message}")


def _format_duration(seconds: float) -> str:
    total_seconds = int(round(seconds))
    minutes, remainder = divmod(total_seconds, 60)
    return f"{minutes:02d}:{remainder:02d}"


def _error_detail(label: str, exc: Exception) -> str:
    message = " ".join(str(exc).split())
    if message:
        return f"{label}: {exc.__class__.__name__} {message}"
    return f"{label}: {exc.__class__.__name__}"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="arquivo `chave = valor`")
    parser.add_argument("--seed", type=int, default=None, help="semente (seed0 na varredura)")
    parser.add_argument(
        "--ignore-c3",
        action="store_true",
        help="remove a restricao de autossustentabilidade em todos os esquemas",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="irs-seguro", description="Simulador IRS seguro e autossustentavel")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = sub.add_parser("solve", help="resolve uma instancia")
    _add_common(solve)
    solve.add_argument("--scheme", default="proposed", help=f"um de: {', '.join(SCHEMES)}")
    solve.add_argument("--out", type=Path, help="grava a linha CSV do trial")
    solve.add_argument("--trace", type=Path, help="grava o historico por iteracao")
    solve.add_argument("--save", type=Path, help="grava a solucao em JSON para `audit`")

    sweep = sub.add_parser("sweep", help="executa uma varredura Monte Carlo")
    _add_common(sweep)
    sweep.add_argument("--trials", type=int, default=None)
    sweep.add_argument("--scheme", action="append", dest="schemes", help="repetivel")
    sweep.add_argument("--sweep", help="VAR=v1,v2,... com VAR em d, n_irs, tau, kappa2, p_max")
    sweep.add_argument("--out", type=Path, default=_DEFAULT_SWEEP_OUT)
    sweep.add_argument("--trace", type=Path)
    sweep.add_argument("--xlsx", type=Path, help="resumo agregado em planilha")
    sweep.add_argument("--threads", type=int, default=None)

    audit = sub.add_parser("audit", help="reaudita uma solucao salva")
    _add_common(audit)
    audit.add_argument("--solution", type=Path, required=True)
    audit.add_argument("--samples", type=int, default=None)

    selftest = sub.add_parser("selftest", help="roda as suites de verificacao")
    selftest.add_argument("--suite", action="append", dest="suites", help="repetivel")
    selftest.add_argument("--samples", type=int, default=10_000)
    selftest.add_argument("--seed", type=int, default=0)
    return parser


def _load_system_config(args: argparse.Namespace) -> SystemConfig:
    config = load_config(args.config) if args.config else SystemConfig()
    if args.ignore_c3:
        config = replace(config, ignore_c3=True)
        _log("Aviso: restricao C3 desativada (--ignore-c3).")
    return config


def _run_solve(args: argparse.Namespace) -> int:
    total_steps = 3
    _log_stage(1, total_steps, "Carregando configuracao.")
    config = _load_system_config(args)
    seed = args.seed if args.seed is not None else 0
    scheme = parse_scheme(args.scheme)
    experiment = Experiment(base_config=config, schemes=(scheme,), trials=1, seed0=seed)
    experiment.validate()

    _log_stage(2, total_steps, f"Resolvendo {SCHEME_LABELS[scheme]} (semente {seed}).")
    spec = TrialSpec(
        trial=0, seed=seed, scheme=scheme, sweep_var="", sweep_value=None, config=config
    )
    outcome = run_trial(spec, log=_log)
    row = trial_row(outcome)
    record = outcome.record
    if outcome.error:
        _log(f"Trial penalizado: {outcome.error}")
    elif record is not None:
        _log(f"Status: {record.status}; {record.stop_reason or 'sem observacoes'}")
        _log(
            f"Soma das taxas: {row.sum_rate_bps_hz:.4f} bps/Hz; "
            f"sigilo: {row.secrecy_rate_bps_hz:.4f} bps/Hz; "
            f"auditoria {'OK' if row.audit_feasible else 'reprovada'}"
        )
        if record.audit is not None:
            for failure in record.audit.failures:
                _log(f"- {failure}")
        if record.true_sum_rate is not None:
            _log(f"Canal verdadeiro: soma {record.true_sum_rate:.4f} bps/Hz")
        _log(
            f"Iteracoes: {row.iterations}; iteracoes do solver: {record.solver_iterations}; "
            f"elementos refletindo: {row.n_reflect}; razao de posto max: {row.rank_ratio_max:.2e}"
        )

    _log_stage(3, total_steps, "Gravando resultados.")
    if args.out:
        write_trial_csv(args.out, [row], metadata=experiment_metadata(experiment), config=config)
        _log(f"CSV: {args.out}")
    if args.trace:
        write_trace_csv(args.trace, trace_rows(outcome))
        _log(f"Historico: {args.trace}")
    if args.save:
        if record is None or record.solution is None:
            _log("Sem solucao para gravar.")
        else:
            save_solution(args.save, record.solution, seed=seed, scheme=scheme)
            _log(f"Solucao: {args.save}")
    return 0


def _run_sweep(args: argparse.Namespace) -> int:
    total_steps = 4
    _log_stage(1, total_steps, "Carregando configuracao.")
    config = _load_system_config(args)
    sweep_var, sweep_values = (None, ())
    if args.sweep:
        sweep_var, sweep_values = parse_sweep(args.sweep)
    experiment = Experiment(
        base_config=config,
        schemes=tuple(args.schemes or ("proposed",)),
        trials=args.trials if args.trials is not None else DEFAULT_TRIALS,
        seed0=args.seed if args.seed is not None else 0,
        sweep_var=sweep_var,
        sweep_values=sweep_values,
    )
    experiment.validate()
    for line in experiment_metadata(experiment):
        _log(line)

    _log_stage(2, total_steps, "Executando trials.")
    outcomes = run_experiment(experiment, threads=args.threads, log=_log)
    failures = [outcome for outcome in outcomes if outcome.error]
    if failures:
        _log(f"Trials com erro (penalizados): {len(failures)}")

    _log_stage(3, total_steps, "Gravando CSV.")
    rows = [trial_row(outcome) for outcome in outcomes]
    write_trial_csv(args.out, rows, metadata=experiment_metadata(experiment), config=config)
    _log(f"CSV: {args.out} ({len(rows)} linhas)")
    if args.trace:
        write_trace_csv(args.trace, [item for outcome in outcomes for item in trace_rows(outcome)])
        _log(f"Historico: {args.trace}")

    _log_stage(4, total_steps, "Resumo agregado.")
    summary = aggregate(rows)
    for item in summary:
        point = f"{item.sweep_var}={item.sweep_value:g} " if item.sweep_value is not None else ""
        _log(
            f"{item.scheme} {point}: soma {item.mean_sum_rate:.4f} +/- {item.ci_sum_rate:.4f}, "
            f"sigilo {item.mean_secrecy_rate:.4f} +/- {item.ci_secrecy_rate:.4f} "
            f"({item.failures}/{item.trials} falhas)"
        )
    if args.xlsx:
        write_summary_xlsx(args.xlsx, summary)
        _log(f"Planilha: {args.xlsx}")
    return 0


def _run_audit(args: argparse.Namespace) -> int:
    config = _load_system_config(args)
    if args.samples is not None:
        config = replace(config, algo=replace(config.algo, adversary_samples=args.samples))
        config.validate()
    solution, saved_seed, scheme = load_solution(args.solution)
    seed = args.seed if args.seed is not None else saved_seed
    instance = make_instance(config, seed)
    if solution.w.shape != (config.k_users, config.m_t) or solution.mode.size != config.n_irs:
        raise ConfigError("solucao incompativel com a configuracao (dimensoes)")
    _log(f"Auditando solucao de {scheme or 'esquema desconhecido'} (semente {seed}).")
    report = audit_design(solution, instance.estimate, config, seed)
    true_sum, true_secrecy = secrecy_rate(instance.truth, solution, config)
    _log(
        f"Pior caso: soma {report.worst_sum_rate:.4f} bps/Hz, sigilo {report.worst_secrecy_rate:.4f} "
        f"bps/Hz ({report.samples_used} amostras)"
    )
    _log(f"Canal verdadeiro: soma {true_sum:.4f} bps/Hz, sigilo {true_secrecy:.4f} bps/Hz")
    _log(f"Auditoria: {'OK' if report.feasible else 'reprovada'}")
    for failure in report.failures:
        _log(f"- {failure}")
    return 0


def _run_selftest(args: argparse.Namespace) -> int:
    suites = args.suites or list(SELFTEST_SUITES)
    results = run_selftest(suites, seed=args.seed, samples=args.samples, log=_log)
    failed = [name for name, failures in results.items() if failures]
    if failed:
        _log(f"Selftest com falhas: {', '.join(failed)}")
        return 1
    _log(f"Selftest OK ({len(results)} suites).")
    return 0


_COMMANDS = {
    "solve": _run_solve,
    "sweep": _run_sweep,
    "audit": _run_audit,
    "selftest": _run_selftest,
}


def cli_main(argv: Sequence[str] | None = None) -> int:
    process_start = time.monotonic()
    try:
        args = _build_parser().parse_args(list(argv) if argv is not None else None)
    except UsageError as exc:
        print(f"erro: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    try:
        code = _COMMANDS[args.command](args)
        duration = _format_duration(time.monotonic() - process_start)
        _log(f"Processo finalizado em {duration} (minutos:segundos).")
        return code
    except KeyboardInterrupt:
        _log("Execucao interrompida pelo usuario (Ctrl+C).")
        duration = _format_duration(time.monotonic() - process_start)
        _log(f"Processo interrompido em {duration} (minutos:segundos).")
        return _EXIT_INTERRUPTED
    except (ConfigError, ExperimentError, SchemeError, SolutionFileError, FileNotFoundError) as exc:
        _log(f"ERRO: {_error_detail('Parametros invalidos', exc)}")
        return _EXIT_USAGE
    except Exception as exc:
        detail = _error_detail("Erro inesperado", exc)
        _log(f"ERRO: {detail}")
        duration = _format_duration(time.monotonic() - process_start)
        _log(f"Processo abortado em {duration} (minutos:segundos).")
        return 1


def main() -> int:
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    raise SystemExit(main())
