"""Command-line interface for corpus generation, attacks and reporting."""

import sys
from pathlib import Path

import typer
from loguru import logger

from simevade.config import settings
from simevade.core.asm_parser import parse_function
from simevade.core.cfg_builder import build_cfg, cfg_to_dot
from simevade.core.corpus import generate_corpus
from simevade.core.dominators import dominate_nodes
from simevade.core.emulator import execute, init_machine
from simevade.core.oracle import MODEL_NAMES, SimilarityOracle, get_oracle
from simevade.models.asm import Function
from simevade.models.attack import AttackConfig, AttackMode, CorrectionStrategy
from simevade.models.emulation import Fault, TraceStep
from simevade.models.report import CorpusSpec
from simevade.services.attack_service import AttackService
from simevade.services.metrics_service import (
    adversarial_pairs,
    build_summary,
    compute_metrics,
    run_ablation,
    transferability,
)
from simevade.services.storage_service import get_storage_service
from simevade.utils.exceptions import handle_cli_errors
from simevade.utils.validators import OutcomeValidator, PoolValidator, ReportValidator

app = typer.Typer(
    name="simevade",
    help="Adversarial instruction insertion against binary code similarity models.",
    no_args_is_help=True,
)


def setup_logging() -> None:
    """Configure application logging."""
    # Remove default logger
    logger.remove()

    logger.add(
        sys.stderr,
        format=settings.log_format,
        level=settings.log_level,
        colorize=True,
    )

    if settings.log_file is not None:
        logger.add(
            settings.log_file,
            format=settings.log_format,
            level=settings.log_level,
            rotation="50 MB",
            retention="10 days",
            compression="zip",
        )


@app.callback()
def _startup() -> None:
    setup_logging()


def _oracle(model: str | None) -> SimilarityOracle:
    name = (model or settings.model).lower()
    if name not in MODEL_NAMES:
        raise typer.BadParameter(f"model must be one of {', '.join(MODEL_NAMES)}")
    return get_oracle(
        name,
        walk_count=settings.walk_count,
        walk_length=settings.walk_length,
        walk_dim=settings.walk_dim,
        walk_seed=settings.walk_seed,
        opcode_weight=settings.opcode_weight,
    )


def _load_function(path: Path) -> Function:
    return parse_function(path.read_text(encoding="utf-8"))


@app.command("gen-corpus")
@handle_cli_errors
def gen_corpus(
    out: Path = typer.Option(..., "--out", help="Pool file to write (JSONL)"),
    count: int | None = typer.Option(None, "--count"),
    min_length: int | None = typer.Option(None, "--min-length"),
    max_length: int | None = typer.Option(None, "--max-length"),
    min_blocks: int | None = typer.Option(None, "--min-blocks"),
    max_blocks: int | None = typer.Option(None, "--max-blocks"),
    families: int | None = typer.Option(None, "--families"),
    seed: int | None = typer.Option(None, "--seed"),
) -> None:
    """Generate a deterministic synthetic function pool."""
    spec = CorpusSpec(
        count=count if count is not None else settings.corpus_count,
        min_length=min_length if min_length is not None else settings.corpus_min_length,
        max_length=max_length if max_length is not None else settings.corpus_max_length,
        min_blocks=min_blocks if min_blocks is not None else settings.corpus_min_blocks,
        max_blocks=max_blocks if max_blocks is not None else settings.corpus_max_blocks,
        families=families if families is not None else settings.corpus_families,
        seed=seed if seed is not None else settings.seed,
    )
    pool = generate_corpus(spec, max_steps=settings.max_steps)
    get_storage_service().save_pool(pool, out)


@app.command()
@handle_cli_errors
def attack(
    pool_path: Path = typer.Option(..., "--pool", exists=True, dir_okay=False),
    out: Path = typer.Option(..., "--out", help="Result file to write (JSONL)"),
    target: str = typer.Option("all", "--target", help="Pool id or 'all'"),
    model: str | None = typer.Option(None, "--model"),
    k: int | None = typer.Option(None, "--k"),
    epsilon: float | None = typer.Option(None, "--epsilon"),
    num: int | None = typer.Option(None, "--num"),
    inverse_m: int | None = typer.Option(None, "--inverse-m"),
    score_threshold: int | None = typer.Option(None, "--score-threshold"),
    seed: int | None = typer.Option(None, "--seed"),
    strategy: CorrectionStrategy | None = typer.Option(None, "--strategy"),
    mode: AttackMode = typer.Option(AttackMode.FULL, "--mode"),
    workers: int | None = typer.Option(None, "--workers"),
) -> None:
    """Attack one pool function or all of them."""
    storage = get_storage_service()
    pool = storage.load_pool(pool_path)
    config = AttackConfig.from_settings(
        settings,
        k=k,
        epsilon=epsilon,
        num_candidates=num,
        inverse_m=inverse_m,
        score_threshold=score_threshold,
        seed=seed,
        strategy=strategy,
    )
    PoolValidator.validate(pool, config.k)
    if target != "all" and target not in pool:
        raise typer.BadParameter(f"unknown pool id '{target}'", param_hint="--target")
    targets = None if target == "all" else [target]

    service = AttackService(_oracle(model), pool, config, workers or settings.workers)
    outcomes = service.attack_all(targets, mode, progress=len(pool) > 1)
    storage.write_outcomes(outcomes, out)


@app.command()
@handle_cli_errors
def metrics(
    pool_path: Path = typer.Option(..., "--pool", exists=True, dir_okay=False),
    results: Path = typer.Option(..., "--results", exists=True, dir_okay=False),
    out: Path = typer.Option(..., "--out", help="Summary JSON to write"),
    report_path: Path | None = typer.Option(
        None, "--report", help="Optional full report with per-function rows"
    ),
    model: str | None = typer.Option(
        None, "--model", help="Defaults to the model recorded in the results"
    ),
    k: int | None = typer.Option(None, "--k"),
    epsilon: float | None = typer.Option(None, "--epsilon"),
    seed: int | None = typer.Option(None, "--seed"),
) -> None:
    """Compute OA / AA / IIR / CR and re-verify every successful attack."""
    storage = get_storage_service()
    pool = storage.load_pool(pool_path)
    outcomes = storage.read_outcomes(results)
    if model is None and outcomes:
        model = outcomes[0].model
    oracle = _oracle(model)
    config = AttackConfig.from_settings(settings, k=k, epsilon=epsilon, seed=seed)

    for outcome in outcomes:
        OutcomeValidator.verify(outcome, pool, oracle, config)
    report = compute_metrics(
        outcomes, pool, oracle, config.k, settings.overhead_trials, config.max_steps
    )
    ReportValidator.verify(report)

    storage.write_json(build_summary(report, config), out)
    if report_path is not None:
        storage.write_json(report, report_path)


@app.command()
@handle_cli_errors
def transfer(
    pool_path: Path = typer.Option(..., "--pool", exists=True, dir_okay=False),
    results: list[str] = typer.Option(..., "--results", help="MODEL=PATH, repeatable"),
    out: Path = typer.Option(..., "--out", help="Transfer matrix JSON to write"),
    k: int | None = typer.Option(None, "--k"),
) -> None:
    """Cross-model recognition of each model's adversarial examples."""
    storage = get_storage_service()
    pool = storage.load_pool(pool_path)
    adv_sets = {}
    for item in results:
        name, sep, path = item.partition("=")
        if not sep or not path:
            raise typer.BadParameter(f"expected MODEL=PATH, got '{item}'", param_hint="--results")
        adv_sets[name.lower()] = adversarial_pairs(storage.read_outcomes(Path(path)), pool)
    if len(adv_sets) < 2:
        raise typer.BadParameter("give --results for at least two models")

    models = {name: _oracle(name) for name in adv_sets}
    matrix = transferability(adv_sets, models, pool, k or settings.top_k)
    storage.write_json(matrix, out)


@app.command()
@handle_cli_errors
def ablate(
    pool_path: Path = typer.Option(..., "--pool", exists=True, dir_okay=False),
    mode: AttackMode = typer.Option(..., "--mode"),
    out: Path = typer.Option(..., "--out", help="Summary JSON to write"),
    results: Path | None = typer.Option(None, "--results", help="Optional outcome file"),
    model: str | None = typer.Option(None, "--model"),
    k: int | None = typer.Option(None, "--k"),
    epsilon: float | None = typer.Option(None, "--epsilon"),
    seed: int | None = typer.Option(None, "--seed"),
    workers: int | None = typer.Option(None, "--workers"),
) -> None:
    """Corpus-wide attack with one pipeline stage replaced by random choice."""
    storage = get_storage_service()
    pool = storage.load_pool(pool_path)
    config = AttackConfig.from_settings(settings, k=k, epsilon=epsilon, seed=seed)
    PoolValidator.validate(pool, config.k)

    outcomes, report = run_ablation(
        mode, pool, _oracle(model), config, workers or settings.workers, settings.overhead_trials
    )
    ReportValidator.verify(report)
    if results is not None:
        storage.write_outcomes(outcomes, results)
    storage.write_json(build_summary(report, config), out)


@app.command()
@handle_cli_errors
def emulate(
    fn: Path = typer.Option(..., "--fn", exists=True, dir_okay=False),
    seed: int = typer.Option(0, "--seed"),
    trace: bool = typer.Option(False, "--trace", help="Print every executed step"),
    max_steps: int | None = typer.Option(None, "--max-steps"),
) -> None:
    """Run one function from a seeded machine state."""
    function = _load_function(fn)

    def echo_step(step: TraceStep) -> None:
        typer.echo(step.format())

    result = execute(
        function,
        init_machine(seed),
        max_steps or settings.max_steps,
        echo_step if trace else None,
    )
    if isinstance(result, Fault):
        typer.echo(f"fault {result.kind} at {result.at} after {result.state.step_count} steps")
        raise typer.Exit(code=1)
    typer.echo(f"halted after {result.steps} steps")
    for reg, value in result.state.regs.items():
        typer.echo(f"{reg.value:>4} = 0x{value:016x}")


@app.command()
@handle_cli_errors
def cfg(
    fn: Path = typer.Option(..., "--fn", exists=True, dir_okay=False),
    dot: bool = typer.Option(False, "--dot", help="Emit Graphviz DOT text"),
) -> None:
    """Show the basic blocks and dominate nodes of one function."""
    function = _load_function(fn)
    graph = build_cfg(function)
    if dot:
        typer.echo(cfg_to_dot(graph, function.name), nl=False)
        return
    dominators = dominate_nodes(graph)
    for block in graph.blocks:
        marks = []
        if block.id == graph.entry:
            marks.append("entry")
        if block.id in graph.exits:
            marks.append("exit")
        if block.id in dominators:
            marks.append("dominate")
        if block.id in graph.unreachable:
            marks.append("unreachable")
        label = block.entry_label or "-"
        typer.echo(f"B{block.id} [{block.start},{block.end}) {label} {' '.join(marks)}".rstrip())


def main() -> None:
    app()


if __name__ == "__main__":
    main()
