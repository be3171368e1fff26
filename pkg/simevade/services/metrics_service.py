"""Metrics service: accuracy, insertion ratio, transferability and ablation."""

from collections.abc import Mapping, Sequence

import numpy as np
from loguru import logger

from simevade.core.emulator import DEFAULT_MAX_STEPS, executed_steps
from simevade.core.oracle import RankingInterface, SimilarityOracle
from simevade.models.asm import Function
from simevade.models.attack import AttackConfig, AttackMode, AttackOutcome
from simevade.models.oracle import FunctionPool
from simevade.models.report import FunctionRow, MetricsReport, SummaryReport, TransferMatrix
from simevade.services.attack_service import AttackService
from simevade.utils.exceptions import UnknownGroundTruthError
from simevade.utils.hashing import MASK64

AdversarialPair = tuple[Function, Function]


def percentage(part: float, whole: float) -> float:
    """100 * part / whole to 2 decimals; 0 for an empty whole."""
    if whole == 0:
        return 0.0
    return round(100.0 * part / whole, 2)


def compute_cr(oa: float, aa: float, iir: float) -> float:
    """(OA - AA) / IIR, unrounded so that cr * iir == oa - aa; 0 when IIR is 0."""
    if iir == 0.0:
        return 0.0
    return (oa - aa) / iir


def dynamic_overhead(
    original: Function,
    adversarial: Function,
    trials: int,
    seed: int = 0,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> float:
    """Mean extra emulated steps of adversarial over original, in percent."""
    ratios = []
    for t in range(trials):
        trial_seed = (seed ^ t) & MASK64
        base = executed_steps(original, trial_seed, max_steps)
        extra = executed_steps(adversarial, trial_seed, max_steps) - base
        ratios.append(extra / base if base else 0.0)
    return 100.0 * float(np.mean(ratios)) if ratios else 0.0


def compute_metrics(
    outcomes: Sequence[AttackOutcome],
    pool: FunctionPool,
    oracle: RankingInterface,
    k: int,
    overhead_trials: int = 10,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> MetricsReport:
    """OA over originals, AA over adversarial examples (failures count as recognised)."""
    recognised_before = 0
    recognised_after = 0
    total_length = 0
    total_inserted = 0
    overheads: list[float] = []
    rows: list[FunctionRow] = []

    for outcome in outcomes:
        if outcome.function_id not in pool:
            raise UnknownGroundTruthError(outcome.function_id)
        original = pool[outcome.function_id]
        rank_before = oracle.gt_rank(original, pool, outcome.function_id)
        recognised_before += rank_before <= k

        inserted = 0
        rank_after = rank_before
        if outcome.succeeded:
            assert outcome.adversarial is not None
            rank_after = oracle.gt_rank(outcome.adversarial, pool, outcome.function_id)
            inserted = len(outcome.adversarial) - len(original)
            if overhead_trials > 0:
                overheads.append(
                    dynamic_overhead(
                        original, outcome.adversarial, overhead_trials, outcome.seed, max_steps
                    )
                )
        recognised_after += (not outcome.succeeded) or rank_after <= k

        total_length += len(original)
        total_inserted += inserted
        rows.append(
            FunctionRow(
                function_id=outcome.function_id,
                status=outcome.status,
                length=len(original),
                gt_rank_before=rank_before,
                gt_rank_after=rank_after,
                inserted=inserted,
                queries=outcome.oracle_queries,
            )
        )

    n = len(rows)
    oa = percentage(recognised_before, n)
    aa = percentage(recognised_after, n)
    iir = percentage(total_inserted, total_length)
    report = MetricsReport(
        model=outcomes[0].model if outcomes else "",
        k=k,
        oa=oa,
        aa=aa,
        iir=iir,
        cr=compute_cr(oa, aa, iir),
        dynamic_overhead=round(float(np.mean(overheads)), 2) if overheads else 0.0,
        n_functions=n,
        per_function=rows,
    )
    logger.info(
        f"[{report.model}] OA {report.oa:.2f} AA {report.aa:.2f} "
        f"IIR {report.iir:.2f} CR {report.cr:.2f} over {n} functions"
    )
    return report


def adversarial_pairs(
    outcomes: Sequence[AttackOutcome], pool: FunctionPool
) -> list[AdversarialPair]:
    """(original, adversarial) for every successful outcome."""
    return [
        (pool[outcome.function_id], outcome.adversarial)
        for outcome in outcomes
        if outcome.succeeded and outcome.adversarial is not None
    ]


def transferability(
    adv_sets: Mapping[str, Sequence[AdversarialPair]],
    models: Mapping[str, RankingInterface],
    pool: FunctionPool,
    k: int,
) -> TransferMatrix:
    """cells[a][b]: % of a's adversarial examples whose ground truth b still ranks in top-k."""
    if len(models) < 2:
        raise ValueError("transferability needs at least two models")
    names = sorted(models)
    cells: dict[str, dict[str, float]] = {}
    examples: dict[str, int] = {}

    for source in names:
        pairs = adv_sets.get(source, [])
        examples[source] = len(pairs)
        row: dict[str, float] = {}
        for target in names:
            recognised = 0
            for original, adversarial in pairs:
                gt = pool.find_id(original)
                if gt is None:
                    raise UnknownGroundTruthError(original.name)
                recognised += models[target].gt_rank(adversarial, pool, gt) <= k
            row[target] = percentage(recognised, len(pairs))
        cells[source] = row
        logger.info(f"transfer from {source}: {row}")

    return TransferMatrix(models=names, k=k, cells=cells, examples=examples)


def run_ablation(
    mode: AttackMode,
    corpus: FunctionPool,
    oracle: SimilarityOracle,
    config: AttackConfig,
    workers: int = 1,
    overhead_trials: int = 0,
) -> tuple[list[AttackOutcome], MetricsReport]:
    """Corpus-wide attack in one mode, with its metrics."""
    logger.info(f"Ablation run: {mode}")
    outcomes = AttackService(oracle, corpus, config, workers).attack_all(mode=mode)
    report = compute_metrics(
        outcomes, corpus, oracle, config.k, overhead_trials, config.max_steps
    )
    return outcomes, report


def build_summary(report: MetricsReport, config: AttackConfig) -> SummaryReport:
    return SummaryReport(
        model=report.model,
        k=report.k,
        epsilon=config.epsilon,
        oa=report.oa,
        aa=report.aa,
        iir=report.iir,
        cr=report.cr,
        dynamic_overhead=report.dynamic_overhead,
        n_functions=report.n_functions,
        seed=config.seed,
    )
