"""Black-box instruction-insertion attack on a similarity model.

Candidates are mined from the pool functions least similar to the
target, scored by how far N inserted copies push the ground truth down
the ranking, then inserted one at a time (with correction) at random
dominate-node positions until the ground truth leaves the top-k.
"""

from collections.abc import Iterable

import numpy as np
from loguru import logger

from simevade.core.cfg_builder import build_cfg, cfg_isomorphic
from simevade.core.corpus import random_instruction
from simevade.core.corrector import (
    ZoneCursor,
    apply_correction,
    correction_for,
    insert_raw,
    is_correctable,
)
from simevade.core.dominators import all_positions, vulnerable_candidates
from simevade.core.emulator import check_equivalence
from simevade.core.oracle import RankingInterface, SimilarityOracle, length_similarity
from simevade.models.asm import Function, Instruction, Origin
from simevade.models.attack import (
    AttackConfig,
    AttackMode,
    AttackOutcome,
    AttackStatus,
    CandidateInstruction,
)
from simevade.models.cfg import VulnerableCandidates
from simevade.models.oracle import FunctionId, FunctionPool
from simevade.utils.exceptions import (
    EmptyCandidatesError,
    NoCandidatesError,
    NoExitError,
    UnknownGroundTruthError,
)

RANDOM_SOURCE = "random"
_SIMILARITY_SLACK = 1e-9


def filter_control_transfer(instructions: Iterable[Instruction]) -> list[Instruction]:
    """Drop jumps, calls, ret, syscall and int; order preserved."""
    return [i for i in instructions if not (i.is_control_transfer or i.is_exception)]


def score_adversarial_instruction(
    function: Function,
    vul_index: int,
    candidate: Instruction,
    oracle: RankingInterface,
    pool: FunctionPool,
    config: AttackConfig,
    gt_id: FunctionId | None = None,
    base_rank: int | None = None,
) -> int:
    """Rank shift of the ground truth after N uncorrected copies of candidate.

    The probe is only ever submitted to the oracle, never executed.
    """
    gt = gt_id if gt_id is not None else _ground_truth(function, pool)
    copies = (candidate.with_origin(Origin.ADVERSARIAL),) * config.copy_count(len(function))
    probe = insert_raw(function, vul_index, copies)
    before = base_rank if base_rank is not None else oracle.gt_rank(function, pool, gt)
    return oracle.gt_rank(probe, pool, gt) - before


def mine_candidates(
    function: Function,
    oracle: RankingInterface,
    pool: FunctionPool,
    config: AttackConfig,
    gt_id: FunctionId | None = None,
    rng: np.random.Generator | None = None,
    positions: VulnerableCandidates | None = None,
    base_rank: int | None = None,
) -> list[CandidateInstruction]:
    """Adversarial instructions from the least similar pool functions.

    Every instruction is probed at one vulnerable position drawn once per
    call; instructions are scored once each, keyed by (opcode, operands).
    """
    gt = gt_id if gt_id is not None else _ground_truth(function, pool)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if positions is None:
        positions = vulnerable_candidates(function, build_cfg(function))
    probe_index = positions.indices[int(rng.integers(len(positions)))]
    if base_rank is None:
        base_rank = oracle.gt_rank(function, pool, gt)

    m = min(config.inverse_m, len(pool) - 1)
    if m < 1:
        raise NoCandidatesError(function=function.name)
    inverses = [i for i in oracle.rank_least(function, pool, m + 1).ids if i != gt][:m]

    threshold = config.effective_threshold
    seen: set[object] = set()
    candidates: list[CandidateInstruction] = []
    for source_id in inverses:
        source = pool[source_id]
        try:
            source_positions = vulnerable_candidates(source, build_cfg(source))
        except (NoExitError, EmptyCandidatesError) as exc:
            logger.warning(f"Skipping inverse function {source_id}: {exc.message}")
            continue
        pool_instructions = [source.instructions[i] for i in source_positions.indices]
        for instruction in filter_control_transfer(pool_instructions):
            if instruction.key in seen:
                continue
            seen.add(instruction.key)
            if not is_correctable(instruction):
                continue
            score = score_adversarial_instruction(
                function, probe_index, instruction, oracle, pool, config, gt, base_rank
            )
            if score > threshold:
                candidates.append(
                    CandidateInstruction(
                        instruction=instruction,
                        score=score,
                        source_function=source_id,
                    )
                )
                if len(candidates) >= config.num_candidates:
                    break
        logger.debug(
            f"{function.name}: {len(candidates)} candidates after inverse {source_id}"
        )
        if len(candidates) >= config.num_candidates:
            break

    if not candidates:
        raise NoCandidatesError(function=function.name)
    return candidates


def random_candidates(
    rng: np.random.Generator, config: AttackConfig
) -> list[CandidateInstruction]:
    """Unscored correctable instructions drawn uniformly (ablation mode)."""
    candidates: list[CandidateInstruction] = []
    seen: set[object] = set()
    while len(candidates) < config.num_candidates:
        instruction = random_instruction(rng)
        if instruction.key in seen or not is_correctable(instruction):
            continue
        seen.add(instruction.key)
        candidates.append(
            CandidateInstruction(
                instruction=instruction,
                score=config.effective_threshold + 1,
                source_function=RANDOM_SOURCE,
            )
        )
    return candidates


def _ground_truth(function: Function, pool: FunctionPool) -> FunctionId:
    gt = pool.find_id(function)
    if gt is None:
        raise UnknownGroundTruthError(function.name)
    return gt


def run_attack(
    function: Function,
    oracle: SimilarityOracle,
    pool: FunctionPool,
    config: AttackConfig,
    gt_id: FunctionId | None = None,
    mode: AttackMode = AttackMode.FULL,
) -> AttackOutcome:
    """Insert corrected adversarial instructions until gt leaves the top-k."""
    gt = gt_id if gt_id is not None else _ground_truth(function, pool)
    if gt not in pool:
        raise UnknownGroundTruthError(gt)
    session = oracle.session()
    rng = np.random.default_rng(config.seed)
    length = len(function)
    cfg = build_cfg(function)
    if mode is AttackMode.RANDOM_POSITIONS:
        positions = all_positions(function, cfg)
    else:
        positions = vulnerable_candidates(function, cfg)

    rank_before = session.gt_rank(function, pool, gt)

    def finish(
        status: AttackStatus,
        adversarial: Function | None = None,
        inserted: int = 0,
        iterations: int = 0,
        final_rank: int = rank_before,
    ) -> AttackOutcome:
        outcome = AttackOutcome(
            function_id=gt,
            model=oracle.model_id,
            mode=mode,
            status=status,
            adversarial=adversarial,
            original_length=length,
            inserted_instruction_count=inserted,
            iterations=iterations,
            oracle_queries=session.query_count,
            gt_rank_before=rank_before,
            final_gt_rank=final_rank,
            seed=config.seed,
        )
        logger.info(
            f"{gt} [{oracle.model_id}] {status}: rank {rank_before} -> {final_rank}, "
            f"+{inserted} instructions, {session.query_count} queries"
        )
        return outcome

    if mode is AttackMode.RANDOM_INSTRUCTIONS:
        candidates = random_candidates(rng, config)
    else:
        try:
            candidates = mine_candidates(
                function, session, pool, config, gt, rng, positions, rank_before
            )
        except NoCandidatesError:
            return finish(AttackStatus.NO_CANDIDATES)

    cursor = ZoneCursor(config.zone_cursor_stride)
    # Plan length does not depend on the zone offset.
    costs = [len(correction_for(c.instruction, config.strategy, 64)) for c in candidates]
    budget = config.max_insertions(length)
    max_iterations = config.max_iterations(length)
    # Current index of every original insertion point.
    tracked = list(positions.indices)

    current = function
    inserted = 0
    iterations = 0
    rank = rank_before
    while rank <= config.k:
        remaining = budget - inserted
        affordable = [i for i, cost in enumerate(costs) if cost <= remaining]
        if not affordable or iterations >= max_iterations:
            return finish(AttackStatus.BUDGET_EXCEEDED, None, inserted, iterations, rank)
        iterations += 1
        slot = int(rng.integers(len(tracked)))
        choice = affordable[int(rng.integers(len(affordable)))]
        at = tracked[slot]
        plan = correction_for(
            candidates[choice].instruction, config.strategy, cursor.next_offset()
        )
        current = apply_correction(current, at, plan)
        tracked = [t + len(plan) if t > at else t for t in tracked]
        inserted += len(plan)
        rank = session.gt_rank(current, pool, gt)
        logger.debug(
            f"{gt}: iteration {iterations} inserted {len(plan)} after {at}, gt rank {rank}"
        )

    if length_similarity(function, current) < config.epsilon - _SIMILARITY_SLACK:
        return finish(AttackStatus.SIMILARITY_VIOLATED, current, inserted, iterations, rank)
    if not cfg_isomorphic(cfg, build_cfg(current)):
        logger.warning(f"{gt}: adversarial CFG differs from the original")
        return finish(AttackStatus.EQUIVALENCE_FAILED, current, inserted, iterations, rank)
    verdict = check_equivalence(
        function, current, config.equivalence_trials, config.seed, config.max_steps
    )
    if not verdict.equivalent:
        logger.warning(f"{gt}: not equivalent ({verdict.first_divergence})")
        return finish(AttackStatus.EQUIVALENCE_FAILED, current, inserted, iterations, rank)
    return finish(AttackStatus.SUCCESS, current, inserted, iterations, rank)
