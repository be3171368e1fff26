"""Test candidate mining and the insertion attack loop."""

import numpy as np
import pytest

from simevade.core.asm_parser import parse_function, render_instruction
from simevade.core.attacker import (
    RANDOM_SOURCE,
    filter_control_transfer,
    mine_candidates,
    random_candidates,
    run_attack,
    score_adversarial_instruction,
)
from simevade.core.cfg_builder import build_cfg, cfg_isomorphic
from simevade.core.corpus import generate_corpus
from simevade.core.emulator import check_equivalence
from simevade.core.oracle import BagOfOpcodesModel, SimilarityOracle
from simevade.models.asm import Function, Opcode
from simevade.models.attack import AttackConfig, AttackMode, AttackStatus
from simevade.models.oracle import FunctionPool
from simevade.models.report import CorpusSpec
from simevade.utils.exceptions import NoCandidatesError, UnknownGroundTruthError

from .conftest import NEIGHBOUR_TEXT, TARGET_TEXT


@pytest.fixture
def near_pool() -> FunctionPool:
    return FunctionPool(
        entries={
            "target": parse_function(TARGET_TEXT),
            "neighbour": parse_function(NEIGHBOUR_TEXT),
        }
    )


@pytest.fixture
def near_config() -> AttackConfig:
    """Any score above zero is kept; a budget of two spill plans."""
    return AttackConfig(
        k=1,
        epsilon=0.5,
        score_threshold=0,
        probe_copy_factor=0.5,
        equivalence_trials=10,
        seed=3,
    )


def _check_outcome_invariants(
    outcome, function: Function, config: AttackConfig
) -> None:
    assert outcome.oracle_queries >= 1
    if outcome.status is AttackStatus.SUCCESS:
        adversarial = outcome.adversarial
        assert outcome.final_gt_rank > config.k
        assert outcome.similarity >= config.epsilon
        assert cfg_isomorphic(build_cfg(function), build_cfg(adversarial))
        assert check_equivalence(function, adversarial, trials=5, seed=99).equivalent


def test_filter_control_transfer(branchy_function: Function):
    kept = filter_control_transfer(branchy_function.instructions)
    assert [render_instruction(i) for i in kept] == [
        "cmp rdi, 0",
        "cmp rsi, 0",
        "mov rax, 1",
        "cmp rax, 2",
        "mov rax, 3",
        "mov rax, 4",
    ]


def test_score_measures_rank_shift(near_pool: FunctionPool, near_config: AttackConfig):
    oracle = BagOfOpcodesModel()
    target = near_pool["target"]
    imul = near_pool["neighbour"].instructions[19]
    add = target.instructions[1]
    assert score_adversarial_instruction(target, 0, imul, oracle, near_pool, near_config) == 1
    assert score_adversarial_instruction(target, 0, add, oracle, near_pool, near_config) == 0


def test_score_with_known_base_rank_costs_one_query(
    near_pool: FunctionPool, near_config: AttackConfig
):
    oracle = BagOfOpcodesModel()
    target = near_pool["target"]
    imul = near_pool["neighbour"].instructions[19]
    score_adversarial_instruction(
        target, 3, imul, oracle, near_pool, near_config, "target", base_rank=1
    )
    assert oracle.query_count == 1


def test_mine_candidates(near_pool: FunctionPool, near_config: AttackConfig):
    candidates = mine_candidates(near_pool["target"], BagOfOpcodesModel(), near_pool, near_config)
    assert [render_instruction(c.instruction) for c in candidates] == ["imul rax, 3"]
    assert candidates[0].score == 1
    assert candidates[0].source_function == "neighbour"


def test_threshold_defaults_to_k(near_pool: FunctionPool, near_config: AttackConfig):
    config = near_config.model_copy(update={"score_threshold": None})
    with pytest.raises(NoCandidatesError):
        mine_candidates(near_pool["target"], BagOfOpcodesModel(), near_pool, config)


def test_mining_needs_another_function(straight_function: Function, attack_config: AttackConfig):
    pool = FunctionPool(entries={"only": straight_function})
    with pytest.raises(NoCandidatesError):
        mine_candidates(straight_function, BagOfOpcodesModel(), pool, attack_config)


def test_random_candidates_are_correctable(attack_config: AttackConfig):
    config = attack_config.model_copy(update={"num_candidates": 25})
    candidates = random_candidates(np.random.default_rng(0), config)
    assert len(candidates) == 25
    assert len({c.instruction.key for c in candidates}) == 25
    assert all(c.source_function == RANDOM_SOURCE for c in candidates)


def test_attack_succeeds_on_near_pool(near_pool: FunctionPool, near_config: AttackConfig):
    oracle = BagOfOpcodesModel()
    target = near_pool["target"]
    outcome = run_attack(target, oracle, near_pool, near_config)
    assert outcome.status is AttackStatus.SUCCESS
    assert outcome.function_id == "target"
    assert outcome.model == "bag"
    assert outcome.gt_rank_before == 1
    assert outcome.final_gt_rank == 2
    assert outcome.iterations == 1
    assert outcome.inserted_instruction_count == 5
    assert len(outcome.adversarial) == len(target) + 5
    # One baseline rank, one rank_least, three distinct probes, one rank per iteration.
    assert outcome.oracle_queries == 6
    assert oracle.query_count == 6
    _check_outcome_invariants(outcome, target, near_config)


def test_attack_is_deterministic(near_pool: FunctionPool, near_config: AttackConfig):
    first = run_attack(near_pool["target"], BagOfOpcodesModel(), near_pool, near_config)
    second = run_attack(near_pool["target"], BagOfOpcodesModel(), near_pool, near_config)
    assert first == second


def test_tight_budget_is_exceeded(near_pool: FunctionPool, near_config: AttackConfig):
    config = near_config.model_copy(update={"probe_copy_factor": 0.2})
    outcome = run_attack(near_pool["target"], BagOfOpcodesModel(), near_pool, config)
    assert outcome.status is AttackStatus.BUDGET_EXCEEDED
    assert outcome.adversarial is None
    assert outcome.inserted_instruction_count == 0


def test_degenerate_pool_gives_no_candidates(
    straight_function: Function, attack_config: AttackConfig
):
    pool = FunctionPool(entries={"only": straight_function})
    outcome = run_attack(straight_function, BagOfOpcodesModel(), pool, attack_config)
    assert outcome.status is AttackStatus.NO_CANDIDATES
    assert outcome.adversarial is None
    assert outcome.oracle_queries == 1


def test_unknown_ground_truth(small_pool: FunctionPool, straight_function: Function):
    with pytest.raises(UnknownGroundTruthError):
        run_attack(straight_function, BagOfOpcodesModel(), small_pool, AttackConfig())


@pytest.mark.parametrize("mode", list(AttackMode))
def test_outcomes_hold_invariants_on_small_pool(
    small_pool: FunctionPool,
    walk_oracle: SimilarityOracle,
    attack_config: AttackConfig,
    mode: AttackMode,
):
    for function_id in small_pool.ids():
        before = walk_oracle.query_count
        outcome = run_attack(
            small_pool[function_id], walk_oracle, small_pool, attack_config, mode=mode
        )
        assert outcome.mode is mode
        assert outcome.oracle_queries == walk_oracle.query_count - before
        _check_outcome_invariants(outcome, small_pool[function_id], attack_config)


# Three of each kind; every family member drops the first instruction of one kind.
CLONE_TEMPLATE = (
    ("mov", "mov rax, rdi"),
    ("lea", "lea r8, [rdi+8]"),
    ("add", "add rax, 5"),
    ("sub", "sub rax, 1"),
    ("xor", "xor r10, rax"),
    ("and", "and rax, 4095"),
    ("or", "or rdx, 1"),
    ("imul", "imul rax, 3"),
    ("cmp", "cmp rax, 0"),
    ("test", "test rax, rax"),
    ("mov", "mov rcx, 7"),
    ("lea", "lea r9, [rsi+rdx*2]"),
    ("add", "add rdx, 3"),
    ("sub", "sub r9, r8"),
    ("xor", "xor r8, 255"),
    ("and", "and r9, r10"),
    ("or", "or r8, rcx"),
    ("imul", "imul r9, r8"),
    ("cmp", "cmp r8, r9"),
    ("test", "test r10, 1"),
    ("mov", "mov rdx, rsi"),
    ("lea", "lea r10, [rax+16]"),
    ("add", "add r8, r9"),
    ("sub", "sub rcx, rdx"),
    ("xor", "xor rdx, rax"),
    ("and", "and rcx, 15"),
    ("or", "or r10, 64"),
    ("imul", "imul rcx, rdx"),
    ("cmp", "cmp rdx, 5"),
    ("test", "test rcx, rdx"),
)
DROPPED_KINDS = ("mov", "lea", "add", "sub", "xor", "and", "or", "imul")


def _clone(kind: str) -> Function:
    body = list(CLONE_TEMPLATE)
    body.remove(next(item for item in body if item[0] == kind))
    lines = "".join(f"  {text}\n" for _, text in body)
    return parse_function(f"fn drop_{kind}:\n{lines}  ret\n")


def _far(n: int) -> Function:
    return parse_function(f"fn far{n:02d}:\n  mov r11, {n}\n  mov rbx, {n + 100}\n  nop\n  nop\n  ret\n")


@pytest.fixture
def clone_pool() -> FunctionPool:
    """Eight 30-instruction clones of one template plus twelve unrelated functions."""
    entries = {f"drop_{kind}": _clone(kind) for kind in DROPPED_KINDS}
    entries.update({f"far{n:02d}": _far(n) for n in range(12)})
    return FunctionPool(entries=entries)


def test_num_candidates_caps_the_kept_instructions(clone_pool: FunctionPool):
    config = AttackConfig(num_candidates=5)
    candidates = mine_candidates(clone_pool["drop_mov"], BagOfOpcodesModel(), clone_pool, config)
    assert len(candidates) == 5
    assert all(c.score > config.k for c in candidates)
    assert {c.instruction.opcode for c in candidates} == {Opcode.MOV}


def test_default_config_attack_on_clone_pool(clone_pool: FunctionPool):
    """Length 30 and k=5: two three-instruction spill plans fit the budget of six."""
    config = AttackConfig()
    target = clone_pool["drop_mov"]
    assert len(clone_pool) == 20
    assert len(target) == 30
    oracle = BagOfOpcodesModel()
    outcome = run_attack(target, oracle, clone_pool, config)
    assert outcome.status is AttackStatus.SUCCESS
    assert outcome.gt_rank_before == 1
    assert outcome.inserted_instruction_count <= 6
    assert outcome.final_gt_rank > 5
    assert BagOfOpcodesModel().gt_rank(outcome.adversarial, clone_pool, "drop_mov") > 5
    assert outcome.similarity >= 0.8
    assert cfg_isomorphic(build_cfg(target), build_cfg(outcome.adversarial))
    assert check_equivalence(target, outcome.adversarial, 100, outcome.seed).equivalent


def test_default_config_succeeds_on_a_generated_family():
    pool = generate_corpus(CorpusSpec(count=16, families=2, seed=5))
    config = AttackConfig()
    oracle = BagOfOpcodesModel()
    family = [f"fn{i:04d}" for i in range(0, 16, 2)]
    outcomes = [run_attack(pool[i], oracle, pool, config) for i in family]
    assert any(o.status is AttackStatus.SUCCESS for o in outcomes)
    for function_id, outcome in zip(family, outcomes, strict=True):
        assert outcome.gt_rank_before == 1
        _check_outcome_invariants(outcome, pool[function_id], config)
