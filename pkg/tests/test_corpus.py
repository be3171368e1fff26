"""Test the synthetic corpus generator."""

import numpy as np
import pytest
from pydantic import ValidationError

from simevade.core.asm_parser import parse_function, render_function
from simevade.core.cfg_builder import build_cfg
from simevade.core.corpus import (
    BODY_KINDS,
    drop_instruction,
    family_weights,
    generate_corpus,
    random_instruction,
)
from simevade.core.dominators import vulnerable_candidates
from simevade.core.emulator import execute, init_machine
from simevade.core.oracle import MODEL_NAMES, BagOfOpcodesModel, get_oracle
from simevade.models.asm import Mem, Reg, Register
from simevade.models.emulation import Halted
from simevade.models.report import CorpusSpec
from simevade.utils.exceptions import GenerationRetryExceededError

SMALL_SPEC = CorpusSpec(
    count=8, min_length=20, max_length=40, min_blocks=1, max_blocks=5, families=3, seed=11
)


@pytest.fixture(scope="module")
def small_corpus():
    return generate_corpus(SMALL_SPEC)


def test_ids_are_sequential(small_corpus):
    assert small_corpus.ids() == [f"fn{i:04d}" for i in range(8)]


def test_generation_is_deterministic(small_corpus):
    assert generate_corpus(SMALL_SPEC) == small_corpus


def test_seed_changes_the_corpus(small_corpus):
    other = generate_corpus(SMALL_SPEC.model_copy(update={"seed": 12}))
    assert other != small_corpus


def test_functions_meet_the_constraints(small_corpus):
    for function_id in small_corpus.ids():
        function = small_corpus[function_id]
        assert function.name == function_id
        assert SMALL_SPEC.min_length <= len(function) <= SMALL_SPEC.max_length
        assert parse_function(render_function(function)) == function
        cfg = build_cfg(function)
        assert not cfg.unreachable
        assert SMALL_SPEC.min_blocks <= len(cfg.blocks) <= SMALL_SPEC.max_blocks
        assert len(vulnerable_candidates(function, cfg)) > 0


def test_functions_halt(small_corpus):
    for function_id in small_corpus.ids():
        for seed in (0, 1):
            result = execute(small_corpus[function_id], init_machine(seed), 100_000)
            assert isinstance(result, Halted)


def test_minimal_function():
    pool = generate_corpus(
        CorpusSpec(count=1, min_length=3, max_length=3, min_blocks=1, max_blocks=1, seed=0)
    )
    function = pool["fn0000"]
    assert len(function) == 3
    assert len(build_cfg(function).blocks) == 1


def test_unsatisfiable_constraints():
    spec = CorpusSpec(count=1, min_length=3, max_length=3, min_blocks=6, max_blocks=6)
    with pytest.raises(GenerationRetryExceededError) as exc_info:
        generate_corpus(spec, max_attempts=5)
    assert exc_info.value.details["attempts"] == 5


def test_spec_rejects_inverted_ranges():
    with pytest.raises(ValidationError):
        CorpusSpec(min_length=50, max_length=10)


def test_family_weights():
    weights = family_weights(SMALL_SPEC)
    assert weights.shape == (3, len(BODY_KINDS))
    np.testing.assert_allclose(weights.sum(axis=1), 1.0)


def test_fixed_opcode_weights():
    spec = SMALL_SPEC.model_copy(update={"opcode_weights": {"add": 3.0, "nop": 1.0}})
    weights = family_weights(spec)
    assert weights[0][BODY_KINDS.index("add")] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        family_weights(SMALL_SPEC.model_copy(update={"opcode_weights": {"add": 0.0}}))


def test_random_instruction_avoids_control_flow_and_rsp():
    rng = np.random.default_rng(0)
    for _ in range(500):
        instruction = random_instruction(rng)
        assert not instruction.is_control_transfer
        assert not instruction.is_exception
        for operand in instruction.operands:
            if isinstance(operand, Reg):
                assert operand.reg is not Register.RSP
            elif isinstance(operand, Mem):
                assert Register.RSP not in operand.registers()


def test_family_members_differ_by_one_dropped_kind(small_corpus):
    bag = BagOfOpcodesModel()
    family = [small_corpus[f"fn{i:04d}"] for i in range(0, SMALL_SPEC.count, SMALL_SPEC.families)]
    assert len({len(member) for member in family}) == 1
    vectors = [bag.embed(member) for member in family]
    for i, left in enumerate(vectors):
        for right in vectors[i + 1 :]:
            difference = left - right
            assert np.abs(difference).sum() == 2
            assert sorted(difference[difference != 0]) == [-1.0, 1.0]


@pytest.mark.parametrize("model", MODEL_NAMES)
def test_every_function_is_its_own_nearest(small_corpus, model: str):
    oracle = get_oracle(model)
    for function_id in small_corpus.ids():
        assert oracle.gt_rank(small_corpus[function_id], small_corpus, function_id) == 1


def test_drop_instruction_shifts_later_labels(branchy_function):
    dropped = drop_instruction(branchy_function, 2, "trimmed")
    assert dropped.name == "trimmed"
    assert len(dropped) == len(branchy_function) - 1
    assert dropped.labels["L2"] == 2
    assert dropped.labels["L3"] == 3
    assert dropped.instructions[3] == branchy_function.instructions[4]
    assert parse_function(render_function(dropped)) == dropped
