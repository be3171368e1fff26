"""Test the side-effect table."""

import numpy as np
import pytest

from simevade.core.asm_parser import parse_function, render_instruction
from simevade.core.corpus import random_instruction
from simevade.core.emulator import effective_address, execute, init_machine
from simevade.core.semantics import explicit_destination, instruction_side_effects
from simevade.models.asm import (
    ALL_FLAGS,
    CALLER_SAVED,
    LOGIC_FLAGS,
    REGISTER_ORDER,
    Flag,
    Function,
    Instruction,
    Opcode,
    Register,
)
from simevade.models.emulation import Halted
from simevade.utils.hashing import MASK64


def _instruction(text: str) -> Instruction:
    return parse_function(f"fn f:\n  {text}\n  ret\n").instructions[0]


def test_add_register():
    effects = instruction_side_effects(_instruction("add rax, rbx"))
    assert effects.regs_written == {Register.RAX}
    assert effects.flags_written == ALL_FLAGS
    assert effects.mem_read is None
    assert not effects.may_fault


def test_xor_memory_destination_reads_and_writes():
    instruction = _instruction("xor [rdi+8], rax")
    effects = instruction_side_effects(instruction)
    assert effects.regs_written == frozenset()
    assert effects.flags_written == LOGIC_FLAGS
    assert effects.mem_read == instruction.memory_operand
    assert effects.mem_written == instruction.memory_operand
    assert effects.may_fault


def test_imul_marks_undefined_flags():
    effects = instruction_side_effects(_instruction("imul rax, rbx"))
    assert effects.flags_undefined == {Flag.PF, Flag.AF, Flag.ZF, Flag.SF}
    assert effects.flags_undefined <= effects.flags_written


def test_lea_touches_no_memory():
    effects = instruction_side_effects(_instruction("lea rax, [rbx+rcx*8]"))
    assert effects.regs_written == {Register.RAX}
    assert not effects.may_fault
    assert not effects.flags_written


def test_mov_store():
    effects = instruction_side_effects(_instruction("mov [rbx], 1"))
    assert effects.regs_written == frozenset()
    assert effects.mem_written is not None


def test_stack_opcodes():
    assert instruction_side_effects(_instruction("push rax")).regs_written == {Register.RSP}
    assert instruction_side_effects(_instruction("pop rbx")).regs_written == {
        Register.RBX,
        Register.RSP,
    }
    popfq = instruction_side_effects(_instruction("popfq"))
    assert popfq.flags_written == ALL_FLAGS


def test_call_clobbers_caller_saved():
    effects = instruction_side_effects(_instruction("call .memset"))
    assert set(CALLER_SAVED) <= effects.regs_written


@pytest.mark.parametrize("text", ["nop", "jmp .f_end", "cmp rax, 1"])
def test_no_register_writes(text: str):
    if text.startswith("jmp"):
        instruction = parse_function("fn f:\n  jmp .f_end\nf_end:\n  ret\n").instructions[0]
    else:
        instruction = _instruction(text)
    assert instruction_side_effects(instruction).regs_written == frozenset()


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("mov rcx, 1", Register.RCX),
        ("pop rsp", Register.RSP),
        ("imul rdx, 3", Register.RDX),
        ("mov [rax], rbx", None),
        ("push rax", None),
        ("cmp rax, rbx", None),
    ],
)
def test_explicit_destination(text: str, expected: Register | None):
    assert explicit_destination(_instruction(text)) == expected


def test_nop_is_empty():
    assert instruction_side_effects(_instruction("nop")).is_empty


def test_side_effects_cover_what_the_emulator_changes():
    """Seeded single-instruction runs: every change is predicted by the table."""
    rng = np.random.default_rng(2024)
    ret = Instruction(opcode=Opcode.RET)
    for seed in range(1000):
        instruction = random_instruction(rng)
        effects = instruction_side_effects(instruction)
        before = init_machine(seed)
        result = execute(
            Function(name="single", instructions=(instruction, ret)), before.snapshot()
        )
        assert isinstance(result, Halted), render_instruction(instruction)
        after = dict(result.state.regs)
        # Undo the final ret's pop.
        after[Register.RSP] = (after[Register.RSP] - 8) & MASK64

        changed_regs = {reg for reg in REGISTER_ORDER if after[reg] != before.regs[reg]}
        changed_flags = {flag for flag in Flag if result.state.flags[flag] != before.flags[flag]}
        allowed: set[int] = set()
        if effects.mem_written is not None:
            address = effective_address(effects.mem_written, before.regs)
            allowed = {(address + offset) & MASK64 for offset in range(8)}

        text = render_instruction(instruction)
        assert changed_regs <= effects.regs_written, text
        assert changed_flags <= effects.flags_written, text
        assert set(result.write_set) <= allowed, text
