"""Test parsing and rendering of function text."""

import numpy as np
import pytest

from simevade.core.asm_parser import (
    format_int,
    parse_function,
    parse_functions,
    render_function,
    render_instruction,
)
from simevade.core.corpus import random_instruction
from simevade.models.asm import Function, Imm, Instruction, Mem, Opcode, Origin, Reg, Register
from simevade.utils.exceptions import AsmSyntaxError, UnknownOpcodeError, UnresolvedLabelError

from .conftest import BRANCHY_TEXT, POOL_TEXTS


def test_parse_straight_line(straight_function: Function):
    """Three instructions, no labels."""
    assert straight_function.name == "straight"
    assert len(straight_function) == 3
    assert straight_function.labels == {}
    first = straight_function.instructions[0]
    assert first.opcode is Opcode.MOV
    assert first.operands == (Reg(reg=Register.RAX), Imm(value=5))


def test_labels_bind_to_next_instruction(branchy_function: Function):
    assert branchy_function.labels == {"L1": 0, "L2": 2, "L3": 4, "L4": 6, "L5": 8, "L6": 10}


def test_label_on_same_line_as_instruction():
    function = parse_function("fn f:\nstart: mov rax, 1\n  jmp .start\n")
    assert function.labels == {"start": 0}
    assert len(function) == 2


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("[rax]", Mem(base=Register.RAX)),
        ("[rax+8]", Mem(base=Register.RAX, disp=8)),
        ("[rbp-16]", Mem(base=Register.RBP, disp=-16)),
        ("[rax+rbx*4+8]", Mem(base=Register.RAX, index=Register.RBX, scale=4, disp=8)),
        ("[rbx*8-4]", Mem(index=Register.RBX, scale=8, disp=-4)),
        ("[rax + rcx]", Mem(base=Register.RAX, index=Register.RCX)),
        ("[rdi+0x10]", Mem(base=Register.RDI, disp=16)),
    ],
)
def test_memory_operands(text: str, expected: Mem):
    function = parse_function(f"fn f:\n  mov rax, {text}\n  ret\n")
    assert function.instructions[0].operands[1] == expected


def test_origin_comments_restore_origin():
    function = parse_function(
        "fn f:\n  pushfq  # fix\n  add rax, 1  # adv\n  popfq  # fix\n  ret  # ordinary\n"
    )
    origins = [i.origin for i in function.instructions]
    assert origins == [Origin.FIX, Origin.ADVERSARIAL, Origin.FIX, Origin.SOURCE]


def test_mnemonics_are_case_insensitive():
    function = parse_function("fn f:\n  MOV RAX, 1\n  RET\n")
    assert function.instructions[0].opcode is Opcode.MOV


def test_parse_several_functions():
    functions = parse_functions(BRANCHY_TEXT + "\n" + POOL_TEXTS["alpha"])
    assert [f.name for f in functions] == ["branchy", "alpha"]


def test_unknown_opcode_reports_position():
    with pytest.raises(UnknownOpcodeError) as exc_info:
        parse_function("fn f:\n  mov rax, 1\n  frob rax\n  ret\n")
    assert exc_info.value.line == 3
    assert exc_info.value.column == 3
    assert exc_info.value.error_code == "UNKNOWN_OPCODE"


def test_unresolved_label():
    with pytest.raises(UnresolvedLabelError) as exc_info:
        parse_function("fn f:\n  jmp .nowhere\n  ret\n")
    assert exc_info.value.label == "nowhere"


def test_external_call_needs_no_label():
    function = parse_function("fn f:\n  call .memcpy\n  ret\n")
    assert not function.is_internal_call(function.instructions[0])


@pytest.mark.parametrize(
    "text",
    [
        "fn f:\n  mov rax\n  ret\n",  # arity
        "fn f:\n  lea rax, rbx\n  ret\n",  # lea needs memory
        "fn f:\n  mov [rax], [rbx]\n  ret\n",  # two memory operands
        "fn f:\n  mov rax, [rax+rbx+rcx]\n  ret\n",  # three registers
        "fn f:\n  mov rax, [8]\n  ret\n",  # no register
        "fn f:\n  mov rax, [rax*3]\n  ret\n",  # bad scale
        "fn f:\n  push [rax]\n  ret\n",  # push takes reg or imm
        "fn f:\nL1:\nL1:\n  ret\n",  # duplicate label
        "fn f:\n  ret\nend:\n",  # dangling label
        "mov rax, 1\n",  # outside a function
        "fn f:\n",  # empty function
    ],
)
def test_syntax_errors(text: str):
    with pytest.raises(AsmSyntaxError):
        parse_function(text)


def test_render_matches_canonical_text():
    text = "fn f:\nL1:\n  mov rax, [rbx+rcx*2-8]\n  add rax, 0x10000  # adv\n  jne .L1\n  ret\n"
    assert render_function(parse_function(text)) == text


def test_format_int():
    assert format_int(255) == "255"
    assert format_int(-255) == "-255"
    assert format_int(0x10000) == "0x10000"
    assert format_int(-0x20000000) == "-0x20000000"


def test_round_trip_fixtures():
    for text in [BRANCHY_TEXT, *POOL_TEXTS.values()]:
        function = parse_function(text)
        assert parse_function(render_function(function)) == function


def test_round_trip_random_instructions():
    """Every generated instruction renders to text that parses back to itself."""
    rng = np.random.default_rng(3)
    body = [random_instruction(rng, allow_rsp=True) for _ in range(300)]
    body = [i.with_origin(Origin.ADVERSARIAL) if n % 3 == 0 else i for n, i in enumerate(body)]
    function = Function(
        name="rand", instructions=(*body, Instruction(opcode=Opcode.RET))
    )
    assert parse_function(render_function(function)) == function


def test_render_instruction_without_operands():
    assert render_instruction(Instruction(opcode=Opcode.PUSHFQ)) == "pushfq"
