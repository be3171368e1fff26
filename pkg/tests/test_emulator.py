"""Test the interpreter, the total-memory rule and differential equivalence."""

import pytest

from simevade.core.asm_parser import parse_function
from simevade.core.emulator import (
    check_equivalence,
    execute,
    executed_steps,
    init_machine,
    rflags,
)
from simevade.models.asm import Flag, Function, Register
from simevade.models.attack import BUMPER_ZONES
from simevade.models.emulation import Fault, FaultKind, Halted, TraceStep
from simevade.utils.hashing import hash64


def _run(text: str, seed: int = 0, max_steps: int = 1000) -> Halted | Fault:
    return execute(parse_function(text), init_machine(seed), max_steps)


def _halted(text: str, seed: int = 0) -> Halted:
    result = _run(text, seed)
    assert isinstance(result, Halted), result
    return result


def test_init_machine_is_seeded():
    first, second = init_machine(9), init_machine(9)
    assert first.regs == second.regs
    assert first.regs != init_machine(10).regs
    assert first.regs[Register.RSP] == BUMPER_ZONES.initial_rsp
    assert not any(first.flags.values())


def test_straight_line(straight_function: Function):
    result = execute(straight_function, init_machine(0))
    assert isinstance(result, Halted)
    assert result.state.regs[Register.RAX] == 8
    assert result.steps == 3


def test_ret_pops_the_return_slot():
    result = _halted("fn f:\n  ret\n")
    assert result.state.regs[Register.RSP] == BUMPER_ZONES.initial_rsp + 8


def test_add_sets_carry_and_zero():
    result = _halted("fn f:\n  mov rax, -1\n  add rax, 1\n  ret\n")
    flags = result.state.flags
    assert result.state.regs[Register.RAX] == 0
    assert flags[Flag.CF] and flags[Flag.ZF] and flags[Flag.PF]
    assert not flags[Flag.OF]


def test_sub_signed_overflow():
    result = _halted("fn f:\n  mov rax, 0x7fffffffffffffff\n  sub rax, -1\n  ret\n")
    assert result.state.regs[Register.RAX] == 1 << 63
    assert result.state.flags[Flag.OF]
    assert result.state.flags[Flag.SF]


def test_logic_clears_carry_and_overflow():
    result = _halted("fn f:\n  mov rax, -1\n  add rax, 1\n  or rax, 4\n  ret\n")
    assert result.state.regs[Register.RAX] == 4
    assert not result.state.flags[Flag.CF]
    assert not result.state.flags[Flag.OF]


def test_imul_overflow():
    result = _halted("fn f:\n  mov rax, 0x100000000\n  imul rax, rax\n  ret\n")
    assert result.state.regs[Register.RAX] == 0
    assert result.state.flags[Flag.CF] and result.state.flags[Flag.OF]


def test_conditional_jump_taken():
    text = "fn f:\n  mov rax, 3\n  cmp rax, 5\n  jl .small\n  mov rbx, 1\n  ret\nsmall:\n  mov rbx, 2\n  ret\n"
    assert _halted(text).state.regs[Register.RBX] == 2


def test_counted_loop():
    text = "fn f:\n  mov rcx, 10\n  xor rax, rax\nL1:\n  add rax, 2\n  sub rcx, 1\n  jne .L1\n  ret\n"
    result = _halted(text)
    assert result.state.regs[Register.RAX] == 20
    assert result.steps == 2 + 3 * 10 + 1


def test_push_pop_round_trip():
    result = _halted("fn f:\n  mov rbx, 77\n  push rbx\n  mov rbx, 0\n  pop rbx\n  ret\n")
    assert result.state.regs[Register.RBX] == 77


def test_pushfq_popfq_restore_flags():
    text = "fn f:\n  cmp rax, rax\n  pushfq\n  add rax, 1\n  popfq\n  ret\n"
    result = _halted(text)
    assert result.state.flags[Flag.ZF]


def test_rflags_image():
    flags = {flag: False for flag in Flag}
    assert rflags(flags) == 0x2
    flags[Flag.ZF] = True
    flags[Flag.CF] = True
    assert rflags(flags) == 0x2 | 1 << 6 | 1


def test_unwritten_memory_follows_total_memory_rule():
    state = init_machine(4)
    address = 0x5000_0000
    expected = sum((hash64(address + i, 4) & 0xFF) << (8 * i) for i in range(8))
    assert state.read(address) == expected


def test_read_only_zone_reads_zero_and_rejects_writes():
    state = init_machine(0)
    assert state.read(BUMPER_ZONES.ro_base + 64) == 0
    assert not state.write(BUMPER_ZONES.ro_base + 64, 1)
    assert state.read(BUMPER_ZONES.ptr_slots[1]) == BUMPER_ZONES.rw_base


def test_ro_zone_write_faults():
    text = f"fn f:\n  mov rbx, {BUMPER_ZONES.ro_base}\n  mov [rbx+8], rax\n  ret\n"
    result = _run(text)
    assert isinstance(result, Fault)
    assert result.kind is FaultKind.RO_ZONE_WRITE
    assert result.at == 1


def test_step_limit_faults():
    result = _run("fn spin:\nL1:\n  nop\n  jmp .L1\n", max_steps=50)
    assert isinstance(result, Fault)
    assert result.kind is FaultKind.STEP_LIMIT


def test_internal_call_returns():
    text = "fn f:\n  call .helper\n  add rax, 1\n  ret\nhelper:\n  mov rax, 41\n  ret\n"
    result = _halted(text)
    assert result.state.regs[Register.RAX] == 42


def test_corrupted_return_address_faults():
    text = "fn f:\n  call .helper\n  ret\nhelper:\n  pop rbx\n  push 5\n  ret\n"
    result = _run(text)
    assert isinstance(result, Fault)
    assert result.kind is FaultKind.UNMAPPED_JUMP


def test_external_call_clobbers_caller_saved_only():
    before = init_machine(2)
    result = _halted("fn f:\n  call .memcpy\n  ret\n", seed=2)
    regs = result.state.regs
    assert regs[Register.RAX] == hash64("call", "memcpy", 2, "rax")
    assert regs[Register.RBX] == before.regs[Register.RBX]


def test_syscall_is_deterministic():
    first = _halted("fn f:\n  mov rax, 60\n  syscall\n  ret\n", seed=3)
    second = _halted("fn f:\n  mov rax, 60\n  syscall\n  ret\n", seed=3)
    assert first.state.regs == second.state.regs


def test_trace_reports_changes(straight_function: Function):
    steps: list[TraceStep] = []
    execute(straight_function, init_machine(0), trace=steps.append)
    assert [s.index for s in steps] == [0, 1, 2]
    assert steps[0].changes == ("rax=0x5",)
    assert "add rax, 3" in steps[1].format()


def test_equivalence_of_identical_functions(branchy_function: Function):
    verdict = check_equivalence(branchy_function, branchy_function, trials=10)
    assert verdict.equivalent
    assert verdict.trials == 10


def test_equivalence_detects_register_difference(straight_function: Function):
    other = parse_function("fn straight:\n  mov rax, 5\n  add rax, 4\n  ret\n")
    verdict = check_equivalence(straight_function, other, trials=5)
    assert not verdict.equivalent
    assert verdict.first_divergence is not None
    assert verdict.first_divergence.location == "rax"


def test_equivalence_detects_memory_difference():
    left = parse_function("fn f:\n  mov [rdi], 1\n  ret\n")
    right = parse_function("fn f:\n  mov [rdi], 2\n  ret\n")
    verdict = check_equivalence(left, right, trials=3)
    assert not verdict.equivalent
    assert verdict.first_divergence is not None
    assert verdict.first_divergence.location.startswith("0x")


def test_scratch_writes_below_stack_are_ignored():
    left = parse_function("fn f:\n  nop\n  ret\n")
    right = parse_function("fn f:\n  push rax\n  pop rax\n  ret\n")
    assert check_equivalence(left, right, trials=5).equivalent


def test_bumper_zone_writes_are_ignored():
    text = f"fn f:\n  push rbx\n  mov rbx, {BUMPER_ZONES.rw_base}\n  mov [rbx+64], rax\n  pop rbx\n  ret\n"
    left = parse_function("fn f:\n  nop\n  nop\n  nop\n  nop\n  ret\n")
    assert check_equivalence(left, parse_function(text), trials=5).equivalent


def test_fault_is_a_divergence():
    left = parse_function("fn f:\n  ret\n")
    right = parse_function(f"fn f:\n  mov rbx, {BUMPER_ZONES.ro_base}\n  mov [rbx], 1\n  ret\n")
    verdict = check_equivalence(left, right, trials=3)
    assert not verdict.equivalent
    assert verdict.trials == 1
    assert verdict.first_divergence is not None
    assert verdict.first_divergence.location.startswith("fault:right:")


def test_check_equivalence_needs_a_trial(straight_function: Function):
    with pytest.raises(ValueError):
        check_equivalence(straight_function, straight_function, trials=0)


def test_executed_steps(straight_function: Function):
    assert executed_steps(straight_function, seed=1) == 3
