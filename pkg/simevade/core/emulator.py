"""Deterministic interpreter for the instruction subset.

Every operation is 64-bit. Faults and halts are returned as values;
nothing here raises on a misbehaving function.
"""

from collections.abc import Callable

import numpy as np
from loguru import logger

from simevade.core.asm_parser import render_instruction
from simevade.models.asm import (
    CALLER_SAVED,
    FLAG_BITS,
    REGISTER_ORDER,
    Flag,
    Function,
    Imm,
    Instruction,
    LabelRef,
    Mem,
    Opcode,
    Reg,
    Register,
)
from simevade.models.attack import BUMPER_ZONES, BumperZones
from simevade.models.emulation import (
    Divergence,
    EquivalenceVerdict,
    ExecutionResult,
    Fault,
    FaultKind,
    Halted,
    MachineState,
    TraceStep,
)
from simevade.utils.hashing import MASK64, hash64

SIGN_BIT = 1 << 63
# High bits of the value an intra-function call pushes as return address.
RETURN_MARKER = 0xDEAD_0000_0000_0000
DEFAULT_MAX_STEPS = 100_000

TraceCallback = Callable[[TraceStep], None]


class _Stop(Exception):
    def __init__(self, result: ExecutionResult) -> None:
        self.result = result


def _signed(value: int) -> int:
    return value - (1 << 64) if value & SIGN_BIT else value


def _parity(value: int) -> bool:
    return bin(value & 0xFF).count("1") % 2 == 0


def init_machine(seed: int, zones: BumperZones = BUMPER_ZONES) -> MachineState:
    """Seeded registers, rsp below the red zone, flags clear."""
    raw = np.random.default_rng(seed & MASK64).bytes(8 * len(REGISTER_ORDER))
    regs = {
        reg: int.from_bytes(raw[8 * position : 8 * position + 8], "little")
        for position, reg in enumerate(REGISTER_ORDER)
    }
    regs[Register.RSP] = zones.initial_rsp
    return MachineState(
        regs=regs,
        flags={flag: False for flag in Flag},
        trial_seed=seed & MASK64,
        zones=zones,
    )


def effective_address(operand: Mem, regs: dict[Register, int]) -> int:
    address = operand.disp
    if operand.base is not None:
        address += regs[operand.base]
    if operand.index is not None:
        address += regs[operand.index] * operand.scale
    return address & MASK64


def rflags(flags: dict[Flag, bool]) -> int:
    """Packed RFLAGS image; bit 1 is always set."""
    value = 0x2
    for flag, bit in FLAG_BITS.items():
        if flags[flag]:
            value |= 1 << bit
    return value


class _Interpreter:
    """Runs one function over one machine state."""

    def __init__(
        self,
        function: Function,
        state: MachineState,
        max_steps: int,
        trace: TraceCallback | None,
    ) -> None:
        self.function = function
        self.state = state
        self.max_steps = max_steps
        self.trace = trace
        self.pc = 0
        self.depth = 0
        self.handlers: dict[Opcode, Callable[[Instruction], None]] = {
            Opcode.MOV: self._mov,
            Opcode.LEA: self._lea,
            Opcode.ADD: self._arith,
            Opcode.SUB: self._arith,
            Opcode.CMP: self._arith,
            Opcode.XOR: self._logic,
            Opcode.AND: self._logic,
            Opcode.OR: self._logic,
            Opcode.TEST: self._logic,
            Opcode.IMUL: self._imul,
            Opcode.PUSH: self._push,
            Opcode.POP: self._pop,
            Opcode.PUSHFQ: self._pushfq,
            Opcode.POPFQ: self._popfq,
            Opcode.NOP: lambda instruction: None,
            Opcode.JMP: self._jump,
            Opcode.JE: self._jump,
            Opcode.JNE: self._jump,
            Opcode.JL: self._jump,
            Opcode.JLE: self._jump,
            Opcode.JG: self._jump,
            Opcode.JGE: self._jump,
            Opcode.CALL: self._call,
            Opcode.RET: self._ret,
            Opcode.SYSCALL: self._syscall,
            Opcode.INT: self._int,
        }

    def run(self) -> ExecutionResult:
        instructions = self.function.instructions
        state = self.state
        try:
            while True:
                if not 0 <= self.pc < len(instructions):
                    self._fault(FaultKind.UNMAPPED_JUMP)
                if state.step_count >= self.max_steps:
                    self._fault(FaultKind.STEP_LIMIT)
                index = self.pc
                instruction = instructions[index]
                before = state.snapshot() if self.trace else None
                state.step_count += 1
                self.pc += 1
                try:
                    self.handlers[instruction.opcode](instruction)
                finally:
                    if before is not None and self.trace is not None:
                        self.trace(self._trace_step(index, instruction, before))
        except _Stop as stop:
            return stop.result

    # -- operand access -------------------------------------------------

    def _fault(self, kind: FaultKind, at: int | None = None) -> None:
        raise _Stop(Fault(kind=kind, at=self.pc if at is None else at, state=self.state))

    def _value(self, operand: Reg | Imm | Mem | LabelRef) -> int:
        if isinstance(operand, Reg):
            return self.state.regs[operand.reg]
        if isinstance(operand, Imm):
            return operand.value & MASK64
        if isinstance(operand, Mem):
            return self.state.read(effective_address(operand, self.state.regs))
        raise AssertionError("label operands carry no value")

    def _store(self, operand: Reg | Imm | Mem | LabelRef, value: int) -> None:
        value &= MASK64
        if isinstance(operand, Reg):
            self.state.regs[operand.reg] = value
            return
        assert isinstance(operand, Mem)
        if not self.state.write(effective_address(operand, self.state.regs), value):
            self._fault(FaultKind.RO_ZONE_WRITE, at=self.pc - 1)

    def _push_value(self, value: int) -> None:
        rsp = (self.state.regs[Register.RSP] - 8) & MASK64
        if not self.state.write(rsp, value):
            self._fault(FaultKind.RO_ZONE_WRITE, at=self.pc - 1)
        self.state.regs[Register.RSP] = rsp

    def _pop_value(self) -> int:
        rsp = self.state.regs[Register.RSP]
        value = self.state.read(rsp)
        self.state.regs[Register.RSP] = (rsp + 8) & MASK64
        return value

    def _result_flags(self, result: int) -> None:
        flags = self.state.flags
        flags[Flag.ZF] = result == 0
        flags[Flag.SF] = bool(result & SIGN_BIT)
        flags[Flag.PF] = _parity(result)

    # -- handlers ---------------------------------------------------------

    def _mov(self, instruction: Instruction) -> None:
        dst, src = instruction.operands
        self._store(dst, self._value(src))

    def _lea(self, instruction: Instruction) -> None:
        dst, src = instruction.operands
        assert isinstance(src, Mem)
        self._store(dst, effective_address(src, self.state.regs))

    def _arith(self, instruction: Instruction) -> None:
        dst, src = instruction.operands
        a = self._value(dst)
        b = self._value(src)
        flags = self.state.flags
        if instruction.opcode is Opcode.ADD:
            raw = a + b
            result = raw & MASK64
            flags[Flag.CF] = raw > MASK64
            flags[Flag.OF] = (a & SIGN_BIT) == (b & SIGN_BIT) and (
                result & SIGN_BIT
            ) != (a & SIGN_BIT)
        else:
            result = (a - b) & MASK64
            flags[Flag.CF] = a < b
            flags[Flag.OF] = (a & SIGN_BIT) != (b & SIGN_BIT) and (
                result & SIGN_BIT
            ) != (a & SIGN_BIT)
        flags[Flag.AF] = bool((a ^ b ^ result) & 0x10)
        self._result_flags(result)
        if instruction.opcode is not Opcode.CMP:
            self._store(dst, result)

    def _logic(self, instruction: Instruction) -> None:
        dst, src = instruction.operands
        a = self._value(dst)
        b = self._value(src)
        op = instruction.opcode
        if op is Opcode.XOR:
            result = a ^ b
        elif op is Opcode.OR:
            result = a | b
        else:
            result = a & b
        flags = self.state.flags
        flags[Flag.CF] = False
        flags[Flag.OF] = False
        self._result_flags(result)
        if op is not Opcode.TEST:
            self._store(dst, result)

    def _imul(self, instruction: Instruction) -> None:
        dst, src = instruction.operands
        product = _signed(self._value(dst)) * _signed(self._value(src))
        result = product & MASK64
        overflow = product != _signed(result)
        flags = self.state.flags
        flags[Flag.CF] = overflow
        flags[Flag.OF] = overflow
        flags[Flag.AF] = False
        self._result_flags(result)
        self._store(dst, result)

    def _push(self, instruction: Instruction) -> None:
        self._push_value(self._value(instruction.operands[0]))

    def _pop(self, instruction: Instruction) -> None:
        self._store(instruction.operands[0], self._pop_value())

    def _pushfq(self, instruction: Instruction) -> None:
        self._push_value(rflags(self.state.flags))

    def _popfq(self, instruction: Instruction) -> None:
        image = self._pop_value()
        for flag, bit in FLAG_BITS.items():
            self.state.flags[flag] = bool(image >> bit & 1)

    def _taken(self, opcode: Opcode) -> bool:
        flags = self.state.flags
        less = flags[Flag.SF] != flags[Flag.OF]
        if opcode is Opcode.JMP:
            return True
        if opcode is Opcode.JE:
            return flags[Flag.ZF]
        if opcode is Opcode.JNE:
            return not flags[Flag.ZF]
        if opcode is Opcode.JL:
            return less
        if opcode is Opcode.JLE:
            return flags[Flag.ZF] or less
        if opcode is Opcode.JG:
            return not flags[Flag.ZF] and not less
        return not less  # jge

    def _jump(self, instruction: Instruction) -> None:
        if self._taken(instruction.opcode):
            self.pc = self.function.labels[instruction.label or ""]

    def _call(self, instruction: Instruction) -> None:
        callee = instruction.label or ""
        if self.function.is_internal_call(instruction):
            self._push_value(RETURN_MARKER | self.pc)
            self.depth += 1
            self.pc = self.function.labels[callee]
            return
        # External callee: fixed clobber summary of the caller-saved set.
        seed = self.state.trial_seed
        for reg in CALLER_SAVED:
            self.state.regs[reg] = hash64("call", callee, seed, reg.value)

    def _ret(self, instruction: Instruction) -> None:
        value = self._pop_value()
        if self.depth == 0:
            raise _Stop(Halted(state=self.state, write_set=frozenset(self.state.written)))
        target = value & ~RETURN_MARKER & MASK64
        if value & RETURN_MARKER != RETURN_MARKER or target >= len(self.function):
            self._fault(FaultKind.UNMAPPED_JUMP, at=self.pc - 1)
        self.depth -= 1
        self.pc = target

    def _syscall(self, instruction: Instruction) -> None:
        regs = self.state.regs
        seed = self.state.trial_seed
        number = regs[Register.RAX]
        regs[Register.RAX] = hash64("syscall", number, seed)
        regs[Register.RCX] = hash64("syscall-rcx", number, seed)
        regs[Register.R11] = rflags(self.state.flags)

    def _int(self, instruction: Instruction) -> None:
        vector = self._value(instruction.operands[0])
        regs = self.state.regs
        regs[Register.RAX] = hash64("int", vector, regs[Register.RAX], self.state.trial_seed)

    # -- tracing ----------------------------------------------------------

    def _trace_step(
        self, index: int, instruction: Instruction, before: MachineState
    ) -> TraceStep:
        after = self.state
        changes: list[str] = []
        for reg in REGISTER_ORDER:
            if after.regs[reg] != before.regs[reg]:
                changes.append(f"{reg}=0x{after.regs[reg]:x}")
        for flag in Flag:
            if after.flags[flag] != before.flags[flag]:
                changes.append(f"{flag}={int(after.flags[flag])}")
        touched = sorted(a for a, byte in after.memory.items() if before.memory.get(a) != byte)
        if touched:
            changes.append(f"mem[0x{touched[0]:x}..+{len(touched)}]")
        return TraceStep(
            step=after.step_count,
            index=index,
            text=render_instruction(instruction),
            changes=tuple(changes),
        )


def execute(
    function: Function,
    state: MachineState,
    max_steps: int = DEFAULT_MAX_STEPS,
    trace: TraceCallback | None = None,
) -> ExecutionResult:
    """Interpret function from instruction 0; mutates state."""
    return _Interpreter(function, state, max_steps, trace).run()


def _observable_addresses(left: Halted, right: Halted) -> list[int]:
    floor = min(left.state.regs[Register.RSP], right.state.regs[Register.RSP])
    zones = left.state.zones
    return sorted(
        a
        for a in left.write_set | right.write_set
        if a >= floor and not zones.in_any(a)
    )


def compare_states(left: Halted, right: Halted, trial_seed: int) -> Divergence | None:
    """First difference in GPRs or non-scratch written memory; flags excluded."""
    for reg in REGISTER_ORDER:
        a, b = left.state.regs[reg], right.state.regs[reg]
        if a != b:
            return Divergence(trial_seed=trial_seed, location=reg.value, left=a, right=b)
    for address in _observable_addresses(left, right):
        a, b = left.state.read_byte(address), right.state.read_byte(address)
        if a != b:
            return Divergence(
                trial_seed=trial_seed, location=f"0x{address:x}", left=a, right=b
            )
    return None


def check_equivalence(
    f: Function,
    g: Function,
    trials: int = 100,
    seed: int = 0,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> EquivalenceVerdict:
    """Differential run of f and g from identical seeded states."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    for t in range(trials):
        trial_seed = (seed ^ t) & MASK64
        left = execute(f, init_machine(trial_seed), max_steps)
        right = execute(g, init_machine(trial_seed), max_steps)
        if isinstance(left, Fault) or isinstance(right, Fault):
            side, fault = ("left", left) if isinstance(left, Fault) else ("right", right)
            assert isinstance(fault, Fault)
            logger.debug(f"trial {t}: {side} faulted with {fault.kind} at {fault.at}")
            return EquivalenceVerdict(
                equivalent=False,
                trials=t + 1,
                first_divergence=Divergence(
                    trial_seed=trial_seed, location=f"fault:{side}:{fault.kind}@{fault.at}"
                ),
            )
        divergence = compare_states(left, right, trial_seed)
        if divergence is not None:
            logger.debug(f"trial {t}: diverged at {divergence.location}")
            return EquivalenceVerdict(
                equivalent=False, trials=t + 1, first_divergence=divergence
            )
    return EquivalenceVerdict(equivalent=True, trials=trials)


def executed_steps(function: Function, seed: int, max_steps: int = DEFAULT_MAX_STEPS) -> int:
    """Instructions executed from init_machine(seed), including a faulting run's prefix."""
    result = execute(function, init_machine(seed), max_steps)
    return result.state.step_count
