"""Side-effect correction for inserted adversarial instructions.

A plan wraps the adversarial instruction with fix instructions so the
whole sequence is an observable no-op: written registers are spilled
and restored, flags are saved with pushfq/popfq, and memory operands
are redirected into the bumper zones.
"""

from loguru import logger

from simevade.core.asm_parser import render_instruction
from simevade.core.semantics import explicit_destination, instruction_side_effects
from simevade.models.asm import (
    REGISTER_ORDER,
    STACK_POINTER,
    Function,
    Imm,
    Instruction,
    Mem,
    Opcode,
    Origin,
    Reg,
    Register,
)
from simevade.models.attack import (
    BUMPER_ZONES,
    BumperZones,
    CorrectionPlan,
    CorrectionStrategy,
    SideEffectCategory,
)
from simevade.utils.exceptions import UncorrectableError

INVERSES: dict[Opcode, Opcode] = {
    Opcode.ADD: Opcode.SUB,
    Opcode.SUB: Opcode.ADD,
    Opcode.XOR: Opcode.XOR,
}
# Net rsp change of stack opcodes, undone right after the core.
_STACK_DELTA: dict[Opcode, int] = {
    Opcode.PUSH: -8,
    Opcode.PUSHFQ: -8,
    Opcode.POP: 8,
    Opcode.POPFQ: 8,
}


class ZoneCursor:
    """Rotating offset into the bumper zones, one step per correction."""

    def __init__(self, stride: int = 64, zones: BumperZones = BUMPER_ZONES) -> None:
        self.stride = stride
        self.zones = zones
        self.position = 0

    def next_offset(self) -> int:
        offset = self.zones.offset(self.position, self.stride)
        self.position += 1
        return offset


def classify_side_effects(instruction: Instruction) -> frozenset[SideEffectCategory]:
    effects = instruction_side_effects(instruction)
    categories: set[SideEffectCategory] = set()
    if effects.regs_written - {STACK_POINTER}:
        categories.add(SideEffectCategory.COMMON_REGISTER)
    if effects.flags_written:
        categories.add(SideEffectCategory.EFLAG_REGISTER)
    if effects.may_fault:
        categories.add(SideEffectCategory.MEMORY_CORRUPTION)
    return frozenset(categories)


def _fix(opcode: Opcode, *operands: Reg | Imm | Mem) -> Instruction:
    return Instruction(opcode=opcode, operands=operands, origin=Origin.FIX)


def _reject(instruction: Instruction, reason: str) -> UncorrectableError:
    return UncorrectableError(render_instruction(instruction), reason)


def _accessed_memory(instruction: Instruction) -> Mem | None:
    if instruction.opcode is Opcode.LEA:
        return None
    return instruction.memory_operand


def _check_correctable(instruction: Instruction) -> None:
    if instruction.is_control_transfer or instruction.is_exception:
        raise _reject(instruction, "control-transfer and exception instructions are not inserted")
    if explicit_destination(instruction) is STACK_POINTER:
        raise _reject(instruction, "writes rsp explicitly")
    mem = _accessed_memory(instruction)
    if mem is not None and STACK_POINTER in mem.registers():
        raise _reject(instruction, "accesses memory through rsp")


def _redirect(mem: Mem, target: int) -> list[Instruction]:
    """Fix movs that make mem's effective address land at or just above target."""
    if mem.base is not None and mem.index is not None and mem.base != mem.index:
        return [
            _fix(Opcode.MOV, Reg(reg=mem.base), Imm(value=target - mem.disp)),
            _fix(Opcode.MOV, Reg(reg=mem.index), Imm(value=0)),
        ]
    reg = mem.base if mem.base is not None else mem.index
    assert reg is not None
    factor = (1 if mem.base is not None else 0) + (mem.scale if mem.index is not None else 0)
    value = -(-(target - mem.disp) // factor)
    return [_fix(Opcode.MOV, Reg(reg=reg), Imm(value=value))]


def _redirect_plan(
    instruction: Instruction, zone_offset: int, zones: BumperZones
) -> tuple[list[Register], list[Instruction]]:
    mem = _accessed_memory(instruction)
    if mem is None:
        return [], []
    writes = instruction_side_effects(instruction).mem_written is not None
    target = (zones.rw_base if writes else zones.ro_base) + zone_offset
    return list(mem.registers()), _redirect(mem, target)


def build_correction(
    instruction: Instruction,
    strategy: CorrectionStrategy = CorrectionStrategy.SPILL,
    zone_offset: int = 64,
    zones: BumperZones = BUMPER_ZONES,
) -> CorrectionPlan:
    """Fix instructions that neutralise one adversarial instruction."""
    _check_correctable(instruction)
    if strategy is CorrectionStrategy.INVERSE:
        return _inverse_plan(instruction, zone_offset, zones)

    effects = instruction_side_effects(instruction)
    spilled = [
        reg
        for reg in REGISTER_ORDER
        if reg in effects.regs_written and reg is not STACK_POINTER
    ]
    redirect_regs, redirect = _redirect_plan(instruction, zone_offset, zones)
    spilled += [reg for reg in redirect_regs if reg not in spilled]

    prologue: list[Instruction] = []
    epilogue: list[Instruction] = []
    if effects.flags_written:
        prologue.append(_fix(Opcode.PUSHFQ))
    prologue += [_fix(Opcode.PUSH, Reg(reg=reg)) for reg in spilled]
    prologue += redirect

    delta = _STACK_DELTA.get(instruction.opcode)
    if delta is not None:
        epilogue.append(
            _fix(Opcode.LEA, Reg(reg=STACK_POINTER), Mem(base=STACK_POINTER, disp=-delta))
        )
    epilogue += [_fix(Opcode.POP, Reg(reg=reg)) for reg in reversed(spilled)]
    if effects.flags_written:
        epilogue.append(_fix(Opcode.POPFQ))

    return CorrectionPlan(
        prologue=tuple(prologue),
        core=instruction.with_origin(Origin.ADVERSARIAL),
        epilogue=tuple(epilogue),
    )


def _inverse_plan(
    instruction: Instruction, zone_offset: int, zones: BumperZones
) -> CorrectionPlan:
    inverse = INVERSES.get(instruction.opcode)
    if inverse is None:
        raise _reject(instruction, f"no inverse operation for {instruction.opcode}")
    dst, src = instruction.operands
    if not isinstance(dst, Reg):
        raise _reject(instruction, "inverse correction needs a register destination")
    if (isinstance(src, Reg) and src.reg == dst.reg) or (
        isinstance(src, Mem) and dst.reg in src.registers()
    ):
        raise _reject(instruction, "source depends on the destination register")

    redirect_regs, redirect = _redirect_plan(instruction, zone_offset, zones)
    prologue = [
        _fix(Opcode.PUSHFQ),
        *(_fix(Opcode.PUSH, Reg(reg=reg)) for reg in redirect_regs),
        *redirect,
    ]
    epilogue = [
        Instruction(opcode=inverse, operands=instruction.operands, origin=Origin.FIX),
        *(_fix(Opcode.POP, Reg(reg=reg)) for reg in reversed(redirect_regs)),
        _fix(Opcode.POPFQ),
    ]
    return CorrectionPlan(
        prologue=tuple(prologue),
        core=instruction.with_origin(Origin.ADVERSARIAL),
        epilogue=tuple(epilogue),
    )


def correction_for(
    instruction: Instruction,
    strategy: CorrectionStrategy,
    zone_offset: int,
    zones: BumperZones = BUMPER_ZONES,
) -> CorrectionPlan:
    """build_correction, falling back to spill/restore when inverse cannot apply."""
    if strategy is CorrectionStrategy.INVERSE:
        try:
            return build_correction(instruction, strategy, zone_offset, zones)
        except UncorrectableError as exc:
            _check_correctable(instruction)
            logger.debug(f"inverse correction unavailable ({exc.details['reason']}), using spill")
    return build_correction(instruction, CorrectionStrategy.SPILL, zone_offset, zones)


def is_correctable(instruction: Instruction) -> bool:
    try:
        _check_correctable(instruction)
    except UncorrectableError:
        return False
    return True


def apply_correction(function: Function, insert_index: int, plan: CorrectionPlan) -> Function:
    """Splice the plan after insert_index, shifting later label bindings."""
    return _splice(function, insert_index, plan.instructions)


def insert_raw(
    function: Function, insert_index: int, instructions: tuple[Instruction, ...]
) -> Function:
    """Splice instructions without correction; used for query probes only."""
    return _splice(function, insert_index, instructions)


def _splice(
    function: Function, insert_index: int, sequence: tuple[Instruction, ...]
) -> Function:
    if not 0 <= insert_index < len(function):
        raise IndexError(f"insert index {insert_index} outside {function.name}")
    shift = len(sequence)
    instructions = (
        *function.instructions[: insert_index + 1],
        *sequence,
        *function.instructions[insert_index + 1 :],
    )
    labels = {
        label: index + shift if index > insert_index else index
        for label, index in function.labels.items()
    }
    return Function(name=function.name, instructions=instructions, labels=labels)

