"""Side-effect table for the instruction subset."""

from simevade.models.asm import (
    ALL_FLAGS,
    CALLER_SAVED,
    LOGIC_FLAGS,
    JUMPS,
    Flag,
    Instruction,
    Mem,
    Opcode,
    Reg,
    Register,
    SideEffectSet,
)

ARITHMETIC = frozenset({Opcode.ADD, Opcode.SUB})
LOGIC = frozenset({Opcode.XOR, Opcode.AND, Opcode.OR})
BINARY_WRITERS = ARITHMETIC | LOGIC
IMUL_UNDEFINED: frozenset[Flag] = frozenset({Flag.PF, Flag.AF, Flag.ZF, Flag.SF})

_STACK_TOP = Mem(base=Register.RSP, disp=0)
_STACK_PUSH = Mem(base=Register.RSP, disp=-8)
_NO_EFFECT = SideEffectSet()


def instruction_side_effects(instruction: Instruction) -> SideEffectSet:
    """Registers, flags and memory an instruction can change or access.

    Memory operands are reported as written in the instruction; stack
    accesses of push/pop-like opcodes are reported relative to the rsp
    value before the instruction executes.
    """
    op = instruction.opcode
    operands = instruction.operands

    if op is Opcode.NOP or op in JUMPS:
        return _NO_EFFECT

    if op is Opcode.MOV:
        dst, src = operands
        if isinstance(dst, Reg):
            return SideEffectSet(
                regs_written=frozenset({dst.reg}),
                mem_read=src if isinstance(src, Mem) else None,
            )
        assert isinstance(dst, Mem)
        return SideEffectSet(mem_written=dst)

    if op is Opcode.LEA:
        dst = operands[0]
        assert isinstance(dst, Reg)
        return SideEffectSet(regs_written=frozenset({dst.reg}))

    if op in BINARY_WRITERS:
        dst, src = operands
        flags = ALL_FLAGS if op in ARITHMETIC else LOGIC_FLAGS
        if isinstance(dst, Reg):
            return SideEffectSet(
                regs_written=frozenset({dst.reg}),
                flags_written=flags,
                mem_read=src if isinstance(src, Mem) else None,
            )
        assert isinstance(dst, Mem)
        return SideEffectSet(flags_written=flags, mem_read=dst, mem_written=dst)

    if op in (Opcode.CMP, Opcode.TEST):
        flags = ALL_FLAGS if op is Opcode.CMP else LOGIC_FLAGS
        return SideEffectSet(flags_written=flags, mem_read=instruction.memory_operand)

    if op is Opcode.IMUL:
        dst, src = operands
        assert isinstance(dst, Reg)
        return SideEffectSet(
            regs_written=frozenset({dst.reg}),
            flags_written=ALL_FLAGS,
            flags_undefined=IMUL_UNDEFINED,
            mem_read=src if isinstance(src, Mem) else None,
        )

    if op in (Opcode.PUSH, Opcode.PUSHFQ):
        return SideEffectSet(
            regs_written=frozenset({Register.RSP}), mem_written=_STACK_PUSH
        )

    if op is Opcode.POP:
        dst = operands[0]
        assert isinstance(dst, Reg)
        return SideEffectSet(
            regs_written=frozenset({dst.reg, Register.RSP}), mem_read=_STACK_TOP
        )

    if op is Opcode.POPFQ:
        return SideEffectSet(
            regs_written=frozenset({Register.RSP}),
            flags_written=ALL_FLAGS,
            mem_read=_STACK_TOP,
        )

    if op is Opcode.RET:
        return SideEffectSet(regs_written=frozenset({Register.RSP}), mem_read=_STACK_TOP)

    if op is Opcode.CALL:
        return SideEffectSet(
            regs_written=frozenset(CALLER_SAVED) | {Register.RSP},
            mem_written=_STACK_PUSH,
        )

    if op is Opcode.SYSCALL:
        return SideEffectSet(
            regs_written=frozenset({Register.RAX, Register.RCX, Register.R11})
        )

    if op is Opcode.INT:
        return SideEffectSet(regs_written=frozenset({Register.RAX}))

    raise AssertionError(f"no side-effect rule for {op}")


def explicit_destination(instruction: Instruction) -> Register | None:
    """Register named as the destination operand, if any."""
    if instruction.opcode in BINARY_WRITERS | {
        Opcode.MOV,
        Opcode.LEA,
        Opcode.IMUL,
        Opcode.POP,
    }:
        dst = instruction.operands[0]
        if isinstance(dst, Reg):
            return dst.reg
    return None
