"""Instruction-set models: registers, flags, operands, instructions and functions."""

from enum import StrEnum
from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

IDENTIFIER_PATTERN = r"^[A-Za-z_][A-Za-z0-9_]*$"
IMM_MIN, IMM_MAX = -(1 << 63), (1 << 63) - 1
DISP_MIN, DISP_MAX = -(1 << 31), (1 << 31) - 1


class Register(StrEnum):
    """The 16 general-purpose 64-bit registers."""

    RAX = "rax"
    RBX = "rbx"
    RCX = "rcx"
    RDX = "rdx"
    RSI = "rsi"
    RDI = "rdi"
    RBP = "rbp"
    RSP = "rsp"
    R8 = "r8"
    R9 = "r9"
    R10 = "r10"
    R11 = "r11"
    R12 = "r12"
    R13 = "r13"
    R14 = "r14"
    R15 = "r15"


STACK_POINTER = Register.RSP
REGISTER_ORDER: tuple[Register, ...] = tuple(Register)
CALLER_SAVED: tuple[Register, ...] = (
    Register.RAX,
    Register.RCX,
    Register.RDX,
    Register.RSI,
    Register.RDI,
    Register.R8,
    Register.R9,
    Register.R10,
    Register.R11,
)


class Flag(StrEnum):
    """Arithmetic flags of RFLAGS."""

    CF = "cf"
    PF = "pf"
    AF = "af"
    ZF = "zf"
    SF = "sf"
    OF = "of"


ALL_FLAGS: frozenset[Flag] = frozenset(Flag)
LOGIC_FLAGS: frozenset[Flag] = frozenset({Flag.CF, Flag.PF, Flag.ZF, Flag.SF, Flag.OF})
# RFLAGS bit positions, used by pushfq/popfq.
FLAG_BITS: dict[Flag, int] = {
    Flag.CF: 0,
    Flag.PF: 2,
    Flag.AF: 4,
    Flag.ZF: 6,
    Flag.SF: 7,
    Flag.OF: 11,
}


class Opcode(StrEnum):
    """Supported mnemonics."""

    MOV = "mov"
    LEA = "lea"
    ADD = "add"
    SUB = "sub"
    XOR = "xor"
    AND = "and"
    OR = "or"
    IMUL = "imul"
    CMP = "cmp"
    TEST = "test"
    PUSH = "push"
    POP = "pop"
    PUSHFQ = "pushfq"
    POPFQ = "popfq"
    NOP = "nop"
    JMP = "jmp"
    JE = "je"
    JNE = "jne"
    JL = "jl"
    JLE = "jle"
    JG = "jg"
    JGE = "jge"
    CALL = "call"
    RET = "ret"
    SYSCALL = "syscall"
    INT = "int"


CONDITIONAL_JUMPS: frozenset[Opcode] = frozenset(
    {Opcode.JE, Opcode.JNE, Opcode.JL, Opcode.JLE, Opcode.JG, Opcode.JGE}
)
JUMPS: frozenset[Opcode] = CONDITIONAL_JUMPS | {Opcode.JMP}
CONTROL_TRANSFER: frozenset[Opcode] = JUMPS | {Opcode.CALL, Opcode.RET}
EXCEPTION_TRIGGERING: frozenset[Opcode] = frozenset({Opcode.SYSCALL, Opcode.INT})
# Opcodes that end a basic block.
TERMINATORS: frozenset[Opcode] = JUMPS | {Opcode.RET}


class Origin(StrEnum):
    """Where an instruction came from."""

    SOURCE = "source"
    ADVERSARIAL = "adv"
    FIX = "fix"


class Reg(BaseModel):
    """Register operand."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["reg"] = "reg"
    reg: Register


class Imm(BaseModel):
    """Signed 64-bit immediate."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["imm"] = "imm"
    value: int = Field(ge=IMM_MIN, le=IMM_MAX)


class Mem(BaseModel):
    """Memory operand [base + index*scale + disp]."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["mem"] = "mem"
    base: Register | None = None
    index: Register | None = None
    scale: Literal[1, 2, 4, 8] = 1
    disp: int = Field(default=0, ge=DISP_MIN, le=DISP_MAX)

    @model_validator(mode="after")
    def _needs_register(self) -> "Mem":
        if self.base is None and self.index is None:
            raise ValueError("memory operand needs a base or an index register")
        return self

    def registers(self) -> tuple[Register, ...]:
        """Distinct address registers, base first."""
        regs: list[Register] = []
        for reg in (self.base, self.index):
            if reg is not None and reg not in regs:
                regs.append(reg)
        return tuple(regs)


class LabelRef(BaseModel):
    """Reference to a label (jump target or callee)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["label"] = "label"
    name: str = Field(pattern=IDENTIFIER_PATTERN)


Operand = Annotated[Reg | Imm | Mem | LabelRef, Field(discriminator="kind")]

_R = frozenset({"reg"})
_RM = frozenset({"reg", "mem"})
_RI = frozenset({"reg", "imm"})
_RMI = frozenset({"reg", "mem", "imm"})
_M = frozenset({"mem"})
_I = frozenset({"imm"})
_L = frozenset({"label"})

# Allowed operand kinds per position.
OPERAND_SHAPES: dict[Opcode, tuple[frozenset[str], ...]] = {
    Opcode.MOV: (_RM, _RMI),
    Opcode.LEA: (_R, _M),
    Opcode.ADD: (_RM, _RMI),
    Opcode.SUB: (_RM, _RMI),
    Opcode.XOR: (_RM, _RMI),
    Opcode.AND: (_RM, _RMI),
    Opcode.OR: (_RM, _RMI),
    Opcode.IMUL: (_R, _RMI),
    Opcode.CMP: (_RM, _RMI),
    Opcode.TEST: (_RM, _RI),
    Opcode.PUSH: (_RI,),
    Opcode.POP: (_R,),
    Opcode.PUSHFQ: (),
    Opcode.POPFQ: (),
    Opcode.NOP: (),
    Opcode.JMP: (_L,),
    Opcode.JE: (_L,),
    Opcode.JNE: (_L,),
    Opcode.JL: (_L,),
    Opcode.JLE: (_L,),
    Opcode.JG: (_L,),
    Opcode.JGE: (_L,),
    Opcode.CALL: (_L,),
    Opcode.RET: (),
    Opcode.SYSCALL: (),
    Opcode.INT: (_I,),
}


class Instruction(BaseModel):
    """One instruction; operands are destination-first (Intel order)."""

    model_config = ConfigDict(frozen=True)

    opcode: Opcode
    operands: tuple[Operand, ...] = ()
    origin: Origin = Origin.SOURCE

    @model_validator(mode="after")
    def _check_shape(self) -> "Instruction":
        shape = OPERAND_SHAPES[self.opcode]
        if len(self.operands) != len(shape):
            raise ValueError(
                f"{self.opcode} takes {len(shape)} operand(s), got {len(self.operands)}"
            )
        for position, (operand, allowed) in enumerate(
            zip(self.operands, shape, strict=True)
        ):
            if operand.kind not in allowed:
                raise ValueError(
                    f"{self.opcode} operand {position + 1} cannot be {operand.kind}"
                )
        if sum(1 for operand in self.operands if operand.kind == "mem") > 1:
            raise ValueError(f"{self.opcode} cannot take two memory operands")
        return self

    @property
    def is_control_transfer(self) -> bool:
        return self.opcode in CONTROL_TRANSFER

    @property
    def is_exception(self) -> bool:
        return self.opcode in EXCEPTION_TRIGGERING

    @property
    def is_terminator(self) -> bool:
        return self.opcode in TERMINATORS

    @property
    def memory_operand(self) -> Mem | None:
        for operand in self.operands:
            if isinstance(operand, Mem):
                return operand
        return None

    @property
    def label(self) -> str | None:
        for operand in self.operands:
            if isinstance(operand, LabelRef):
                return operand.name
        return None

    @property
    def key(self) -> tuple[Opcode, tuple[Reg | Imm | Mem | LabelRef, ...]]:
        """Structural identity ignoring origin."""
        return (self.opcode, self.operands)

    def with_origin(self, origin: Origin) -> "Instruction":
        return self.model_copy(update={"origin": origin})


class Function(BaseModel):
    """An ordered instruction list with labels bound to instruction indices."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(pattern=IDENTIFIER_PATTERN)
    instructions: tuple[Instruction, ...] = Field(min_length=1)
    labels: dict[str, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_labels(self) -> "Function":
        size = len(self.instructions)
        for label, index in self.labels.items():
            if not 0 <= index < size:
                raise ValueError(f"label '{label}' binds outside the function ({index})")
        for instruction in self.instructions:
            if instruction.opcode in JUMPS and instruction.label not in self.labels:
                raise ValueError(f"unresolved label '{instruction.label}'")
        return self

    def __len__(self) -> int:
        return len(self.instructions)

    def labels_at(self, index: int) -> list[str]:
        """Labels bound to an index, in definition order."""
        return [label for label, bound in self.labels.items() if bound == index]

    def is_internal_call(self, instruction: Instruction) -> bool:
        return instruction.opcode is Opcode.CALL and instruction.label in self.labels


class SideEffectSet(BaseModel):
    """Architectural state an instruction may change or touch."""

    model_config = ConfigDict(frozen=True)

    regs_written: frozenset[Register] = frozenset()
    flags_written: frozenset[Flag] = frozenset()
    # Subset of flags_written whose value is architecturally unspecified.
    flags_undefined: frozenset[Flag] = frozenset()
    mem_read: Mem | None = None
    mem_written: Mem | None = None

    @computed_field  # type: ignore[prop-decorator]
    @property
    def may_fault(self) -> bool:
        return self.mem_read is not None or self.mem_written is not None

    @property
    def is_empty(self) -> bool:
        return not (
            self.regs_written or self.flags_written or self.may_fault
        )
