"""Synthetic function corpus.

Functions come in families. A family is one template function drawn
from an instruction-mix prior; each member is the template minus one
entry-block instruction of a kind no other member drops, so every
member has close neighbours that differ from it in a single opcode
count. Templates are a sequence of control-flow regions (if-then,
diamond, counted loop, early exit) joined by straight-line code, wrapped
in an optional callee-saved push/pop frame.
"""

from typing import Literal

import numpy as np
from loguru import logger

from simevade.core.asm_parser import parse_function, render_function
from simevade.core.cfg_builder import build_cfg
from simevade.core.dominators import vulnerable_candidates
from simevade.core.emulator import execute, init_machine
from simevade.models.asm import (
    CONDITIONAL_JUMPS,
    REGISTER_ORDER,
    Function,
    Imm,
    Instruction,
    LabelRef,
    Mem,
    Opcode,
    Reg,
    Register,
)
from simevade.models.emulation import Halted
from simevade.models.oracle import FunctionPool
from simevade.models.report import CorpusSpec
from simevade.utils.exceptions import (
    EmptyCandidatesError,
    GenerationRetryExceededError,
    NoExitError,
)

BODY_KINDS = (
    "mov",
    "lea",
    "add",
    "sub",
    "xor",
    "and",
    "or",
    "imul",
    "cmp",
    "test",
    "nop",
    "pushpop",
    "call",
)
# Kinds a family member may drop; push/pop pairs and calls always stay.
DELETABLE_KINDS = tuple(k for k in BODY_KINDS if k not in ("pushpop", "call"))
EXTERNAL_CALLEES = ("memcpy", "memset", "strlen", "malloc", "free", "printf")
# r15 is the loop counter, so straight-line code never writes it.
LOOP_COUNTER = Register.R15
DATA_REGISTERS = tuple(r for r in REGISTER_ORDER if r not in (Register.RSP, LOOP_COUNTER))
CALLEE_SAVED = (Register.RBX, Register.RBP, Register.R12, Register.R13, Register.R14)
# Extra blocks each region adds.
REGION_BLOCKS = {"if": 2, "diamond": 3, "loop": 2, "exit": 2, "goto": 1}
RANDOM_OPCODES = (
    Opcode.MOV,
    Opcode.LEA,
    Opcode.ADD,
    Opcode.SUB,
    Opcode.XOR,
    Opcode.AND,
    Opcode.OR,
    Opcode.IMUL,
    Opcode.CMP,
    Opcode.TEST,
    Opcode.PUSH,
    Opcode.POP,
    Opcode.PUSHFQ,
    Opcode.POPFQ,
    Opcode.NOP,
)
_JCC = tuple(sorted(CONDITIONAL_JUMPS))
_SCALES: tuple[Literal[1, 2, 4, 8], ...] = (1, 2, 4, 8)
_VALIDATION_SEEDS = (0, 1)


def _reg(rng: np.random.Generator, pool: tuple[Register, ...] = DATA_REGISTERS) -> Reg:
    return Reg(reg=pool[int(rng.integers(len(pool)))])


def _imm(rng: np.random.Generator) -> Imm:
    # Mostly small constants, occasionally a wide one.
    if rng.random() < 0.8:
        return Imm(value=int(rng.integers(-256, 256)))
    return Imm(value=int(rng.integers(-(1 << 31), 1 << 31)))


def _mem(rng: np.random.Generator, registers: tuple[Register, ...] = DATA_REGISTERS) -> Mem:
    shape = rng.random()
    disp = int(rng.integers(-8, 33)) * 8
    if shape < 0.1:
        return Mem(base=Register.RSP, disp=int(rng.integers(1, 9)) * 8)
    if shape < 0.7:
        return Mem(base=_reg(rng, registers).reg, disp=disp)
    scale = _SCALES[int(rng.integers(4))]
    if shape < 0.9:
        base, index = _reg(rng, registers).reg, _reg(rng, registers).reg
        return Mem(base=base, index=index, scale=scale, disp=disp)
    return Mem(index=_reg(rng, registers).reg, scale=scale, disp=disp)


def random_instruction(rng: np.random.Generator, allow_rsp: bool = False) -> Instruction:
    """Uniform draw over non-control opcodes and their operand shapes."""
    registers = tuple(REGISTER_ORDER) if allow_rsp else tuple(
        r for r in REGISTER_ORDER if r is not Register.RSP
    )
    opcode = RANDOM_OPCODES[int(rng.integers(len(RANDOM_OPCODES)))]

    def reg() -> Reg:
        return _reg(rng, registers)

    def mem() -> Mem:
        shape = int(rng.integers(3))
        disp = int(rng.integers(-256, 257))
        scale = _SCALES[int(rng.integers(4))]
        if shape == 0:
            return Mem(base=reg().reg, disp=disp)
        if shape == 1:
            return Mem(base=reg().reg, index=reg().reg, scale=scale, disp=disp)
        return Mem(index=reg().reg, scale=scale, disp=disp)

    def imm() -> Imm:
        return Imm(value=int(rng.integers(-(1 << 31), 1 << 31)))

    if opcode in (Opcode.PUSHFQ, Opcode.POPFQ, Opcode.NOP):
        return Instruction(opcode=opcode)
    if opcode is Opcode.POP:
        return Instruction(opcode=opcode, operands=(reg(),))
    if opcode is Opcode.PUSH:
        return Instruction(opcode=opcode, operands=(reg() if rng.random() < 0.7 else imm(),))
    if opcode is Opcode.LEA:
        return Instruction(opcode=opcode, operands=(reg(), mem()))
    if opcode is Opcode.IMUL:
        src = (reg, mem, imm)[int(rng.integers(3))]()
        return Instruction(opcode=opcode, operands=(reg(), src))
    if opcode is Opcode.TEST:
        dst = reg() if rng.random() < 0.5 else mem()
        src = imm() if rng.random() < 0.5 else reg()
        return Instruction(opcode=opcode, operands=(dst, src))
    # mov / add / sub / xor / and / or / cmp: (r|m, r|m|i) with one memory operand at most
    form = int(rng.integers(4))
    if form == 0:
        return Instruction(opcode=opcode, operands=(reg(), reg()))
    if form == 1:
        return Instruction(opcode=opcode, operands=(reg(), imm()))
    if form == 2:
        return Instruction(opcode=opcode, operands=(reg(), mem()))
    return Instruction(opcode=opcode, operands=(mem(), reg() if rng.random() < 0.5 else imm()))


class _Emitter:
    """Appends instructions and binds pending labels to the next one."""

    def __init__(self, name: str) -> None:
        self.name = name
        self.instructions: list[Instruction] = []
        self.labels: dict[str, int] = {}
        self._pending: list[str] = []
        self._counter = 0

    def fresh_label(self) -> str:
        self._counter += 1
        return f"L{self._counter}"

    def bind(self, label: str) -> None:
        self._pending.append(label)

    def emit(self, opcode: Opcode, *operands: Reg | Imm | Mem | LabelRef) -> None:
        for label in self._pending:
            self.labels[label] = len(self.instructions)
        self._pending.clear()
        self.instructions.append(Instruction(opcode=opcode, operands=operands))

    def build(self) -> Function:
        return Function(name=self.name, instructions=tuple(self.instructions), labels=self.labels)


class _FunctionGenerator:
    def __init__(self, name: str, rng: np.random.Generator, weights: np.ndarray) -> None:
        self.rng = rng
        self.weights = weights
        self.out = _Emitter(name)

    def straight(self, count: int) -> None:
        """Exactly count body instructions."""
        rng, out = self.rng, self.out
        remaining = count
        while remaining > 0:
            kind = BODY_KINDS[int(rng.choice(len(BODY_KINDS), p=self.weights))]
            if kind == "pushpop":
                if remaining < 2:
                    kind = "nop"
                else:
                    out.emit(Opcode.PUSH, _reg(rng))
                    out.emit(Opcode.POP, _reg(rng))
                    remaining -= 2
                    continue
            self._body(kind)
            remaining -= 1

    def entry(self, count: int, signature: list[str]) -> list[int]:
        """count body instructions, one of them per signature kind.

        Returns the index of each signature instruction, in signature order.
        """
        slots = sorted(int(i) for i in self.rng.choice(count, len(signature), replace=False))
        marked: list[int] = []
        previous = 0
        for slot, kind in zip(slots, signature, strict=True):
            self.straight(slot - previous)
            marked.append(len(self.out.instructions))
            self._body(kind)
            previous = slot + 1
        self.straight(count - previous)
        return marked

    def _body(self, kind: str) -> None:
        rng, out = self.rng, self.out
        if kind == "nop":
            out.emit(Opcode.NOP)
        elif kind == "call":
            callee = EXTERNAL_CALLEES[int(rng.integers(len(EXTERNAL_CALLEES)))]
            out.emit(Opcode.CALL, LabelRef(name=callee))
        elif kind == "lea":
            out.emit(Opcode.LEA, _reg(rng), _mem(rng))
        elif kind == "imul":
            out.emit(Opcode.IMUL, _reg(rng), _reg(rng) if rng.random() < 0.6 else _imm(rng))
        elif kind in ("cmp", "test"):
            self._compare(Opcode(kind))
        else:
            opcode = Opcode(kind)
            form = rng.random()
            if form < 0.5:
                out.emit(opcode, _reg(rng), _reg(rng))
            elif form < 0.8:
                out.emit(opcode, _reg(rng), _imm(rng))
            elif form < 0.94:
                out.emit(opcode, _reg(rng), _mem(rng))
            else:
                out.emit(opcode, _mem(rng), _reg(rng))

    def _compare(self, opcode: Opcode) -> None:
        rng = self.rng
        if opcode is Opcode.TEST:
            self.out.emit(opcode, _reg(rng), _reg(rng) if rng.random() < 0.7 else _imm(rng))
        else:
            self.out.emit(opcode, _reg(rng), _imm(rng) if rng.random() < 0.6 else _reg(rng))

    def _jcc(self) -> Opcode:
        return _JCC[int(self.rng.integers(len(_JCC)))]

    def region(self, kind: str, bodies: list[int], saved: list[Register]) -> None:
        out = self.out
        if kind == "if":
            join = out.fresh_label()
            self._compare(Opcode.CMP)
            out.emit(self._jcc(), LabelRef(name=join))
            self.straight(bodies[0])
            out.bind(join)
        elif kind == "diamond":
            other, join = out.fresh_label(), out.fresh_label()
            self._compare(Opcode.CMP)
            out.emit(self._jcc(), LabelRef(name=other))
            self.straight(bodies[0])
            out.emit(Opcode.JMP, LabelRef(name=join))
            out.bind(other)
            self.straight(bodies[1])
            out.bind(join)
        elif kind == "loop":
            head = out.fresh_label()
            out.emit(Opcode.MOV, Reg(reg=LOOP_COUNTER), Imm(value=int(self.rng.integers(2, 6))))
            out.bind(head)
            self.straight(bodies[0])
            out.emit(Opcode.SUB, Reg(reg=LOOP_COUNTER), Imm(value=1))
            out.emit(Opcode.JNE, LabelRef(name=head))
        elif kind == "exit":
            stay = out.fresh_label()
            self._compare(Opcode.TEST)
            out.emit(Opcode.JNE, LabelRef(name=stay))
            self.epilogue(saved)
            out.bind(stay)
        elif kind == "goto":
            target = out.fresh_label()
            out.emit(Opcode.JMP, LabelRef(name=target))
            out.bind(target)

    def prologue(self, saved: list[Register]) -> None:
        for reg in saved:
            self.out.emit(Opcode.PUSH, Reg(reg=reg))

    def epilogue(self, saved: list[Register]) -> None:
        for reg in reversed(saved):
            self.out.emit(Opcode.POP, Reg(reg=reg))
        self.out.emit(Opcode.RET)


# Fixed (non-body) instructions of each region, excluding saved-register pops.
_REGION_FIXED = {"if": 2, "diamond": 3, "loop": 3, "exit": 3, "goto": 1}
_REGION_BODIES = {"if": 1, "diamond": 2, "loop": 1, "exit": 0, "goto": 0}


def _plan_regions(rng: np.random.Generator, extra_blocks: int) -> list[str]:
    regions: list[str] = []
    while extra_blocks > 0:
        fitting = [k for k, cost in REGION_BLOCKS.items() if cost <= extra_blocks and k != "goto"]
        kind = str(rng.choice(fitting)) if fitting else "goto"
        regions.append(kind)
        extra_blocks -= REGION_BLOCKS[kind]
    return regions


def _signature(rng: np.random.Generator, weights: np.ndarray, size: int) -> list[str]:
    """Kinds whose entry-block instruction one family member each drops."""
    available = [k for k in DELETABLE_KINDS if weights[BODY_KINDS.index(k)] > 0.0]
    if not available:
        available = ["nop"]
    order = [available[int(i)] for i in rng.permutation(len(available))]
    return [order[i % len(order)] for i in range(size)]


def _generate_template(
    name: str,
    spec: CorpusSpec,
    rng: np.random.Generator,
    weights: np.ndarray,
    signature: list[str],
) -> tuple[Function, list[int]] | None:
    # Members are one instruction shorter than the template.
    length = int(rng.integers(spec.min_length + 1, spec.max_length + 2))
    blocks = int(rng.integers(spec.min_blocks, spec.max_blocks + 1))
    saved_count = int(rng.integers(0, 3)) if length >= 20 else 0
    picked = rng.choice(len(CALLEE_SAVED), saved_count, replace=False)
    saved = [CALLEE_SAVED[int(i)] for i in sorted(picked)]
    regions = _plan_regions(rng, blocks - 1)

    fixed = sum(_REGION_FIXED[r] for r in regions)
    fixed += sum(len(saved) for r in regions if r == "exit")
    fixed += 2 * len(saved) + 1
    body_slots = sum(_REGION_BODIES[r] for r in regions)
    # One mandatory instruction per body slot plus the entry signature.
    free = length - fixed - body_slots - len(signature)
    if free < 0:
        return None

    slots = body_slots + len(regions) + 1
    extra = rng.multinomial(free, np.full(slots, 1.0 / slots))
    bodies = [1 + int(n) for n in extra[:body_slots]]
    gaps = [int(n) for n in extra[body_slots:]]

    gen = _FunctionGenerator(name, rng, weights)
    gen.prologue(saved)
    marked = gen.entry(gaps[0] + len(signature), signature)
    cursor = 0
    for position, kind in enumerate(regions, start=1):
        need = _REGION_BODIES[kind]
        gen.region(kind, bodies[cursor : cursor + need], saved)
        cursor += need
        gen.straight(gaps[position])
    gen.epilogue(saved)
    return gen.out.build(), marked


def drop_instruction(function: Function, index: int, name: str) -> Function:
    """Copy of function without one non-terminator instruction, renamed."""
    instructions = function.instructions[:index] + function.instructions[index + 1 :]
    labels = {
        label: bound - 1 if bound > index else bound for label, bound in function.labels.items()
    }
    return Function(name=name, instructions=instructions, labels=labels)


def _acceptable(function: Function, spec: CorpusSpec, max_steps: int) -> bool:
    if parse_function(render_function(function)) != function:
        return False
    if not spec.min_length <= len(function) <= spec.max_length:
        return False
    cfg = build_cfg(function)
    if cfg.unreachable or not spec.min_blocks <= len(cfg.blocks) <= spec.max_blocks:
        return False
    try:
        vulnerable_candidates(function, cfg)
    except (NoExitError, EmptyCandidatesError):
        return False
    return all(
        isinstance(execute(function, init_machine(seed), max_steps), Halted)
        for seed in _VALIDATION_SEEDS
    )


def family_weights(spec: CorpusSpec) -> np.ndarray:
    """Instruction-mix prior of every family, one row per family."""
    rng = np.random.default_rng([spec.seed, 0xFA])
    if spec.opcode_weights is not None:
        base = np.array([spec.opcode_weights.get(kind, 0.0) for kind in BODY_KINDS])
        if base.sum() <= 0:
            raise ValueError("opcode_weights must give some kind a positive weight")
        base = base / base.sum()
        return np.tile(base, (spec.families, 1))
    return rng.dirichlet(np.full(len(BODY_KINDS), 2.0), size=spec.families)


def _family(
    ids: list[str], spec: CorpusSpec, prior: np.ndarray, rng: np.random.Generator
) -> list[Function] | None:
    # Per-family jitter around the prior; kinds outside the prior stay absent.
    weights = rng.dirichlet(prior * 40.0 + 0.05) * (prior > 0.0)
    weights = weights / weights.sum()
    signature = _signature(rng, weights, len(ids))
    built = _generate_template(ids[0], spec, rng, weights, signature)
    if built is None:
        return None
    template, marked = built
    return [
        drop_instruction(template, index, function_id)
        for function_id, index in zip(ids, marked, strict=True)
    ]


def generate_corpus(
    spec: CorpusSpec, max_attempts: int = 200, max_steps: int = 100_000
) -> FunctionPool:
    """Deterministic pool of spec.count validated functions (ids fn0000, ...).

    Function i belongs to family i % families. A family is one template;
    each member drops a different entry-block instruction from it.
    """
    priors = family_weights(spec)
    members: dict[int, Function] = {}
    for family in range(min(spec.families, spec.count)):
        indices = list(range(family, spec.count, spec.families))
        ids = [f"fn{index:04d}" for index in indices]
        if len(ids) > len(DELETABLE_KINDS):
            logger.warning(f"Family {family} has {len(ids)} members; some share a dropped kind")
        for attempt in range(max_attempts):
            rng = np.random.default_rng([spec.seed, family, attempt])
            functions = _family(ids, spec, priors[family], rng)
            if functions is not None and all(
                _acceptable(function, spec, max_steps) for function in functions
            ):
                members.update(zip(indices, functions, strict=True))
                break
        else:
            raise GenerationRetryExceededError(index=indices[0], attempts=max_attempts)
    entries = {f"fn{index:04d}": members[index] for index in range(spec.count)}
    logger.info(
        f"Generated {len(entries)} functions in {min(spec.families, spec.count)} families "
        f"(lengths {spec.min_length}-{spec.max_length}, seed {spec.seed})"
    )
    return FunctionPool(entries=entries)
