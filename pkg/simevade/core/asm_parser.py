"""Textual format for functions: parsing and canonical rendering.

Format (Intel operand order, one function per ``fn`` block)::

    fn name:
      mov rax, [rdi+8]
    loop:
      sub rax, 1
      jne .loop        # jump targets are written with a leading dot
      ret

A trailing ``# adv`` / ``# fix`` comment marks inserted instructions; any
other comment is ignored.
"""

import re

from pydantic import ValidationError

from simevade.models.asm import (
    DISP_MAX,
    DISP_MIN,
    IMM_MAX,
    IMM_MIN,
    JUMPS,
    Function,
    Imm,
    Instruction,
    LabelRef,
    Mem,
    Opcode,
    Operand,
    Origin,
    Reg,
    Register,
)
from simevade.utils.exceptions import (
    AsmSyntaxError,
    UnknownOpcodeError,
    UnresolvedLabelError,
)

_HEADER_RE = re.compile(r"^fn\s+([A-Za-z_][A-Za-z0-9_]*)\s*:$")
_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:")
_INT_RE = re.compile(r"^[+-]?(0[xX][0-9a-fA-F]+|[0-9]+)$")
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_MEM_TERM_RE = re.compile(r"([+-]?)([^+-]+)")

_REGISTERS = {reg.value: reg for reg in Register}
_OPCODES = {op.value: op for op in Opcode}
_ORIGIN_TAGS = {"adv": Origin.ADVERSARIAL, "fix": Origin.FIX}

# Immediates at or above this magnitude render in hex.
_HEX_THRESHOLD = 0x10000


def parse_function(text: str) -> Function:
    """Parse text holding exactly one function."""
    functions = parse_functions(text)
    if len(functions) != 1:
        raise AsmSyntaxError(f"expected exactly one function, found {len(functions)}")
    return functions[0]


def parse_functions(text: str) -> list[Function]:
    """Parse every ``fn`` block in text."""
    functions: list[Function] = []
    builder: _FunctionBuilder | None = None

    for line_no, raw in enumerate(text.split("\n"), start=1):
        code, comment = _split_comment(raw)
        stripped = code.strip()
        if not stripped:
            continue

        header = _HEADER_RE.match(stripped)
        if header:
            if builder is not None:
                functions.append(builder.build())
            builder = _FunctionBuilder(header.group(1), line_no)
            continue

        if builder is None:
            raise AsmSyntaxError(
                "instruction outside of a function block",
                line=line_no,
                column=_column(raw, stripped),
            )

        label = _LABEL_RE.match(stripped)
        if label:
            builder.add_label(label.group(1), line_no, _column(raw, stripped))
            stripped = stripped[label.end() :].strip()
            if not stripped:
                continue

        origin = _ORIGIN_TAGS.get(comment.strip(), Origin.SOURCE)
        builder.add_instruction(_parse_instruction(stripped, raw, line_no, origin))

    if builder is None:
        raise AsmSyntaxError("no function found")
    functions.append(builder.build())
    return functions


class _FunctionBuilder:
    """Accumulates one function block while parsing."""

    def __init__(self, name: str, line: int) -> None:
        self.name = name
        self.line = line
        self.instructions: list[Instruction] = []
        self.labels: dict[str, int] = {}
        self.pending: list[tuple[str, int]] = []
        self.jump_sites: list[tuple[str, int]] = []

    def add_label(self, label: str, line: int, column: int) -> None:
        if label in self.labels or any(label == name for name, _ in self.pending):
            raise AsmSyntaxError(f"duplicate label '{label}'", line=line, column=column)
        self.pending.append((label, line))

    def add_instruction(self, item: tuple[Instruction, int]) -> None:
        instruction, line = item
        index = len(self.instructions)
        for label, _ in self.pending:
            self.labels[label] = index
        self.pending.clear()
        if instruction.opcode in JUMPS and instruction.label is not None:
            self.jump_sites.append((instruction.label, line))
        self.instructions.append(instruction)

    def build(self) -> Function:
        if self.pending:
            label, line = self.pending[0]
            raise AsmSyntaxError(
                f"label '{label}' binds to no instruction", line=line, column=1
            )
        if not self.instructions:
            raise AsmSyntaxError(
                f"function '{self.name}' has no instructions", line=self.line, column=1
            )
        for label, _ in self.jump_sites:
            if label not in self.labels:
                raise UnresolvedLabelError(label, details={"function": self.name})
        try:
            return Function(
                name=self.name,
                instructions=tuple(self.instructions),
                labels=self.labels,
            )
        except ValidationError as exc:
            reason = str(exc.errors()[0]["msg"]).removeprefix("Value error, ")
            raise AsmSyntaxError(reason, line=self.line, column=1) from exc


def _split_comment(raw: str) -> tuple[str, str]:
    code, sep, comment = raw.partition("#")
    return code, comment if sep else ""


def _column(raw: str, token: str) -> int:
    position = raw.find(token)
    return position + 1 if position >= 0 else 1


def _parse_instruction(
    text: str, raw: str, line: int, origin: Origin
) -> tuple[Instruction, int]:
    parts = text.split(maxsplit=1)
    mnemonic = parts[0]
    rest = parts[1] if len(parts) > 1 else ""
    opcode = _OPCODES.get(mnemonic.lower())
    if opcode is None:
        raise UnknownOpcodeError(mnemonic, line=line, column=_column(raw, mnemonic))

    operands: list[Operand] = []
    rest = rest.strip()
    if rest:
        for chunk in rest.split(","):
            token = chunk.strip()
            if not token:
                raise AsmSyntaxError(
                    "empty operand", line=line, column=_column(raw, rest)
                )
            operands.append(_parse_operand(token, raw, line))

    try:
        instruction = Instruction(opcode=opcode, operands=tuple(operands), origin=origin)
    except ValidationError as exc:
        raise AsmSyntaxError(
            str(exc.errors()[0]["msg"]).removeprefix("Value error, "),
            line=line,
            column=_column(raw, mnemonic),
        ) from exc
    return instruction, line


def _parse_operand(token: str, raw: str, line: int) -> Operand:
    column = _column(raw, token)
    lowered = token.lower()
    if token.startswith("["):
        return _parse_mem(token, line, column)
    if token.startswith("."):
        name = token[1:]
        if not _IDENT_RE.match(name):
            raise AsmSyntaxError(f"bad label reference '{token}'", line=line, column=column)
        return LabelRef(name=name)
    if lowered in _REGISTERS:
        return Reg(reg=_REGISTERS[lowered])
    if _INT_RE.match(token):
        value = _parse_int(token)
        if not IMM_MIN <= value <= IMM_MAX:
            raise AsmSyntaxError(
                f"immediate {token} outside signed 64-bit range", line=line, column=column
            )
        return Imm(value=value)
    raise AsmSyntaxError(f"unrecognised operand '{token}'", line=line, column=column)


def _parse_mem(token: str, line: int, column: int) -> Mem:
    if not token.endswith("]"):
        raise AsmSyntaxError("unterminated memory operand", line=line, column=column)
    inner = token[1:-1].replace(" ", "").replace("\t", "")
    if not inner:
        raise AsmSyntaxError("empty memory operand", line=line, column=column)

    base: Register | None = None
    index: Register | None = None
    scale = 1
    disp = 0
    consumed = 0
    for match in _MEM_TERM_RE.finditer(inner):
        if match.start() != consumed:
            break
        consumed = match.end()
        sign, term = match.group(1), match.group(2).lower()
        if "*" in term:
            reg_text, _, scale_text = term.partition("*")
            if reg_text not in _REGISTERS or scale_text not in {"1", "2", "4", "8"}:
                raise AsmSyntaxError(f"bad index term '{term}'", line=line, column=column)
            if sign == "-" or index is not None:
                raise AsmSyntaxError(f"bad index term '{term}'", line=line, column=column)
            index, scale = _REGISTERS[reg_text], int(scale_text)
        elif term in _REGISTERS:
            if sign == "-":
                raise AsmSyntaxError(
                    f"register '{term}' cannot be subtracted", line=line, column=column
                )
            if base is None:
                base = _REGISTERS[term]
            elif index is None:
                index = _REGISTERS[term]
            else:
                raise AsmSyntaxError("too many registers", line=line, column=column)
        elif _INT_RE.match(term):
            value = _parse_int(term)
            disp += -value if sign == "-" else value
        else:
            raise AsmSyntaxError(f"bad address term '{term}'", line=line, column=column)
    if consumed != len(inner):
        raise AsmSyntaxError(f"malformed address '{token}'", line=line, column=column)
    if base is None and index is None:
        raise AsmSyntaxError("address needs a register", line=line, column=column)
    if not DISP_MIN <= disp <= DISP_MAX:
        raise AsmSyntaxError("displacement outside signed 32-bit range", line=line, column=column)
    return Mem(base=base, index=index, scale=scale, disp=disp)  # type: ignore[arg-type]


def _parse_int(text: str) -> int:
    sign = -1 if text.startswith("-") else 1
    digits = text.lstrip("+-")
    if digits.lower().startswith("0x"):
        return sign * int(digits[2:], 16)
    return sign * int(digits, 10)


def format_int(value: int) -> str:
    """Decimal for small magnitudes, hex otherwise."""
    magnitude = abs(value)
    sign = "-" if value < 0 else ""
    if magnitude >= _HEX_THRESHOLD:
        return f"{sign}{magnitude:#x}"
    return f"{sign}{magnitude}"


def render_operand(operand: Operand) -> str:
    if isinstance(operand, Reg):
        return operand.reg.value
    if isinstance(operand, Imm):
        return format_int(operand.value)
    if isinstance(operand, LabelRef):
        return f".{operand.name}"
    text = operand.base.value if operand.base is not None else ""
    if operand.index is not None:
        term = f"{operand.index.value}*{operand.scale}"
        text = f"{text}+{term}" if text else term
    if operand.disp > 0:
        text += f"+{format_int(operand.disp)}"
    elif operand.disp < 0:
        text += format_int(operand.disp)
    return f"[{text}]"


def render_instruction(instruction: Instruction) -> str:
    if not instruction.operands:
        return instruction.opcode.value
    operands = ", ".join(render_operand(op) for op in instruction.operands)
    return f"{instruction.opcode.value} {operands}"


def render_function(function: Function) -> str:
    """Canonical text; parse_function(render_function(f)) == f."""
    lines = [f"fn {function.name}:"]
    by_index: dict[int, list[str]] = {}
    for label, index in function.labels.items():
        by_index.setdefault(index, []).append(label)
    for index, instruction in enumerate(function.instructions):
        for label in by_index.get(index, []):
            lines.append(f"{label}:")
        text = f"  {render_instruction(instruction)}"
        if instruction.origin is not Origin.SOURCE:
            text += f"  # {instruction.origin.value}"
        lines.append(text)
    return "\n".join(lines) + "\n"
