"""Attack configuration, candidates, correction plans and outcomes."""

import math
from enum import StrEnum
from typing import TYPE_CHECKING, Any

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    computed_field,
    field_serializer,
    field_validator,
    model_validator,
)

from simevade.core.asm_parser import parse_function, render_function
from simevade.models.asm import Function, Instruction, Opcode
from simevade.models.oracle import FunctionId
from simevade.utils.hashing import MASK64

if TYPE_CHECKING:
    from simevade.config import Settings


class AttackMode(StrEnum):
    """Which attack stages run; the two random modes are ablations."""

    FULL = "full"
    RANDOM_POSITIONS = "random-positions"
    RANDOM_INSTRUCTIONS = "random-instructions"


class AttackStatus(StrEnum):
    SUCCESS = "Success"
    NO_CANDIDATES = "NoCandidates"
    BUDGET_EXCEEDED = "BudgetExceeded"
    SIMILARITY_VIOLATED = "SimilarityViolated"
    EQUIVALENCE_FAILED = "EquivalenceFailed"


class CorrectionStrategy(StrEnum):
    SPILL = "spill"
    INVERSE = "inverse"


class SideEffectCategory(StrEnum):
    COMMON_REGISTER = "CommonRegister"
    EFLAG_REGISTER = "EflagRegister"
    MEMORY_CORRUPTION = "MemoryCorruption"


class BumperZones(BaseModel):
    """Pre-mapped regions that absorb redirected memory accesses."""

    model_config = ConfigDict(frozen=True)

    ro_base: int = 0x1000_0000
    ro_size: int = 0x10000
    rw_base: int = 0x2000_0000
    rw_size: int = 0x10000
    # Global pointers to the zone bases; read-only like the ro zone.
    ptr_slots: tuple[int, int] = (0x3000_0000, 0x3000_0008)
    stack_base: int = 0x7FFF_0000
    stack_size: int = 0x10000
    red_zone: int = 128

    @model_validator(mode="after")
    def _disjoint(self) -> "BumperZones":
        spans = sorted(
            [
                (self.ro_base, self.ro_base + self.ro_size),
                (self.rw_base, self.rw_base + self.rw_size),
                (min(self.ptr_slots), max(self.ptr_slots) + 8),
                (self.stack_base, self.stack_base + self.stack_size),
            ]
        )
        for (_, end), (start, _) in zip(spans, spans[1:], strict=False):
            if start < end:
                raise ValueError("bumper zones overlap each other or the stack")
        return self

    @property
    def stack_top(self) -> int:
        return self.stack_base + self.stack_size

    @property
    def initial_rsp(self) -> int:
        return self.stack_top - self.red_zone

    def in_ro(self, address: int) -> bool:
        return self.ro_base <= address < self.ro_base + self.ro_size

    def in_rw(self, address: int) -> bool:
        return self.rw_base <= address < self.rw_base + self.rw_size

    def in_ptr_slot(self, address: int) -> bool:
        return any(slot <= address < slot + 8 for slot in self.ptr_slots)

    def is_read_only(self, address: int) -> bool:
        return self.in_ro(address) or self.in_ptr_slot(address)

    def in_any(self, address: int) -> bool:
        return self.in_ro(address) or self.in_rw(address) or self.in_ptr_slot(address)

    def offset(self, cursor: int, stride: int) -> int:
        """Rotating in-zone offset with 64 bytes of slack on both sides."""
        usable = min(self.ro_size, self.rw_size) - 128
        return 64 + (cursor * stride) % usable


BUMPER_ZONES = BumperZones()


class AttackConfig(BaseModel):
    """Knobs of one attack run."""

    model_config = ConfigDict(frozen=True)

    k: int = Field(default=5, ge=1)
    epsilon: float = Field(default=0.8, gt=0.0, le=1.0)
    num_candidates: int = Field(default=200, ge=1)
    inverse_m: int = Field(default=10, ge=1)
    probe_copy_factor: float = Field(default=0.2, gt=0.0)
    score_threshold: int | None = None
    seed: int = Field(default=42, ge=0, le=MASK64)
    strategy: CorrectionStrategy = CorrectionStrategy.SPILL
    max_iteration_factor: int = Field(default=10, ge=1)
    equivalence_trials: int = Field(default=100, ge=1)
    max_steps: int = Field(default=100_000, ge=1)
    zone_cursor_stride: int = Field(default=64, ge=8)

    @computed_field  # type: ignore[prop-decorator]
    @property
    def effective_threshold(self) -> int:
        return self.k if self.score_threshold is None else self.score_threshold

    def copy_count(self, length: int) -> int:
        """Probe copies N = floor(factor * len), at least one."""
        return max(1, _floor(self.probe_copy_factor * length))

    def max_insertions(self, length: int) -> int:
        """Insertion budget; also keeps length similarity at or above epsilon."""
        return min(
            _floor(self.probe_copy_factor * length),
            _floor((1.0 - self.epsilon) * length),
        )

    def max_iterations(self, length: int) -> int:
        return self.max_iteration_factor * length

    @classmethod
    def from_settings(cls, settings: "Settings", **overrides: Any) -> "AttackConfig":
        values: dict[str, Any] = {
            "k": settings.top_k,
            "epsilon": settings.epsilon,
            "num_candidates": settings.num_candidates,
            "inverse_m": settings.inverse_m,
            "probe_copy_factor": settings.probe_copy_factor,
            "score_threshold": settings.score_threshold,
            "seed": settings.seed,
            "strategy": settings.correction_strategy,
            "max_iteration_factor": settings.max_iteration_factor,
            "equivalence_trials": settings.equivalence_trials,
            "max_steps": settings.max_steps,
            "zone_cursor_stride": settings.zone_cursor_stride,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


def _floor(value: float) -> int:
    # 0.2 * 35 is 7.000000000000001; round first so products of exact
    # decimals never land one below the intended integer.
    return math.floor(round(value, 9))


class CandidateInstruction(BaseModel):
    """A mined adversarial instruction with its rank-shift score."""

    model_config = ConfigDict(frozen=True)

    instruction: Instruction
    score: int
    source_function: FunctionId

    @field_validator("instruction")
    @classmethod
    def _not_control(cls, instruction: Instruction) -> Instruction:
        if instruction.is_control_transfer or instruction.is_exception:
            raise ValueError(f"{instruction.opcode} cannot be an adversarial instruction")
        return instruction


class CorrectionPlan(BaseModel):
    """Fix instructions wrapped around one adversarial instruction."""

    model_config = ConfigDict(frozen=True)

    prologue: tuple[Instruction, ...] = ()
    core: Instruction
    epilogue: tuple[Instruction, ...] = ()

    @model_validator(mode="after")
    def _balanced(self) -> "CorrectionPlan":
        pairs = ((Opcode.PUSH, Opcode.POP), (Opcode.PUSHFQ, Opcode.POPFQ))
        for opening, closing in pairs:
            opened = sum(1 for i in self.prologue if i.opcode is opening)
            closed = sum(1 for i in self.epilogue if i.opcode is closing)
            if opened != closed:
                raise ValueError(f"unbalanced {opening}/{closing} in correction plan")
        return self

    @property
    def instructions(self) -> tuple[Instruction, ...]:
        return (*self.prologue, self.core, *self.epilogue)

    def __len__(self) -> int:
        return len(self.prologue) + 1 + len(self.epilogue)


class AttackOutcome(BaseModel):
    """Result of attacking one pool function; one JSON line per outcome."""

    model_config = ConfigDict(frozen=True)

    function_id: FunctionId
    model: str
    mode: AttackMode = AttackMode.FULL
    status: AttackStatus
    adversarial: Function | None = None
    original_length: int = Field(ge=1)
    inserted_instruction_count: int = Field(default=0, ge=0)
    iterations: int = Field(default=0, ge=0)
    oracle_queries: int = Field(default=0, ge=0)
    gt_rank_before: int = Field(default=1, ge=1)
    final_gt_rank: int = Field(default=1, ge=1)
    seed: int = 0

    @field_validator("adversarial", mode="before")
    @classmethod
    def _parse_text(cls, value: Any) -> Any:
        if isinstance(value, str):
            return parse_function(value)
        return value

    @field_serializer("adversarial")
    def _render_text(self, adversarial: Function | None) -> str | None:
        return render_function(adversarial) if adversarial is not None else None

    @model_validator(mode="after")
    def _consistent(self) -> "AttackOutcome":
        if self.status is AttackStatus.SUCCESS and self.adversarial is None:
            raise ValueError("a successful outcome carries its adversarial function")
        if (
            self.adversarial is not None
            and len(self.adversarial) - self.original_length != self.inserted_instruction_count
        ):
            raise ValueError("inserted_instruction_count disagrees with the adversarial length")
        return self

    @property
    def succeeded(self) -> bool:
        return self.status is AttackStatus.SUCCESS

    @property
    def similarity(self) -> float:
        return 1.0 - self.inserted_instruction_count / self.original_length
