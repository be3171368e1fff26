"""Corpus specification and experiment report models."""

import math

from pydantic import BaseModel, ConfigDict, Field, model_validator

from simevade.models.attack import BUMPER_ZONES, AttackStatus, BumperZones
from simevade.models.oracle import FunctionId


class CorpusSpec(BaseModel):
    """Shape of a synthetic function corpus."""

    model_config = ConfigDict(frozen=True)

    count: int = Field(default=200, ge=1)
    min_length: int = Field(default=40, ge=2)
    max_length: int = Field(default=120, ge=2)
    min_blocks: int = Field(default=1, ge=1)
    max_blocks: int = Field(default=8, ge=1)
    families: int = Field(default=25, ge=1)
    # Relative weight per body-instruction kind; None draws them per family.
    opcode_weights: dict[str, float] | None = None
    seed: int = Field(default=42, ge=0)

    @model_validator(mode="after")
    def _ranges(self) -> "CorpusSpec":
        if self.min_length > self.max_length:
            raise ValueError("min_length exceeds max_length")
        if self.min_blocks > self.max_blocks:
            raise ValueError("min_blocks exceeds max_blocks")
        return self


class FunctionRow(BaseModel):
    """Per-function line of a metrics report."""

    model_config = ConfigDict(frozen=True)

    function_id: FunctionId
    status: AttackStatus
    length: int
    gt_rank_before: int
    gt_rank_after: int
    inserted: int
    queries: int


class MetricsReport(BaseModel):
    """OA / AA / IIR / CR over one attacked corpus, percentages to 2 decimals."""

    model_config = ConfigDict(frozen=True)

    model: str
    k: int
    oa: float = Field(ge=0.0, le=100.0)
    aa: float = Field(ge=0.0, le=100.0)
    iir: float = Field(ge=0.0)
    cr: float
    dynamic_overhead: float = 0.0
    n_functions: int
    per_function: list[FunctionRow] = Field(default_factory=list)

    @model_validator(mode="after")
    def _cr_identity(self) -> "MetricsReport":
        if self.iir == 0.0:
            if self.cr != 0.0:
                raise ValueError("cr must be 0 when nothing was inserted")
        elif not math.isclose(self.cr * self.iir, self.oa - self.aa, rel_tol=1e-12, abs_tol=1e-9):
            raise ValueError("cr * iir must equal oa - aa")
        return self


class TransferMatrix(BaseModel):
    """cells[a][b]: % of a's successful examples that model b still recognises."""

    model_config = ConfigDict(frozen=True)

    models: list[str]
    k: int
    cells: dict[str, dict[str, float]]
    examples: dict[str, int]

    def cell(self, source: str, target: str) -> float:
        return self.cells[source][target]


class SummaryReport(BaseModel):
    """Single summary JSON written next to the per-function results."""

    model_config = ConfigDict(frozen=True)

    model: str
    k: int
    epsilon: float
    oa: float
    aa: float
    iir: float
    cr: float
    dynamic_overhead: float
    n_functions: int
    seed: int
    bumper_zones: BumperZones = BUMPER_ZONES
