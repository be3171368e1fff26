"""Control-flow graph models."""

from pydantic import BaseModel, ConfigDict, Field, model_validator


class BasicBlock(BaseModel):
    """Half-open instruction range [start, end) of a function."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(ge=0)
    start: int = Field(ge=0)
    end: int = Field(ge=0)
    entry_label: str | None = None

    @model_validator(mode="after")
    def _non_empty(self) -> "BasicBlock":
        if self.end <= self.start:
            raise ValueError(f"block {self.id} has an empty range")
        return self

    def __contains__(self, index: object) -> bool:
        return isinstance(index, int) and self.start <= index < self.end

    @property
    def indices(self) -> range:
        return range(self.start, self.end)

    @property
    def last(self) -> int:
        return self.end - 1


class ControlFlowGraph(BaseModel):
    """Blocks, directed edges, entry and exit blocks."""

    model_config = ConfigDict(frozen=True)

    blocks: tuple[BasicBlock, ...]
    edges: frozenset[tuple[int, int]] = frozenset()
    entry: int = 0
    exits: frozenset[int] = frozenset()
    unreachable: frozenset[int] = frozenset()
    warnings: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check_ids(self) -> "ControlFlowGraph":
        ids = {block.id for block in self.blocks}
        if len(ids) != len(self.blocks):
            raise ValueError("duplicate block ids")
        if self.entry not in ids:
            raise ValueError(f"entry {self.entry} is not a block")
        for src, dst in self.edges:
            if src not in ids or dst not in ids:
                raise ValueError(f"edge ({src}, {dst}) names an unknown block")
        if not self.exits <= ids or not self.unreachable <= ids:
            raise ValueError("exit or unreachable set names an unknown block")
        return self

    def successors(self) -> dict[int, list[int]]:
        succ: dict[int, list[int]] = {block.id: [] for block in self.blocks}
        for src, dst in sorted(self.edges):
            succ[src].append(dst)
        return succ

    def predecessors(self) -> dict[int, list[int]]:
        pred: dict[int, list[int]] = {block.id: [] for block in self.blocks}
        for src, dst in sorted(self.edges):
            pred[dst].append(src)
        return pred

    def block(self, block_id: int) -> BasicBlock:
        for block in self.blocks:
            if block.id == block_id:
                return block
        raise KeyError(block_id)

    def block_of(self, index: int) -> BasicBlock:
        for block in self.blocks:
            if index in block:
                return block
        raise IndexError(index)

    @property
    def reachable_exits(self) -> frozenset[int]:
        return self.exits - self.unreachable


class DominateNodeSet(BaseModel):
    """Blocks lying on every entry-to-exit path."""

    model_config = ConfigDict(frozen=True)

    blocks: frozenset[int]

    def __contains__(self, block_id: object) -> bool:
        return block_id in self.blocks


class VulnerableCandidates(BaseModel):
    """Instruction indices eligible as insertion points."""

    model_config = ConfigDict(frozen=True)

    indices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.indices)
