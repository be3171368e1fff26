"""Function pool and ranking result models."""

from pydantic import BaseModel, ConfigDict, Field

from simevade.models.asm import Function

FunctionId = str


class FunctionPool(BaseModel):
    """Retrieval corpus; every entry is its own ground truth."""

    model_config = ConfigDict(frozen=True)

    entries: dict[FunctionId, Function] = Field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, function_id: object) -> bool:
        return function_id in self.entries

    def __getitem__(self, function_id: FunctionId) -> Function:
        return self.entries[function_id]

    def ids(self) -> list[FunctionId]:
        return list(self.entries)

    def find_id(self, function: Function) -> FunctionId | None:
        """Id of the entry structurally equal to function."""
        for function_id, entry in self.entries.items():
            if entry == function:
                return function_id
        return None

    def subset(self, ids: list[FunctionId]) -> "FunctionPool":
        return FunctionPool(entries={i: self.entries[i] for i in ids})


class RankEntry(BaseModel):
    """One ranked pool entry."""

    model_config = ConfigDict(frozen=True)

    function_id: FunctionId
    score: float = Field(ge=-1.0, le=1.0)


class RankResult(BaseModel):
    """Ranked entries; order is given by the producing query."""

    model_config = ConfigDict(frozen=True)

    entries: tuple[RankEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, function_id: object) -> bool:
        return any(entry.function_id == function_id for entry in self.entries)

    @property
    def ids(self) -> list[FunctionId]:
        return [entry.function_id for entry in self.entries]
