"""Machine state and execution results of the emulator."""

from dataclasses import dataclass, field
from enum import StrEnum

from pydantic import BaseModel, ConfigDict

from simevade.models.asm import Flag, Register
from simevade.models.attack import BUMPER_ZONES, BumperZones
from simevade.utils.hashing import MASK64, hash64


class FaultKind(StrEnum):
    RO_ZONE_WRITE = "RoZoneWrite"
    STEP_LIMIT = "StepLimit"
    UNMAPPED_JUMP = "UnmappedJump"


@dataclass
class MachineState:
    """Registers, flags and sparse byte memory of one execution.

    Bytes never written read through the total-memory rule: zero inside
    the read-only zone and pointer slots hold the zone bases, anything
    else is ``hash64(address, trial_seed)`` truncated to a byte.
    """

    regs: dict[Register, int]
    flags: dict[Flag, bool]
    trial_seed: int
    memory: dict[int, int] = field(default_factory=dict)
    written: set[int] = field(default_factory=set)
    step_count: int = 0
    zones: BumperZones = BUMPER_ZONES

    def read_byte(self, address: int) -> int:
        address &= MASK64
        if address in self.memory:
            return self.memory[address]
        zones = self.zones
        if zones.in_ro(address):
            return 0
        for slot, base in zip(zones.ptr_slots, (zones.ro_base, zones.rw_base), strict=True):
            if slot <= address < slot + 8:
                return (base >> (8 * (address - slot))) & 0xFF
        return hash64(address, self.trial_seed) & 0xFF

    def read(self, address: int, size: int = 8) -> int:
        value = 0
        for offset in range(size):
            value |= self.read_byte(address + offset) << (8 * offset)
        return value

    def write(self, address: int, value: int, size: int = 8) -> bool:
        """Little-endian store; False when it touches a read-only byte."""
        addresses = [(address + offset) & MASK64 for offset in range(size)]
        if any(self.zones.is_read_only(a) for a in addresses):
            return False
        for offset, a in enumerate(addresses):
            self.memory[a] = (value >> (8 * offset)) & 0xFF
            self.written.add(a)
        return True

    def snapshot(self) -> "MachineState":
        return MachineState(
            regs=dict(self.regs),
            flags=dict(self.flags),
            trial_seed=self.trial_seed,
            memory=dict(self.memory),
            written=set(self.written),
            step_count=self.step_count,
            zones=self.zones,
        )


@dataclass(frozen=True)
class Halted:
    """Execution reached ret at call depth 0."""

    state: MachineState
    write_set: frozenset[int]

    @property
    def steps(self) -> int:
        return self.state.step_count


@dataclass(frozen=True)
class Fault:
    kind: FaultKind
    at: int
    state: MachineState


ExecutionResult = Halted | Fault


@dataclass(frozen=True)
class TraceStep:
    """One executed instruction and the locations it changed."""

    step: int
    index: int
    text: str
    changes: tuple[str, ...]

    def format(self) -> str:
        changed = " ".join(self.changes) if self.changes else "-"
        return f"{self.step:>6} {self.index:>4}  {self.text:<32} {changed}"


class Divergence(BaseModel):
    """First observable difference between two runs."""

    model_config = ConfigDict(frozen=True)

    trial_seed: int
    location: str
    left: int | None = None
    right: int | None = None


class EquivalenceVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    equivalent: bool
    trials: int
    first_divergence: Divergence | None = None
