"""Storage service for pool, result and report files."""

import json
from collections.abc import Iterable
from pathlib import Path

from loguru import logger
from pydantic import BaseModel, ValidationError

from simevade.core.asm_parser import parse_function, render_function
from simevade.models.attack import AttackOutcome
from simevade.models.oracle import FunctionPool
from simevade.utils.exceptions import ReportInvariantError, SimEvadeError


class StorageService:
    """Line-delimited JSON files with byte-stable output."""

    def load_pool(self, path: Path) -> FunctionPool:
        """Read {"id", "asm"} lines; ids keep file order."""
        entries = {}
        for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                function_id, text = record["id"], record["asm"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise SimEvadeError(
                    f"Malformed pool line {line_no} in {path}",
                    "POOL_FORMAT",
                    {"line": line_no, "error": str(e)},
                ) from e
            if function_id in entries:
                raise ReportInvariantError(
                    "pool_ids_unique", f"Duplicate pool id '{function_id}' at line {line_no}"
                )
            entries[function_id] = parse_function(text)
        logger.info(f"Loaded pool of {len(entries)} functions from {path}")
        return FunctionPool(entries=entries)

    def save_pool(self, pool: FunctionPool, path: Path) -> None:
        lines = [
            json.dumps({"id": function_id, "asm": render_function(pool[function_id])})
            for function_id in pool.ids()
        ]
        self._write_lines(lines, path)
        logger.info(f"Saved pool of {len(pool)} functions to {path}")

    def write_outcomes(self, outcomes: Iterable[AttackOutcome], path: Path) -> None:
        self._write_lines([outcome.model_dump_json() for outcome in outcomes], path)

    def read_outcomes(self, path: Path) -> list[AttackOutcome]:
        outcomes = []
        for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                outcomes.append(AttackOutcome.model_validate_json(line))
            except ValidationError as e:
                raise SimEvadeError(
                    f"Malformed result line {line_no} in {path}",
                    "RESULT_FORMAT",
                    {"line": line_no, "errors": e.error_count()},
                ) from e
        return outcomes

    def write_json(self, model: BaseModel, path: Path) -> None:
        """Sorted, indented JSON with a trailing newline."""
        text = json.dumps(model.model_dump(mode="json"), indent=2, sort_keys=True)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
        logger.info(f"Wrote {path}")

    @staticmethod
    def _write_lines(lines: list[str], path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as handle:
            for line in lines:
                handle.write(line + "\n")


_storage_service_instance: StorageService | None = None


def get_storage_service() -> StorageService:
    """Get or create storage service instance."""
    global _storage_service_instance
    if _storage_service_instance is None:
        _storage_service_instance = StorageService()
    return _storage_service_instance
