"""Custom exceptions and CLI error handling for simevade."""

import functools
from collections.abc import Callable
from typing import Any, ParamSpec, TypeVar

import typer
from loguru import logger

P = ParamSpec("P")
R = TypeVar("R")


class SimEvadeError(Exception):
    """Base exception for simevade."""

    def __init__(
        self,
        message: str,
        error_code: str | None = None,
        details: dict[str, Any] | None = None,
    ) -> None:
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.details = details or {}
        super().__init__(self.message)


class AsmSyntaxError(SimEvadeError):
    """Malformed function text."""

    def __init__(
        self,
        reason: str,
        line: int | None = None,
        column: int | None = None,
        **kwargs: Any,
    ) -> None:
        details = kwargs.get("details", {})
        if line is not None:
            details["line"] = line
        if column is not None:
            details["column"] = column
        details["reason"] = reason
        self.line = line
        self.column = column
        self.reason = reason
        location = f" at {line}:{column}" if line is not None else ""
        super().__init__(f"Syntax error{location}: {reason}", "SYNTAX_ERROR", details)


class UnknownOpcodeError(AsmSyntaxError):
    """Mnemonic outside the supported instruction subset."""

    def __init__(
        self,
        mnemonic: str,
        line: int | None = None,
        column: int | None = None,
    ) -> None:
        self.mnemonic = mnemonic
        super().__init__(
            f"unknown opcode '{mnemonic}'",
            line=line,
            column=column,
            details={"mnemonic": mnemonic},
        )
        self.error_code = "UNKNOWN_OPCODE"


class UnresolvedLabelError(SimEvadeError):
    """A jump names a label the function does not define."""

    def __init__(self, label: str, **kwargs: Any) -> None:
        details = kwargs.get("details", {})
        details["label"] = label
        self.label = label
        super().__init__(f"Unresolved label '{label}'", "UNRESOLVED_LABEL", details)


class NoExitError(SimEvadeError):
    """No exit block is reachable from the entry block."""

    def __init__(self, message: str = "No exit reachable from entry", **kwargs: Any) -> None:
        super().__init__(message, "NO_EXIT", kwargs.get("details"))


class EmptyCandidatesError(SimEvadeError):
    """Every instruction of the dominate nodes was excluded."""

    def __init__(
        self,
        message: str = "No vulnerable candidate positions",
        function: str | None = None,
        **kwargs: Any,
    ) -> None:
        details = kwargs.get("details", {})
        if function:
            details["function"] = function
        super().__init__(message, "EMPTY_CANDIDATES", details)


class PoolTooSmallError(SimEvadeError):
    """Ranking asked for more entries than the pool holds."""

    def __init__(self, requested: int, size: int, **kwargs: Any) -> None:
        details = kwargs.get("details", {})
        details["requested"] = requested
        details["pool_size"] = size
        super().__init__(
            f"Requested {requested} entries from a pool of {size}",
            "POOL_TOO_SMALL",
            details,
        )


class UnknownGroundTruthError(SimEvadeError):
    """Ground-truth id is not a pool member."""

    def __init__(self, gt: str, **kwargs: Any) -> None:
        details = kwargs.get("details", {})
        details["ground_truth"] = gt
        super().__init__(
            f"Ground truth '{gt}' is not in the pool", "UNKNOWN_GROUND_TRUTH", details
        )


class NoCandidatesError(SimEvadeError):
    """Mining produced no adversarial instruction above the score threshold."""

    def __init__(
        self,
        message: str = "No adversarial instruction candidates",
        function: str | None = None,
        **kwargs: Any,
    ) -> None:
        details = kwargs.get("details", {})
        if function:
            details["function"] = function
        super().__init__(message, "NO_CANDIDATES", details)


class UncorrectableError(SimEvadeError):
    """The requested correction strategy cannot neutralise the instruction."""

    def __init__(self, instruction: str, reason: str, **kwargs: Any) -> None:
        details = kwargs.get("details", {})
        details["instruction"] = instruction
        details["reason"] = reason
        super().__init__(
            f"Cannot correct '{instruction}': {reason}", "UNCORRECTABLE", details
        )


class GenerationRetryExceededError(SimEvadeError):
    """Corpus constraints could not be met within the retry budget."""

    def __init__(self, index: int, attempts: int, **kwargs: Any) -> None:
        details = kwargs.get("details", {})
        details["index"] = index
        details["attempts"] = attempts
        super().__init__(
            f"Function {index}: constraints unsatisfied after {attempts} attempts",
            "GENERATION_RETRY_EXCEEDED",
            details,
        )


class ReportInvariantError(SimEvadeError):
    """A report or outcome violates an invariant the harness guarantees."""

    def __init__(self, check: str, message: str | None = None, **kwargs: Any) -> None:
        details = kwargs.get("details", {})
        details["check"] = check
        super().__init__(
            message or f"Report invariant violated: {check}",
            "REPORT_INVARIANT",
            details,
        )


EXIT_CODE_MAP: dict[str, int] = {
    "REPORT_INVARIANT": 2,
}


def exit_code_for(exc: SimEvadeError) -> int:
    """Process exit code for a library error."""
    return EXIT_CODE_MAP.get(exc.error_code, 1)


def handle_cli_errors(func: Callable[P, R]) -> Callable[P, R]:
    """Turn library errors raised by a CLI command into logged exits."""

    @functools.wraps(func)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
        try:
            return func(*args, **kwargs)
        except SimEvadeError as exc:
            logger.error(f"{exc.error_code}: {exc.message} - Details: {exc.details}")
            raise typer.Exit(code=exit_code_for(exc)) from exc

    return wrapper
