"""simevade - adversarial instruction insertion against binary code similarity models."""

__version__ = "0.1.0"
__author__ = "simevade Team"
__description__ = (
    "Semantics- and CFG-preserving adversarial variants of assembly functions "
    "plus an evaluation harness for black-box similarity models"
)
