"""Pytest configuration and fixtures."""

import os
import tempfile
from collections.abc import Generator
from pathlib import Path

import pytest

# Set test environment variables
os.environ["ENVIRONMENT"] = "testing"

from simevade.core.asm_parser import parse_function
from simevade.core.oracle import BagOfOpcodesModel, OpcodeBigramModel, RandomWalkModel
from simevade.models.asm import Function
from simevade.models.attack import AttackConfig
from simevade.models.oracle import FunctionPool

# Entry L1 branches to L2 or L3, both reach L4, which exits through L5 or L6.
BRANCHY_TEXT = """\
fn branchy:
L1:
  cmp rdi, 0
  je .L3
L2:
  cmp rsi, 0
  je .L4
L3:
  mov rax, 1
  jmp .L4
L4:
  cmp rax, 2
  je .L6
L5:
  mov rax, 3
  ret
L6:
  mov rax, 4
  ret
"""

STRAIGHT_TEXT = """\
fn straight:
  mov rax, 5
  add rax, 3
  ret
"""

LOOP_TEXT = """\
fn loop:
L1:
  sub rdi, 1
L2:
  cmp rdi, 0
  jne .L1
L3:
  ret
"""

POOL_TEXTS = {
    "alpha": """\
fn alpha:
  push rbx
  mov rbx, rdi
  add rbx, 16
  mov rax, [rbx+8]
  add rax, rsi
  xor rdx, rdx
  pop rbx
  ret
""",
    "beta": """\
fn beta:
  mov rax, rdi
  imul rax, rsi
  imul rax, 3
  lea rcx, [rax+rdx*2]
  imul rcx, rcx
  mov rax, rcx
  ret
""",
    "gamma": """\
fn gamma:
  xor rax, rax
  cmp rdi, 0
  je .done
  and rdi, 255
  or rax, rdi
  test rax, 1
done:
  ret
""",
    "delta": """\
fn delta:
  mov [rdi], rsi
  mov [rdi+8], rdx
  mov rax, [rdi+16]
  sub rax, rsi
  mov [rdi+24], rax
  nop
  ret
""",
    "epsilon": """\
fn epsilon:
  push r12
  push r13
  mov r12, rdi
  mov r13, rsi
  call .strlen
  add rax, r12
  sub rax, r13
  pop r13
  pop r12
  ret
""",
    "zeta": """\
fn zeta:
  lea rax, [rdi+rsi*4+8]
  lea rcx, [rax+16]
  xor rax, rcx
  or rax, 7
  and rax, rdx
  ret
""",
}


ADDS = "  add rax, 1\n" * 18
# A straight-line target and a neighbour that differs from it by one imul.
TARGET_TEXT = f"fn target:\n  mov rax, 1\n{ADDS}  ret\n"
NEIGHBOUR_TEXT = f"fn neighbour:\n  mov rax, 1\n{ADDS}  imul rax, 3\n  ret\n"


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def branchy_function() -> Function:
    return parse_function(BRANCHY_TEXT)


@pytest.fixture
def straight_function() -> Function:
    return parse_function(STRAIGHT_TEXT)


@pytest.fixture
def loop_function() -> Function:
    return parse_function(LOOP_TEXT)


@pytest.fixture
def small_pool() -> FunctionPool:
    """Six hand-written functions with distinct opcode mixes."""
    return FunctionPool(
        entries={name: parse_function(text) for name, text in POOL_TEXTS.items()}
    )


@pytest.fixture
def bag_oracle() -> BagOfOpcodesModel:
    return BagOfOpcodesModel()


@pytest.fixture
def bigram_oracle() -> OpcodeBigramModel:
    return OpcodeBigramModel()


@pytest.fixture
def walk_oracle() -> RandomWalkModel:
    return RandomWalkModel(walks=4, walk_length=8, dim=256, seed=7)


@pytest.fixture
def attack_config() -> AttackConfig:
    """Small, fast attack settings."""
    return AttackConfig(k=1, epsilon=0.5, equivalence_trials=5, max_steps=10_000)
