"""Basic-block partitioning and CFG construction."""

from collections import deque

from loguru import logger

from simevade.models.asm import CONDITIONAL_JUMPS, Function, Opcode
from simevade.models.cfg import BasicBlock, ControlFlowGraph


def build_cfg(function: Function) -> ControlFlowGraph:
    """Partition a function into basic blocks and connect them.

    Leaders are index 0, every label target and every instruction after a
    jump or ret. ``call`` stays inside its block with a fallthrough edge.
    Unreachable blocks are kept and reported in ``warnings``.
    """
    instructions = function.instructions
    size = len(instructions)

    leaders = {0, *function.labels.values()}
    for index, instruction in enumerate(instructions):
        if instruction.is_terminator and index + 1 < size:
            leaders.add(index + 1)
    starts = sorted(leaders)

    blocks: list[BasicBlock] = []
    block_at: dict[int, int] = {}
    for block_id, start in enumerate(starts):
        end = starts[block_id + 1] if block_id + 1 < len(starts) else size
        labels = function.labels_at(start)
        blocks.append(
            BasicBlock(
                id=block_id,
                start=start,
                end=end,
                entry_label=labels[0] if labels else None,
            )
        )
        block_at[start] = block_id

    edges: set[tuple[int, int]] = set()
    exits: set[int] = set()
    for block in blocks:
        last = instructions[block.last]
        has_next = block.end < size
        targets: list[int] = []
        if last.opcode is Opcode.JMP:
            targets.append(block_at[function.labels[last.label or ""]])
        elif last.opcode in CONDITIONAL_JUMPS:
            targets.append(block_at[function.labels[last.label or ""]])
            if has_next:
                targets.append(block.id + 1)
        elif last.opcode is not Opcode.RET and has_next:
            targets.append(block.id + 1)
        edges.update((block.id, target) for target in targets)
        if last.opcode is Opcode.RET or not targets:
            exits.add(block.id)

    reachable = _reachable(blocks[0].id, edges)
    unreachable = frozenset(block.id for block in blocks) - reachable
    warnings: list[str] = []
    for block_id in sorted(unreachable):
        block = blocks[block_id]
        message = (
            f"{function.name}: unreachable code in block {block_id} "
            f"[{block.start}, {block.end})"
        )
        warnings.append(message)
        logger.warning(message)

    return ControlFlowGraph(
        blocks=tuple(blocks),
        edges=frozenset(edges),
        entry=0,
        exits=frozenset(exits),
        unreachable=unreachable,
        warnings=tuple(warnings),
    )


def _reachable(entry: int, edges: set[tuple[int, int]]) -> frozenset[int]:
    succ: dict[int, list[int]] = {}
    for src, dst in edges:
        succ.setdefault(src, []).append(dst)
    seen = {entry}
    queue = deque([entry])
    while queue:
        node = queue.popleft()
        for nxt in succ.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return frozenset(seen)


def cfg_isomorphic(left: ControlFlowGraph, right: ControlFlowGraph) -> bool:
    """Same block count, edge relation, entry and exits.

    Insertions never create or reorder blocks, so block ids correspond
    one-to-one under the index shift.
    """
    return (
        len(left.blocks) == len(right.blocks)
        and left.edges == right.edges
        and left.entry == right.entry
        and left.exits == right.exits
    )


def cfg_to_dot(cfg: ControlFlowGraph, name: str = "cfg") -> str:
    """DOT text with nodes labelled by block id and instruction range."""
    lines = [f'digraph "{name}" {{', "  node [shape=box];"]
    for block in cfg.blocks:
        label = f"B{block.id} [{block.start},{block.end})"
        if block.entry_label:
            label += f"\\n{block.entry_label}"
        style = ', style="dashed"' if block.id in cfg.unreachable else ""
        peripheries = ", peripheries=2" if block.id in cfg.exits else ""
        lines.append(f'  B{block.id} [label="{label}"{style}{peripheries}];')
    for src, dst in sorted(cfg.edges):
        lines.append(f"  B{src} -> B{dst};")
    lines.append("}")
    return "\n".join(lines) + "\n"
