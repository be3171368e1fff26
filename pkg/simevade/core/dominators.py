"""Dominators, dominate nodes and vulnerable insertion points.

Immediate dominators come from the Lengauer-Tarjan algorithm (the
path-compression variant as presented in Appel, ch. 19). A plain
iterative dataflow solver is kept alongside as a reference oracle.
"""

from collections import defaultdict
from collections.abc import Mapping, Sequence

from simevade.models.asm import Function
from simevade.models.cfg import ControlFlowGraph, DominateNodeSet, VulnerableCandidates
from simevade.utils.exceptions import EmptyCandidatesError, NoExitError

Graph = Mapping[int, Sequence[int]]


def immediate_dominators(succ: Graph, entry: int) -> dict[int, int | None]:
    """Immediate dominator of every node reachable from entry."""
    dfnum: dict[int, int] = {}
    vertex: list[int] = []
    parent: dict[int, int | None] = {}

    stack: list[tuple[int, int | None]] = [(entry, None)]
    while stack:
        node, par = stack.pop()
        if node in dfnum:
            continue
        dfnum[node] = len(vertex)
        vertex.append(node)
        parent[node] = par
        for nxt in reversed(succ.get(node, ())):
            if nxt not in dfnum:
                stack.append((nxt, node))

    pred: dict[int, list[int]] = {node: [] for node in vertex}
    for node in vertex:
        for nxt in succ.get(node, ()):
            pred[nxt].append(node)

    semi: dict[int, int] = {}
    ancestor: dict[int, int | None] = {node: None for node in vertex}
    best: dict[int, int] = {node: node for node in vertex}
    idom: dict[int, int | None] = {entry: None}
    samedom: dict[int, int] = {}
    bucket: dict[int, list[int]] = defaultdict(list)

    def lowest_semi_ancestor(v: int) -> int:
        # Iterative form of the recursive path compression.
        path: list[int] = []
        u = v
        while ancestor[u] is not None and ancestor[ancestor[u]] is not None:  # type: ignore[index]
            path.append(u)
            u = ancestor[u]  # type: ignore[assignment]
        for w in reversed(path):
            a = ancestor[w]
            assert a is not None
            if dfnum[semi[best[a]]] < dfnum[semi[best[w]]]:
                best[w] = best[a]
            ancestor[w] = ancestor[a]
        return best[v]

    for n in reversed(vertex[1:]):
        p = parent[n]
        assert p is not None
        s = p
        for v in pred[n]:
            if dfnum[v] <= dfnum[n]:
                candidate = v
            else:
                candidate = semi[lowest_semi_ancestor(v)]
            if dfnum[candidate] < dfnum[s]:
                s = candidate
        semi[n] = s
        bucket[s].append(n)

        ancestor[n] = p
        best[n] = n

        for v in bucket[p]:
            y = lowest_semi_ancestor(v)
            if semi[y] == semi[v]:
                idom[v] = p
            else:
                samedom[v] = y
        bucket[p] = []

    for n in vertex[1:]:
        if n in samedom:
            idom[n] = idom[samedom[n]]
    return idom


def dominator_sets(idom: Mapping[int, int | None]) -> dict[int, frozenset[int]]:
    """Expand an idom map into full Dom(n) sets."""
    doms: dict[int, frozenset[int]] = {}

    def resolve(node: int) -> frozenset[int]:
        chain: list[int] = []
        current: int | None = node
        while current is not None and current not in doms:
            chain.append(current)
            current = idom[current]
        acc = doms[current] if current is not None else frozenset()
        for member in reversed(chain):
            acc = acc | {member}
            doms[member] = acc
        return doms[node]

    for node in idom:
        resolve(node)
    return doms


def iterative_dominators(succ: Graph, entry: int) -> dict[int, frozenset[int]]:
    """Dom(n) by fixed-point iteration over reachable nodes."""
    order: list[int] = []
    seen = {entry}
    stack = [entry]
    while stack:
        node = stack.pop()
        order.append(node)
        for nxt in succ.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)

    pred: dict[int, list[int]] = {node: [] for node in order}
    for node in order:
        for nxt in succ.get(node, ()):
            pred[nxt].append(node)

    everything = frozenset(order)
    dom: dict[int, frozenset[int]] = {node: everything for node in order}
    dom[entry] = frozenset({entry})

    changed = True
    while changed:
        changed = False
        for node in order:
            if node == entry:
                continue
            incoming = [dom[p] for p in pred[node]]
            new = frozenset.intersection(*incoming) | {node} if incoming else frozenset({node})
            if new != dom[node]:
                dom[node] = new
                changed = True
    return dom


def dominate_nodes(cfg: ControlFlowGraph) -> DominateNodeSet:
    """Blocks dominating every reachable exit (intersection of Dom(e))."""
    doms = dominator_sets(immediate_dominators(cfg.successors(), cfg.entry))
    return _intersect_exits(cfg, doms)


def dominate_nodes_dataflow(cfg: ControlFlowGraph) -> DominateNodeSet:
    """Same result as dominate_nodes, from the iterative solver."""
    return _intersect_exits(cfg, iterative_dominators(cfg.successors(), cfg.entry))


def _intersect_exits(
    cfg: ControlFlowGraph, doms: Mapping[int, frozenset[int]]
) -> DominateNodeSet:
    exits = [e for e in sorted(cfg.exits) if e in doms]
    if not exits:
        raise NoExitError(details={"entry": cfg.entry, "exits": sorted(cfg.exits)})
    common = frozenset.intersection(*(doms[e] for e in exits))
    return DominateNodeSet(blocks=common)


def vulnerable_candidates(function: Function, cfg: ControlFlowGraph) -> VulnerableCandidates:
    """Insertion points inside dominate-node blocks.

    Control-transfer and exception-triggering instructions are excluded,
    which also excludes every block terminator.
    """
    nodes = dominate_nodes(cfg)
    indices = _eligible(function, cfg, nodes.blocks)
    if not indices:
        raise EmptyCandidatesError(function=function.name)
    return VulnerableCandidates(indices=indices)


def all_positions(function: Function, cfg: ControlFlowGraph) -> VulnerableCandidates:
    """Every eligible insertion point of every reachable block."""
    reachable = frozenset(block.id for block in cfg.blocks) - cfg.unreachable
    indices = _eligible(function, cfg, reachable)
    if not indices:
        raise EmptyCandidatesError(function=function.name)
    return VulnerableCandidates(indices=indices)


def _eligible(
    function: Function, cfg: ControlFlowGraph, block_ids: frozenset[int]
) -> tuple[int, ...]:
    indices: list[int] = []
    for block in cfg.blocks:
        if block.id not in block_ids or block.id in cfg.unreachable:
            continue
        for index in block.indices:
            instruction = function.instructions[index]
            if not (instruction.is_control_transfer or instruction.is_exception):
                indices.append(index)
    return tuple(indices)
