"""Black-box similarity oracles and the surrogate embedding models.

The attacker sees a model only through ``score``, ``rank``,
``rank_least`` and ``gt_rank``. Pool-entry embeddings are the model's
indexed corpus and are computed once per pool; every embedding of a
submitted query function counts as one query.
"""

import threading
import weakref
from abc import ABC, abstractmethod
from collections.abc import Callable

import numpy as np
from loguru import logger

from simevade.core.cfg_builder import build_cfg
from simevade.models.asm import Function, Opcode
from simevade.models.oracle import FunctionId, FunctionPool, RankEntry, RankResult
from simevade.utils.exceptions import PoolTooSmallError, UnknownGroundTruthError
from simevade.utils.hashing import stable_str_hash

MODEL_NAMES = ("bag", "bigram", "walk")

_OPCODE_INDEX = {opcode: position for position, opcode in enumerate(Opcode)}
_VOCAB = len(_OPCODE_INDEX)
# Padding symbol for n-gram windows.
_PAD = _VOCAB
# Weight of the opcode-count block in the n-gram models, relative to one n-gram.
OPCODE_WEIGHT = 4.0


def length_similarity(function: Function, adversarial: Function) -> float:
    """1 - (len(f_adv) - len(f)) / len(f), lengths in instructions."""
    return 1.0 - (len(adversarial) - len(function)) / len(function)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    norm = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if norm == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / norm, -1.0, 1.0))


def _normalise(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    return vector / norm if norm > 0.0 else vector


class _PoolIndex:
    """Normalised embedding matrix of one pool."""

    def __init__(self, ids: list[FunctionId], matrix: np.ndarray) -> None:
        self.ids = ids
        self.matrix = matrix
        self.position = {function_id: row for row, function_id in enumerate(ids)}


class RankingInterface(ABC):
    """Ranking queries shared by oracles and per-attack sessions."""

    @property
    @abstractmethod
    def model_id(self) -> str: ...

    @property
    @abstractmethod
    def query_count(self) -> int: ...

    @abstractmethod
    def _embed_query(self, function: Function) -> np.ndarray: ...

    @abstractmethod
    def _pool_index(self, pool: FunctionPool) -> _PoolIndex: ...

    def score(self, a: Function, b: Function) -> float:
        """Cosine similarity of the two embeddings (two queries)."""
        return cosine(self._embed_query(a), self._embed_query(b))

    def _ordering(self, query: Function, pool: FunctionPool) -> list[tuple[float, FunctionId]]:
        index = self._pool_index(pool)
        q = _normalise(self._embed_query(query))
        scores = np.clip(index.matrix @ q, -1.0, 1.0)
        pairs = [(float(s), function_id) for s, function_id in zip(scores, index.ids, strict=True)]
        pairs.sort(key=lambda pair: (-pair[0], pair[1]))
        return pairs

    def rank(self, query: Function, pool: FunctionPool, k: int) -> RankResult:
        """Top-k pool entries, descending score, ties by ascending id."""
        if k < 1 or k > len(pool):
            raise PoolTooSmallError(requested=k, size=len(pool))
        ordering = self._ordering(query, pool)[:k]
        return RankResult(
            entries=tuple(RankEntry(function_id=i, score=s) for s, i in ordering)
        )

    def rank_least(self, query: Function, pool: FunctionPool, m: int) -> RankResult:
        """Bottom-m entries: the tail of the full ranking, reversed."""
        if m < 1 or m > len(pool):
            raise PoolTooSmallError(requested=m, size=len(pool))
        ordering = self._ordering(query, pool)
        ordering.reverse()
        return RankResult(
            entries=tuple(RankEntry(function_id=i, score=s) for s, i in ordering[:m])
        )

    def gt_rank(self, query: Function, pool: FunctionPool, gt: FunctionId) -> int:
        """1-based position of gt in the full descending ranking."""
        if gt not in pool:
            raise UnknownGroundTruthError(gt)
        for position, (_, function_id) in enumerate(self._ordering(query, pool), start=1):
            if function_id == gt:
                return position
        raise UnknownGroundTruthError(gt)  # pragma: no cover


class SimilarityOracle(RankingInterface):
    """A deterministic embedding model behind the black-box interface."""

    name: str = "oracle"

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._queries = 0
        # Keyed by id(pool); entries leave with their pool.
        self._indexes: dict[int, tuple[weakref.ref[FunctionPool], _PoolIndex]] = {}

    @property
    def model_id(self) -> str:
        return self.name

    @property
    def query_count(self) -> int:
        return self._queries

    @property
    def indexed_pools(self) -> int:
        """Pools whose embedding matrix is currently cached."""
        with self._lock:
            return len(self._indexes)

    @property
    @abstractmethod
    def dimension(self) -> int: ...

    @abstractmethod
    def embed(self, function: Function) -> np.ndarray:
        """Raw embedding; pure function of the input."""

    def _record(self, queries: int) -> None:
        with self._lock:
            self._queries += queries

    def _embed_query(self, function: Function) -> np.ndarray:
        self._record(1)
        return self.embed(function)

    def _pool_index(self, pool: FunctionPool) -> _PoolIndex:
        key = id(pool)
        with self._lock:
            cached = self._indexes.get(key)
            if cached is not None and cached[0]() is pool:
                return cached[1]
        ids = pool.ids()
        matrix = np.zeros((len(ids), self.dimension), dtype=np.float64)
        for row, function_id in enumerate(ids):
            matrix[row] = _normalise(self.embed(pool[function_id]))
        index = _PoolIndex(ids, matrix)
        with self._lock:
            self._indexes[key] = (weakref.ref(pool, self._evict(key)), index)
        logger.debug(f"{self.name}: indexed pool of {len(ids)} functions")
        return index

    def _evict(self, key: int) -> Callable[[weakref.ref[FunctionPool]], None]:
        indexes, lock = self._indexes, self._lock

        def drop(ref: weakref.ref[FunctionPool]) -> None:
            with lock:
                cached = indexes.get(key)
                if cached is not None and cached[0] is ref:
                    del indexes[key]

        return drop

    def session(self) -> "OracleSession":
        """Query view that counts one attack's queries."""
        return OracleSession(self)


class OracleSession(RankingInterface):
    """Per-attack view of a shared oracle with its own query counter."""

    def __init__(self, oracle: SimilarityOracle) -> None:
        self._oracle = oracle
        self._queries = 0

    @property
    def model_id(self) -> str:
        return self._oracle.model_id

    @property
    def query_count(self) -> int:
        return self._queries

    def _embed_query(self, function: Function) -> np.ndarray:
        self._queries += 1
        return self._oracle._embed_query(function)

    def _pool_index(self, pool: FunctionPool) -> _PoolIndex:
        return self._oracle._pool_index(pool)


class BagOfOpcodesModel(SimilarityOracle):
    """Opcode term-frequency vector."""

    name = "bag"

    @property
    def dimension(self) -> int:
        return _VOCAB

    def embed(self, function: Function) -> np.ndarray:
        codes = [_OPCODE_INDEX[i.opcode] for i in function.instructions]
        return np.bincount(codes, minlength=_VOCAB).astype(np.float64)


class OpcodeBigramModel(SimilarityOracle):
    """Consecutive opcode pairs within basic blocks, plus weighted opcode counts.

    Each block contributes a (pad, first opcode) pair so single-instruction
    blocks still carry a feature. The first _VOCAB coordinates hold the
    opcode counts scaled by ``opcode_weight``.
    """

    name = "bigram"

    def __init__(self, opcode_weight: float = OPCODE_WEIGHT) -> None:
        super().__init__()
        self.opcode_weight = opcode_weight

    @property
    def dimension(self) -> int:
        return _VOCAB + (_VOCAB + 1) * _VOCAB

    def embed(self, function: Function) -> np.ndarray:
        codes = [_OPCODE_INDEX[i.opcode] for i in function.instructions]
        pairs: list[int] = []
        for block in build_cfg(function).blocks:
            previous = _PAD
            for index in block.indices:
                pairs.append(previous * _VOCAB + codes[index])
                previous = codes[index]
        counts = np.bincount(codes, minlength=_VOCAB) * self.opcode_weight
        bigrams = np.bincount(pairs, minlength=(_VOCAB + 1) * _VOCAB)
        return np.concatenate([counts, bigrams]).astype(np.float64)


class RandomWalkModel(SimilarityOracle):
    """Opcode 3-grams along seeded random CFG walks, hashed into buckets.

    Opcodes seen along the walks are also counted, scaled by
    ``opcode_weight``, in _VOCAB leading coordinates.
    """

    name = "walk"

    def __init__(
        self,
        walks: int = 16,
        walk_length: int = 32,
        dim: int = 1024,
        seed: int = 7,
        opcode_weight: float = OPCODE_WEIGHT,
    ) -> None:
        super().__init__()
        self.walks = walks
        self.walk_length = walk_length
        self.dim = dim
        self.seed = seed
        self.opcode_weight = opcode_weight
        symbols = _VOCAB + 1
        self._buckets = np.array(
            [
                stable_str_hash(f"{a}|{b}|{c}") % dim
                for a in range(symbols)
                for b in range(symbols)
                for c in range(symbols)
            ],
            dtype=np.int64,
        )

    @property
    def dimension(self) -> int:
        return _VOCAB + self.dim

    def embed(self, function: Function) -> np.ndarray:
        cfg = build_cfg(function)
        succ = cfg.successors()
        codes = [_OPCODE_INDEX[i.opcode] for i in function.instructions]
        block_codes = {block.id: codes[block.start : block.end] for block in cfg.blocks}
        rng = np.random.default_rng(self.seed)
        symbols = _VOCAB + 1

        counts = np.zeros(_VOCAB, dtype=np.float64)
        hashed = np.zeros(self.dim, dtype=np.float64)
        for _ in range(self.walks):
            stream = [_PAD, _PAD]
            node = cfg.entry
            for _ in range(self.walk_length):
                stream.extend(block_codes[node])
                nxt = succ[node]
                if not nxt:
                    break
                node = nxt[int(rng.integers(len(nxt)))]
            s = np.asarray(stream, dtype=np.int64)
            trigrams = (s[:-2] * symbols + s[1:-1]) * symbols + s[2:]
            hashed += np.bincount(self._buckets[trigrams], minlength=self.dim)
            counts += np.bincount(s[2:], minlength=_VOCAB)
        return np.concatenate([counts * self.opcode_weight, hashed])


def get_oracle(
    model: str,
    walk_count: int = 16,
    walk_length: int = 32,
    walk_dim: int = 1024,
    walk_seed: int = 7,
    opcode_weight: float = OPCODE_WEIGHT,
) -> SimilarityOracle:
    """Build a surrogate model by name."""
    if model == "bag":
        return BagOfOpcodesModel()
    if model == "bigram":
        return OpcodeBigramModel(opcode_weight)
    if model == "walk":
        return RandomWalkModel(walk_count, walk_length, walk_dim, walk_seed, opcode_weight)
    raise ValueError(f"Unknown model '{model}'. Choose one of: {', '.join(MODEL_NAMES)}")
