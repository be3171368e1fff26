"""Attack service: corpus-wide attacks with derived seeds and a worker pool."""

from concurrent.futures import ThreadPoolExecutor

from loguru import logger
from tqdm import tqdm

from simevade.core.attacker import run_attack
from simevade.core.oracle import SimilarityOracle
from simevade.models.attack import AttackConfig, AttackMode, AttackOutcome, AttackStatus
from simevade.models.oracle import FunctionId, FunctionPool
from simevade.utils.exceptions import EmptyCandidatesError, NoExitError, ReportInvariantError
from simevade.utils.hashing import derive_seed


class AttackService:
    """Runs run_attack over pool functions and checks query accounting."""

    def __init__(
        self,
        oracle: SimilarityOracle,
        pool: FunctionPool,
        config: AttackConfig,
        workers: int = 1,
    ) -> None:
        self.oracle = oracle
        self.pool = pool
        self.config = config
        self.workers = max(1, workers)

    def config_for(self, function_id: FunctionId) -> AttackConfig:
        """Per-function config; the seed depends only on (seed, id)."""
        return self.config.model_copy(
            update={"seed": derive_seed(self.config.seed, function_id)}
        )

    def attack_one(
        self, function_id: FunctionId, mode: AttackMode = AttackMode.FULL
    ) -> AttackOutcome:
        function = self.pool[function_id]
        config = self.config_for(function_id)
        try:
            return run_attack(function, self.oracle, self.pool, config, function_id, mode)
        except (NoExitError, EmptyCandidatesError) as e:
            logger.warning(f"{function_id}: no insertion positions ({e.message})")
            session = self.oracle.session()
            rank = session.gt_rank(function, self.pool, function_id)
            return AttackOutcome(
                function_id=function_id,
                model=self.oracle.model_id,
                mode=mode,
                status=AttackStatus.NO_CANDIDATES,
                original_length=len(function),
                oracle_queries=session.query_count,
                gt_rank_before=rank,
                final_gt_rank=rank,
                seed=config.seed,
            )

    def attack_all(
        self,
        targets: list[FunctionId] | None = None,
        mode: AttackMode = AttackMode.FULL,
        progress: bool = False,
    ) -> list[AttackOutcome]:
        """Attack every target; outcomes come back in target order."""
        ids = targets if targets is not None else self.pool.ids()
        queries_before = self.oracle.query_count
        logger.info(
            f"Attacking {len(ids)} functions with {self.oracle.model_id} "
            f"({mode}, {self.workers} workers)"
        )

        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            results = executor.map(lambda i: self.attack_one(i, mode), ids)
            outcomes = list(
                tqdm(results, total=len(ids), desc="attack", disable=not progress)
            )

        spent = self.oracle.query_count - queries_before
        accounted = sum(outcome.oracle_queries for outcome in outcomes)
        if spent != accounted:
            raise ReportInvariantError(
                "query_accounting",
                f"oracle counted {spent} queries, outcomes report {accounted}",
            )

        succeeded = sum(outcome.succeeded for outcome in outcomes)
        logger.info(f"{succeeded}/{len(outcomes)} attacks succeeded, {spent} queries")
        return outcomes
