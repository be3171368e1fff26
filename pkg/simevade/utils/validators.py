"""Invariant checks for pools, attack outcomes and metric reports."""

import math
import re

from simevade.core.cfg_builder import build_cfg, cfg_isomorphic
from simevade.core.emulator import check_equivalence
from simevade.core.oracle import RankingInterface, length_similarity
from simevade.models.attack import AttackConfig, AttackOutcome
from simevade.models.oracle import FunctionPool
from simevade.models.report import MetricsReport
from simevade.utils.exceptions import ReportInvariantError

_SIMILARITY_SLACK = 1e-9


class PoolValidator:
    """Validator for retrieval pools."""

    ID_PATTERN = re.compile(r"^\S+$")

    @classmethod
    def validate(cls, pool: FunctionPool, k: int | None = None) -> None:
        if len(pool) == 0:
            raise ReportInvariantError("pool_not_empty", "Pool has no functions")

        for function_id in pool.ids():
            if not cls.ID_PATTERN.match(function_id):
                raise ReportInvariantError(
                    "pool_ids_wellformed", f"Invalid pool id '{function_id}'"
                )

        if k is not None and k > len(pool):
            raise ReportInvariantError(
                "pool_size", f"k={k} exceeds pool size {len(pool)}"
            )


class OutcomeValidator:
    """Re-verifies the postconditions of every successful attack."""

    @staticmethod
    def verify(
        outcome: AttackOutcome,
        pool: FunctionPool,
        oracle: RankingInterface,
        config: AttackConfig,
    ) -> None:
        check = f"outcome:{outcome.function_id}"
        if outcome.model != oracle.model_id:
            raise ReportInvariantError(
                check, f"result from model {outcome.model}, verified with {oracle.model_id}"
            )
        if not outcome.succeeded:
            return
        if outcome.function_id not in pool:
            raise ReportInvariantError(check, f"{outcome.function_id} is not in the pool")
        assert outcome.adversarial is not None
        original = pool[outcome.function_id]
        adversarial = outcome.adversarial

        if length_similarity(original, adversarial) < config.epsilon - _SIMILARITY_SLACK:
            raise ReportInvariantError(check, "length similarity below epsilon")

        rank = oracle.gt_rank(adversarial, pool, outcome.function_id)
        if rank <= config.k:
            raise ReportInvariantError(
                check, f"ground truth still ranked {rank} (k={config.k})"
            )

        if not cfg_isomorphic(build_cfg(original), build_cfg(adversarial)):
            raise ReportInvariantError(check, "CFG not isomorphic to the original")

        verdict = check_equivalence(
            original, adversarial, config.equivalence_trials, outcome.seed, config.max_steps
        )
        if not verdict.equivalent:
            raise ReportInvariantError(
                check, f"not equivalent: {verdict.first_divergence}"
            )


class ReportValidator:
    """Arithmetic consistency of a metrics report."""

    @staticmethod
    def verify(report: MetricsReport) -> None:
        if report.iir == 0.0:
            if report.cr != 0.0:
                raise ReportInvariantError("cr_identity", "cr must be 0 when iir is 0")
        elif not math.isclose(
            report.cr * report.iir, report.oa - report.aa, rel_tol=1e-12, abs_tol=1e-9
        ):
            raise ReportInvariantError("cr_identity", "cr * iir != oa - aa")

        if report.per_function:
            total_length = sum(row.length for row in report.per_function)
            total_inserted = sum(row.inserted for row in report.per_function)
            iir = round(100.0 * total_inserted / total_length, 2)
            if iir != report.iir:
                raise ReportInvariantError(
                    "iir_reconciles",
                    f"per-function rows give iir {iir}, report has {report.iir}",
                )
            if len(report.per_function) != report.n_functions:
                raise ReportInvariantError(
                    "row_count", "per-function rows do not match n_functions"
                )
