"""Services package for simevade."""

from .attack_service import AttackService
from .metrics_service import (
    build_summary,
    compute_cr,
    compute_metrics,
    run_ablation,
    transferability,
)
from .storage_service import StorageService, get_storage_service

__all__ = [
    "AttackService",
    "StorageService",
    "get_storage_service",
    # Metrics
    "build_summary",
    "compute_cr",
    "compute_metrics",
    "run_ablation",
    "transferability",
]
