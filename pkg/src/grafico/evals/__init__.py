"""Evaluation harness: numerical scoring, trace metrics, pass-rate estimators."""

from .estimators import (
    JUDGE_PASS,
    MissingScore,
    NUMERICAL_PASS,
    PASS_KS,
    PassMatrix,
    RunScore,
    format_pass_table,
    pass_at_k,
    pass_matrix,
    pass_pow_k,
)
from .ledger import (
    EmptyLedger,
    PricingEntry,
    RequestLedgerEntry,
    carryover_ratio,
    context_saturation,
    error_recovery_cost,
    load_ledger,
    load_pricing,
    monetary_cost,
    shared_prefix_tokens,
    write_ledger,
)
from .scoring import (
    CompositeScore,
    ConstantJudge,
    DEFAULT_THRESHOLDS,
    EvalCase,
    MissingObservable,
    numerical_evaluate,
)

__all__ = [
    "CompositeScore",
    "ConstantJudge",
    "DEFAULT_THRESHOLDS",
    "EmptyLedger",
    "EvalCase",
    "JUDGE_PASS",
    "MissingObservable",
    "MissingScore",
    "NUMERICAL_PASS",
    "PASS_KS",
    "PassMatrix",
    "PricingEntry",
    "RequestLedgerEntry",
    "RunScore",
    "carryover_ratio",
    "context_saturation",
    "error_recovery_cost",
    "format_pass_table",
    "load_ledger",
    "load_pricing",
    "monetary_cost",
    "numerical_evaluate",
    "pass_at_k",
    "pass_matrix",
    "pass_pow_k",
    "shared_prefix_tokens",
    "write_ledger",
]
