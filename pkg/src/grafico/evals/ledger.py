"""Trace-ledger accounting: token bookkeeping per LLM API request.

A ledger is a list of per-request entries (JSON lines on disk). The four
metrics read directly off it: context saturation, carryover ratio, error
recovery cost, and monetary cost. Pricing comes from a TOML table keyed by
model label; published list prices ship as defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib


class EmptyLedger(ValueError):
    pass


@dataclass(frozen=True)
class RequestLedgerEntry:
    index: int
    input_tokens: int
    output_tokens: int
    cacheable_tokens: int = 0
    is_retry: bool = False
    reason: Optional[str] = None

    def __post_init__(self):
        if min(self.input_tokens, self.output_tokens, self.cacheable_tokens) < 0:
            raise ValueError("token counts must be non-negative")
        if self.cacheable_tokens > self.input_tokens:
            raise ValueError("cacheable tokens cannot exceed input tokens")

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens


@dataclass(frozen=True)
class PricingEntry:
    input_rate: float  # currency per 1e6 input tokens
    output_rate: float
    max_context_window: int

    def __post_init__(self):
        if self.input_rate < 0 or self.output_rate < 0:
            raise ValueError("rates must be non-negative")
        if self.max_context_window <= 0:
            raise ValueError("context window must be positive")


def load_ledger(path: str | Path) -> list[RequestLedgerEntry]:
    entries = []
    last_index = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            entry = RequestLedgerEntry(**raw)
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        if last_index is not None and entry.index <= last_index:
            raise ValueError(f"{path}:{lineno}: index must strictly increase")
        last_index = entry.index
        entries.append(entry)
    if not entries:
        raise EmptyLedger(str(path))
    return entries


def write_ledger(entries: Sequence[RequestLedgerEntry], path: str | Path) -> None:
    with open(path, "w") as f:
        for entry in entries:
            f.write(json.dumps(asdict(entry)) + "\n")


def load_pricing(path: Optional[str | Path] = None) -> dict[str, PricingEntry]:
    if path is None:
        data = tomllib.loads(
            resources.files("grafico.evals").joinpath("pricing.toml").read_text()
        )
    else:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    return {
        model: PricingEntry(
            input_rate=float(row["input_rate"]),
            output_rate=float(row["output_rate"]),
            max_context_window=int(row["max_context_window"]),
        )
        for model, row in data.items()
    }


def shared_prefix_tokens(
    previous: Sequence[tuple[str, int]], current: Sequence[tuple[str, int]]
) -> int:
    """Token length of the longest message-prefix shared between requests.

    Messages are (content, token_count) pairs; this is the cacheable-token
    attribution used when recording a ledger. No provider TTL modeling.
    """
    shared = 0
    for (prev_msg, prev_n), (cur_msg, cur_n) in zip(previous, current):
        if prev_msg != cur_msg or prev_n != cur_n:
            break
        shared += cur_n
    return shared


def _require_nonempty(ledger: Sequence[RequestLedgerEntry]) -> None:
    if not ledger:
        raise EmptyLedger("ledger has no entries")


def context_saturation(
    ledger: Sequence[RequestLedgerEntry], pricing: PricingEntry
) -> float:
    """Total tokens of the final request over the model's context window."""
    _require_nonempty(ledger)
    return ledger[-1].total_tokens / pricing.max_context_window


def carryover_ratio(ledger: Sequence[RequestLedgerEntry]) -> float:
    """Accumulated cacheable tokens over total tokens consumed."""
    _require_nonempty(ledger)
    total = sum(e.total_tokens for e in ledger)
    return sum(e.cacheable_tokens for e in ledger) / total if total else 0.0


def error_recovery_cost(ledger: Sequence[RequestLedgerEntry]) -> float:
    """Fraction of all tokens spent on retry-attributed requests."""
    _require_nonempty(ledger)
    total = sum(e.total_tokens for e in ledger)
    retry = sum(e.total_tokens for e in ledger if e.is_retry)
    return retry / total if total else 0.0


def monetary_cost(
    ledger: Sequence[RequestLedgerEntry], pricing: PricingEntry
) -> float:
    """List-price cost in currency units, ignoring cache discounts."""
    input_tokens = sum(e.input_tokens for e in ledger)
    output_tokens = sum(e.output_tokens for e in ledger)
    return (
        input_tokens * pricing.input_rate + output_tokens * pricing.output_rate
    ) / 1e6
