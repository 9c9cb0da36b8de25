"""Combinatorial pass-rate estimators and the pass matrix report.

pass@k is the probability that at least one of k sampled runs passes;
pass^k that all k pass. Both are exact hypergeometric estimates from n
observed runs with c passes, computed in overflow-safe product form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

PASS_KS = (1, 3, 5, 10)
NUMERICAL_PASS = 1.00
JUDGE_PASS = 0.90  # strict: judge must exceed this


class MissingScore(ValueError):
    pass


def _check_domain(n: int, c: int, k: int) -> None:
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c} n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k} n={n}")


def pass_at_k(n: int, c: int, k: int) -> float:
    """1 - C(n-c, k)/C(n, k): at least one success among k draws."""
    _check_domain(n, c, k)
    if n - c < k:
        return 1.0
    miss = 1.0
    for i in range(k):
        miss *= (n - c - i) / (n - i)
    return 1.0 - miss

def pass_pow_k(n: int, c: int, k: int) -> float:
    """C(c, k)/C(n, k): all k draws succeed."""
    _check_domain(n, c, k)
    if c < k:
        return 0.0
    hit = 1.0
    for i in range(k):
        hit *= (c - i) / (n - i)
    return hit


@dataclass(frozen=True)
class RunScore:
    task: str
    run: int
    numerical: Optional[float]
    judge: Optional[float]

    @property
    def passed(self) -> bool:
        if self.numerical is None or self.judge is None:
            raise MissingScore(f"{self.task} run {self.run} lacks a score")
        return self.numerical == NUMERICAL_PASS and self.judge > JUDGE_PASS


@dataclass(frozen=True)
class PassMatrix:
    rows: tuple  # RunScore tuples with resolved pass booleans
    table: dict  # k -> {"pass_at_k": float, "pass_pow_k": float}


def pass_matrix(
    scores: Sequence[RunScore],
    ks: Sequence[int] = PASS_KS,
    pooled: bool = False,
) -> PassMatrix:
    """Estimator table for each k, aggregated per task then averaged.

    With ``pooled`` all runs are treated as one task. Whether the source
    tables pooled or averaged per task is unreported; per-task is the
    default here.
    """
    if not scores:
        raise MissingScore("no run scores given")
    by_task: dict[str, list[RunScore]] = {}
    for score in scores:
        score.passed  # raises MissingScore early
        by_task.setdefault("all" if pooled else score.task, []).append(score)
    table = {}
    for k in ks:
        at_k, pow_k, tasks = 0.0, 0.0, 0
        for runs in by_task.values():
            n = len(runs)
            if k > n:
                continue
            c = sum(1 for r in runs if r.passed)
            at_k += pass_at_k(n, c, k)
            pow_k += pass_pow_k(n, c, k)
            tasks += 1
        if tasks:
            table[k] = {"pass_at_k": at_k / tasks, "pass_pow_k": pow_k / tasks}
    return PassMatrix(rows=tuple(scores), table=table)


def format_pass_table(matrix: PassMatrix) -> str:
    lines = ["k\tpass@k\tpass^k"]
    for k, row in sorted(matrix.table.items()):
        lines.append(f"{k}\t{row['pass_at_k']:.2f}\t{row['pass_pow_k']:.2f}")
    return "\n".join(lines)
