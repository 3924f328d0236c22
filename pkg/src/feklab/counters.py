"""Lightweight instrumentation counters shared across kernels."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Counters:
    """Mutable tally of work done by instrumented code paths.

    flops counts floating-point multiply-adds as 2 operations each,
    d_reads counts scalar loads from stored quadrature-point factors,
    operator_applies counts full block-operator applications.
    """

    flops: int = 0
    d_reads: int = 0
    operator_applies: int = 0
    extra: dict = field(default_factory=dict)

    def reset(self) -> None:
        self.flops = 0
        self.d_reads = 0
        self.operator_applies = 0
        self.extra.clear()

    def bump(self, key: str, amount: int = 1) -> None:
        self.extra[key] = self.extra.get(key, 0) + amount
