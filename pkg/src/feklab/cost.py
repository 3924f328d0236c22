"""Closed-form shared-memory byte and FLOP accounting for small GEMMs.

Scalar-core execution loads both operand elements per multiply-add from
shared memory and stores each output once; warp-MMA execution loads each
operand element once per warp and stores each output once.  All quantities
are exact integers or rationals; floats appear only in the final report.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction

from .mma import GemmShape

WORD_BYTES = 8


def smem_bytes_scalar(shape: GemmShape) -> int:
    """Bytes moved when each thread computes one output element."""
    return WORD_BYTES * (shape.m * shape.n * (shape.k * 2) + shape.m * shape.n)


def smem_bytes_mma(shape: GemmShape) -> int:
    """Bytes moved when a warp shares the operand loads."""
    return WORD_BYTES * (shape.m * shape.k + shape.n * shape.k + shape.m * shape.n)


def flops(shape: GemmShape) -> int:
    return shape.m * shape.n * shape.k * 2


def intensity_scalar(shape: GemmShape) -> Fraction:
    return Fraction(flops(shape), smem_bytes_scalar(shape))


def intensity_mma(shape: GemmShape) -> Fraction:
    return Fraction(flops(shape), smem_bytes_mma(shape))


def read_reduction(shape: GemmShape) -> Fraction:
    """Scalar-over-MMA shared-memory traffic ratio."""
    return Fraction(smem_bytes_scalar(shape), smem_bytes_mma(shape))


@dataclass(frozen=True)
class CostBreakdown:
    shape: GemmShape
    smem_bytes: int
    flops: int
    intensity: Fraction
    word_bytes: int = WORD_BYTES

    @classmethod
    def scalar(cls, shape: GemmShape) -> "CostBreakdown":
        return cls(shape, smem_bytes_scalar(shape), flops(shape), intensity_scalar(shape))

    @classmethod
    def mma(cls, shape: GemmShape) -> "CostBreakdown":
        return cls(shape, smem_bytes_mma(shape), flops(shape), intensity_mma(shape))


VARIANT_TRAFFIC = {
    # quadrature-factor array reads per block-operator application
    "PA": 2,
    "FusedPA": 1,
    "MF": 0,
    "FusedMF": 0,
}


def fusion_traffic_ratio(baseline: str, variant: str) -> float:
    """Model ratio of quadrature-data reads between two operator variants.

    Unfused partial assembly reads the stored factors once for each of the
    two one-sided kernels; the fused variant reads them once for both, a
    twofold reduction.  Matrix-free variants store no factors, so ratios
    against them are undefined.
    """
    for name in (baseline, variant):
        if name not in VARIANT_TRAFFIC:
            raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANT_TRAFFIC)}")
    num, den = VARIANT_TRAFFIC[baseline], VARIANT_TRAFFIC[variant]
    if den == 0:
        raise ValueError(f"variant {variant!r} performs no stored-factor reads")
    return num / den


def shape_row(shape: GemmShape) -> dict:
    """All five reported quantities for one shape."""
    return {
        "shape": str(shape),
        "smem_bytes_scalar": smem_bytes_scalar(shape),
        "smem_bytes_mma": smem_bytes_mma(shape),
        "flops": flops(shape),
        "intensity_scalar": float(intensity_scalar(shape)),
        "read_reduction": float(read_reduction(shape)),
    }


def emit_json(shapes) -> str:
    return json.dumps([shape_row(s) for s in shapes], indent=2, sort_keys=True)


def emit_csv(shapes) -> str:
    fields = [
        "shape",
        "smem_bytes_scalar",
        "smem_bytes_mma",
        "flops",
        "intensity_scalar",
        "read_reduction",
    ]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for s in shapes:
        writer.writerow(shape_row(s))
    return buf.getvalue()
