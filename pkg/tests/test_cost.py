"""Tests for the byte/FLOP cost model."""

from fractions import Fraction

import numpy as np
import pytest

from feklab.cost import (
    CostBreakdown,
    emit_csv,
    emit_json,
    flops,
    fusion_traffic_ratio,
    intensity_scalar,
    read_reduction,
    shape_row,
    smem_bytes_mma,
    smem_bytes_scalar,
)
from feklab.mma import GemmShape


def test_scalar_bytes():
    assert smem_bytes_scalar(GemmShape(25, 5, 4)) == 9000
    assert smem_bytes_scalar(GemmShape(1, 1, 1)) == 24
    assert smem_bytes_scalar(GemmShape(8, 8, 4)) == 4608


def test_mma_bytes():
    assert smem_bytes_mma(GemmShape(25, 5, 4)) == 1960
    assert smem_bytes_mma(GemmShape(1, 1, 1)) == 24
    assert smem_bytes_mma(GemmShape(8, 8, 4)) == 1024


def test_flops():
    assert flops(GemmShape(25, 5, 4)) == 1000
    assert flops(GemmShape(1, 1, 1)) == 2
    assert flops(GemmShape(8, 8, 4)) == 512


def test_intensity_is_exact_rational():
    val = intensity_scalar(GemmShape(25, 5, 4))
    assert val == Fraction(1000, 9000)
    assert f"{float(val):.2f}" == "0.11"


def test_read_reduction():
    val = read_reduction(GemmShape(25, 5, 4))
    assert val == Fraction(9000, 1960)
    assert round(float(val), 1) == 4.6
    assert read_reduction(GemmShape(1, 1, 1)) == 1


def test_mma_never_worse_than_scalar():
    rng = np.random.default_rng(0)
    for _ in range(500):
        m, n, k = (int(v) for v in rng.integers(1, 64, 3))
        s = GemmShape(m, n, k)
        assert smem_bytes_mma(s) <= smem_bytes_scalar(s)


def test_breakdown_invariant():
    for ctor in (CostBreakdown.scalar, CostBreakdown.mma):
        b = ctor(GemmShape(25, 5, 4))
        assert b.intensity == Fraction(b.flops, b.smem_bytes)
        assert b.word_bytes == 8


def test_fusion_traffic_ratio():
    assert fusion_traffic_ratio("PA", "FusedPA") == 2.0
    assert fusion_traffic_ratio("PA", "PA") == 1.0
    assert fusion_traffic_ratio("FusedPA", "FusedPA") == 1.0
    with pytest.raises(ValueError, match="unknown variant"):
        fusion_traffic_ratio("PA", "Turbo")
    with pytest.raises(ValueError, match="no stored-factor reads"):
        fusion_traffic_ratio("PA", "MF")


def test_emitters():
    shapes = [GemmShape(25, 5, 4), GemmShape(8, 8, 4)]
    doc = emit_json(shapes)
    assert '"smem_bytes_scalar": 9000' in doc
    csv_text = emit_csv(shapes)
    lines = csv_text.strip().splitlines()
    assert lines[0].startswith("shape,")
    assert lines[1].startswith("25x5x4,9000,1960,1000,")
    row = shape_row(GemmShape(25, 5, 4))
    assert row["read_reduction"] == 9000 / 1960
