"""Shared-memory bank model for warp-wide 8-byte accesses.

The address space is striped over 4-byte banks; a warp's 8-byte loads and
stores issue in two phases (lanes 0-15, then 16-31), each lane touching a
pair of adjacent banks.  A phase is conflict-free when, after coalescing
identical addresses into one broadcast, no bank is touched twice.

On top of that sits a checker that walks every fragment access of a mapped
GEMM (A loads, B loads, both C store halves) and a deterministic search for
index mappings whose accesses are all conflict-free under given layouts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mma import (
    FRAGMENTS,
    INSTR_K,
    INSTR_M,
    INSTR_N,
    PAD,
    FragmentLayout,
    GemmShape,
    IndexMapping,
    identity_mapping,
)


class AlignmentError(ValueError):
    """An access address is not aligned to the word size."""


class LayoutBoundsError(IndexError):
    """An index fell outside a layout's extents."""


@dataclass(frozen=True)
class BankConfig:
    num_banks: int = 32
    bank_width_bytes: int = 4
    word_bytes: int = 8
    phase_split: int = 16

    def __post_init__(self):
        if self.word_bytes % self.bank_width_bytes:
            raise ValueError("word_bytes must be a multiple of bank_width_bytes")
        if self.num_banks * self.bank_width_bytes <= 0:
            raise ValueError("bank space must be positive")

    @property
    def period_bytes(self) -> int:
        return self.num_banks * self.bank_width_bytes

    @property
    def period_words(self) -> int:
        return self.period_bytes // self.word_bytes


DEFAULT_CONFIG = BankConfig()


def bank_of(address_bytes: int, cfg: BankConfig = DEFAULT_CONFIG) -> int:
    """Bank index of a byte address: floor(address / bank width) mod banks."""
    return (address_bytes // cfg.bank_width_bytes) % cfg.num_banks


@dataclass
class SmemLayout:
    """Strided placement of a logical array in shared memory.

    strides_elems are in word-sized elements, one per index; the map from
    index tuples to addresses must be injective over the extents.
    """

    extents: tuple[int, ...]
    strides_elems: tuple[int, ...]
    base_offset_bytes: int = 0
    order: str = ""
    word_bytes: int = 8

    def __post_init__(self):
        if len(self.extents) != len(self.strides_elems):
            raise ValueError("extents and strides must have equal length")
        if self.base_offset_bytes < 0:
            raise ValueError("base offset must be non-negative")
        self._check_injective()

    def _check_injective(self):
        idx_grids = np.meshgrid(*(np.arange(e) for e in self.extents), indexing="ij")
        flat = sum(g.ravel() * s for g, s in zip(idx_grids, self.strides_elems))
        if np.unique(flat).size != flat.size:
            raise ValueError(
                f"strides {self.strides_elems} are not injective over extents {self.extents}"
            )

    def address_of(self, *index: int) -> int:
        for i, (idx, ext) in enumerate(zip(index, self.extents)):
            if not 0 <= idx < ext:
                raise LayoutBoundsError(
                    f"index {idx} out of bounds for extent {ext} (axis {i})"
                )
        elem = sum(i * s for i, s in zip(index, self.strides_elems))
        return self.base_offset_bytes + self.word_bytes * elem

    def addresses(self, idx0: np.ndarray, idx1: np.ndarray) -> np.ndarray:
        """Vectorized 2-index address computation; negative indices mean no access."""
        active = (idx0 >= 0) & (idx1 >= 0)
        if np.any(active & ((idx0 >= self.extents[0]) | (idx1 >= self.extents[1]))):
            raise LayoutBoundsError(
                f"indices exceed layout extents {self.extents}"
            )
        elem = idx0 * self.strides_elems[0] + idx1 * self.strides_elems[1]
        addr = self.base_offset_bytes + self.word_bytes * elem
        return np.where(active, addr, -1)


def default_gemm_layouts(
    shape: GemmShape, cfg: BankConfig = DEFAULT_CONFIG
) -> tuple[SmemLayout, SmemLayout, SmemLayout]:
    """Packed layouts with the reduction index fastest on both operands.

    A is (m, k) with k contiguous, B is (k, n) with k contiguous, C is
    (m, n) with m contiguous.  A C column stride that is a multiple of half
    the bank-pair period (8 words by default) puts all columns on at most
    two pair offsets, which no column permutation can untangle; such strides
    get a 2-word pad so consecutive columns stagger by a quarter period.
    """
    half_period = cfg.period_words // 2
    c_stride = shape.m
    if half_period and c_stride % half_period == 0:
        c_stride += 2
    layout_a = SmemLayout((shape.m, shape.k), (shape.k, 1), order="k-fastest")
    layout_b = SmemLayout((shape.k, shape.n), (1, shape.k), order="k-fastest")
    layout_c = SmemLayout((shape.m, shape.n), (1, c_stride), order="m-fastest")
    return layout_a, layout_b, layout_c


# ---------------------------------------------------------------------------
# Phase traces
# ---------------------------------------------------------------------------


@dataclass
class PhaseTrace:
    """Bank activity of one access phase after broadcast coalescing."""

    lanes: list[int]
    addresses: list[int]
    coalesced: list[int]
    histogram: np.ndarray
    max_degree: int
    conflict_free: bool


def access_phases(
    lane_addresses, cfg: BankConfig = DEFAULT_CONFIG
) -> tuple[PhaseTrace, PhaseTrace]:
    """Split a warp's word accesses into its two phases and count banks.

    lane_addresses holds up to 32 entries; None (or a negative value) marks
    a lane that makes no access.  Identical addresses within a phase
    coalesce into a single broadcast access.
    """
    addrs = list(lane_addresses)
    if len(addrs) > 2 * cfg.phase_split:
        raise ValueError(f"at most {2 * cfg.phase_split} lanes supported")
    addrs += [None] * (2 * cfg.phase_split - len(addrs))
    traces = []
    for phase in range(2):
        lanes, acts = [], []
        for lane in range(phase * cfg.phase_split, (phase + 1) * cfg.phase_split):
            a = addrs[lane]
            if a is None or a < 0:
                continue
            if a % cfg.word_bytes:
                raise AlignmentError(
                    f"lane {lane} address {a} is not {cfg.word_bytes}-byte aligned"
                )
            lanes.append(lane)
            acts.append(int(a))
        coalesced = sorted(set(acts))
        hist = np.zeros(cfg.num_banks, dtype=np.int64)
        for a in coalesced:
            for off in range(0, cfg.word_bytes, cfg.bank_width_bytes):
                hist[bank_of(a + off, cfg)] += 1
        degree = int(hist.max()) if coalesced else 0
        traces.append(
            PhaseTrace(
                lanes=lanes,
                addresses=acts,
                coalesced=coalesced,
                histogram=hist,
                max_degree=degree,
                conflict_free=degree <= 1,
            )
        )
    return traces[0], traces[1]


# ---------------------------------------------------------------------------
# Mapping verification
# ---------------------------------------------------------------------------

ACCESS_KINDS = ("a_load", "b_load", "c_store0", "c_store1")


def _event_addresses(
    kind: str,
    mapping: IndexMapping,
    w: int,
    tn: int,
    tk: int,
    layout_a: SmemLayout,
    layout_b: SmemLayout,
    layout_c: SmemLayout,
    frag: FragmentLayout,
) -> np.ndarray:
    """Per-lane byte addresses (-1 for padded lanes) of one fragment access."""
    if kind == "a_load":
        mp = mapping.f_m[w][frag.a_rows]
        kp = mapping.f_k[tk * INSTR_K + frag.a_cols]
        return layout_a.addresses(mp, kp)
    if kind == "b_load":
        kp = mapping.f_k[tk * INSTR_K + frag.b_rows]
        np_ = mapping.f_n[tn * INSTR_N + frag.b_cols]
        return layout_b.addresses(kp, np_)
    cols = frag.c_cols0 if kind == "c_store0" else frag.c_cols1
    mp = mapping.f_m[w][frag.c_rows]
    np_ = mapping.f_n[tn * INSTR_N + cols]
    return layout_c.addresses(mp, np_)


def _phase_degrees(addrs: np.ndarray, cfg: BankConfig) -> tuple[int, int]:
    """Fast max conflict degree per phase (broadcasts coalesced)."""
    degrees = []
    split = cfg.phase_split
    for lo in (0, split):
        act = addrs[lo : lo + split]
        act = np.unique(act[act >= 0])
        if act.size == 0:
            degrees.append(0)
            continue
        banks = np.concatenate(
            [
                (act + off) // cfg.bank_width_bytes % cfg.num_banks
                for off in range(0, cfg.word_bytes, cfg.bank_width_bytes)
            ]
        )
        degrees.append(int(np.bincount(banks, minlength=cfg.num_banks).max()))
    return degrees[0], degrees[1]


@dataclass
class AccessStats:
    kind: str
    phase: int
    max_degree: int = 0
    histogram: np.ndarray = field(default_factory=lambda: np.zeros(32, dtype=np.int64))
    worst_event: tuple[int, int, int] | None = None

    @property
    def conflict_free(self) -> bool:
        return self.max_degree <= 1


@dataclass
class ConflictReport:
    """Worst-case bank occupancy per access kind and phase for one mapping."""

    shape: GemmShape
    stats: dict
    traces: dict
    conflict_free: bool
    max_degree: int

    def to_json(self) -> str:
        doc = {
            "shape": str(self.shape),
            "conflict_free": self.conflict_free,
            "max_degree": self.max_degree,
            "accesses": {
                kind: {
                    f"phase{p + 1}": {
                        "max_degree": self.stats[(kind, p)].max_degree,
                        "conflict_free": self.stats[(kind, p)].conflict_free,
                        "histogram": self.stats[(kind, p)].histogram.tolist(),
                        "worst_event": self.stats[(kind, p)].worst_event,
                    }
                    for p in range(2)
                }
                for kind in ACCESS_KINDS
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def diagram(self) -> str:
        """Text diagram: 32 columns of banks, one row per access event phase."""
        width = 20
        lines = [
            f"bank occupancy for {self.shape} "
            "(columns = banks 0-31, '.' = idle, digit = accesses)",
            " " * width + "0123456789" * 3 + "01",
        ]
        for (kind, w, tn, tk, phase), trace in sorted(self.traces.items()):
            cells = "".join(
                "." if c == 0 else (str(c) if c < 10 else "*") for c in trace.histogram
            )
            tile = f" t{tn}{tk}" if (tn or tk) else ""
            prefix = f"{kind:8s} w{w}{tile} p{phase + 1}"
            lines.append(f"{prefix:<{width}}{cells}")
        return "\n".join(lines)


def verify_mapping(
    shape: GemmShape,
    mapping: IndexMapping,
    layout_a: SmemLayout,
    layout_b: SmemLayout,
    layout_c: SmemLayout,
    cfg: BankConfig = DEFAULT_CONFIG,
    frag: FragmentLayout = FRAGMENTS,
    keep_traces: bool = True,
) -> ConflictReport:
    """Check every fragment access of the mapped GEMM for bank conflicts.

    A and B loads occur once per (warp, column tile, reduction tile)
    instruction; C stores occur once per (warp, column tile) after the
    reduction tiles have been accumulated.
    """
    mapping.validate_coverage()
    stats = {(kind, p): AccessStats(kind, p) for kind in ACCESS_KINDS for p in range(2)}
    traces = {}
    for w in range(mapping.num_warps):
        for tn in range(mapping.n_tiles):
            events = [("c_store0", 0), ("c_store1", 0)]
            events += [("a_load", tk) for tk in range(mapping.k_tiles)]
            events += [("b_load", tk) for tk in range(mapping.k_tiles)]
            for kind, tk in events:
                addrs = _event_addresses(
                    kind, mapping, w, tn, tk, layout_a, layout_b, layout_c, frag
                )
                ph1, ph2 = access_phases(
                    [int(a) if a >= 0 else None for a in addrs], cfg
                )
                for p, trace in ((0, ph1), (1, ph2)):
                    if keep_traces and trace.lanes:
                        traces[(kind, w, tn, tk, p)] = trace
                    st = stats[(kind, p)]
                    if trace.max_degree > st.max_degree or st.worst_event is None:
                        st.max_degree = trace.max_degree
                        st.histogram = trace.histogram
                        st.worst_event = (w, tn, tk)
    max_degree = max(st.max_degree for st in stats.values())
    return ConflictReport(
        shape=shape,
        stats=stats,
        traces=traces,
        conflict_free=max_degree <= 1,
        max_degree=max_degree,
    )


# ---------------------------------------------------------------------------
# Mapping search
# ---------------------------------------------------------------------------


@dataclass
class SearchResult:
    mapping: IndexMapping | None
    found: bool
    nodes: int
    checks: dict
    family: str | None = None

    def __bool__(self):
        return self.found


def _arrangements(slots: int, num_values: int):
    """Injective placements of 0..num_values-1 into slots, PAD elsewhere.

    Lexicographic with real values ordered before PAD, so the identity
    prefix (0, 1, ..., v-1, PAD, ...) comes first.  Iterative so that very
    wide slot counts cannot hit the interpreter recursion limit.
    """
    used = [False] * num_values
    remaining = num_values
    prefix: list[int] = []

    def candidates(slots_left: int):
        for v in range(num_values):
            if not used[v]:
                yield v
        if slots_left - 1 >= remaining:
            yield PAD

    stack = [candidates(slots)]
    while stack:
        step = next(stack[-1], None)
        if step is None:
            stack.pop()
            if prefix:
                last = prefix.pop()
                if last != PAD:
                    used[last] = False
                    remaining += 1
            continue
        prefix.append(step)
        if step != PAD:
            used[step] = True
            remaining -= 1
        if len(prefix) == slots:
            if remaining == 0:
                yield tuple(prefix)
            last = prefix.pop()
            if last != PAD:
                used[last] = False
                remaining += 1
        else:
            stack.append(candidates(slots - len(prefix)))


def _family_f_m(family: str, shape: GemmShape) -> np.ndarray:
    """Warp tilings of the row range: contiguous blocks or round-robin."""
    warps = shape.m_tiles
    f_m = np.full((warps, INSTR_M), PAD, dtype=np.int64)
    for w in range(warps):
        for mi in range(INSTR_M):
            mp = w * INSTR_M + mi if family == "blocked" else mi * warps + w
            if mp < shape.m:
                f_m[w, mi] = mp
    return f_m


def _kinds_pass(
    mapping: IndexMapping,
    kinds: tuple[str, ...],
    layout_a: SmemLayout,
    layout_b: SmemLayout,
    layout_c: SmemLayout,
    cfg: BankConfig,
    frag: FragmentLayout,
) -> bool:
    for kind in kinds:
        tks = range(mapping.k_tiles) if kind in ("a_load", "b_load") else (0,)
        for w in range(mapping.num_warps):
            for tn in range(mapping.n_tiles):
                for tk in tks:
                    addrs = _event_addresses(
                        kind, mapping, w, tn, tk, layout_a, layout_b, layout_c, frag
                    )
                    d1, d2 = _phase_degrees(addrs, cfg)
                    if d1 > 1 or d2 > 1:
                        return False
    return True


def search_mapping(
    shape: GemmShape,
    layouts: tuple[SmemLayout, SmemLayout, SmemLayout] | None = None,
    cfg: BankConfig = DEFAULT_CONFIG,
    budget: int = 500_000,
    frag: FragmentLayout = FRAGMENTS,
) -> SearchResult:
    """Depth-first search for a conflict-free mapping under the layouts.

    The space is warp tilings of the row range (blocked, then round-robin),
    times injective column placements over the 8-wide slots, times reduction
    placements over the 4-wide-per-tile slots, visited in lexicographic
    order; the first candidate whose accesses all verify conflict-free wins,
    so results are reproducible.  Candidates are screened one access kind at
    a time (C stores depend only on rows x columns, A loads only on rows x
    reductions) which prunes entire subtrees without changing the order in
    which complete candidates succeed.  Every screening counts against the
    node budget; exhausting it returns a not-found result with statistics.
    """
    if layouts is None:
        layouts = default_gemm_layouts(shape, cfg)
    layout_a, layout_b, layout_c = layouts
    nodes = 0
    checks = {"c": 0, "a": 0, "b": 0, "full": 0}

    for family in ("blocked", "strided"):
        f_m = _family_f_m(family, shape)
        a_checked: dict[tuple, bool] = {}
        for f_n in _arrangements(INSTR_N * shape.n_tiles, shape.n):
            cand = IndexMapping(
                shape,
                f_m,
                np.array(f_n, dtype=np.int64),
                np.array(
                    [j if j < shape.k else PAD for j in range(INSTR_K * shape.k_tiles)],
                    dtype=np.int64,
                ),
            )
            nodes += 1
            checks["c"] += 1
            if nodes > budget:
                return SearchResult(None, False, nodes, checks)
            if not _kinds_pass(cand, ("c_store0", "c_store1"), layout_a, layout_b, layout_c, cfg, frag):
                continue
            for f_k in _arrangements(INSTR_K * shape.k_tiles, shape.k):
                cand.f_k = np.array(f_k, dtype=np.int64)
                passed_a = a_checked.get(f_k)
                if passed_a is None:
                    nodes += 1
                    checks["a"] += 1
                    if nodes > budget:
                        return SearchResult(None, False, nodes, checks)
                    passed_a = _kinds_pass(
                        cand, ("a_load",), layout_a, layout_b, layout_c, cfg, frag
                    )
                    a_checked[f_k] = passed_a
                if not passed_a:
                    continue
                nodes += 1
                checks["b"] += 1
                if nodes > budget:
                    return SearchResult(None, False, nodes, checks)
                if not _kinds_pass(cand, ("b_load",), layout_a, layout_b, layout_c, cfg, frag):
                    continue
                checks["full"] += 1
                report = verify_mapping(
                    shape, cand, layout_a, layout_b, layout_c, cfg, frag, keep_traces=False
                )
                if report.conflict_free:
                    return SearchResult(cand, True, nodes, checks, family)
    return SearchResult(None, False, nodes, checks)


_MAPPING_CACHE: dict[tuple[int, int, int], IndexMapping] = {}


def cached_conflict_free_mapping(shape: GemmShape) -> IndexMapping:
    """Search once per shape and reuse; falls back to the identity mapping.

    The identity fallback stays numerically correct (coverage holds), it
    just may not be conflict-free; callers that need conflict freedom
    should verify explicitly.
    """
    key = (shape.m, shape.n, shape.k)
    if key not in _MAPPING_CACHE:
        result = search_mapping(shape)
        _MAPPING_CACHE[key] = result.mapping if result.found else identity_mapping(shape)
    return _MAPPING_CACHE[key]
