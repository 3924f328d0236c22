"""Scalar emulation of the FP64 m8n8k4 warp matrix-multiply-accumulate.

One warp of 32 lanes cooperatively computes C' = A*B + C for an 8x4 times
4x8 tile.  Per-lane fragment coordinates follow the hardware register maps;
irregular problem GEMMs are tiled onto instruction tiles through three index
maps (per-warp row map, column map, reduction map) with out-of-range slots
padded: padded operands read zero and padded results are discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .counters import Counters
from .tensor import Tensor3

PAD = -1

INSTR_M = 8
INSTR_N = 8
INSTR_K = 4
WARP_LANES = 32


class CoverageError(ValueError):
    """A mapping double-covers or misses problem indices."""


class MappingFormatError(ValueError):
    """A mapping file does not follow the expected format."""


@dataclass(frozen=True)
class GemmShape:
    """Problem GEMM of shape m-by-k times k-by-n equals m-by-n."""

    m: int
    n: int
    k: int

    def __post_init__(self):
        if min(self.m, self.n, self.k) < 1:
            raise ValueError(f"all GEMM dimensions must be >= 1, got {self}")

    @classmethod
    def parse(cls, text: str) -> "GemmShape":
        parts = text.lower().replace("/", "x").split("x")
        if len(parts) != 3:
            raise ValueError(f"expected MxNxK, got {text!r}")
        return cls(*(int(p) for p in parts))

    def __str__(self):
        return f"{self.m}x{self.n}x{self.k}"

    @property
    def m_tiles(self) -> int:
        return -(-self.m // INSTR_M)

    @property
    def n_tiles(self) -> int:
        return -(-self.n // INSTR_N)

    @property
    def k_tiles(self) -> int:
        return -(-self.k // INSTR_K)


class FragmentLayout:
    """Per-lane (row, col) coordinates of the A, B and C operand fragments.

    Lane L holds A(L//4, L%4), B(L%4, L//4) and the C pair
    (L//4, 2*(L%4)) , (L//4, 2*(L%4)+1).
    """

    def __init__(self):
        lanes = np.arange(WARP_LANES)
        self.a_rows = lanes // 4
        self.a_cols = lanes % 4
        self.b_rows = lanes % 4
        self.b_cols = lanes // 4
        self.c_rows = lanes // 4
        self.c_cols0 = 2 * (lanes % 4)
        self.c_cols1 = 2 * (lanes % 4) + 1

    def a_coords(self, lane: int) -> tuple[int, int]:
        return int(self.a_rows[lane]), int(self.a_cols[lane])

    def b_coords(self, lane: int) -> tuple[int, int]:
        return int(self.b_rows[lane]), int(self.b_cols[lane])

    def c_coords(self, lane: int) -> tuple[tuple[int, int], tuple[int, int]]:
        r = int(self.c_rows[lane])
        return (r, int(self.c_cols0[lane])), (r, int(self.c_cols1[lane]))

    def check_bijections(self) -> None:
        """Exhaustively verify the fragment coordinate maps cover each cell once."""
        a_cells = {(int(r), int(c)) for r, c in zip(self.a_rows, self.a_cols)}
        if a_cells != {(r, c) for r in range(8) for c in range(4)}:
            raise CoverageError("A fragment coordinates are not a bijection onto 8x4")
        b_cells = {(int(r), int(c)) for r, c in zip(self.b_rows, self.b_cols)}
        if b_cells != {(r, c) for r in range(4) for c in range(8)}:
            raise CoverageError("B fragment coordinates are not a bijection onto 4x8")
        c_cells = [(int(r), int(c)) for r, c in zip(self.c_rows, self.c_cols0)]
        c_cells += [(int(r), int(c)) for r, c in zip(self.c_rows, self.c_cols1)]
        if sorted(c_cells) != sorted((r, c) for r in range(8) for c in range(8)):
            raise CoverageError("C fragment coordinates do not cover 8x8 exactly once")


FRAGMENTS = FragmentLayout()


def dmma_m8n8k4(
    a: np.ndarray, b: np.ndarray, c: np.ndarray, layout: FragmentLayout = FRAGMENTS
) -> np.ndarray:
    """Emulate one m8n8k4 instruction: 32 a values, 32 b values, 32 c pairs.

    Accumulation per output cell runs over the reduction index in ascending
    order, one multiply-add per term, starting from the incoming c value.
    Returns the updated per-lane (32, 2) c fragments.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if a.shape != (WARP_LANES,) or b.shape != (WARP_LANES,) or c.shape != (WARP_LANES, 2):
        raise ValueError(
            f"expected fragments of shape (32,), (32,), (32, 2); "
            f"got {a.shape}, {b.shape}, {c.shape}"
        )
    amat = np.zeros((8, 4))
    amat[layout.a_rows, layout.a_cols] = a
    bmat = np.zeros((4, 8))
    bmat[layout.b_rows, layout.b_cols] = b
    cmat = np.zeros((8, 8))
    cmat[layout.c_rows, layout.c_cols0] = c[:, 0]
    cmat[layout.c_rows, layout.c_cols1] = c[:, 1]
    for kappa in range(4):
        cmat += np.multiply.outer(amat[:, kappa], bmat[kappa, :])
    out = np.empty((WARP_LANES, 2))
    out[:, 0] = cmat[layout.c_rows, layout.c_cols0]
    out[:, 1] = cmat[layout.c_rows, layout.c_cols1]
    return out


# ---------------------------------------------------------------------------
# Index mappings
# ---------------------------------------------------------------------------


@dataclass
class IndexMapping:
    """Maps instruction-tile indices onto problem indices (PAD = -1 slots).

    f_m has shape (num_warps, 8) and may differ per warp; f_n spans
    8 * n_tiles slots and f_k spans 4 * k_tiles slots, both shared by all
    warps.  Together the valid entries must partition the problem index box.
    """

    shape: GemmShape
    f_m: np.ndarray
    f_n: np.ndarray
    f_k: np.ndarray

    def __post_init__(self):
        self.f_m = np.asarray(self.f_m, dtype=np.int64)
        self.f_n = np.asarray(self.f_n, dtype=np.int64)
        self.f_k = np.asarray(self.f_k, dtype=np.int64)
        if self.f_m.ndim != 2 or self.f_m.shape[1] != INSTR_M:
            raise CoverageError(f"f_m must be (warps, 8), got {self.f_m.shape}")
        if self.f_n.ndim != 1 or self.f_n.size % INSTR_N:
            raise CoverageError(f"f_n must span a multiple of 8 slots, got {self.f_n.shape}")
        if self.f_k.ndim != 1 or self.f_k.size % INSTR_K:
            raise CoverageError(f"f_k must span a multiple of 4 slots, got {self.f_k.shape}")

    @property
    def num_warps(self) -> int:
        return self.f_m.shape[0]

    @property
    def n_tiles(self) -> int:
        return self.f_n.size // INSTR_N

    @property
    def k_tiles(self) -> int:
        return self.f_k.size // INSTR_K

    def validate_coverage(self) -> None:
        """Each problem index must be produced by exactly one slot."""
        problems = [
            ("m", self.f_m.ravel(), self.shape.m),
            ("n", self.f_n, self.shape.n),
            ("k", self.f_k, self.shape.k),
        ]
        for name, vals, extent in problems:
            valid = vals[vals != PAD]
            if np.any(valid < 0) or np.any(valid >= extent):
                bad = sorted(set(valid[(valid < 0) | (valid >= extent)].tolist()))
                raise CoverageError(f"f_{name} maps outside [0, {extent}): {bad}")
            counts = np.bincount(valid, minlength=extent)
            dupes = np.nonzero(counts > 1)[0]
            missing = np.nonzero(counts == 0)[0]
            if dupes.size or missing.size:
                raise CoverageError(
                    f"f_{name} coverage broken: duplicated {dupes.tolist()}, "
                    f"missing {missing.tolist()}"
                )


def identity_mapping(shape: GemmShape) -> IndexMapping:
    """Row-blocked warps, identity column and reduction maps."""
    warps = shape.m_tiles
    f_m = np.full((warps, INSTR_M), PAD, dtype=np.int64)
    for w in range(warps):
        for mi in range(INSTR_M):
            mp = w * INSTR_M + mi
            if mp < shape.m:
                f_m[w, mi] = mp
    f_n = np.array(
        [j if j < shape.n else PAD for j in range(INSTR_N * shape.n_tiles)], dtype=np.int64
    )
    f_k = np.array(
        [j if j < shape.k else PAD for j in range(INSTR_K * shape.k_tiles)], dtype=np.int64
    )
    return IndexMapping(shape, f_m, f_n, f_k)


def column_permuted_mapping(shape: GemmShape, n_perm: list[int]) -> IndexMapping:
    """Identity mapping with the 8-wide column slots permuted by n_perm."""
    mapping = identity_mapping(shape)
    if sorted(n_perm) != list(range(INSTR_N)):
        raise ValueError(f"n_perm must permute 0..7, got {n_perm}")
    mapping.f_n = np.array(
        [p if p < shape.n else PAD for p in n_perm], dtype=np.int64
    )
    return mapping


HAND_TUNED_COLUMN_PERM = (0, 2, 1, 3, 4, 5, 6, 7)


def hand_tuned_mapping_25x5x4() -> IndexMapping:
    """Row-blocked four-warp mapping with columns 1 and 2 swapped.

    With the packed m-fastest output layout, the column swap is what keeps
    the C-fragment stores of a 25x5x4 product on distinct bank pairs; the
    identity column order collides.
    """
    return column_permuted_mapping(GemmShape(25, 5, 4), list(HAND_TUNED_COLUMN_PERM))


def tiled_gemm(
    shape: GemmShape,
    mapping: IndexMapping,
    a: np.ndarray,
    b: np.ndarray,
    counter: Counters | None = None,
    layout: FragmentLayout = FRAGMENTS,
) -> np.ndarray:
    """Run the problem GEMM through emulated warp instructions.

    Each warp owns the output rows named by its f_m row; it iterates column
    tiles and, within each, accumulates over reduction tiles in ascending
    order before storing its C fragments once.  Padded slots contribute
    zero operands and their results are dropped.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (shape.m, shape.k) or b.shape != (shape.k, shape.n):
        raise ValueError(
            f"operands must be {shape.m}x{shape.k} and {shape.k}x{shape.n}, "
            f"got {a.shape} and {b.shape}"
        )
    mapping.validate_coverage()
    c = np.zeros((shape.m, shape.n))
    for w in range(mapping.num_warps):
        rows = mapping.f_m[w]
        for tn in range(mapping.n_tiles):
            cols = mapping.f_n[tn * INSTR_N : (tn + 1) * INSTR_N]
            cfrag = np.zeros((WARP_LANES, 2))
            for tk in range(mapping.k_tiles):
                reds = mapping.f_k[tk * INSTR_K : (tk + 1) * INSTR_K]
                mp = rows[layout.a_rows]
                kp = reds[layout.a_cols]
                afrag = np.where((mp != PAD) & (kp != PAD), a[mp, kp], 0.0)
                kp_b = reds[layout.b_rows]
                np_b = cols[layout.b_cols]
                bfrag = np.where((kp_b != PAD) & (np_b != PAD), b[kp_b, np_b], 0.0)
                cfrag = dmma_m8n8k4(afrag, bfrag, cfrag, layout)
                if counter is not None:
                    counter.flops += 2 * INSTR_M * INSTR_N * INSTR_K
            for half, ccols in ((0, layout.c_cols0), (1, layout.c_cols1)):
                mp = rows[layout.c_rows]
                np_c = mapping.f_n[tn * INSTR_N + ccols]
                keep = (mp != PAD) & (np_c != PAD)
                c[mp[keep], np_c[keep]] = cfrag[keep, half]
    return c


def mma_contract_cyclic(
    matrix: np.ndarray,
    x: Tensor3,
    mapping: IndexMapping,
    counter: Counters | None = None,
) -> Tensor3:
    """contract_cyclic routed through tiled_gemm.

    The (middle, slow) tensor indices matricize into the GEMM row dimension;
    the contracted fastest index is the reduction and the matrix rows become
    the columns.
    """
    m = np.asarray(matrix, dtype=np.float64)
    q, d = m.shape
    e0, e1, e2 = x.extents
    if e0 != d:
        raise ValueError(
            f"contracted extent {e0} of tensor {x.extents} does not match "
            f"matrix columns {d}"
        )
    shape = GemmShape(m=e1 * e2, n=q, k=d)
    if (mapping.shape.m, mapping.shape.n, mapping.shape.k) != (shape.m, shape.n, shape.k):
        raise ValueError(f"mapping is for {mapping.shape}, contraction needs {shape}")
    a_op = x.data.reshape(d, e1 * e2, order="F").T
    out2 = tiled_gemm(shape, mapping, a_op, m.T, counter)
    return Tensor3(
        extents=(e1, e2, q),
        data=out2.ravel(order="F"),
        order=(x.order[1], x.order[2], x.order[0]),
    )


class MmaEngine:
    """Contraction engine that pulls per-shape mappings from a resolver.

    resolve(shape) must return a coverage-valid IndexMapping; results are
    value-equivalent to the scalar path up to multiply-add reassociation.
    """

    def __init__(self, resolve):
        self._resolve = resolve
        self._cache: dict[tuple[int, int, int], IndexMapping] = {}

    def mapping_for(self, shape: GemmShape) -> IndexMapping:
        key = (shape.m, shape.n, shape.k)
        if key not in self._cache:
            self._cache[key] = self._resolve(shape)
        return self._cache[key]

    def contract(self, matrix: np.ndarray, x: Tensor3, counter: Counters | None = None) -> Tensor3:
        q, d = np.asarray(matrix).shape
        shape = GemmShape(m=x.extents[1] * x.extents[2], n=q, k=d)
        return mma_contract_cyclic(matrix, x, self.mapping_for(shape), counter)

    def chain(self, matrices, x: Tensor3, counter: Counters | None = None) -> Tensor3:
        out = x
        for m in matrices:
            out = self.contract(m, out, counter)
        return out


# ---------------------------------------------------------------------------
# Mapping files
# ---------------------------------------------------------------------------

_HEADER_PREFIX = "feklab-mapping"
_FORMAT_VERSION = 1


def shipped_mapping_path(shape: GemmShape) -> str:
    """Path of the bundled mapping file for a production shape."""
    import importlib.resources

    name = f"m{shape.m}n{shape.n}k{shape.k}.map"
    path = importlib.resources.files(__package__) / "mappings" / name
    if not path.is_file():
        raise FileNotFoundError(f"no bundled mapping for shape {shape}")
    return str(path)


def load_shipped_mapping(shape: GemmShape) -> "IndexMapping":
    with open(shipped_mapping_path(shape)) as fh:
        return parse_mapping(fh.read())


def format_mapping(mapping: IndexMapping) -> str:
    """Serialize as one line per (warp, instr) slot triple.

    Line format: `warp instr_m instr_n instr_k -> prob_m prob_n prob_k`
    or `... -> PAD` when any component is padded.
    """
    shape = mapping.shape
    lines = [
        f"{_HEADER_PREFIX} v{_FORMAT_VERSION} shape={shape} "
        f"warps={mapping.num_warps} ntiles={mapping.n_tiles} ktiles={mapping.k_tiles}"
    ]
    for w in range(mapping.num_warps):
        for mi in range(INSTR_M):
            for ni in range(mapping.f_n.size):
                for ki in range(mapping.f_k.size):
                    mp = mapping.f_m[w, mi]
                    np_ = mapping.f_n[ni]
                    kp = mapping.f_k[ki]
                    if PAD in (mp, np_, kp):
                        rhs = "PAD"
                    else:
                        rhs = f"{mp} {np_} {kp}"
                    lines.append(f"{w} {mi} {ni} {ki} -> {rhs}")
    return "\n".join(lines) + "\n"


def parse_mapping(text: str) -> IndexMapping:
    """Parse and cross-check a serialized mapping."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith(_HEADER_PREFIX):
        raise MappingFormatError(f"missing '{_HEADER_PREFIX}' header")
    fields = dict(
        item.split("=", 1) for item in lines[0].split()[2:] if "=" in item
    )
    try:
        shape = GemmShape.parse(fields["shape"])
        warps = int(fields["warps"])
        ntiles = int(fields["ntiles"])
        ktiles = int(fields["ktiles"])
    except (KeyError, ValueError) as exc:
        raise MappingFormatError(f"bad header {lines[0]!r}: {exc}") from exc
    version = lines[0].split()[1]
    if version != f"v{_FORMAT_VERSION}":
        raise MappingFormatError(f"unsupported format version {version}")

    f_m = np.full((warps, INSTR_M), PAD, dtype=np.int64)
    f_n = np.full(INSTR_N * ntiles, PAD, dtype=np.int64)
    f_k = np.full(INSTR_K * ktiles, PAD, dtype=np.int64)
    seen_m = np.zeros_like(f_m, dtype=bool)
    seen_n = np.zeros_like(f_n, dtype=bool)
    seen_k = np.zeros_like(f_k, dtype=bool)

    def assign(arr, seen, idx, value, name):
        if seen[idx] and arr[idx] != value:
            raise MappingFormatError(
                f"inconsistent f_{name} at slot {idx}: {arr[idx]} vs {value}"
            )
        arr[idx] = value
        seen[idx] = True

    for ln in lines[1:]:
        try:
            lhs, rhs = ln.split("->")
            w, mi, ni, ki = (int(t) for t in lhs.split())
        except ValueError as exc:
            raise MappingFormatError(f"bad line {ln!r}") from exc
        rhs = rhs.strip()
        if rhs == "PAD":
            continue
        try:
            mp, np_, kp = (int(t) for t in rhs.split())
        except ValueError as exc:
            raise MappingFormatError(f"bad line {ln!r}") from exc
        assign(f_m, seen_m, (w, mi), mp, "m")
        assign(f_n, seen_n, ni, np_, "n")
        assign(f_k, seen_k, ki, kp, "k")

    mapping = IndexMapping(GemmShape(shape.m, shape.n, shape.k), f_m, f_n, f_k)
    mapping.validate_coverage()
    return mapping


def save_mapping(mapping: IndexMapping, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_mapping(mapping))


def load_mapping(path) -> IndexMapping:
    with open(path) as fh:
        return parse_mapping(fh.read())
