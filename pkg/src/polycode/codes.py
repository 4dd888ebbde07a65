"""Storage coding schemes with inherent double replication.

Schemes
-------
``Replication(r)``   one data block stored r times on distinct nodes.
``RaidMirror(k)``    k data blocks plus one XOR parity, every coded block
                     mirrored on its own pair of nodes (code length 2(k+1)).
``Polygon(n)``       complete-graph code: one coded block per edge of K_n,
                     stored at both endpoint nodes; the last edge in
                     lexicographic order carries the XOR parity.  n=5 is the
                     pentagon code, n=7 the heptagon code.
``HeptagonLocal()``  two Polygon(7) groups on disjoint node sets plus a
                     single extra node holding two GF(2^8) global parities
                     over all 40 data blocks (coefficients alpha^i and
                     alpha^{2i} with alpha = 0x02).

Block ids are stripe-local integers.  Node ids in recoverability checks and
repair plans are canonical slots ``0 .. code_length-1``; ``build_layout``
maps slots onto a concrete node pool.

Repair plans model every network movement as one block-sized transfer whose
payload is either a whole block or a partial parity (a GF-linear combination
of blocks computed at the source node).  Plain XOR partials carry
coefficient 1 on every term; the heptagon-local global parities additionally
need alpha-weighted partials.
"""

from __future__ import annotations

import itertools
import random
import zlib
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Mapping

from .gf256 import gf_inv, gf_mul, gf_pow, scale_bytes, xor_bytes, xor_many


class CodeError(Exception):
    """Base class for coding-layer failures."""


class UnrecoverableError(CodeError):
    """The erasure pattern destroys information; decode/repair cannot proceed."""


class InconsistentStripeError(CodeError):
    """Surviving bytes violate the parity relations: corruption signal."""


class MissingBlockError(CodeError):
    """A plan referenced a source block the accessor cannot serve."""


class ChecksumMismatchError(CodeError):
    """A source block's bytes do not match its recorded CRC32."""


class BlockAvailableError(CodeError):
    """Degraded read requested for a block that still has a live copy."""


class UnsupportedPatternError(CodeError):
    """The pattern is recoverable but outside the planner's supported sizes."""


# ---------------------------------------------------------------------------
# Scheme descriptors


@dataclass(frozen=True)
class Replication:
    copies: int = 2

    def __post_init__(self):
        if self.copies < 1:
            raise ValueError("replication factor must be >= 1")

    @property
    def name(self) -> str:
        return f"{self.copies}-rep"

    code_length = property(lambda self: self.copies)
    data_block_count = property(lambda self: 1)
    block_count = property(lambda self: 1)
    stored_block_count = property(lambda self: self.copies)


@dataclass(frozen=True)
class RaidMirror:
    """k data blocks + 1 XOR parity, each of the k+1 blocks mirrored."""

    data_blocks: int

    def __post_init__(self):
        if self.data_blocks < 1:
            raise ValueError("need at least one data block")

    @property
    def name(self) -> str:
        return f"raidm-{self.data_blocks}"

    code_length = property(lambda self: 2 * (self.data_blocks + 1))
    data_block_count = property(lambda self: self.data_blocks)
    block_count = property(lambda self: self.data_blocks + 1)
    stored_block_count = property(lambda self: 2 * (self.data_blocks + 1))


@dataclass(frozen=True)
class Polygon:
    nodes: int

    def __post_init__(self):
        if self.nodes < 3:
            raise ValueError("polygon codes need at least 3 nodes")

    @property
    def name(self) -> str:
        if self.nodes == 5:
            return "pentagon"
        if self.nodes == 7:
            return "heptagon"
        return f"polygon-{self.nodes}"

    code_length = property(lambda self: self.nodes)
    block_count = property(lambda self: self.nodes * (self.nodes - 1) // 2)
    data_block_count = property(lambda self: self.block_count - 1)
    stored_block_count = property(lambda self: 2 * self.block_count)


@dataclass(frozen=True)
class HeptagonLocal:
    @property
    def name(self) -> str:
        return "heptagon-local"

    code_length = property(lambda self: 15)
    data_block_count = property(lambda self: 40)
    block_count = property(lambda self: 44)
    # two mirrored heptagons (2*42) plus two single-copy global parities
    stored_block_count = property(lambda self: 86)


Scheme = Replication | RaidMirror | Polygon | HeptagonLocal

GLOBAL_PARITY_NODE = 14
_HEPTAGON = 7
_HEPTA_BLOCKS = _HEPTAGON * (_HEPTAGON - 1) // 2  # 21


def parse_scheme(text: str) -> Scheme:
    """Parse a scheme selector such as ``pentagon``, ``3-rep``, ``raidm-9``
    or ``polygon-6``.  Inverse of ``scheme.name``."""
    t = text.strip().lower()
    if t == "pentagon":
        return Polygon(5)
    if t == "heptagon":
        return Polygon(7)
    if t == "heptagon-local":
        return HeptagonLocal()
    if t.endswith("-rep"):
        return Replication(int(t[: -len("-rep")]))
    if t.startswith("rep-"):
        return Replication(int(t[len("rep-"):]))
    if t.startswith("raidm-"):
        return RaidMirror(int(t[len("raidm-"):]))
    if t.startswith("polygon-"):
        return Polygon(int(t[len("polygon-"):]))
    raise ValueError(f"unknown scheme: {text!r}")


def storage_overhead(scheme: Scheme) -> Fraction:
    """Stored blocks per data block, as an exact rational."""
    return Fraction(scheme.stored_block_count, scheme.data_block_count)


@dataclass(frozen=True)
class BlockRole:
    kind: str  # "data" | "local_parity" | "global_parity"
    index: int  # data index, local parity group, or global parity index

    def as_string(self) -> str:
        return f"{self.kind}:{self.index}"

    @classmethod
    def from_string(cls, text: str) -> "BlockRole":
        kind, _, idx = text.partition(":")
        if kind not in ("data", "local_parity", "global_parity"):
            raise ValueError(f"bad block role: {text!r}")
        return cls(kind, int(idx))


def polygon_edges(n: int) -> list[tuple[int, int]]:
    """Edges of K_n in lexicographic order; block id == position."""
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


class _Geometry:
    """Canonical block placement, roles and coefficient rows for a scheme.

    ``placements[b]`` lists the slots holding block b (replica order),
    ``rows[b]`` is b's coefficient vector over the data symbols.
    """

    def __init__(self, scheme: Scheme):
        self.scheme = scheme
        L = scheme.code_length
        D = scheme.data_block_count
        placements: dict[int, tuple[int, ...]] = {}
        roles: dict[int, BlockRole] = {}
        rows: dict[int, tuple[int, ...]] = {}

        def unit(i):
            row = [0] * D
            row[i] = 1
            return tuple(row)

        if isinstance(scheme, Replication):
            placements[0] = tuple(range(L))
            roles[0] = BlockRole("data", 0)
            rows[0] = unit(0)
        elif isinstance(scheme, RaidMirror):
            for b in range(scheme.block_count):
                placements[b] = (2 * b, 2 * b + 1)
                if b < D:
                    roles[b] = BlockRole("data", b)
                    rows[b] = unit(b)
                else:
                    roles[b] = BlockRole("local_parity", 0)
                    rows[b] = tuple([1] * D)
        elif isinstance(scheme, Polygon):
            edges = polygon_edges(scheme.nodes)
            for b, (i, j) in enumerate(edges):
                placements[b] = (i, j)
                if b < D:
                    roles[b] = BlockRole("data", b)
                    rows[b] = unit(b)
                else:
                    roles[b] = BlockRole("local_parity", 0)
                    rows[b] = tuple([1] * D)
        elif isinstance(scheme, HeptagonLocal):
            edges = polygon_edges(_HEPTAGON)
            for group in (0, 1):
                base_block = group * _HEPTA_BLOCKS
                base_slot = group * _HEPTAGON
                base_data = group * (_HEPTA_BLOCKS - 1)
                for e, (i, j) in enumerate(edges):
                    b = base_block + e
                    placements[b] = (base_slot + i, base_slot + j)
                    if e < _HEPTA_BLOCKS - 1:
                        roles[b] = BlockRole("data", base_data + e)
                        rows[b] = unit(base_data + e)
                    else:
                        roles[b] = BlockRole("local_parity", group)
                        row = [0] * D
                        for i2 in range(base_data, base_data + 20):
                            row[i2] = 1
                        rows[b] = tuple(row)
            for g in (0, 1):
                b = 2 * _HEPTA_BLOCKS + g
                placements[b] = (GLOBAL_PARITY_NODE,)
                roles[b] = BlockRole("global_parity", g)
                rows[b] = tuple(gf_pow(2, (g + 1) * i) for i in range(D))
        else:  # pragma: no cover
            raise TypeError(f"unknown scheme type: {scheme!r}")

        self.placements = placements
        self.roles = roles
        self.rows = rows
        self.data_block_of = {
            roles[b].index: b for b in roles if roles[b].kind == "data"
        }
        self.blocks_on: dict[int, tuple[int, ...]] = {
            s: tuple(b for b in placements if s in placements[b]) for s in range(L)
        }


@lru_cache(maxsize=None)
def _geometry(scheme: Scheme) -> _Geometry:
    return _Geometry(scheme)


@dataclass(frozen=True)
class StripeLayout:
    """Placement of one stripe's blocks onto concrete node ids.

    ``node_order[slot]`` is the node playing canonical slot ``slot``.
    """

    scheme: Scheme
    node_order: tuple[int, ...]

    @property
    def nodes(self) -> tuple[int, ...]:
        return self.node_order

    @property
    def block_placements(self) -> dict[int, list[tuple[int, int]]]:
        geo = _geometry(self.scheme)
        return {
            b: [(self.node_order[s], r) for r, s in enumerate(slots)]
            for b, slots in geo.placements.items()
        }

    @property
    def block_roles(self) -> dict[int, BlockRole]:
        return dict(_geometry(self.scheme).roles)

    def replicas(self, block_id: int) -> tuple[int, ...]:
        geo = _geometry(self.scheme)
        return tuple(self.node_order[s] for s in geo.placements[block_id])

    def blocks_on(self, node_id: int) -> tuple[int, ...]:
        return _geometry(self.scheme).blocks_on[self.slot_of(node_id)]

    def slot_of(self, node_id: int) -> int:
        try:
            return self.node_order.index(node_id)
        except ValueError:
            raise ValueError(f"node {node_id} not part of this stripe") from None


def build_layout(scheme: Scheme, node_pool: Iterable[int], seed: int) -> StripeLayout:
    """Map the scheme's canonical slots onto nodes from *node_pool*.

    Polygon and heptagon-local layouts are fixed by construction (first
    ``code_length`` pool nodes in order); replication and RAID+m draw
    seed-deterministic distinct random nodes.
    """
    pool = list(node_pool)
    L = scheme.code_length
    if len(pool) < L:
        raise ValueError(f"node pool too small: {len(pool)} < {L}")
    if isinstance(scheme, (Polygon, HeptagonLocal)):
        order = tuple(pool[:L])
    else:
        order = tuple(random.Random(seed).sample(pool, L))
    return StripeLayout(scheme, order)


# ---------------------------------------------------------------------------
# Encoding


def encode_stripe(scheme: Scheme, data: list[bytes]) -> dict[int, bytes]:
    """Encode one stripe of data blocks into the scheme's coded blocks."""
    D = scheme.data_block_count
    if len(data) != D:
        raise ValueError(f"expected {D} data blocks, got {len(data)}")
    if data and any(len(b) != len(data[0]) for b in data):
        raise ValueError("data blocks differ in length")

    geo = _geometry(scheme)
    out: dict[int, bytes] = {}
    for b, role in geo.roles.items():
        if role.kind == "data":
            out[b] = bytes(data[role.index])
    if isinstance(scheme, (RaidMirror, Polygon)):
        out[scheme.block_count - 1] = xor_many(data)
    elif isinstance(scheme, HeptagonLocal):
        out[_HEPTA_BLOCKS - 1] = xor_many(data[:20])
        out[2 * _HEPTA_BLOCKS - 1] = xor_many(data[20:])
        n = len(data[0])
        for g in (0, 1):
            acc = bytes(n)
            for i, d in enumerate(data):
                acc = xor_bytes(acc, scale_bytes(gf_pow(2, (g + 1) * i), d))
            out[2 * _HEPTA_BLOCKS + g] = acc
    return out


# ---------------------------------------------------------------------------
# Recoverability


def _rank(rows: list[list[int]]) -> int:
    """Rank of a matrix over GF(2^8); destroys *rows*."""
    rank = 0
    ncols = len(rows[0]) if rows else 0
    for col in range(ncols):
        pivot = None
        for r in range(rank, len(rows)):
            if rows[r][col]:
                pivot = r
                break
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        prow = rows[rank]
        inv = gf_inv(prow[col])
        if inv != 1:
            rows[rank] = prow = [gf_mul(inv, v) for v in prow]
        for r in range(len(rows)):
            if r != rank and rows[r][col]:
                f = rows[r][col]
                rows[r] = [v ^ gf_mul(f, p) for v, p in zip(rows[r], prow)]
        rank += 1
        if rank == len(rows):
            break
    return rank


def can_decode_from(scheme: Scheme, present_blocks: Iterable[int]) -> bool:
    """True iff the given set of distinct surviving blocks determines every
    data block (rank of the known-symbol system over GF(2^8))."""
    geo = _geometry(scheme)
    present = set(present_blocks)
    known = {geo.roles[b].index for b in present if geo.roles[b].kind == "data"}
    unknown = [i for i in range(scheme.data_block_count) if i not in known]
    if not unknown:
        return True
    rows = []
    for b in present:
        if geo.roles[b].kind == "data":
            continue
        row = [geo.rows[b][i] for i in unknown]
        if any(row):
            rows.append(row)
    if len(rows) < len(unknown):
        return False
    return _rank(rows) == len(unknown)


_RECOVERABLE_CACHE: dict[tuple[Scheme, int], bool] = {}


def _pattern_mask(scheme: Scheme, failed_nodes: Iterable[int]) -> int:
    mask = 0
    L = scheme.code_length
    for n in failed_nodes:
        if not 0 <= n < L:
            raise ValueError(f"node {n} outside code length {L}")
        mask |= 1 << n
    return mask


def is_recoverable_mask(scheme: Scheme, mask: int) -> bool:
    """Bitmask variant of ``is_recoverable`` (bit i set == slot i failed)."""
    key = (scheme, mask)
    cached = _RECOVERABLE_CACHE.get(key)
    if cached is not None:
        return cached
    geo = _geometry(scheme)
    present = [
        b
        for b, slots in geo.placements.items()
        if any(not (mask >> s) & 1 for s in slots)
    ]
    result = can_decode_from(scheme, present)
    _RECOVERABLE_CACHE[key] = result
    return result


def is_recoverable(scheme: Scheme, failed_nodes: Iterable[int]) -> bool:
    """True iff the surviving blocks determine all data blocks."""
    return is_recoverable_mask(scheme, _pattern_mask(scheme, failed_nodes))


def tolerance(scheme: Scheme) -> int:
    """Largest t such that every t-node erasure pattern is recoverable,
    found by exhaustive search."""
    L = scheme.code_length
    for f in range(1, L + 1):
        for pattern in itertools.combinations(range(L), f):
            if not is_recoverable(scheme, pattern):
                return f - 1
    return L


def fatal_pattern_count(scheme: Scheme, failures: int) -> tuple[int, int]:
    """(# unrecoverable patterns, # patterns) among all *failures*-node sets."""
    L = scheme.code_length
    if not 0 <= failures <= L:
        raise ValueError(f"failure count {failures} outside [0, {L}]")
    fatal = 0
    total = 0
    for pattern in itertools.combinations(range(L), failures):
        total += 1
        if not is_recoverable(scheme, pattern):
            fatal += 1
    return fatal, total


# ---------------------------------------------------------------------------
# Decoding


def _flatten_surviving(
    scheme: Scheme, surviving: Mapping[int, Mapping[int, bytes]], pattern
) -> dict[int, bytes]:
    geo = _geometry(scheme)
    failed = set(pattern)
    present: dict[int, bytes] = {}
    for node, blocks in surviving.items():
        if node in failed:
            raise ValueError(f"node {node} is both failed and surviving")
        for b, data in blocks.items():
            if b not in geo.placements:
                raise ValueError(f"unknown block id {b}")
            if node not in geo.placements[b]:
                raise ValueError(f"block {b} does not belong on slot {node}")
            old = present.get(b)
            if old is not None and old != bytes(data):
                raise InconsistentStripeError(
                    f"replicas of block {b} disagree byte-wise"
                )
            present[b] = bytes(data)
    return present


def _solve_linear(rows, consts, width):
    """Gauss-Jordan over GF(2^8) with byte-block right-hand sides.

    Returns per-column solutions; raises UnrecoverableError when rank is
    deficient and InconsistentStripeError when the system is contradictory.
    """
    rows = [list(r) for r in rows]
    consts = list(consts)
    ncols = width
    pivot_of: dict[int, int] = {}
    rank = 0
    for col in range(ncols):
        pivot = None
        for r in range(rank, len(rows)):
            if rows[r][col]:
                pivot = r
                break
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        consts[rank], consts[pivot] = consts[pivot], consts[rank]
        inv = gf_inv(rows[rank][col])
        if inv != 1:
            rows[rank] = [gf_mul(inv, v) for v in rows[rank]]
            consts[rank] = scale_bytes(inv, consts[rank])
        prow, pconst = rows[rank], consts[rank]
        for r in range(len(rows)):
            if r != rank and rows[r][col]:
                f = rows[r][col]
                rows[r] = [v ^ gf_mul(f, p) for v, p in zip(rows[r], prow)]
                consts[r] = xor_bytes(consts[r], scale_bytes(f, pconst))
        pivot_of[col] = rank
        rank += 1
    if len(pivot_of) < ncols:
        raise UnrecoverableError("surviving blocks do not determine the data")
    zero = None
    for r in range(rank, len(rows)):
        if zero is None:
            zero = bytes(len(consts[r]))
        if consts[r] != zero:
            raise InconsistentStripeError("surviving bytes violate parity relations")
    return [consts[pivot_of[c]] for c in range(ncols)]


def decode_stripe(
    scheme: Scheme,
    surviving: Mapping[int, Mapping[int, bytes]],
    pattern: Iterable[int] = (),
) -> list[bytes]:
    """Recover all data blocks from surviving node contents.

    *surviving* maps canonical slot -> {block id -> bytes}; *pattern* is the
    failed-slot set (checked for recoverability up front).  Replica copies
    are used directly, single missing blocks fall out of their XOR relation,
    and heptagon-local multi-erasures are solved from the local relation
    plus the two global Vandermonde rows.  A final parity verification pass
    turns silent corruption into ``InconsistentStripeError``.
    """
    failed = frozenset(pattern)
    if not is_recoverable(scheme, failed):
        raise UnrecoverableError(f"pattern {sorted(failed)} is fatal for {scheme.name}")
    geo = _geometry(scheme)
    present = _flatten_surviving(scheme, surviving, failed)
    if not present:
        raise UnrecoverableError("no surviving blocks given")
    width = len(next(iter(present.values())))
    if any(len(v) != width for v in present.values()):
        raise ValueError("surviving blocks differ in length")

    D = scheme.data_block_count
    data: list[bytes | None] = [None] * D
    for b, payload in present.items():
        role = geo.roles[b]
        if role.kind == "data":
            data[role.index] = payload

    unknown = [i for i in range(D) if data[i] is None]
    if unknown:
        rows = []
        consts = []
        for b, payload in present.items():
            row_full = geo.rows[b]
            if geo.roles[b].kind == "data":
                continue
            row = [row_full[i] for i in unknown]
            if not any(row):
                continue
            const = payload
            for i, d in enumerate(data):
                if d is not None and row_full[i]:
                    const = xor_bytes(const, scale_bytes(row_full[i], d))
            rows.append(row)
            consts.append(const)
        solved = _solve_linear(rows, consts, len(unknown))
        for i, payload in zip(unknown, solved):
            data[i] = payload

    result = [d for d in data if d is not None]
    assert len(result) == D
    # verify every surviving coded block against a fresh re-encode
    recomputed = encode_stripe(scheme, result)
    for b, payload in present.items():
        if recomputed[b] != payload:
            raise InconsistentStripeError(
                f"block {b} violates the stripe's parity relations"
            )
    return result


def oracle_decode(scheme: Scheme, present: Mapping[int, bytes]) -> list[bytes]:
    """Generic decode oracle: full Gaussian elimination of the surviving
    linear system over GF(2^8), no scheme-specific shortcuts."""
    geo = _geometry(scheme)
    order = sorted(present)
    rows = [list(geo.rows[b]) for b in order]
    consts = [bytes(present[b]) for b in order]
    return _solve_linear(rows, consts, scheme.data_block_count)


# ---------------------------------------------------------------------------
# Repair planning

READER_NODE = -1  # destination pseudo-node for degraded reads


@dataclass(frozen=True)
class WholeCopy:
    block_id: int


@dataclass(frozen=True)
class PartialParity:
    """GF-linear combination computed at the source node.

    ``terms`` holds (block id, coefficient) pairs; coefficient 1 on every
    term is a plain XOR partial.
    """

    terms: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class Transfer:
    src: int
    dst: int
    payload: WholeCopy | PartialParity
    delivers: bool = False  # True: this copy re-materializes the block at dst


@dataclass(frozen=True)
class Recovery:
    """A lost block expressed as a GF-linear combination of transfer payloads."""

    block_id: int
    terms: tuple[tuple[int, int], ...]  # (transfer index, coefficient)

    @property
    def ready_after(self) -> int:
        return max(i for i, _ in self.terms)


@dataclass(frozen=True)
class RepairPlan:
    scheme: Scheme
    pattern: frozenset[int]
    transfers: tuple[Transfer, ...]
    recoveries: tuple[Recovery, ...] = ()
    target_block: int | None = None  # set for degraded-read plans

    @property
    def bandwidth_blocks(self) -> int:
        return len(self.transfers)

    def recovered_ids(self) -> set[int]:
        out = {r.block_id for r in self.recoveries}
        out.update(
            t.payload.block_id
            for t in self.transfers
            if t.delivers and isinstance(t.payload, WholeCopy)
        )
        return out


class _PlanBuilder:
    def __init__(self):
        self.transfers: list[Transfer] = []
        self.recoveries: list[Recovery] = []

    def copy(self, src, dst, block_id, delivers=True) -> int:
        self.transfers.append(Transfer(src, dst, WholeCopy(block_id), delivers))
        return len(self.transfers) - 1

    def partial(self, src, dst, terms) -> int:
        terms = tuple((b, c) for b, c in terms)
        if not terms:
            raise ValueError("empty partial parity")
        self.transfers.append(Transfer(src, dst, PartialParity(terms)))
        return len(self.transfers) - 1

    def recover(self, block_id, terms) -> None:
        self.recoveries.append(Recovery(block_id, tuple(terms)))

    def done(self, scheme, pattern, target=None) -> RepairPlan:
        recs = tuple(sorted(self.recoveries, key=lambda r: r.ready_after))
        return RepairPlan(scheme, frozenset(pattern), tuple(self.transfers), recs, target)


def _partial_cover(n: int, excluded_edge: tuple[int, int], failed: set[int]):
    """Assign every K_n edge except *excluded_edge* to one survivor: edges
    touching a failed node go to their surviving endpoint, survivor-survivor
    edges to the lower-indexed endpoint.  Exact cover by construction."""
    cover: dict[int, list[tuple[int, int]]] = {}
    for i, j in polygon_edges(n):
        if (i, j) == excluded_edge:
            continue
        if i in failed and j in failed:
            raise AssertionError("only the excluded edge may join two failed nodes")
        owner = j if i in failed else i
        cover.setdefault(owner, []).append((i, j))
    return cover


def _polygon_repair_into(builder, n, failed_local, slot, blk):
    """Emit transfers repairing 1 or 2 failed nodes of an n-gon group.

    *slot* maps local node index -> plan slot, *blk* maps local edge ->
    global block id.
    """
    edges = polygon_edges(n)
    eidx = {e: k for k, e in enumerate(edges)}
    failed = sorted(failed_local)
    if len(failed) == 1:
        f = failed[0]
        for j in range(n):
            if j == f:
                continue
            e = (min(f, j), max(f, j))
            builder.copy(slot(j), slot(f), blk(eidx[e]))
        return
    f1, f2 = failed
    survivors = [s for s in range(n) if s not in (f1, f2)]
    for s in survivors:
        for f in (f1, f2):
            e = (min(s, f), max(s, f))
            builder.copy(slot(s), slot(f), blk(eidx[e]))
    pair_block = blk(eidx[(f1, f2)])
    cover = _partial_cover(n, (f1, f2), {f1, f2})
    partial_idx = [
        builder.partial(slot(s), slot(f1), [(blk(eidx[e]), 1) for e in cover[s]])
        for s in survivors
    ]
    builder.recover(pair_block, [(i, 1) for i in partial_idx])
    builder.copy(slot(f1), slot(f2), pair_block)


def _invert_matrix(m):
    """Inverse of a small square matrix over GF(2^8)."""
    k = len(m)
    aug = [list(row) + [1 if i == j else 0 for j in range(k)] for i, row in enumerate(m)]
    for col in range(k):
        pivot = next((r for r in range(col, k) if aug[r][col]), None)
        if pivot is None:
            raise ValueError("singular matrix")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = gf_inv(aug[col][col])
        aug[col] = [gf_mul(inv, v) for v in aug[col]]
        for r in range(k):
            if r != col and aug[r][col]:
                f = aug[r][col]
                aug[r] = [v ^ gf_mul(f, p) for v, p in zip(aug[r], aug[col])]
    return [row[k:] for row in aug]


def _hl_heptagon_maps(group: int):
    base_slot = group * _HEPTAGON
    base_block = group * _HEPTA_BLOCKS

    def slot(i):
        return base_slot + i

    def blk(edge_index):
        return base_block + edge_index

    return slot, blk


def _hl_lowest_surviving_source(geo, block_id, down: set[int]) -> int | None:
    alive = [s for s in geo.placements[block_id] if s not in down]
    return min(alive) if alive else None


def _hl_global_constant_groups(builder, geo, down, dst, unknown_data, extra_sources):
    """Emit the transfer groups whose XOR yields the two global-parity
    constants, excluding *unknown_data* contributions.

    *extra_sources* maps a data index with no surviving host to the slot
    that will hold its recovered bytes when the transfer executes.  Returns
    ``groups[g] = [transfer indices]`` for g in (0, 1).
    """
    groups = []
    for g in (0, 1):
        idxs = [builder.copy(GLOBAL_PARITY_NODE, dst, 2 * _HEPTA_BLOCKS + g, delivers=False)]
        by_src: dict[int, list[tuple[int, int]]] = {}
        for i in range(40):
            if i in unknown_data:
                continue
            b = geo.data_block_of[i]
            src = _hl_lowest_surviving_source(geo, b, down)
            if src is None:
                src = extra_sources[i]
            by_src.setdefault(src, []).append((b, gf_pow(2, (g + 1) * i)))
        for src in sorted(by_src):
            idxs.append(builder.partial(src, dst, by_src[src]))
        groups.append(idxs)
    return groups


def _hl_triple_system(builder, geo, group, failed_local, dst):
    """Transfers and solve matrix for 3 failures inside one heptagon.

    Returns (unknown block ids, constant groups, matrix M) such that
    M @ unknowns == [XOR of each group's payloads].
    """
    slot, blk = _hl_heptagon_maps(group)
    edges = polygon_edges(_HEPTAGON)
    eidx = {e: k for k, e in enumerate(edges)}
    failed = sorted(failed_local)
    failed_set = set(failed)
    survivors = [s for s in range(_HEPTAGON) if s not in failed_set]
    internal = [
        (failed[0], failed[1]),
        (failed[0], failed[2]),
        (failed[1], failed[2]),
    ]
    unknown_blocks = [blk(eidx[e]) for e in internal]
    down = {slot(f) for f in failed}

    # group 0: the heptagon's XOR relation (all 21 blocks XOR to zero)
    cover: dict[int, list[int]] = {}
    for e, k in eidx.items():
        if e in internal:
            continue
        i, j = e
        owner = j if i in failed_set else i
        cover.setdefault(owner, []).append(blk(k))
    xor_group = [
        builder.partial(slot(s), dst, [(b, 1) for b in cover[s]])
        for s in survivors
        if s in cover
    ]

    unknown_data = {
        geo.roles[b].index for b in unknown_blocks if geo.roles[b].kind == "data"
    }
    g_groups = _hl_global_constant_groups(builder, geo, down, dst, unknown_data, {})

    matrix = []
    matrix.append([1, 1, 1])
    for g in (0, 1):
        row = []
        for b in unknown_blocks:
            role = geo.roles[b]
            row.append(gf_pow(2, (g + 1) * role.index) if role.kind == "data" else 0)
        matrix.append(row)
    return unknown_blocks, [xor_group, *g_groups], matrix


def _recover_from_groups(builder, unknown_blocks, groups, matrix, wanted=None):
    inv = _invert_matrix(matrix)
    for j, b in enumerate(unknown_blocks):
        if wanted is not None and b not in wanted:
            continue
        terms = []
        for k, group in enumerate(groups):
            c = inv[j][k]
            if c:
                terms.extend((idx, c) for idx in group)
        builder.recover(b, terms)


def plan_repair(scheme: Scheme, pattern: Iterable[int]) -> RepairPlan:
    """Plan the transfers that restore every block lost by *pattern*.

    Polygon singles move n-1 whole copies; polygon doubles move 2(n-2)
    copies, n-2 partial parities and one redistribution copy (3(n-2)+1
    total).  Heptagon-local failures are planned locally per heptagon, with
    triples solved from the other heptagon plus the global node.
    """
    failed = frozenset(_iter_pattern(scheme, pattern))
    if not failed:
        return RepairPlan(scheme, failed, ())
    if not is_recoverable(scheme, failed):
        raise UnrecoverableError(f"pattern {sorted(failed)} is fatal for {scheme.name}")

    if isinstance(scheme, Polygon):
        if len(failed) > 2:
            raise UnsupportedPatternError("polygon repair supports 1 or 2 failures")
        builder = _PlanBuilder()
        _polygon_repair_into(builder, scheme.nodes, sorted(failed), lambda i: i, lambda e: e)
        return builder.done(scheme, failed)

    if isinstance(scheme, HeptagonLocal):
        if len(failed) > 3:
            raise UnsupportedPatternError("heptagon-local repair supports up to 3 failures")
        builder = _build_hl_repair(scheme, failed)
        return builder.done(scheme, failed)

    if len(failed) > tolerance(scheme):
        raise UnsupportedPatternError("pattern exceeds scheme tolerance")
    if isinstance(scheme, Replication):
        builder = _PlanBuilder()
        alive = min(s for s in range(scheme.copies) if s not in failed)
        for f in sorted(failed):
            builder.copy(alive, f, 0)
        return builder.done(scheme, failed)

    assert isinstance(scheme, RaidMirror)
    builder = _PlanBuilder()
    geo = _geometry(scheme)
    fully_lost = []
    for b, slots in sorted(geo.placements.items()):
        lost = [s for s in slots if s in failed]
        alive = [s for s in slots if s not in failed]
        if not lost:
            continue
        if alive:
            for f in lost:
                builder.copy(alive[0], f, b)
        else:
            fully_lost.append(b)
    for b in fully_lost:
        dst = min(geo.placements[b])
        idxs = []
        for other, slots in sorted(geo.placements.items()):
            if other == b:
                continue
            src = min(s for s in slots if s not in failed)
            idxs.append(builder.copy(src, dst, other, delivers=False))
        builder.recover(b, [(i, 1) for i in idxs])
        builder.copy(dst, max(geo.placements[b]), b)
    return builder.done(scheme, failed)


def _build_hl_repair(scheme, failed):
    geo = _geometry(scheme)
    builder = _PlanBuilder()
    a_failed = sorted(p for p in failed if p < _HEPTAGON)
    b_failed = sorted(p - _HEPTAGON for p in failed if _HEPTAGON <= p < 2 * _HEPTAGON)

    pair_source: dict[int, int] = {}
    for group, gf in ((0, a_failed), (1, b_failed)):
        if not gf:
            continue
        slot, blk = _hl_heptagon_maps(group)
        if len(gf) == 3:
            failed_sorted = sorted(gf)
            solver = slot(failed_sorted[0])
            unknowns, groups, matrix = _hl_triple_system(
                builder, geo, group, failed_sorted, solver
            )
            _recover_from_groups(builder, unknowns, groups, matrix)
            edges = polygon_edges(_HEPTAGON)
            eidx = {e: k for k, e in enumerate(edges)}
            fs = set(failed_sorted)
            for s in range(_HEPTAGON):
                if s in fs:
                    continue
                for f in failed_sorted:
                    e = (min(s, f), max(s, f))
                    builder.copy(slot(s), slot(f), blk(eidx[e]))
            internal = [
                (failed_sorted[0], failed_sorted[1]),
                (failed_sorted[0], failed_sorted[2]),
                (failed_sorted[1], failed_sorted[2]),
            ]
            for (i, j), b in zip(internal, unknowns):
                for host in (i, j):
                    if slot(host) != solver:
                        builder.copy(solver, slot(host), b)
        else:
            _polygon_repair_into(builder, _HEPTAGON, gf, slot, blk)
            if len(gf) == 2:
                edges = polygon_edges(_HEPTAGON)
                pair_block = blk(edges.index((gf[0], gf[1])))
                role = geo.roles[pair_block]
                if role.kind == "data":
                    pair_source[role.index] = slot(gf[0])

    if GLOBAL_PARITY_NODE in failed:
        down = set(failed)
        for g in (0, 1):
            block = 2 * _HEPTA_BLOCKS + g
            by_src: dict[int, list[tuple[int, int]]] = {}
            for i in range(40):
                b = geo.data_block_of[i]
                src = _hl_lowest_surviving_source(geo, b, down)
                if src is None:
                    src = pair_source[i]
                by_src.setdefault(src, []).append((b, gf_pow(2, (g + 1) * i)))
            idxs = [
                builder.partial(src, GLOBAL_PARITY_NODE, by_src[src])
                for src in sorted(by_src)
            ]
            builder.recover(block, [(i, 1) for i in idxs])
    return builder


def _iter_pattern(scheme, pattern):
    L = scheme.code_length
    for n in pattern:
        if not 0 <= n < L:
            raise ValueError(f"node {n} outside code length {L}")
        yield n


def plan_degraded_read(
    scheme: Scheme, block_id: int, down_nodes: Iterable[int]
) -> RepairPlan:
    """Plan the minimal transfers that deliver one fully-lost block to a
    designated reader (pseudo-node ``READER_NODE``)."""
    geo = _geometry(scheme)
    if block_id not in geo.placements:
        raise ValueError(f"unknown block id {block_id}")
    down = frozenset(_iter_pattern(scheme, down_nodes))
    hosts = geo.placements[block_id]
    if any(h not in down for h in hosts):
        raise BlockAvailableError(f"block {block_id} still has a live copy")
    if not is_recoverable(scheme, down):
        raise UnrecoverableError(f"pattern {sorted(down)} is fatal for {scheme.name}")

    builder = _PlanBuilder()
    if isinstance(scheme, Replication):
        raise UnrecoverableError("replication has no parity to decode from")

    if isinstance(scheme, Polygon):
        n = scheme.nodes
        pair = tuple(sorted(hosts))
        cover = _partial_cover(n, pair, set(down))
        idxs = [
            builder.partial(s, READER_NODE, [(_polygon_block(n, e), 1) for e in cover[s]])
            for s in sorted(cover)
        ]
        builder.recover(block_id, [(i, 1) for i in idxs])
        return builder.done(scheme, down, target=block_id)

    if isinstance(scheme, RaidMirror):
        idxs = []
        for other, slots in sorted(geo.placements.items()):
            if other == block_id:
                continue
            src = min(s for s in slots if s not in down)
            idxs.append(builder.copy(src, READER_NODE, other, delivers=False))
        builder.recover(block_id, [(i, 1) for i in idxs])
        return builder.done(scheme, down, target=block_id)

    assert isinstance(scheme, HeptagonLocal)
    _hl_degraded_read(builder, geo, block_id, down)
    return builder.done(scheme, down, target=block_id)


def _polygon_block(n, edge):
    return polygon_edges(n).index(edge)


def _hl_degraded_read(builder, geo, block_id, down):
    role = geo.roles[block_id]
    if role.kind == "global_parity":
        g = role.index
        # rebuild the weighted sum; a fully-lost data block (the pair edge of
        # a doubly-failed heptagon) is substituted by its local XOR cover
        local_groups: dict[int, list[int]] = {}
        by_src: dict[int, list[tuple[int, int]]] = {}
        for i in range(40):
            b = geo.data_block_of[i]
            src = _hl_lowest_surviving_source(geo, b, down)
            if src is not None:
                by_src.setdefault(src, []).append((b, gf_pow(2, (g + 1) * i)))
                continue
            group = 0 if b < _HEPTA_BLOCKS else 1
            slot, blk = _hl_heptagon_maps(group)
            gfailed = sorted(s - group * _HEPTAGON for s in down if s in range(group * _HEPTAGON, group * _HEPTAGON + _HEPTAGON))
            pair = tuple(sorted(gfailed))
            cover = _partial_cover(_HEPTAGON, pair, set(pair))
            edges = polygon_edges(_HEPTAGON)
            eidx = {e: k for k, e in enumerate(edges)}
            local_groups[i] = [
                builder.partial(slot(s), READER_NODE, [(blk(eidx[e]), 1) for e in cover[s]])
                for s in sorted(cover)
            ]
        terms = []
        for src in sorted(by_src):
            terms.append((builder.partial(src, READER_NODE, by_src[src]), 1))
        for i, idxs in local_groups.items():
            coef = gf_pow(2, (g + 1) * i)
            terms.extend((idx, coef) for idx in idxs)
        builder.recover(block_id, terms)
        return

    group = 0 if block_id < _HEPTA_BLOCKS else 1
    slot, blk = _hl_heptagon_maps(group)
    group_slots = set(range(group * _HEPTAGON, group * _HEPTAGON + _HEPTAGON))
    gfailed = sorted(s - group * _HEPTAGON for s in down if s in group_slots)
    edges = polygon_edges(_HEPTAGON)
    eidx = {e: k for k, e in enumerate(edges)}
    if len(gfailed) == 2:
        pair = (gfailed[0], gfailed[1])
        cover = _partial_cover(_HEPTAGON, pair, set(pair))
        idxs = [
            builder.partial(slot(s), READER_NODE, [(blk(eidx[e]), 1) for e in cover[s]])
            for s in sorted(cover)
        ]
        builder.recover(block_id, [(i, 1) for i in idxs])
    else:
        unknowns, groups, matrix = _hl_triple_system(
            builder, geo, group, gfailed, READER_NODE
        )
        _recover_from_groups(builder, unknowns, groups, matrix, wanted={block_id})


# ---------------------------------------------------------------------------
# Plan execution


def execute_plan(plan: RepairPlan, reader: Callable[[int], bytes]) -> dict[int, bytes]:
    """Run a plan against a block accessor, returning recovered blocks.

    The accessor serves surviving blocks and may raise MissingBlockError or
    ChecksumMismatchError; blocks recovered earlier in the plan are readable
    by later transfers.
    """
    recovered: dict[int, bytes] = {}
    payloads: list[bytes] = []
    pending = list(plan.recoveries)
    pending.reverse()  # pop from the end, lowest ready_after first

    def fetch(block_id: int) -> bytes:
        if block_id in recovered:
            return recovered[block_id]
        return reader(block_id)

    for idx, tr in enumerate(plan.transfers):
        p = tr.payload
        if isinstance(p, WholeCopy):
            data = fetch(p.block_id)
            payloads.append(data)
            if tr.delivers:
                recovered[p.block_id] = data
        else:
            acc = None
            for b, coef in p.terms:
                piece = fetch(b)
                if coef != 1:
                    piece = scale_bytes(coef, piece)
                acc = piece if acc is None else xor_bytes(acc, piece)
            payloads.append(acc)
        while pending and pending[-1].ready_after <= idx:
            rec = pending.pop()
            acc = None
            for i, coef in rec.terms:
                piece = payloads[i]
                if coef != 1:
                    piece = scale_bytes(coef, piece)
                acc = piece if acc is None else xor_bytes(acc, piece)
            recovered[rec.block_id] = acc
    if pending:
        raise AssertionError("plan recoveries reference transfers that never ran")
    return recovered


def make_checked_reader(blocks: Mapping[int, bytes]) -> Callable[[int], bytes]:
    """Accessor over an in-memory block map that snapshots CRC32s at
    creation and verifies them on every read."""
    crcs = {b: zlib.crc32(data) for b, data in blocks.items()}

    def reader(block_id: int) -> bytes:
        if block_id not in blocks:
            raise MissingBlockError(f"block {block_id} not available")
        data = blocks[block_id]
        if zlib.crc32(data) != crcs[block_id]:
            raise ChecksumMismatchError(f"block {block_id} failed its CRC check")
        return data

    return reader
