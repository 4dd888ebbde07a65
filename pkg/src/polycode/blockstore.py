"""File-backed striped block store with fault injection, fsck, and repair.

Tree layout::

    root/store.json             store config and node status
    root/n<k>/                  one directory per simulated node
    root/<name>.manifest.json   one manifest per stored file
    n<k>/s<stripe>_b<block>_r<copy>.blk   block replica files

Stripe indices are store-global, so block file names never collide across
files.  CRC32 (IEEE polynomial) of every replica is recorded in the manifest
as 8 hex characters.  Killing a node wipes its directory, which forces real
repair traffic instead of replica re-registration.

Concurrency: mutating operations (put, kill, revive, repair) serialize on a
store-wide lock; reads may proceed concurrently with each other.
"""

from __future__ import annotations

import json
import logging
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from . import codes
from .codes import (
    ChecksumMismatchError,
    MissingBlockError,
    Scheme,
    UnrecoverableError,
    parse_scheme,
)

log = logging.getLogger(__name__)


class StoreError(Exception):
    pass


class FatalStripeError(StoreError):
    """A stripe has lost more than the scheme can recover."""


@dataclass
class NodeState:
    node_id: int
    status: str  # "up" | "down"
    path: Path


@dataclass
class BlockRecord:
    block_id: int
    role: str
    nodes: list[int]
    files: list[str]
    crc32: str


@dataclass
class StripeRecord:
    index: int  # store-global stripe id
    node_order: list[int]
    blocks: list[BlockRecord]


@dataclass
class StoreManifest:
    name: str
    size: int
    scheme: str
    block_size: int
    stripes: list[StripeRecord]

    @property
    def stripe_count(self) -> int:
        return len(self.stripes)

    def to_dict(self) -> dict:
        return {
            "file": self.name,
            "size": self.size,
            "scheme": self.scheme,
            "block_size": self.block_size,
            "stripe_count": self.stripe_count,
            "stripes": [
                {
                    "index": s.index,
                    "node_order": s.node_order,
                    "blocks": [
                        {
                            "block": b.block_id,
                            "role": b.role,
                            "nodes": b.nodes,
                            "files": b.files,
                            "crc32": b.crc32,
                        }
                        for b in s.blocks
                    ],
                }
                for s in self.stripes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StoreManifest":
        stripes = [
            StripeRecord(
                index=s["index"],
                node_order=list(s["node_order"]),
                blocks=[
                    BlockRecord(b["block"], b["role"], list(b["nodes"]), list(b["files"]), b["crc32"])
                    for b in s["blocks"]
                ],
            )
            for s in d["stripes"]
        ]
        return cls(d["file"], d["size"], d["scheme"], d["block_size"], stripes)


@dataclass
class FsckReport:
    missing: list[tuple[str, int, int, int]] = field(default_factory=list)
    corrupt: list[tuple[str, int, int, int]] = field(default_factory=list)
    fatal_stripes: list[tuple[str, int]] = field(default_factory=list)

    @property
    def is_clean(self) -> bool:
        return not (self.missing or self.corrupt or self.fatal_stripes)


@dataclass
class RepairResult:
    plans_executed: int
    bandwidth_blocks: int


def _crc(data: bytes) -> str:
    return f"{zlib.crc32(data):08x}"


class BlockStore:
    """A directory-per-node block store for one coding scheme."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        cfg_path = self.root / "store.json"
        if not cfg_path.exists():
            raise StoreError(f"no store at {self.root}")
        cfg = json.loads(cfg_path.read_text())
        self.scheme: Scheme = parse_scheme(cfg["scheme"])
        self.node_count: int = cfg["nodes"]
        self.block_size: int = cfg["block_size"]
        self.seed: int = cfg["seed"]
        self._down: set[int] = set(cfg["down"])
        self._next_stripe: int = cfg["next_stripe"]
        self._lock = threading.RLock()
        self.degraded_log: list[tuple[str, int, int, int]] = []

    @classmethod
    def create(
        cls, root: str | Path, scheme: Scheme, nodes: int, block_size: int, seed: int = 0
    ) -> "BlockStore":
        if block_size <= 0:
            raise StoreError("block size must be positive")
        if nodes < scheme.code_length:
            raise StoreError(
                f"need at least {scheme.code_length} nodes for {scheme.name}, got {nodes}"
            )
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        if (root / "store.json").exists():
            raise StoreError(f"store already exists at {root}")
        for i in range(nodes):
            (root / f"n{i}").mkdir()
        cfg = {
            "scheme": scheme.name,
            "nodes": nodes,
            "block_size": block_size,
            "seed": seed,
            "down": [],
            "next_stripe": 0,
        }
        (root / "store.json").write_text(json.dumps(cfg, indent=2) + "\n")
        return cls(root)

    # -- bookkeeping --------------------------------------------------------

    def _save_config(self) -> None:
        cfg = {
            "scheme": self.scheme.name,
            "nodes": self.node_count,
            "block_size": self.block_size,
            "seed": self.seed,
            "down": sorted(self._down),
            "next_stripe": self._next_stripe,
        }
        (self.root / "store.json").write_text(json.dumps(cfg, indent=2) + "\n")

    def node_dir(self, node_id: int) -> Path:
        return self.root / f"n{node_id}"

    def node_state(self, node_id: int) -> NodeState:
        if not 0 <= node_id < self.node_count:
            raise StoreError(f"unknown node {node_id}")
        status = "down" if node_id in self._down else "up"
        return NodeState(node_id, status, self.node_dir(node_id))

    def nodes(self) -> list[NodeState]:
        return [self.node_state(i) for i in range(self.node_count)]

    def up_nodes(self) -> list[int]:
        return [i for i in range(self.node_count) if i not in self._down]

    def _manifest_path(self, name: str) -> Path:
        return self.root / f"{name}.manifest.json"

    def load_manifest(self, name: str) -> StoreManifest:
        path = self._manifest_path(name)
        if not path.exists():
            raise StoreError(f"no such stored file: {name}")
        return StoreManifest.from_dict(json.loads(path.read_text()))

    def manifests(self) -> list[StoreManifest]:
        return [
            StoreManifest.from_dict(json.loads(p.read_text()))
            for p in sorted(self.root.glob("*.manifest.json"))
        ]

    # -- write path ---------------------------------------------------------

    def put(
        self,
        path: str | Path,
        name: str | None = None,
        scheme: Scheme | None = None,
        block_size: int | None = None,
    ) -> StoreManifest:
        """Stripe, encode and place a file; persists and returns its manifest.

        Scheme and block size default to the store's configuration but may
        vary per file; each manifest records its own.
        """
        path = Path(path)
        name = name or path.name
        scheme = scheme or self.scheme
        block_size = block_size or self.block_size
        if block_size <= 0:
            raise StoreError("block size must be positive")
        with self._lock:
            if self._manifest_path(name).exists():
                raise StoreError(f"{name} is already stored")
            pool = self.up_nodes()
            if len(pool) < scheme.code_length:
                raise StoreError("insufficient up nodes")
            data = path.read_bytes()
            D = scheme.data_block_count
            stripe_bytes = D * block_size
            n_stripes = -(-len(data) // stripe_bytes) if data else 0
            stripes: list[StripeRecord] = []
            for k in range(n_stripes):
                chunk = data[k * stripe_bytes : (k + 1) * stripe_bytes]
                chunk = chunk.ljust(stripe_bytes, b"\0")
                stripe_id = self._next_stripe
                self._next_stripe += 1
                layout_seed = zlib.crc32(f"{self.seed}:{name}:{stripe_id}".encode())
                layout = codes.build_layout(scheme, pool, layout_seed)
                payload = [
                    chunk[i * block_size : (i + 1) * block_size] for i in range(D)
                ]
                encoded = codes.encode_stripe(scheme, payload)
                records = []
                for block_id in sorted(encoded):
                    body = encoded[block_id]
                    nodes = list(layout.replicas(block_id))
                    files = []
                    for copy, node in enumerate(nodes):
                        fname = f"n{node}/s{stripe_id}_b{block_id}_r{copy}.blk"
                        (self.root / fname).write_bytes(body)
                        files.append(fname)
                    role = layout.block_roles[block_id].as_string()
                    records.append(BlockRecord(block_id, role, nodes, files, _crc(body)))
                stripes.append(StripeRecord(stripe_id, list(layout.node_order), records))
            manifest = StoreManifest(name, len(data), scheme.name, block_size, stripes)
            self._manifest_path(name).write_text(
                json.dumps(manifest.to_dict(), indent=2) + "\n"
            )
            self._save_config()
            return manifest

    # -- read path ----------------------------------------------------------

    def _replica_status(self, record: BlockRecord) -> list[tuple[int, str, str]]:
        """(node, file, state) per replica with state in {ok, missing, corrupt}."""
        out = []
        for node, fname in zip(record.nodes, record.files):
            fpath = self.root / fname
            if node in self._down or not fpath.exists():
                out.append((node, fname, "missing"))
            elif _crc(fpath.read_bytes()) != record.crc32:
                out.append((node, fname, "corrupt"))
            else:
                out.append((node, fname, "ok"))
        return out

    def _read_block_direct(self, stripe: StripeRecord, block_id: int) -> bytes:
        record = next(b for b in stripe.blocks if b.block_id == block_id)
        for node, fname in zip(record.nodes, record.files):
            if node in self._down:
                continue
            fpath = self.root / fname
            if not fpath.exists():
                continue
            body = fpath.read_bytes()
            if _crc(body) == record.crc32:
                return body
            raise ChecksumMismatchError(f"{fname} failed its CRC check")
        raise MissingBlockError(f"no live replica of block {block_id}")

    def _stripe_reader(self, stripe: StripeRecord, excluded_nodes: set[int]):
        by_id = {b.block_id: b for b in stripe.blocks}

        def reader(block_id: int) -> bytes:
            record = by_id.get(block_id)
            if record is None:
                raise MissingBlockError(f"unknown block {block_id}")
            for node, fname in zip(record.nodes, record.files):
                if node in self._down or node in excluded_nodes:
                    continue
                fpath = self.root / fname
                if not fpath.exists():
                    continue
                body = fpath.read_bytes()
                if _crc(body) != record.crc32:
                    raise ChecksumMismatchError(f"{fname} failed its CRC check")
                return body
            raise MissingBlockError(f"no live replica of block {block_id}")

        return reader

    def get(self, name: str) -> bytes:
        """Reassemble a stored file; fully-lost blocks are served through
        degraded-read plans and their bandwidth is logged."""
        manifest = self.load_manifest(name)
        scheme = parse_scheme(manifest.scheme)
        out = bytearray()
        for stripe in manifest.stripes:
            slot_of = {node: s for s, node in enumerate(stripe.node_order)}
            down_slots = {
                slot_of[n] for n in stripe.node_order if n in self._down
            }
            data_records = sorted(
                (b for b in stripe.blocks if b.role.startswith("data:")),
                key=lambda b: int(b.role.split(":")[1]),
            )
            for record in data_records:
                statuses = self._replica_status(record)
                good = [s for s in statuses if s[2] == "ok"]
                if good:
                    out += (self.root / good[0][1]).read_bytes()
                    continue
                bad_slots = {slot_of[node] for node, _, _ in statuses}
                plan = codes.plan_degraded_read(
                    scheme, record.block_id, down_slots | bad_slots
                )
                reader = self._stripe_reader(stripe, set())
                recovered = codes.execute_plan(plan, reader)
                body = recovered[record.block_id]
                if _crc(body) != record.crc32:
                    raise ChecksumMismatchError(
                        f"degraded read of block {record.block_id} failed its CRC check"
                    )
                self.degraded_log.append(
                    (name, stripe.index, record.block_id, plan.bandwidth_blocks)
                )
                log.info(
                    "degraded read: %s stripe %d block %d via %d transfers",
                    name, stripe.index, record.block_id, plan.bandwidth_blocks,
                )
                out += body
        return bytes(out[: manifest.size])

    # -- fault injection ----------------------------------------------------

    def kill_node(self, node_id: int) -> NodeState:
        """Mark a node down and destroy its contents (idempotent)."""
        state = self.node_state(node_id)
        with self._lock:
            for f in state.path.glob("*.blk"):
                f.unlink()
            self._down.add(node_id)
            self._save_config()
        return self.node_state(node_id)

    def revive_node(self, node_id: int) -> NodeState:
        """Bring a node back up, empty; its blocks need repair."""
        self.node_state(node_id)
        with self._lock:
            self._down.discard(node_id)
            self._save_config()
        return self.node_state(node_id)

    # -- scrub and repair ---------------------------------------------------

    def fsck(self) -> FsckReport:
        """Read-only scan: missing replicas, CRC failures, fatal stripes."""
        report = FsckReport()
        for manifest in self.manifests():
            scheme = parse_scheme(manifest.scheme)
            for stripe in manifest.stripes:
                present = set()
                for record in stripe.blocks:
                    ok = False
                    for node, fname, state in self._replica_status(record):
                        if state == "missing":
                            report.missing.append(
                                (manifest.name, stripe.index, record.block_id, node)
                            )
                        elif state == "corrupt":
                            report.corrupt.append(
                                (manifest.name, stripe.index, record.block_id, node)
                            )
                        else:
                            ok = True
                    if ok:
                        present.add(record.block_id)
                if not codes.can_decode_from(scheme, present):
                    report.fatal_stripes.append((manifest.name, stripe.index))
        return report

    def repair(self) -> RepairResult:
        """Re-provision down nodes and restore every damaged stripe.

        Measured bandwidth is the sum of the executed plans' transfer
        counts.  Raises FatalStripeError (before touching anything) when a
        stripe is unrecoverable.
        """
        with self._lock:
            # scan everything first so a fatal stripe aborts without mutation
            jobs = []
            for manifest in self.manifests():
                scheme = parse_scheme(manifest.scheme)
                for stripe in manifest.stripes:
                    slot_of = {node: s for s, node in enumerate(stripe.node_order)}
                    damaged: dict[int, list[tuple[BlockRecord, str]]] = {}
                    present = set()
                    for record in stripe.blocks:
                        for node, fname, state in self._replica_status(record):
                            if state == "ok":
                                present.add(record.block_id)
                            else:
                                damaged.setdefault(node, []).append((record, fname))
                    if not damaged:
                        continue
                    if not codes.can_decode_from(scheme, present):
                        raise FatalStripeError(
                            f"{manifest.name} stripe {stripe.index} is unrecoverable"
                        )
                    pattern = frozenset(slot_of[n] for n in damaged)
                    jobs.append((manifest, scheme, stripe, damaged, pattern))

            # provision replacements: every down node comes back empty
            for node in sorted(self._down):
                log.info("repair: reviving node %d as an empty replacement", node)
            self._down.clear()
            self._save_config()

            plans = 0
            bandwidth = 0
            for manifest, scheme, stripe, damaged, pattern in jobs:
                plan = codes.plan_repair(scheme, pattern)
                reader = self._stripe_reader(stripe, set(damaged))
                recovered = codes.execute_plan(plan, reader)
                for entries in damaged.values():
                    for record, fname in entries:
                        body = recovered[record.block_id]
                        if _crc(body) != record.crc32:
                            raise codes.InconsistentStripeError(
                                f"repaired block {record.block_id} fails its CRC"
                            )
                        (self.root / fname).write_bytes(body)
                plans += 1
                bandwidth += plan.bandwidth_blocks
            return RepairResult(plans, bandwidth)
