"""Shared blockchain primitives: identities, transactions, blocks and ledgers.

Everything that ends up inside a digest or a signature goes through a canonical
byte encoding (fixed field order, big-endian fixed-width integers, length
prefixed variable fields, a one-byte tag for optional values), so that two
nodes always agree on a transaction id or a block hash.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

ZERO_HASH = bytes(32)
SIGNATURE_SIZE = 64

Location = tuple[float, float]


class LedgerError(Exception):
    """Base class for ledger append/verification failures."""


class ChainIntegrityError(LedgerError):
    pass


class OrderingError(LedgerError):
    pass


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# -- canonical encoding -----------------------------------------------------

def _u8(v: int) -> bytes:
    return struct.pack(">B", v)


def _u16(v: int) -> bytes:
    return struct.pack(">H", v)


def _u32(v: int) -> bytes:
    return struct.pack(">I", v)


def _i64(v: int) -> bytes:
    return struct.pack(">q", v)


def _f64(v: float) -> bytes:
    return struct.pack(">d", float(v))


def _var(b: bytes) -> bytes:
    return _u32(len(b)) + b


def _opt(b: Optional[bytes]) -> bytes:
    # absent optionals get their own sentinel so (None, x) never collides with (x, None)
    return b"\x00" if b is None else b"\x01" + b


def _number(v: float) -> bytes:
    if isinstance(v, bool):
        raise TypeError("booleans are not state values")
    if isinstance(v, int):
        return b"i" + _i64(v)
    return b"f" + _f64(v)


# -- identities and regions -------------------------------------------------

def region_label(region: int) -> str:
    return chr(ord("A") + region) if 0 <= region < 26 else f"R{region}-"


@dataclass(frozen=True, order=True)
class VehicleId:
    """Vehicle identity: permanent region, index within it, and public key.

    ``A1`` in the usual notation is ``VehicleId(0, 1, pk)``.
    """

    permanent_region: int
    index: int
    public_key: bytes = field(repr=False, compare=True)

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("vehicle index must be non-negative")
        if not self.public_key:
            raise ValueError("public key must be non-empty")

    @property
    def label(self) -> str:
        return f"{region_label(self.permanent_region)}{self.index}"

    def __str__(self) -> str:
        return self.label

    def encode(self) -> bytes:
        return _u16(self.permanent_region) + _u32(self.index) + _var(self.public_key)

    def to_json(self) -> dict:
        return {
            "permanent_region": self.permanent_region,
            "index": self.index,
            "public_key": self.public_key.hex(),
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "VehicleId":
        return cls(int(d["permanent_region"]), int(d["index"]), bytes.fromhex(d["public_key"]))


class KeyPair:
    """Ed25519 key pair. Deterministic when built from a 32-byte seed."""

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise ValueError("key seed must be 32 bytes")
        self._sk = Ed25519PrivateKey.from_private_bytes(seed)
        self.public_key = self._sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    @classmethod
    def generate(cls, rng) -> "KeyPair":
        """Draw a key pair from ``rng`` (a ``random.Random`` or numpy Generator)."""
        if hasattr(rng, "bytes"):
            return cls(rng.bytes(32))
        return cls(rng.randbytes(32))

    def sign_bytes(self, data: bytes) -> bytes:
        return self._sk.sign(data)


def verify_bytes(public_key: bytes, data: bytes, signature: bytes) -> bool:
    if len(signature) != SIGNATURE_SIZE or len(public_key) != 32:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, data)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class Region:
    id: int
    radius_km: float
    neighbors: frozenset = frozenset()
    center: Location = (0.0, 0.0)

    def __post_init__(self):
        if not self.radius_km > 0:
            raise ValueError("region radius must be positive")


class RegionRegistry:
    """Known regions and their (symmetric) neighbour relation.

    Two neighbouring regions share the border halfway between their centres,
    perpendicular to the line joining them.
    """

    def __init__(self, regions: Iterable[Region] = ()):
        self._regions: dict[int, Region] = {}
        for r in regions:
            self.add(r)

    def add(self, region: Region) -> None:
        self._regions[region.id] = region
        # keep the neighbour relation symmetric
        for other in list(self._regions.values()):
            linked = other.id in region.neighbors or region.id in other.neighbors
            if other.id == region.id or not linked:
                continue
            for a, b in ((region.id, other.id), (other.id, region.id)):
                r = self._regions[a]
                if b not in r.neighbors:
                    self._regions[a] = Region(r.id, r.radius_km, r.neighbors | {b}, r.center)

    def __getitem__(self, rid: int) -> Region:
        return self._regions[rid]

    def __contains__(self, rid: int) -> bool:
        return rid in self._regions

    def __iter__(self):
        return iter(sorted(self._regions))

    def are_neighbors(self, a: int, b: int) -> bool:
        return a in self._regions and b in self._regions[a].neighbors

    def border_distance(self, a: int, b: int, location: Location) -> float:
        """Distance in metres from ``location`` to the border between ``a`` and ``b``."""
        ca, cb = self._regions[a].center, self._regions[b].center
        dx, dy = cb[0] - ca[0], cb[1] - ca[1]
        norm = math.hypot(dx, dy)
        if norm == 0:
            raise ValueError(f"regions {a} and {b} share a centre")
        mx, my = (ca[0] + cb[0]) / 2, (ca[1] + cb[1]) / 2
        return abs((location[0] - mx) * dx + (location[1] - my) * dy) / norm


# -- transactions -----------------------------------------------------------

class Scid(enum.IntEnum):
    Disagreement = 0
    RedressRequest = 1
    TransferRequest = 2
    PotReport = 3
    PotDispute = 4

    @property
    def code(self) -> str:
        return f"{int(self):04d}"


_NEEDS_DEBATE = {Scid.Disagreement, Scid.RedressRequest, Scid.PotDispute}


def compute_tid(sender: VehicleId, debate: Optional[VehicleId], region: Optional[int],
                location: Location, time: int) -> bytes:
    """Transaction id: digest of sender, debate, region, location and time."""
    data = (
        sender.encode()
        + _opt(debate.encode() if debate is not None else None)
        + _opt(_u16(region) if region is not None else None)
        + _f64(location[0]) + _f64(location[1])
        + _i64(time)
    )
    return digest(data)


def canonical_payload(payload: Mapping[str, Any]) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True, eq=False)
class Transaction:
    tid: bytes
    scid: Scid
    sender: VehicleId
    debate: Optional[VehicleId]
    region: Optional[int]
    location: Location
    time: int
    payload: Mapping[str, Any]
    signature: bytes = b""

    def __eq__(self, other):
        return isinstance(other, Transaction) and self.encode() == other.encode()

    def __hash__(self):
        return hash(self.tid)

    def signing_bytes(self) -> bytes:
        return (
            self.tid
            + _u8(int(self.scid))
            + self.sender.encode()
            + _opt(self.debate.encode() if self.debate is not None else None)
            + _opt(_u16(self.region) if self.region is not None else None)
            + _f64(self.location[0]) + _f64(self.location[1])
            + _i64(self.time)
            + _var(canonical_payload(self.payload))
        )

    def encode(self) -> bytes:
        return self.signing_bytes() + _var(self.signature)

    def to_json(self) -> dict:
        return {
            "tid": self.tid.hex(),
            "scid": self.scid.code,
            "sender": self.sender.to_json(),
            "debate": self.debate.to_json() if self.debate else None,
            "region": self.region,
            "location": list(self.location),
            "time": self.time,
            "payload": dict(self.payload),
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "Transaction":
        return cls(
            tid=bytes.fromhex(d["tid"]),
            scid=Scid(int(d["scid"])),
            sender=VehicleId.from_json(d["sender"]),
            debate=VehicleId.from_json(d["debate"]) if d["debate"] else None,
            region=d["region"],
            location=(float(d["location"][0]), float(d["location"][1])),
            time=int(d["time"]),
            payload=d["payload"],
            signature=bytes.fromhex(d["signature"]),
        )


def sign(tx: Transaction, keypair: KeyPair) -> bytes:
    return keypair.sign_bytes(tx.signing_bytes())


def verify(tx: Transaction) -> bool:
    """True iff the tid recomputes and the signature matches the sender's key."""
    if tx.tid != compute_tid(tx.sender, tx.debate, tx.region, tx.location, tx.time):
        return False
    return verify_bytes(tx.sender.public_key, tx.signing_bytes(), tx.signature)


def make_transaction(keypair: KeyPair, sender: VehicleId, scid: Scid, *,
                     location: Location, time: int,
                     debate: Optional[VehicleId] = None, region: Optional[int] = None,
                     payload: Optional[Mapping[str, Any]] = None) -> Transaction:
    """Build, id and sign a transaction."""
    scid = Scid(scid)
    if (debate is not None) != (scid in _NEEDS_DEBATE):
        raise ValueError(f"debate must be present exactly for {sorted(s.name for s in _NEEDS_DEBATE)}")
    if (region is not None) != (scid is Scid.TransferRequest):
        raise ValueError("region must be present exactly for TransferRequest")
    if keypair.public_key != sender.public_key:
        raise ValueError("key pair does not belong to sender")
    location = (float(location[0]), float(location[1]))
    tid = compute_tid(sender, debate, region, location, int(time))
    unsigned = Transaction(tid, scid, sender, debate, region, location, int(time), dict(payload or {}))
    return Transaction(tid, scid, sender, debate, region, location, int(time),
                       unsigned.payload, sign(unsigned, keypair))


# -- blocks and ledgers -----------------------------------------------------

class BlockKind(enum.IntEnum):
    Normal = 0
    Summary = 1
    PreBlock = 2
    Final = 3


@dataclass(frozen=True)
class StateUpdate:
    """``op`` is ``"add"`` (delta) or ``"set"`` (absolute value) on one record field."""

    vehicle: VehicleId
    field: str
    op: str
    value: float

    def __post_init__(self):
        if self.op not in ("add", "set"):
            raise ValueError(f"unknown state op {self.op!r}")

    def encode(self) -> bytes:
        return (self.vehicle.encode() + _var(self.field.encode())
                + _var(self.op.encode()) + _number(self.value))

    def apply(self, state: dict) -> None:
        rec = state.setdefault(self.vehicle, {})
        if self.op == "set":
            rec[self.field] = self.value
        else:
            rec[self.field] = rec.get(self.field, 0) + self.value

    def to_json(self) -> dict:
        return {"vehicle": self.vehicle.to_json(), "field": self.field,
                "op": self.op, "value": self.value}

    @classmethod
    def from_json(cls, d) -> "StateUpdate":
        return cls(VehicleId.from_json(d["vehicle"]), d["field"], d["op"], d["value"])


@dataclass(frozen=True)
class Block:
    region: int
    round: int
    prev_hash: bytes
    kind: BlockKind = BlockKind.Normal
    transactions: tuple[Transaction, ...] = ()
    state_updates: tuple[StateUpdate, ...] = ()
    proposer: Optional[VehicleId] = None
    timestamp: int = 0

    def encode(self) -> bytes:
        out = [
            _u16(self.region), _i64(self.round), self.prev_hash, _u8(int(self.kind)),
            _u32(len(self.transactions)),
        ]
        out += [_var(tx.encode()) for tx in self.transactions]
        out.append(_u32(len(self.state_updates)))
        out += [_var(u.encode()) for u in self.state_updates]
        out.append(_opt(self.proposer.encode() if self.proposer else None))
        out.append(_i64(self.timestamp))
        return b"".join(out)

    @property
    def hash(self) -> bytes:
        h = self.__dict__.get("_hash")
        if h is None:
            h = digest(self.encode())
            object.__setattr__(self, "_hash", h)
        return h

    def to_json(self) -> dict:
        return {
            "region": self.region,
            "round": self.round,
            "prev_hash": self.prev_hash.hex(),
            "kind": self.kind.name,
            "transactions": [tx.to_json() for tx in self.transactions],
            "state_updates": [u.to_json() for u in self.state_updates],
            "proposer": self.proposer.to_json() if self.proposer else None,
            "timestamp": self.timestamp,
            "hash": self.hash.hex(),
        }

    @classmethod
    def from_json(cls, d) -> "Block":
        return cls(
            region=int(d["region"]),
            round=int(d["round"]),
            prev_hash=bytes.fromhex(d["prev_hash"]),
            kind=BlockKind[d["kind"]],
            transactions=tuple(Transaction.from_json(t) for t in d["transactions"]),
            state_updates=tuple(StateUpdate.from_json(u) for u in d["state_updates"]),
            proposer=VehicleId.from_json(d["proposer"]) if d["proposer"] else None,
            timestamp=int(d["timestamp"]),
        )


def fold_updates(blocks: Sequence[Block], state: Optional[dict] = None) -> dict:
    """Materialize per-vehicle state; a Summary block resets the baseline."""
    state = {} if state is None else {k: dict(v) for k, v in state.items()}
    for b in blocks:
        if b.kind is BlockKind.Summary:
            state = {}
        for u in b.state_updates:
            u.apply(state)
    return state


class Ledger:
    """Hash-linked block list for one region and one chain.

    Instances are snapshots: ``append_block`` returns a new ledger and leaves
    the receiver untouched.
    """

    def __init__(self, region: int, blocks: Sequence[Block] = (), state: Optional[dict] = None):
        self.region = region
        self.blocks: tuple[Block, ...] = tuple(blocks)
        self.state: dict = fold_updates(self.blocks) if state is None else state

    def __len__(self):
        return len(self.blocks)

    @property
    def head(self) -> Optional[Block]:
        return self.blocks[-1] if self.blocks else None

    @property
    def head_hash(self) -> bytes:
        return self.blocks[-1].hash if self.blocks else ZERO_HASH

    @property
    def next_round(self) -> int:
        return self.blocks[-1].round + 1 if self.blocks else 0

    def record(self, vehicle: VehicleId) -> dict:
        return dict(self.state.get(vehicle, {}))

    def get(self, vehicle: VehicleId, fieldname: str, default=0):
        return self.state.get(vehicle, {}).get(fieldname, default)

    def append_block(self, block: Block) -> "Ledger":
        return append_block(self, block)

    def to_json(self) -> dict:
        return {"region": self.region, "blocks": [b.to_json() for b in self.blocks]}

    @classmethod
    def from_json(cls, d) -> "Ledger":
        ledger = cls(int(d["region"]))
        for b in d["blocks"]:
            ledger = append_block(ledger, Block.from_json(b))
        return ledger


def append_block(ledger: Ledger, block: Block) -> Ledger:
    if block.region != ledger.region:
        raise ChainIntegrityError(f"block for region {block.region} appended to ledger {ledger.region}")
    if block.prev_hash != ledger.head_hash:
        raise ChainIntegrityError(f"prev_hash mismatch at round {block.round}")
    if block.round != ledger.next_round:
        raise OrderingError(f"expected round {ledger.next_round}, got {block.round}")
    state = fold_updates([block], ledger.state)
    return Ledger(ledger.region, ledger.blocks + (block,), state)


def verify_chain(blocks: Sequence[Block], stored_hashes: Optional[Sequence[str]] = None) -> Optional[int]:
    """Index of the first block failing verification, or None if the chain is sound.

    Checks hash links, round numbering, transaction ids/signatures and, when
    given, hashes recorded alongside an exported chain.
    """
    prev = ZERO_HASH
    for i, b in enumerate(blocks):
        if b.prev_hash != prev or b.round != i:
            return i
        if stored_hashes is not None and b.hash.hex() != stored_hashes[i]:
            return i
        if not all(verify(tx) for tx in b.transactions):
            return i
        prev = b.hash
    return None


def load_ledger_json(doc: Mapping[str, Any]) -> tuple[Ledger, Optional[int]]:
    """Rebuild a ledger from its JSON export.

    Returns ``(ledger, bad)``, where ``bad`` is the index of the first corrupted
    block (the ledger then holds the verified prefix only).
    """
    region = int(doc["region"])
    blocks, hashes = [], []
    for i, bd in enumerate(doc["blocks"]):
        try:
            blocks.append(Block.from_json(bd))
            hashes.append(bd.get("hash"))
        except (KeyError, ValueError, TypeError):
            bad = i
            break
    else:
        bad = None
    first = verify_chain(blocks, hashes if all(h is not None for h in hashes) else None)
    if first is not None:
        bad = first if bad is None else min(bad, first)
    good = blocks if bad is None else blocks[:bad]
    return Ledger(region, good), bad
