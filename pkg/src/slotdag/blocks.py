"""Timestamps, slot digests, blocks, and their canonical byte encoding.

Time is a grid of slots, each exactly ``f + 2`` rounds long; a timestamp
(s, i) orders totally by (slot, round). Blocks are the only message type.

Canonical encoding (byte-exact, version 1):

    block := u8 version
             u32 n_refs || refs*            refs sorted ascending by bytes
             i64 digest.slot || digest.value (32 bytes)
             u32 n_txs || tx*               length-prefixed, author order
             u64 time.slot || u32 time.round
             i64 node                       -1 for genesis
             u32 n_accusations || (32+32 bytes)*
             u32 len(sig) || sig            omitted from the signing payload

A block id is the hash of the full canonical encoding, so equal blocks and
equal ids coincide up to hash collisions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .crypto import DIGEST_SIZE, hash_bytes
from .utxo import UtxoTx

BlockId = bytes

GENESIS_NODE = -1
SERIALIZATION_VERSION = 1


@dataclass(frozen=True, order=True)
class Timestamp:
    slot: int
    round: int

    def __repr__(self):
        return f"<{self.slot},{self.round}>"


class BeforeGenesisError(Exception):
    pass


def genesis_time(f: int) -> Timestamp:
    return Timestamp(0, f + 2)


def before_time(t: Timestamp, f: int) -> Timestamp:
    """Predecessor of ``t`` on the round grid; undefined at the genesis time."""
    if t <= genesis_time(f):
        raise BeforeGenesisError(f"no round precedes {t}")
    if t.round > 1:
        return Timestamp(t.slot, t.round - 1)
    return Timestamp(t.slot - 1, f + 2)


def round_index(t: Timestamp, f: int) -> int:
    """Global round number; the genesis time maps to 0."""
    return (t.slot - 1) * (f + 2) + t.round


@dataclass(frozen=True)
class SlotDigest:
    """A slot digest value plus the slot it commits.

    The raw hash does not encode the slot, so it is carried alongside; the
    digest registry keeps the authoritative slot/parent/committed mapping.
    """

    slot: int
    value: bytes

    def __repr__(self):
        return f"sigma[{self.slot}]{self.value.hex()[:8]}"


ZERO_DIGEST = SlotDigest(-1, b"\x00" * DIGEST_SIZE)


@dataclass(frozen=True)
class Block:
    refs: tuple[BlockId, ...]
    digest: SlotDigest
    txs: tuple[UtxoTx, ...]
    time: Timestamp
    node: int
    accusations: tuple[tuple[BlockId, BlockId], ...] = ()
    sig: bytes = b""
    id: BlockId = field(default=b"", compare=False)

    @property
    def slot(self) -> int:
        return self.time.slot

    @property
    def round(self) -> int:
        return self.time.round

    def is_genesis(self) -> bool:
        return self.node == GENESIS_NODE


def _encode(b: Block, include_sig: bool) -> bytes:
    parts = [struct.pack(">B", SERIALIZATION_VERSION)]
    refs = sorted(b.refs)
    parts.append(struct.pack(">I", len(refs)))
    parts.extend(refs)
    parts.append(struct.pack(">q", b.digest.slot))
    parts.append(b.digest.value)
    parts.append(struct.pack(">I", len(b.txs)))
    for tx in b.txs:
        enc = tx.encode()
        parts.append(struct.pack(">I", len(enc)))
        parts.append(enc)
    parts.append(struct.pack(">QI", b.time.slot, b.time.round))
    parts.append(struct.pack(">q", b.node))
    parts.append(struct.pack(">I", len(b.accusations)))
    for a, c in b.accusations:
        parts.append(a)
        parts.append(c)
    if include_sig:
        parts.append(struct.pack(">I", len(b.sig)))
        parts.append(b.sig)
    return b"".join(parts)


def signing_bytes(b: Block) -> bytes:
    return _encode(b, include_sig=False)


def canonical_serialize(b: Block) -> bytes:
    return _encode(b, include_sig=True)


def sealed(b: Block) -> Block:
    """Return ``b`` with its id filled in from the canonical encoding."""
    return Block(tuple(sorted(b.refs)), b.digest, b.txs, b.time, b.node,
                 b.accusations, b.sig, hash_bytes(canonical_serialize(b)))


def make_genesis(genesis_tx: UtxoTx, f: int) -> Block:
    return sealed(Block((), ZERO_DIGEST, (genesis_tx,), genesis_time(f), GENESIS_NODE))
