"""Slot digests, block orderings, backbone chains, certificates, finality.

A slot-s digest is a recursive hash commitment: hash of the parent digest
followed by the ids of every block at slot <= s the parent did not commit,
concatenated in a deterministic order. Digest values form a tree rooted at
the zero digest; a backbone chain is the path from the root to one digest.

The registry is shared per run: a digest value determines its parent and
committed block list (hash collisions aside), so all nodes would materialize
identical entries. Consistency is asserted on re-registration.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

from .blocks import Block, BlockId, SlotDigest, ZERO_DIGEST
from .crypto import hash_bytes
from .dag import BlockUniverse, EqSet, detect_equivocations


class UnknownDigestError(Exception):
    pass


class DigestMismatchError(Exception):
    """One digest value claimed with two different commitments."""


def concat_order(universe: BlockUniverse, ids) -> list[BlockId]:
    """Deterministic total order extending the causal partial order.

    Ancestors carry strictly smaller timestamps in a time-valid DAG, so
    sorting by (slot, round, author, id) is automatically topological.
    """
    return sorted(ids, key=lambda b: (universe[b].time, universe[b].node, b))


@dataclass
class DigestEntry:
    digest: SlotDigest
    parent: SlotDigest
    new_blocks: tuple[BlockId, ...]  # concat order, excluding parent's blocks


class DigestRegistry:
    """Tree of digest values with memoized committed sets and orders."""

    def __init__(self, universe: BlockUniverse, on_register=None):
        self.universe = universe
        self.on_register = on_register
        self.entries: dict[SlotDigest, DigestEntry] = {
            ZERO_DIGEST: DigestEntry(ZERO_DIGEST, ZERO_DIGEST, ())
        }
        self._committed: dict[SlotDigest, frozenset[BlockId]] = {ZERO_DIGEST: frozenset()}
        self._orders: dict[SlotDigest, tuple[BlockId, ...]] = {ZERO_DIGEST: ()}
        self._eqsets: dict[SlotDigest, EqSet] = {ZERO_DIGEST: EqSet(set(), {})}
        self._chains: dict[SlotDigest, tuple[SlotDigest, ...]] = {ZERO_DIGEST: (ZERO_DIGEST,)}

    def __contains__(self, d: SlotDigest) -> bool:
        return d in self.entries

    def parent(self, d: SlotDigest) -> SlotDigest:
        return self._entry(d).parent

    def _entry(self, d: SlotDigest) -> DigestEntry:
        e = self.entries.get(d)
        if e is None:
            raise UnknownDigestError(repr(d))
        return e

    def compute(self, parent: SlotDigest, dag_ids, slot: int) -> SlotDigest:
        """Digest for ``slot`` over a view, registering the result.

        ``dag_ids`` is the view (an id set); committed blocks are those at
        slot <= ``slot`` not already committed by ``parent``.
        """
        parent_blocks = self.committed_ids(parent)
        u = self.universe
        fresh = [b for b in dag_ids
                 if u[b].slot <= slot and b not in parent_blocks]
        ordered = concat_order(u, fresh)
        value = hash_bytes(parent.value + b"".join(ordered))
        digest = SlotDigest(slot, value)
        self.register(digest, parent, tuple(ordered))
        return digest

    def register(self, digest: SlotDigest, parent: SlotDigest,
                 new_blocks: tuple[BlockId, ...]) -> None:
        if parent not in self.entries:
            raise UnknownDigestError(f"parent {parent!r} unregistered")
        if digest.slot != self._entry(parent).digest.slot + 1:
            raise ValueError(f"parent slot {parent.slot} does not precede {digest.slot}")
        prev = self.entries.get(digest)
        if prev is not None:
            if prev.parent != parent or prev.new_blocks != new_blocks:
                raise DigestMismatchError(repr(digest))
            return
        self.entries[digest] = DigestEntry(digest, parent, new_blocks)
        if self.on_register is not None:
            self.on_register(digest, parent, new_blocks)

    def committed_ids(self, d: SlotDigest) -> frozenset[BlockId]:
        got = self._committed.get(d)
        if got is None:
            e = self._entry(d)
            got = self.committed_ids(e.parent) | frozenset(e.new_blocks)
            self._committed[d] = got
        return got

    def order_of(self, d: SlotDigest) -> tuple[BlockId, ...]:
        got = self._orders.get(d)
        if got is None:
            e = self._entry(d)
            got = self.order_of(e.parent) + e.new_blocks
            self._orders[d] = got
        return got

    def chain_of(self, d: SlotDigest) -> tuple[SlotDigest, ...]:
        """Backbone chain (zero digest first, ``d`` last)."""
        got = self._chains.get(d)
        if got is None:
            got = self.chain_of(self._entry(d).parent) + (d,)
            self._chains[d] = got
        return got

    def is_conflict(self, a: SlotDigest, b: SlotDigest) -> bool:
        """Neither digest's backbone chain contains the other."""
        if a.slot <= b.slot:
            return self.chain_of(b)[a.slot + 1] != a
        return self.chain_of(a)[b.slot + 1] != b

    def eqset_of(self, d: SlotDigest) -> EqSet:
        """Equivocators evident from the blocks committed by ``d``."""
        got = self._eqsets.get(d)
        if got is None:
            got = detect_equivocations(self.universe, self.committed_ids(d))
            self._eqsets[d] = got
        return got


def digest_certified_by(universe: BlockUniverse, registry: DigestRegistry,
                        bid: BlockId, f: int) -> Optional[SlotDigest]:
    """The digest this block certifies, if it is a digest certificate.

    A certificate at slot t carries a quorum, in its cone, of slot-t blocks
    all bearing one digest of slot t-2. In a valid DAG that digest is forced:
    the block's own digest at rounds below f+2, its digest's parent at round
    f+2.
    """
    block = universe[bid]
    if block.is_genesis() or block.slot < 1:
        return None
    if block.round < f + 2:
        target = block.digest
    else:
        if block.digest not in registry:
            return None
        target = registry.parent(block.digest)
    if target.slot != block.slot - 2:
        return None
    authors = set()
    for e in universe.own_slot_cone(bid):
        other = universe[e]
        if other.digest == target:
            authors.add(other.node)
    if len(authors) >= 2 * f + 1:
        return target
    return None


class CertificateCache:
    """Memoized digest-certificate lookups over the shared universe."""

    def __init__(self, universe: BlockUniverse, registry: DigestRegistry, f: int):
        self.universe = universe
        self.registry = registry
        self.f = f
        self._memo: dict[BlockId, Optional[SlotDigest]] = {}

    def commit_of(self, bid: BlockId) -> Optional[SlotDigest]:
        got = self._memo.get(bid, b"unset")
        if got == b"unset":
            got = digest_certified_by(self.universe, self.registry, bid, self.f)
            self._memo[bid] = got
        return got


# Sentinel for "no certificate yet": slot -1, certifying the zero digest.
@dataclass(frozen=True)
class CommitCertificate:
    block: Optional[BlockId]
    slot: int
    digest: SlotDigest


SYNTHETIC_GENESIS_DC = CommitCertificate(None, -1, ZERO_DIGEST)


def last_commit_certificate(universe: BlockUniverse, certs: CertificateCache,
                            bid: BlockId) -> CommitCertificate:
    """Latest digest certificate by ``bid``'s author inside its cone.

    Falls back to a synthetic slot -1 certificate for the zero digest so
    certificate-slot comparisons are total before any real one exists.
    """
    author = universe[bid].node
    cone = universe.cone(bid)
    best = None
    for cand in reversed(universe.by_author.get(author, [])):
        if cand not in cone:
            continue
        d = certs.commit_of(cand)
        if d is None:
            continue
        block = universe[cand]
        if best is None or (block.time, cand) > best[0]:
            best = ((block.time, cand), CommitCertificate(cand, block.slot, d))
    return best[1] if best else SYNTHETIC_GENESIS_DC


@dataclass
class FinalityState:
    """Per-node finality bookkeeping.

    ``s_final`` is the slot of the last final digest on the node's chain;
    ``s_pre`` the last final slot inside that digest's committed DAG.
    Finality times are defined only for slots up to ``s_pre`` and, once set,
    never change.
    """

    s_final: int = 0
    s_pre: int = 0
    finality_times: dict[int, int] = field(default_factory=dict)
