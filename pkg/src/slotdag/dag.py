"""Block storage: the shared block universe, per-node DAG and buffer.

Past cones, reachability, per-slot membership, certificate predicates and
similar facts are pure functions of block content, so every node in a run
would compute identical answers. A single ``BlockUniverse`` per run memoizes
them; nodes keep only their private views (which block ids they accepted or
buffered). This changes nothing semantically and keeps runs at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .blocks import Block, BlockId


class MissingAncestorError(Exception):
    """A block's ref closure is not available."""


class BlockUniverse:
    """All blocks ever created in one run, with memoized intrinsic facts."""

    def __init__(self, genesis: Block, f: int):
        self.f = f
        self.genesis = genesis
        self.blocks: dict[BlockId, Block] = {}
        self.by_author: dict[int, list[BlockId]] = {}
        self.by_slot: dict[int, list[BlockId]] = {}
        self._cones: dict[BlockId, frozenset[BlockId]] = {}
        self._own_slot_cone: dict[BlockId, tuple[BlockId, ...]] = {}
        self._pending: list[BlockId] = []  # blocks whose refs are not all here
        self.add(genesis)

    def add(self, block: Block) -> BlockId:
        bid = block.id
        if bid in self.blocks:
            return bid
        if not bid:
            raise ValueError("block must be sealed before insertion")
        self.blocks[bid] = block
        self.by_author.setdefault(block.node, []).append(bid)
        self.by_slot.setdefault(block.slot, []).append(bid)
        if not self._try_build_cone(bid):
            self._pending.append(bid)
        else:
            self._retry_pending()
        return bid

    def _try_build_cone(self, bid: BlockId) -> bool:
        block = self.blocks[bid]
        parents = []
        for r in block.refs:
            cone = self._cones.get(r)
            if cone is None:
                return False
            parents.append(cone)
        self._cones[bid] = frozenset((bid,)).union(*parents) if parents else frozenset((bid,))
        return True

    def _retry_pending(self) -> None:
        while self._pending:
            again = [b for b in self._pending if not self._try_build_cone(b)]
            if len(again) == len(self._pending):
                return
            self._pending = again

    def __getitem__(self, bid: BlockId) -> Block:
        return self.blocks[bid]

    def __contains__(self, bid: BlockId) -> bool:
        return bid in self.blocks

    def cone_complete(self, bid: BlockId) -> bool:
        return bid in self._cones

    def cone(self, bid: BlockId) -> frozenset[BlockId]:
        """Ids of all blocks reachable from ``bid``, itself included."""
        c = self._cones.get(bid)
        if c is None:
            raise MissingAncestorError(f"cone of {bid.hex()[:12]} incomplete")
        return c

    def reaches(self, frm: BlockId, to: BlockId) -> bool:
        return to in self.cone(frm)

    def own_slot_cone(self, bid: BlockId) -> tuple[BlockId, ...]:
        """Cone members created in the block's own slot (memoized)."""
        got = self._own_slot_cone.get(bid)
        if got is None:
            s = self.blocks[bid].slot
            got = tuple(e for e in self.cone(bid) if self.blocks[e].slot == s)
            self._own_slot_cone[bid] = got
        return got

    def reach_number(self, c: BlockId, b: BlockId) -> int:
        """Distinct nodes with a block in cone(b) at b's slot that reaches c."""
        nodes = set()
        for e in self.own_slot_cone(b):
            if c in self._cones[e]:
                nodes.add(self.blocks[e].node)
        return len(nodes)


def is_quorum(blocks: Iterable[Block], f: int) -> bool:
    """At least 2f+1 distinct authors."""
    return len({b.node for b in blocks}) >= 2 * f + 1


def distinct_authors(universe: BlockUniverse, ids: Iterable[BlockId]) -> int:
    return len({universe[b].node for b in ids})


class DagStore:
    """A node's accepted DAG: ref-closed, acyclic, contains genesis."""

    def __init__(self, universe: BlockUniverse):
        self.universe = universe
        self.ids: set[BlockId] = set()
        self._referenced: set[BlockId] = set()
        self.by_slot: dict[int, list[BlockId]] = {}
        self.add_block(universe.genesis.id)

    def __contains__(self, bid: BlockId) -> bool:
        return bid in self.ids

    def __len__(self) -> int:
        return len(self.ids)

    def add_block(self, bid: BlockId) -> None:
        if bid in self.ids:
            return
        block = self.universe[bid]
        self.ids.add(bid)
        self.by_slot.setdefault(block.slot, []).append(bid)
        self._referenced.update(block.refs)

    def add_cone(self, bid: BlockId) -> list[BlockId]:
        """Add ``bid`` with every missing ancestor; returns the new ids."""
        added = []
        stack = [bid]
        seen = set()
        while stack:
            cur = stack.pop()
            if cur in seen or cur in self.ids:
                continue
            seen.add(cur)
            added.append(cur)
            stack.extend(self.universe[cur].refs)
        # Parents first keeps by_slot insertion deterministic.
        for b in sorted(added, key=lambda x: (self.universe[x].time, self.universe[x].node, x)):
            self.add_block(b)
        return added

    def missing_of(self, bid: BlockId) -> list[BlockId]:
        """Cone members of ``bid`` not yet in this DAG (frontier walk)."""
        missing = []
        stack = [bid]
        seen = set()
        while stack:
            cur = stack.pop()
            if cur in seen or cur in self.ids:
                continue
            seen.add(cur)
            missing.append(cur)
            stack.extend(self.universe[cur].refs)
        return missing

    def tips(self) -> list[BlockId]:
        """Blocks no member references, sorted for deterministic use."""
        return sorted(b for b in self.ids if b not in self._referenced)

    def slot_ids(self, slot: int) -> list[BlockId]:
        return self.by_slot.get(slot, [])


class Buffer:
    """Every block a node has received or created; not necessarily closed."""

    def __init__(self, universe: BlockUniverse):
        self.universe = universe
        self.ids: set[BlockId] = set()
        self.by_time: dict = {}
        self._by_author_latest: dict[int, BlockId] = {}
        self._complete: set[BlockId] = set()
        self.add(universe.genesis.id)

    def __contains__(self, bid: BlockId) -> bool:
        return bid in self.ids

    def add(self, bid: BlockId) -> bool:
        if bid in self.ids:
            return False
        block = self.universe[bid]
        self.ids.add(bid)
        self.by_time.setdefault(block.time, []).append(bid)
        cur = self._by_author_latest.get(block.node)
        if cur is None or self._latest_key(bid) > self._latest_key(cur):
            self._by_author_latest[block.node] = bid
        return True

    def _latest_key(self, bid: BlockId):
        return (self.universe[bid].time, bid)

    def at_time(self, t) -> list[BlockId]:
        return sorted(self.by_time.get(t, []),
                      key=lambda b: (self.universe[b].node, b))

    def complete(self, bid: BlockId) -> bool:
        """True once the block's whole cone is buffered."""
        if bid in self._complete:
            return True
        if not self.universe.cone_complete(bid):
            return False
        if self.universe.cone(bid) <= self.ids:
            self._complete.add(bid)
            return True
        return False

    def last_block_from(self, node: int) -> Optional[BlockId]:
        return self._by_author_latest.get(node)


@dataclass
class EqSet:
    """Known equivocators with one proof pair each."""

    flagged: set[int]
    proofs: dict[int, tuple[BlockId, BlockId]]

    def __contains__(self, node: int) -> bool:
        return node in self.flagged


class EquivocationTracker:
    """Incremental detection of same-author blocks not linearly ordered.

    Pairs are only judged once both cones are complete: reachability proven
    on partial data stands, but non-reachability does not, and a correct
    node must never be flagged just because intermediate blocks are missing.
    Per author a time-sorted list of complete blocks is kept; a new block
    ordered against its time-neighbours is ordered against all (the author's
    accepted blocks form a chain until the first violation, which is sticky).
    """

    def __init__(self, universe: BlockUniverse):
        self.universe = universe
        self.eq = EqSet(set(), {})
        self._chains: dict[int, list[BlockId]] = {}
        self._waiting: list[BlockId] = []

    def observe(self, bid: BlockId) -> None:
        block = self.universe[bid]
        if block.is_genesis():
            return
        if block.node in self.eq.flagged:
            return
        if not self.universe.cone_complete(bid):
            self._waiting.append(bid)
            return
        self._place(bid)

    def retry_waiting(self) -> None:
        if not self._waiting:
            return
        todo, self._waiting = self._waiting, []
        for bid in sorted(todo, key=lambda b: (self.universe[b].time, b)):
            self.observe(bid)

    def _place(self, bid: BlockId) -> None:
        u = self.universe
        block = u[bid]
        chain = self._chains.setdefault(block.node, [])
        key = (block.time, bid)
        lo, hi = 0, len(chain)
        while lo < hi:
            mid = (lo + hi) // 2
            if (u[chain[mid]].time, chain[mid]) < key:
                lo = mid + 1
            else:
                hi = mid
        pred = chain[lo - 1] if lo > 0 else None
        succ = chain[lo] if lo < len(chain) else None
        if pred is not None and not (pred in u.cone(bid) or bid in u.cone(pred)):
            self._flag(block.node, pred, bid)
            return
        if succ is not None and not (bid in u.cone(succ) or succ in u.cone(bid)):
            self._flag(block.node, succ, bid)
            return
        chain.insert(lo, bid)

    def _flag(self, node: int, a: BlockId, b: BlockId) -> None:
        self.eq.flagged.add(node)
        self.eq.proofs.setdefault(node, (min(a, b), max(a, b)))

    def check_accusation(self, a: BlockId, b: BlockId, have) -> bool:
        """Verify a claimed proof pair against buffered blocks."""
        u = self.universe
        if a not in have or b not in have or a == b:
            return False
        ba, bb = u[a], u[b]
        if ba.node != bb.node or ba.is_genesis():
            return False
        if not (u.cone_complete(a) and u.cone_complete(b)):
            return False
        if a in u.cone(b) or b in u.cone(a):
            return False
        self._flag(ba.node, a, b)
        return True


def detect_equivocations(universe: BlockUniverse, ids: Iterable[BlockId]) -> EqSet:
    """One-shot detection over an id set with complete cones."""
    tracker = EquivocationTracker(universe)
    for bid in sorted(ids, key=lambda b: (universe[b].time, b)):
        tracker.observe(bid)
    tracker.retry_waiting()
    return tracker.eq
