"""Transaction approvals, certificates, and the two confirmation paths.

All predicates here are functions of block content and cone structure, so
they live beside the shared universe and are memoized once per run:

  ready(tx, B)      every input's creator is confirmed within cone(B)
                    (the genesis mint, or fast-path confirmed in the cone)
  approves(C,tx,B)  tx is B-ready, B is in cone(C), and no block holding a
                    conflicting transaction is in cone(C)
  tc(C, tx, B)      C's slot is B's or the next, and cone(C) holds a quorum
                    of approving blocks

Fast-path confirmation of (tx, B) in a view: a quorum of certificate
authors inside the view. The per-(tx, block) instance counting is kept
separate from transaction identity; a ledger stores a transaction once.
"""

from __future__ import annotations

from typing import Iterable, Optional

from .blocks import Block, BlockId
from .dag import BlockUniverse
from .utxo import UtxoTx, is_double_spend


class PaymentsOracle:
    def __init__(self, universe: BlockUniverse, f: int, genesis_txid: bytes):
        self.universe = universe
        self.f = f
        self.quorum = 2 * f + 1
        self.genesis_txid = genesis_txid
        self.txs: dict[bytes, UtxoTx] = {}
        self.instances: dict[bytes, list[BlockId]] = {}   # txid -> carrying blocks
        self.by_input: dict[tuple, set[bytes]] = {}
        self._conflicting_txids: dict[bytes, set[bytes]] = {}
        self._ready: dict[tuple[bytes, BlockId], bool] = {}
        self._approves: dict[tuple[BlockId, bytes, BlockId], bool] = {}
        self._tc: dict[tuple[BlockId, bytes, BlockId], bool] = {}

    # ---- registration (engine calls once per created block) ----

    def register_block(self, bid: BlockId) -> list[tuple[bytes, BlockId]]:
        """Index a block's transactions; returns its (txid, block) instances.

        Must be called for every block as it is created: cone members are
        always registered before any block that reaches them, which keeps
        the approval memo sound (conflicts inside a cone are fully known by
        the time the cone's apex exists).
        """
        out = []
        for tx in self.universe[bid].txs:
            tid = tx.txid
            out.append((tid, bid))
            if tid not in self.txs:
                self.txs[tid] = tx
                for uid in tx.inputs:
                    owners = self.by_input.setdefault(uid, set())
                    for other in owners:
                        self._conflicting_txids.setdefault(tid, set()).add(other)
                        self._conflicting_txids.setdefault(other, set()).add(tid)
                    owners.add(tid)
            self.instances.setdefault(tid, []).append(bid)
        return out

    def instances_of_block(self, bid: BlockId) -> list[tuple[bytes, BlockId]]:
        return [(tx.txid, bid) for tx in self.universe[bid].txs]

    def conflict_blocks(self, txid: bytes) -> list[BlockId]:
        out = []
        for other in self._conflicting_txids.get(txid, ()):
            out.extend(self.instances.get(other, ()))
        return out

    # ---- predicates ----

    def ready(self, txid: bytes, bid: BlockId) -> bool:
        key = (txid, bid)
        got = self._ready.get(key)
        if got is None:
            tx = self.txs[txid]
            cone = self.universe.cone(bid)
            got = all(self.confirmed_in(uid[0], cone) for uid in tx.inputs)
            self._ready[key] = got
        return got

    def confirmed_in(self, txid: bytes, view: frozenset[BlockId]) -> bool:
        """Confirmed within a cone: the genesis mint or fast-path confirmed."""
        if txid == self.genesis_txid:
            return True
        for inst in self.instances.get(txid, ()):
            if inst in view and self.fast_confirmed(txid, inst, view):
                return True
        return False

    def approves(self, cid: BlockId, txid: bytes, bid: BlockId) -> bool:
        key = (cid, txid, bid)
        got = self._approves.get(key)
        if got is None:
            cone = self.universe.cone(cid)
            got = (bid in cone and self.ready(txid, bid)
                   and not any(x in cone for x in self.conflict_blocks(txid)))
            self._approves[key] = got
        return got

    def is_tx_certificate(self, cid: BlockId, txid: bytes, bid: BlockId) -> bool:
        key = (cid, txid, bid)
        got = self._tc.get(key)
        if got is None:
            got = self._compute_tc(cid, txid, bid)
            self._tc[key] = got
        return got

    def _compute_tc(self, cid: BlockId, txid: bytes, bid: BlockId) -> bool:
        u = self.universe
        b_slot = u[bid].slot
        if u[cid].slot - b_slot not in (0, 1):
            return False
        cone = u.cone(cid)
        authors = set()
        for s in (b_slot, b_slot + 1):
            for eid in u.by_slot.get(s, ()):
                if eid in cone and self.approves(eid, txid, bid):
                    authors.add(u[eid].node)
                    if len(authors) >= self.quorum:
                        return True
        return False

    def certificate_authors(self, txid: bytes, bid: BlockId,
                            view) -> set[int]:
        """Authors of certificate blocks for (tx, B) inside ``view``."""
        u = self.universe
        b_slot = u[bid].slot
        authors = set()
        for s in (b_slot, b_slot + 1):
            for cid in u.by_slot.get(s, ()):
                if cid in view and self.is_tx_certificate(cid, txid, bid):
                    authors.add(u[cid].node)
        return authors

    def fast_confirmed(self, txid: bytes, bid: BlockId, view) -> bool:
        return len(self.certificate_authors(txid, bid, view)) >= self.quorum

    def has_certificate_in(self, txid: bytes, bid: BlockId, view) -> bool:
        return len(self.certificate_authors(txid, bid, view)) >= 1
