"""The per-node state machine: one round = receive, state update, send.

The state update phase runs, in order: history update, DAG update, chain
switching or wake-up (first round of a slot), chain extension (last round),
fast-path confirmation, slot finalization, block creation. The DAG only
grows during this phase and always equals the past cone of the latest own
block afterwards, because a new block references every unreferenced block.

DAG update admits a buffered block from the previous round carrying the
node's adopted digest once three conditions hold: no current-slot block in
its cone was authored by an equivocator already committed two slots back
(U1), its cone is a valid DAG (U2), and every not-yet-committed older block
it smuggles in has been observed by enough distinct current-slot authors,
at least the round offset minus one (U3). U3 is the Dolev-Strong style
counter that lets two nodes entering a slot with one digest end it with one
digest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .blocks import (Block, BlockId, SlotDigest, Timestamp, ZERO_DIGEST,
                     before_time, genesis_time, round_index, sealed,
                     signing_bytes)
from .crypto import Authenticator
from .dag import Buffer, DagStore, EquivocationTracker
from .digests import (CertificateCache, DigestRegistry, FinalityState,
                      SYNTHETIC_GENESIS_DC, last_commit_certificate)
from .payments import PaymentsOracle
from .trace import Trace
from .utxo import UtxoLedger, UtxoTx
from .validity import ValidityChecker


@dataclass
class RunContext:
    """Everything shared by the nodes of one run."""

    n: int
    f: int
    universe: object
    registry: DigestRegistry
    validity: ValidityChecker
    certs: CertificateCache
    payments: PaymentsOracle
    auth: Authenticator
    trace: Trace
    genesis_tx: UtxoTx
    tx_cap: int = 8

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def rix(self, t: Timestamp) -> int:
        return round_index(t, self.f)


@dataclass
class OutboundBundle:
    """Per-recipient cone diffs plus the new own block (already included)."""

    sender: int
    per_recipient: dict[int, list[BlockId]]


class Node:
    def __init__(self, node_id: int, ctx: RunContext):
        self.id = node_id
        self.ctx = ctx
        u = ctx.universe
        self.dag = DagStore(u)
        self.buffer = Buffer(u)
        self.eq = EquivocationTracker(u)
        self.chain: list[SlotDigest] = [ZERO_DIGEST]  # chain[j] has slot j-1
        self.order_own: tuple[BlockId, ...] = (u.genesis.id,)
        self.order_final: tuple[BlockId, ...] = (u.genesis.id,)
        self.finality = FinalityState()
        self.ledger = UtxoLedger.with_genesis(ctx.genesis_tx)
        self.history: dict[int, set[BlockId]] = {k: set() for k in range(ctx.n)}
        self.b_own: BlockId = u.genesis.id
        self.i_elss = False
        self.mempool: list[UtxoTx] = []
        self.seen_txids: set[bytes] = {ctx.genesis_tx.txid}
        self.pending_accusations: list[tuple[BlockId, BlockId]] = []
        self._accused: set[int] = set()
        self._absorbed: set[BlockId] = {u.genesis.id}
        self._instances: list[tuple[bytes, BlockId]] = []
        self._confirmed_fast: set[tuple[bytes, BlockId]] = set()
        self.proc_txcert: set[BlockId] = set()
        self.proc_totalorder: set[BlockId] = set()
        # Genesis payload indexes like any other block.
        self._note_dag_additions([u.genesis.id])
        self.send_history_updates = True  # off in the sleepy model

    # ------------------------------------------------------------------ api

    def current_commit(self) -> SlotDigest:
        return self.chain[-1]

    def chain_digest(self, slot: int) -> Optional[SlotDigest]:
        idx = slot + 1
        if 0 <= idx < len(self.chain):
            return self.chain[idx]
        return None

    def step(self, t: Timestamp, inbox: list[BlockId],
             leader: Optional[int]) -> OutboundBundle:
        self.receive_messages(t, inbox)
        self.update_history()
        self.update_dag(t)
        if t.round == 1:
            prev_last = Timestamp(t.slot - 1, self.ctx.f + 2)
            if self.ctx.universe[self.b_own].time == prev_last:
                self.switch_chain(t, leader)
            else:
                self.wake_up_chain(t)
            self.ctx.trace.emit("adopt", r=self.ctx.rix(t), node=self.id,
                                slot=t.slot, digest=self.current_commit().value.hex(),
                                dslot=self.current_commit().slot)
        if t.round == self.ctx.f + 2:
            self.update_chain(t)
        self.confirm_transactions(t)
        self.finalize_slots(t)
        block = self.create_block(t)
        return self.broadcast_bundle(block)

    # -------------------------------------------------------------- receive

    def receive_messages(self, t: Timestamp, inbox: list[BlockId]) -> None:
        u = self.ctx.universe
        for bid in inbox:
            block = u[bid]
            if block.is_genesis():
                continue
            if block.time > t:
                self.ctx.trace.emit("recv-drop", r=self.ctx.rix(t), node=self.id,
                                    id=bid.hex(), reason="future-time")
                continue
            if not self.ctx.auth.verify_node(block.node, signing_bytes(block), block.sig):
                self.ctx.trace.emit("recv-drop", r=self.ctx.rix(t), node=self.id,
                                    id=bid.hex(), reason="bad-signature")
                continue
            if self.buffer.add(bid):
                self.eq.observe(bid)
        self.eq.retry_waiting()
        for bid in inbox:
            if bid in self.buffer:
                for pair in u[bid].accusations:
                    before = set(self.eq.eq.flagged)
                    if self.eq.check_accusation(pair[0], pair[1], self.buffer.ids):
                        for who in self.eq.eq.flagged - before:
                            self.ctx.trace.emit("eq-flag", r=self.ctx.rix(t),
                                                node=self.id, author=who)

    # --------------------------------------------------------- state update

    def update_history(self) -> None:
        """Credit each author with the cone of every complete buffered block."""
        u = self.ctx.universe
        todo = [b for b in self.buffer.ids - self._absorbed if self.buffer.complete(b)]
        for bid in sorted(todo, key=lambda b: (u[b].time, u[b].node, b)):
            author = u[bid].node
            if author >= 0:
                self.history[author] |= u.cone(bid)
            self._absorbed.add(bid)

    def update_dag(self, t: Timestamp) -> None:
        ctx = self.ctx
        u = ctx.universe
        prev = before_time(t, ctx.f)
        if u[self.b_own].time != prev:
            return
        sigma = self.current_commit()
        eq_committed = ctx.registry.eqset_of(sigma).flagged if sigma.slot >= 0 else set()
        for bid in self.buffer.at_time(prev):
            block = u[bid]
            if bid in self.dag or block.digest != sigma:
                continue
            if block.node in self.eq.eq.flagged:
                continue
            if not self.buffer.complete(bid):
                continue
            rule = self._update_conditions(t, bid, sigma, eq_committed)
            if rule is None:
                added = self.dag.add_cone(bid)
                self._note_dag_additions(added)
                self._note_accepted(bid)
                ctx.trace.emit("dag-accept", r=ctx.rix(t), node=self.id, id=bid.hex())
            else:
                ctx.trace.emit("dag-reject", r=ctx.rix(t), node=self.id,
                               id=bid.hex(), rule=rule)

    def _update_conditions(self, t: Timestamp, bid: BlockId, sigma: SlotDigest,
                           eq_committed: set) -> Optional[str]:
        ctx = self.ctx
        u = ctx.universe
        if eq_committed:
            for eid in u.cone(bid):
                e = u[eid]
                if e.slot == t.slot and e.node in eq_committed:
                    return "U1"
        committed = ctx.registry.committed_ids(sigma)
        for cid in self.dag.missing_of(bid):
            c = u[cid]
            if c.slot <= t.slot - 1 and cid not in committed:
                if u.reach_number(cid, bid) < t.round - 1:
                    return "U3"
        if not ctx.validity.cone_valid(bid):
            return "U2"
        return None

    def _note_accepted(self, bid: BlockId) -> None:
        """Queue an accusation once an equivocation proof pair is in hand."""
        eq = self.eq.eq
        for author, pair in eq.proofs.items():
            if author not in self._accused:
                self._accused.add(author)
                self.pending_accusations.append(pair)

    def _note_dag_additions(self, new_ids) -> None:
        for bid in new_ids:
            for inst in self.ctx.payments.instances_of_block(bid):
                self._instances.append(inst)
                self.seen_txids.add(inst[0])

    # chain switching -----------------------------------------------------

    def _count_last_round(self, t: Timestamp) -> tuple[int, int]:
        """Nodes with a block at the last round of the previous slot, and
        how many of those carry this node's digest."""
        u = self.ctx.universe
        want = Timestamp(t.slot - 1, self.ctx.f + 2)
        sigma = self.current_commit()
        total = same = 0
        for node in range(self.ctx.n):
            if node in self.eq.eq.flagged:
                continue
            bid = self.buffer.last_block_from(node)
            if bid is None or u[bid].time != want:
                continue
            total += 1
            if u[bid].digest == sigma:
                same += 1
        return same, total

    def check_elss(self, t: Timestamp) -> None:
        """Two digests for the slot before last, each with f+1 backers,
        cannot happen in the sleepy model; remember the evidence."""
        if self.i_elss:
            return
        u = self.ctx.universe
        want = Timestamp(t.slot - 2, self.ctx.f + 2)
        if want.slot < 1:
            return
        counts: dict[SlotDigest, int] = {}
        for bid in self.buffer.by_time.get(want, ()):
            d = u[bid].digest
            counts[d] = counts.get(d, 0) + 1
        heavy = [d for d, c in counts.items() if c >= self.ctx.f + 1]
        if len(heavy) >= 2:
            self._set_elss(t)

    def _set_elss(self, t: Timestamp) -> None:
        if not self.i_elss:
            self.i_elss = True
            self.ctx.trace.emit("elss-flag", r=self.ctx.rix(t), node=self.id)

    def switch_chain(self, t: Timestamp, leader: Optional[int]) -> None:
        ctx = self.ctx
        u = ctx.universe
        n_same, n_total = self._count_last_round(t)
        self.check_elss(t)
        if self.finality.s_final == t.slot - 3 or leader is None:
            return
        b_leader = self.buffer.last_block_from(leader)
        if b_leader is None or not self.buffer.complete(b_leader):
            return
        if not ctx.validity.cone_valid(b_leader):
            return
        leader_digest = u[b_leader].digest
        if leader_digest != ZERO_DIGEST and leader_digest not in ctx.registry:
            return
        dc_leader = last_commit_certificate(u, ctx.certs, b_leader)
        dc_own = last_commit_certificate(u, ctx.certs, self.b_own)
        own_digest = u[self.b_own].digest
        if ctx.registry.is_conflict(dc_leader.digest, own_digest):
            self._set_elss(t)
        if 2 * n_same <= n_total:
            if (not ctx.registry.is_conflict(leader_digest, dc_own.digest)
                    or dc_leader.slot >= dc_own.slot):
                self._adopt(t, b_leader, leader)
        else:
            if self.i_elss and dc_leader.slot >= dc_own.slot:
                self._adopt(t, b_leader, leader)

    def _adopt(self, t: Timestamp, b_leader: BlockId, leader: int) -> None:
        ctx = self.ctx
        digest = ctx.universe[b_leader].digest
        switched = digest != self.current_commit()
        added = self.dag.add_cone(b_leader)
        self._note_dag_additions(added)
        self.chain = list(ctx.registry.chain_of(digest))
        self.order_own = ctx.registry.order_of(digest)
        if switched:
            ctx.trace.emit("chain-switch", r=ctx.rix(t), node=self.id, leader=leader,
                           digest=digest.value.hex(), dslot=digest.slot)

    def wake_up_chain(self, t: Timestamp) -> None:
        """Rejoin after sleeping: adopt the most frequent digest of the last
        round of the previous slot and merge every valid cone carrying it."""
        ctx = self.ctx
        u = ctx.universe
        want = Timestamp(t.slot - 1, ctx.f + 2)
        counts: dict[SlotDigest, int] = {}
        carriers: dict[SlotDigest, list[BlockId]] = {}
        for node in range(ctx.n):
            if node in self.eq.eq.flagged:
                continue
            bid = self.buffer.last_block_from(node)
            if bid is None or u[bid].time != want:
                continue
            d = u[bid].digest
            counts[d] = counts.get(d, 0) + 1
            carriers.setdefault(d, []).append(bid)
        if not counts:
            ctx.trace.emit("chain-wake", r=ctx.rix(t), node=self.id, digest=None)
            return
        top = max(counts.values())
        # Ties break toward the lowest digest bytes.
        digest = sorted((d for d, c in counts.items() if c == top),
                        key=lambda d: d.value)[0]
        usable = [b for b in carriers[digest]
                  if self.buffer.complete(b) and ctx.validity.cone_valid(b)]
        if digest != ZERO_DIGEST and digest not in ctx.registry:
            ctx.trace.emit("chain-wake", r=ctx.rix(t), node=self.id, digest=None)
            return
        for bid in usable:
            added = self.dag.add_cone(bid)
            self._note_dag_additions(added)
        self.chain = list(ctx.registry.chain_of(digest))
        self.order_own = ctx.registry.order_of(digest)
        ctx.trace.emit("chain-wake", r=ctx.rix(t), node=self.id,
                       digest=digest.value.hex(), dslot=digest.slot)

    # chain extension ------------------------------------------------------

    def update_chain(self, t: Timestamp) -> None:
        ctx = self.ctx
        parent = self.current_commit()
        digest = ctx.registry.compute(parent, self.dag.ids, t.slot - 1)
        self.chain.append(digest)
        self.order_own = ctx.registry.order_of(digest)
        ctx.trace.emit("chain-extend", r=ctx.rix(t), node=self.id, slot=t.slot - 1,
                       digest=digest.value.hex())

    # confirmation ---------------------------------------------------------

    def confirm_transactions(self, t: Timestamp) -> None:
        pay = self.ctx.payments
        for inst in self._instances:
            if inst in self._confirmed_fast:
                continue
            txid, bid = inst
            if txid in self.ledger:
                self._confirmed_fast.add(inst)
                continue
            if pay.fast_confirmed(txid, bid, self.dag.ids):
                self._confirmed_fast.add(inst)
                self.ledger.add(pay.txs[txid])
                self.ctx.trace.emit("confirm", r=self.ctx.rix(t), node=self.id,
                                    tx=txid.hex(), path="fast")

    def finalize_slots(self, t: Timestamp) -> None:
        ctx = self.ctx
        u = ctx.universe
        fin = self.finality
        for slot in range(fin.s_final + 3, t.slot + 1):
            target = self.chain_digest(slot - 2)
            if target is None:
                continue
            authors = set()
            for bid in self.dag.slot_ids(slot):
                if ctx.certs.commit_of(bid) == target:
                    authors.add(u[bid].node)
            if len(authors) < ctx.quorum:
                continue
            fin.s_final = slot - 2
            self.order_final = ctx.registry.order_of(target)
            ctx.trace.emit("finalize", r=ctx.rix(t), node=self.id, slot=slot - 2,
                           digest=target.value.hex())
            tau = self._finality_time(fin.s_pre + 1)
            while tau is not None:
                sigma = self.chain_digest(tau)
                fin.s_pre = self._last_final_in(ctx.registry.committed_ids(sigma))
                for s in range(len(fin.finality_times) + 1, fin.s_pre + 1):
                    fin.finality_times[s] = tau
                    ctx.trace.emit("final-time", r=ctx.rix(t), node=self.id,
                                   slot=s, tau=tau)
                self.finalize_transactions(t, tau)
                tau = self._finality_time(fin.s_pre + 1)

    def _finality_time(self, slot: int) -> Optional[int]:
        """First own-chain slot whose committed DAG holds a certificate
        quorum for the slot's digest; None while undetermined."""
        if slot < 1:
            return None
        target = self.chain_digest(slot)
        if target is None:
            return None
        for tau in range(slot + 2, self.finality.s_final + 1):
            sigma = self.chain_digest(tau)
            if sigma is None:
                break
            if self._final_within(target, self.ctx.registry.committed_ids(sigma)):
                return tau
        return None

    def _final_within(self, target: SlotDigest, view) -> bool:
        ctx = self.ctx
        authors = set()
        for bid in ctx.universe.by_slot.get(target.slot + 2, ()):
            if bid in view and ctx.certs.commit_of(bid) == target:
                authors.add(ctx.universe[bid].node)
        return len(authors) >= ctx.quorum

    def _last_final_in(self, view) -> int:
        # s_pre never decreases, so resume the scan from its current value.
        best = self.finality.s_pre
        slot = best + 1
        while True:
            target = self.chain_digest(slot)
            if target is None:
                break
            if self._final_within(target, view):
                best = slot
            slot += 1
        return best

    def finalize_transactions(self, t: Timestamp, tau: int) -> None:
        """Consensus path for the partition at finality time ``tau``.

        First confirm certified transactions among blocks committed at
        ``tau`` and created at most at ``tau - 2``; then sweep the total
        order of the DAG committed two slots earlier for the rest. Both
        passes re-check the two ledger properties before inserting.
        """
        ctx = self.ctx
        u = ctx.universe
        pay = ctx.payments
        sigma_tau = self.chain_digest(tau)
        view = ctx.registry.committed_ids(sigma_tau)
        for bid in ctx.registry.order_of(sigma_tau):
            if bid in self.proc_txcert or u[bid].slot > tau - 2:
                continue
            self.proc_txcert.add(bid)
            for tx in u[bid].txs:
                if tx.txid in self.ledger:
                    continue
                if not pay.has_certificate_in(tx.txid, bid, view):
                    continue
                if self.ledger.has_inputs(tx) and not self.ledger.conflicts(tx):
                    self.ledger.add(tx)
                    ctx.trace.emit("confirm", r=ctx.rix(t), node=self.id,
                                   tx=tx.txid.hex(), path="consensus-1")
        sigma_prev = self.chain_digest(tau - 2)
        if sigma_prev is None:
            return
        for bid in ctx.registry.order_of(sigma_prev):
            if bid in self.proc_totalorder:
                continue
            self.proc_totalorder.add(bid)
            for tx in u[bid].txs:
                if tx.txid in self.ledger:
                    continue
                if self.ledger.has_inputs(tx) and not self.ledger.conflicts(tx):
                    self.ledger.add(tx)
                    ctx.trace.emit("confirm", r=ctx.rix(t), node=self.id,
                                   tx=tx.txid.hex(), path="consensus-2")

    # block creation and broadcast ------------------------------------------

    def payload(self) -> tuple[UtxoTx, ...]:
        out = []
        kept = []
        for tx in self.mempool:
            if tx.txid in self.seen_txids:
                continue
            if len(out) < self.ctx.tx_cap:
                out.append(tx)
            else:
                kept.append(tx)
        self.mempool = kept
        return tuple(out)

    def create_block(self, t: Timestamp) -> BlockId:
        ctx = self.ctx
        accusations = tuple(self.pending_accusations[:4])
        self.pending_accusations = self.pending_accusations[len(accusations):]
        draft = Block(tuple(self.dag.tips()), self.current_commit(),
                      self.payload(), t, self.id, accusations)
        block = sealed(Block(draft.refs, draft.digest, draft.txs, draft.time,
                             draft.node, draft.accusations,
                             ctx.auth.sign_node(self.id, signing_bytes(draft))))
        bid = ctx.universe.add(block)
        ctx.payments.register_block(bid)
        self.buffer.add(bid)
        self.eq.observe(bid)
        self.dag.add_block(bid)
        self._note_dag_additions([bid])
        self.b_own = bid
        self.history[self.id] |= ctx.universe.cone(bid)
        ctx.trace.emit("block", r=ctx.rix(t), node=self.id, id=bid.hex(),
                       slot=t.slot, i=t.round,
                       digest=block.digest.value.hex(),
                       txs=[tx.txid.hex() for tx in block.txs])
        return bid

    def broadcast_bundle(self, bid: BlockId) -> OutboundBundle:
        u = self.ctx.universe
        cone = u.cone(bid)
        per = {}
        for other in range(self.ctx.n):
            if other == self.id:
                continue
            missing = cone - self.history[other]
            per[other] = sorted(missing, key=lambda b: (u[b].time, u[b].node, b))
            if self.send_history_updates:
                self.history[other] |= cone
        return OutboundBundle(self.id, per)
