"""Byzantine node strategies and malicious clients.

Byzantine nodes run arbitrary code over their own state and inbox but route
every message through the engine's network and cannot forge other nodes'
signatures. Strategies:

  crash       stop emitting anything from a configured round
  withhold    send only to a subset during configured slots
  selective   drop configured recipients during configured slots
  equivocate  emit a second, different block at the same timestamp and show
              each variant to a different group
  split_brain run two full protocol states fed by disjoint sender groups and
              show each group its own face (covers digest splitting: the two
              faces adopt and propose different digests)

Clients: a cautious client releases a payment only once a tracked correct
node has confirmed its inputs; a double spender releases two transactions
over one output to disjoint node groups; a split broadcaster releases one
half widely and the other to a single node later.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .blocks import Block, BlockId, Timestamp, round_index, sealed, signing_bytes
from .node import Node, OutboundBundle
from .utxo import UtxoTx, make_tx


class ByzantineNode:
    def __init__(self, inner: Node, spec: dict, engine):
        self.inner = inner
        self.spec = spec
        self.engine = engine
        self.id = inner.id
        self.kind = spec["kind"]
        inner.send_history_updates = False
        self.inner_b: Optional[Node] = None
        if self.kind == "split_brain":
            self.inner_b = Node(inner.id, inner.ctx)
            self.inner_b.send_history_updates = False

    @property
    def mempool(self):
        return self.inner.mempool

    @property
    def b_own(self):
        return self.inner.b_own

    @property
    def ledger(self):
        return self.inner.ledger

    @property
    def order_final(self):
        return self.inner.order_final

    def step(self, t: Timestamp, inbox: list[BlockId], leader):
        f = self.inner.ctx.f
        r = round_index(t, f)
        if self.kind == "crash":
            start = self.spec.get("from_slot", 1)
            if t.slot >= start:
                return []
            return [self.inner.step(t, inbox, leader)]
        if self.kind == "withhold":
            bundle = self.inner.step(t, inbox, leader)
            if t.slot in self.spec.get("slots", []) or not self.spec.get("slots"):
                keep = set(self.spec["targets"])
                bundle.per_recipient = {k: v for k, v in bundle.per_recipient.items()
                                        if k in keep}
            return [bundle]
        if self.kind == "selective":
            bundle = self.inner.step(t, inbox, leader)
            if t.slot in self.spec.get("slots", []) or not self.spec.get("slots"):
                drop = set(self.spec.get("drop_to", []))
                bundle.per_recipient = {k: v for k, v in bundle.per_recipient.items()
                                        if k not in drop}
            return [bundle]
        if self.kind == "equivocate":
            return self._step_equivocate(t, inbox, leader)
        if self.kind == "split_brain":
            return self._step_split_brain(t, inbox, leader)
        raise ValueError(f"unknown strategy {self.kind}")

    # -- equivocation: a ref-dropped twin of the honest block ----------------

    def _step_equivocate(self, t: Timestamp, inbox, leader):
        ctx = self.inner.ctx
        bundle = self.inner.step(t, inbox, leader)
        active = t.slot in self.spec.get("slots", []) and t.round == self.spec.get("round", 2)
        base = ctx.universe[self.inner.b_own]
        if not active or len(base.refs) < 2:
            return [bundle]
        twin_refs = tuple(sorted(base.refs)[:-1])
        twin = sealed(Block(twin_refs, base.digest, base.txs, base.time,
                            self.id, base.accusations,
                            ctx.auth.sign_node(self.id, signing_bytes(
                                Block(twin_refs, base.digest, base.txs,
                                      base.time, self.id, base.accusations)))))
        twin_id = self.engine.publish(twin)
        # The node must be able to complete cones that reference its own
        # twin, so the twin goes into its buffer (not its DAG or chain).
        self.inner.buffer.add(twin_id)
        ctx.trace.emit("byz-equivocate", r=round_index(t, ctx.f), node=self.id,
                       a=base.id.hex(), b=twin_id.hex())
        groups = self.spec.get("groups")
        group_b = set(groups[1]) if groups else {k for k in bundle.per_recipient if k % 2}
        cone_b = ctx.universe.cone(twin_id)
        for recipient in list(bundle.per_recipient):
            if recipient in group_b:
                known = self.inner.history[recipient]
                bundle.per_recipient[recipient] = sorted(
                    cone_b - known,
                    key=lambda b: (ctx.universe[b].time, ctx.universe[b].node, b))
        return [bundle]

    # -- split brain: two protocol states, one per audience ------------------

    def _step_split_brain(self, t: Timestamp, inbox, leader):
        ctx = self.inner.ctx
        feed_a, feed_b = self.spec["feed"]
        inbox_a = [b for b in inbox if ctx.universe[b].node in feed_a]
        inbox_b = [b for b in inbox if ctx.universe[b].node in feed_b]
        bundle_a = self.inner.step(t, inbox_a, leader)
        bundle_b = self.inner_b.step(t, inbox_b, leader)
        group_a, group_b = self.spec["groups"]
        bundle_a.per_recipient = {k: v for k, v in bundle_a.per_recipient.items()
                                  if k in group_a}
        bundle_b.per_recipient = {k: v for k, v in bundle_b.per_recipient.items()
                                  if k in group_b}
        return [bundle_a, bundle_b]


@dataclass
class ReleasedTx:
    tx: UtxoTx
    group: str


class Workload:
    """Drives client transaction release between rounds."""

    def __init__(self, engine):
        self.engine = engine
        self.clients = []
        for idx, spec in enumerate(engine.sc.workload):
            kind = spec["kind"]
            if kind == "cautious":
                self.clients.append(CautiousClient(idx, spec, engine))
            elif kind == "double_spender":
                self.clients.append(DoubleSpender(idx, spec, engine))
            elif kind == "split_broadcast":
                self.clients.append(SplitBroadcaster(idx, spec, engine))
            else:
                raise ValueError(f"unknown client kind {kind}")

    def inject(self, t: Timestamp) -> None:
        for client in self.clients:
            client.inject(t)

    def end_of_slot(self, slot: int) -> None:
        pass


def _push(engine, node_ids, tx: UtxoTx) -> None:
    for nid in node_ids:
        engine.nodes[nid].mempool.append(tx)


def _emit_release(engine, t, client_id, tx: UtxoTx, targets, group) -> None:
    engine.trace.emit("tx-released", r=round_index(t, engine.sc.f),
                      client=client_id, tx=tx.txid.hex(),
                      inputs=[f"{i[0].hex()}:{i[1]}" for i in tx.inputs],
                      targets=sorted(targets), group=group)


class CautiousClient:
    """Chain of payments; each spends the change of the previous one and is
    released only after the tracked node confirms the inputs."""

    def __init__(self, client_id: int, spec: dict, engine):
        self.id = client_id
        self.engine = engine
        self.account = spec["account"]
        self.payments = spec["payments"]
        self.targets = spec.get("nodes", [self.account % engine.sc.n])
        self.track = spec.get("track", 0)
        self.start_round = spec.get("start_round", 1)
        self.position = 0
        self.waiting: Optional[bytes] = None
        self.current_input = (engine.genesis_tx.txid, self.account)
        self.current_value = engine.genesis_tx.outputs[self.account][0]

    def inject(self, t: Timestamp) -> None:
        eng = self.engine
        if self.position >= len(self.payments):
            return
        tracked = eng.nodes[self.track].ledger
        if self.waiting is not None:
            if self.waiting in tracked.confirmed:
                self.waiting = None
                self.position += 1
            return
        if round_index(t, eng.sc.f) < self.start_round:
            return
        if self.current_input[0] not in tracked.confirmed:
            return
        pay = self.payments[self.position]
        change = self.current_value - pay["value"]
        outputs = [(pay["value"], pay["to"])]
        if change > 0:
            outputs.append((change, self.account))
        tx = make_tx(eng.auth, self.account, [self.current_input], outputs)
        _push(eng, self.targets, tx)
        _emit_release(eng, t, self.id, tx, self.targets, f"cautious-{self.id}")
        self.waiting = tx.txid
        if change > 0:
            self.current_input = (tx.txid, 1)
            self.current_value = change
        else:
            self.position = len(self.payments)  # nothing left to spend


class DoubleSpender:
    """Two transactions over one output, each shown to its own node group."""

    def __init__(self, client_id: int, spec: dict, engine):
        self.id = client_id
        self.engine = engine
        self.account = spec["account"]
        self.release_round = spec["release_round"]
        self.targets_a = spec["targets_a"]
        self.targets_b = spec["targets_b"]
        self.pay_to = spec.get("pay_to", [self.account, (self.account + 1) % max(engine.sc.accounts, 1)])
        self.done = False

    def inject(self, t: Timestamp) -> None:
        eng = self.engine
        if self.done or round_index(t, eng.sc.f) < self.release_round:
            return
        self.done = True
        inp = (eng.genesis_tx.txid, self.account)
        value = eng.genesis_tx.outputs[self.account][0]
        tx_a = make_tx(eng.auth, self.account, [inp], [(value, self.pay_to[0])])
        tx_b = make_tx(eng.auth, self.account, [inp], [(value, self.pay_to[1])])
        _push(eng, self.targets_a, tx_a)
        _push(eng, self.targets_b, tx_b)
        group = f"conflict-{self.id}"
        _emit_release(eng, t, self.id, tx_a, self.targets_a, group)
        _emit_release(eng, t, self.id, tx_b, self.targets_b, group)


class SplitBroadcaster:
    """One half released widely, the conflicting half to one node, later."""

    def __init__(self, client_id: int, spec: dict, engine):
        self.id = client_id
        self.engine = engine
        self.account = spec["account"]
        self.release_round = spec["release_round"]
        self.wide = spec.get("wide", list(range(engine.sc.n)))
        self.narrow = spec.get("narrow", [engine.sc.n - 1])
        self.delay = spec.get("delay_rounds", 2)
        self.stage = 0
        self.pair: list[UtxoTx] = []

    def inject(self, t: Timestamp) -> None:
        eng = self.engine
        r = round_index(t, eng.sc.f)
        if self.stage == 0 and r >= self.release_round:
            inp = (eng.genesis_tx.txid, self.account)
            value = eng.genesis_tx.outputs[self.account][0]
            self.pair = [
                make_tx(eng.auth, self.account, [inp], [(value, self.account)]),
                make_tx(eng.auth, self.account, [inp],
                        [(value, (self.account + 1) % max(eng.sc.accounts, 1))]),
            ]
            _push(eng, self.wide, self.pair[0])
            _emit_release(eng, t, self.id, self.pair[0], self.wide, f"conflict-{self.id}")
            self.stage = 1
        elif self.stage == 1 and r >= self.release_round + self.delay:
            _push(eng, self.narrow, self.pair[1])
            _emit_release(eng, t, self.id, self.pair[1], self.narrow, f"conflict-{self.id}")
            self.stage = 2
