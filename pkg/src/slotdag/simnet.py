"""Deterministic round-driven engine: delivery models, sleep, leader oracle.

Delivery models:
  lockstep      every message sent in round r arrives in round r+1
  elss          before a global stabilization round messages between correct
                nodes may be delayed (default policy: maximal delay across a
                configured partition); everything outstanding arrives in the
                stabilization round's receive phase; lock-step afterwards
  ss            lock-step, but per-slot sleep: a message whose delivery round
                falls in a slot where the recipient sleeps is dropped (the
                wake-up rule reconstructs state from majority digests)

Nodes are stepped sequentially in id order; inboxes for a round are drawn
from the schedule before any node steps, which reproduces the lock-step
phase structure exactly. Identical scenario and seed give a bit-identical
trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .blocks import Timestamp, make_genesis, round_index
from .crypto import Authenticator, HASH_ALGO, SIG_ALGO, hash_bytes, prng_uniform
from .dag import BlockUniverse
from .digests import CertificateCache, DigestRegistry
from .node import Node, OutboundBundle, RunContext
from .payments import PaymentsOracle
from .trace import Trace
from .utxo import genesis_transaction
from .validity import ValidityChecker

SCHEMA_VERSION = 1


class ScenarioError(Exception):
    pass


@dataclass
class Scenario:
    name: str
    n: int
    f: int
    model: str  # lockstep | elss | ss
    horizon_slots: int
    seed: int = 0
    gst_slot: int = 1
    leader_mode: str = "coin"  # coin | bot | coin_after_gst
    sleep: dict = field(default_factory=dict)
    byzantine: list = field(default_factory=list)
    network: dict = field(default_factory=dict)
    workload: list = field(default_factory=list)
    accounts: int = 0
    tx_cap: int = 8
    validate_every_round: bool = True

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        raw = dict(raw)
        raw.pop("schema_version", None)
        sc = cls(**raw)
        sc.validate()
        return sc

    @classmethod
    def load(cls, path: str) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION}
        d.update({k: getattr(self, k) for k in (
            "name", "n", "f", "model", "horizon_slots", "seed", "gst_slot",
            "leader_mode", "sleep", "byzantine", "network", "workload",
            "accounts", "tx_cap", "validate_every_round")})
        return d

    def validate(self) -> None:
        if self.model not in ("lockstep", "elss", "ss"):
            raise ScenarioError(f"unknown model {self.model}")
        if self.n < 1 or self.f < 0:
            raise ScenarioError("need n >= 1, f >= 0")
        if self.model == "elss" and self.n < 3 * self.f + 1:
            raise ScenarioError("elss needs n >= 3f+1")
        if self.horizon_slots < 1:
            raise ScenarioError("empty horizon")
        byz = {b["node"] for b in self.byzantine}
        if len(byz) > self.f:
            raise ScenarioError("more byzantine nodes than f")
        if self.model != "elss" and self.gst_slot != 1:
            raise ScenarioError("gst applies to the elss model only")

    def byzantine_ids(self) -> set[int]:
        return {b["node"] for b in self.byzantine}


class SleepSchedule:
    """Per-slot awake map; validated so correct awake outnumber byzantine."""

    def __init__(self, scenario: Scenario, seed_key: bytes):
        self.awake: dict[int, set[int]] = {}
        byz = scenario.byzantine_ids()
        correct = [i for i in range(scenario.n) if i not in byz]
        kind = scenario.sleep.get("kind", "all-awake") if scenario.model == "ss" else "all-awake"
        for slot in range(1, scenario.horizon_slots + 1):
            if kind == "all-awake":
                self.awake[slot] = set(range(scenario.n))
            elif kind == "given":
                self.awake[slot] = set(scenario.sleep["awake"][str(slot)])
            elif kind == "random":
                p = scenario.sleep.get("p_awake", 0.75)
                self.awake[slot] = self._random_slot(scenario, seed_key, slot, p, correct, byz)
            elif kind == "adversarial":
                self.awake[slot] = self._adversarial_slot(scenario, slot, correct, byz)
            else:
                raise ScenarioError(f"unknown sleep kind {kind}")
            if scenario.model == "ss":
                aw = self.awake[slot]
                if not len(aw & set(correct)) > len(aw & byz):
                    raise ScenarioError(f"slot {slot}: awake correct do not outnumber awake byzantine")

    def _random_slot(self, sc, key, slot, p, correct, byz):
        for attempt in range(64):
            awake = set()
            for i in range(sc.n):
                draw = prng_uniform(key, b"sleep", slot * 1024 + i * 16 + attempt, 1000)
                if draw < int(p * 1000):
                    awake.add(i)
            if len(awake & set(correct)) > len(awake & byz) and awake & set(correct):
                return awake
        return set(correct) | byz

    def _adversarial_slot(self, sc, slot, correct, byz):
        # All byzantine awake; the largest allowed set of correct nodes
        # sleeps, rotating so every node sleeps regularly.
        awake = set(byz)
        max_asleep = max(0, len(correct) - len(byz) - 1)
        asleep = {correct[(slot + k) % len(correct)] for k in range(max_asleep)}
        awake |= set(correct) - asleep
        return awake

    def is_awake(self, slot: int, node: int) -> bool:
        return node in self.awake.get(slot, set())

    def to_header(self) -> dict:
        return {str(s): sorted(v) for s, v in self.awake.items()}


class LeaderOracle:
    def __init__(self, scenario: Scenario, seed_key: bytes):
        self.mode = scenario.leader_mode
        self.n = scenario.n
        self.gst_slot = scenario.gst_slot if scenario.model == "elss" else 1
        self.key = seed_key

    def leader(self, slot: int) -> Optional[int]:
        if self.mode == "bot":
            return None
        if self.mode == "coin_after_gst" and slot <= self.gst_slot:
            return None
        return prng_uniform(self.key, b"leader", slot, self.n)


class Network:
    """Message schedule keyed by delivery round."""

    def __init__(self, scenario: Scenario, schedule: SleepSchedule, trace: Trace, f: int):
        self.sc = scenario
        self.schedule = schedule
        self.trace = trace
        self.f = f
        self.queue: dict[int, list[tuple[int, int, bytes]]] = {}
        self.gst_round = round_index(Timestamp(scenario.gst_slot, 1), f)
        part = scenario.network.get("pregst_partition")
        self.partition = None
        if part:
            self.partition = {}
            for gi, group in enumerate(part):
                for node in group:
                    self.partition[node] = gi

    def _delay_across_partition(self, sender: int, recipient: int) -> bool:
        if self.partition is None:
            return False
        gs = self.partition.get(sender)
        gr = self.partition.get(recipient)
        return gs is not None and gr is not None and gs != gr

    def send(self, send_round: int, sender: int, recipient: int, bid: bytes) -> None:
        if self.sc.model == "elss" and send_round < self.gst_round:
            if self._delay_across_partition(sender, recipient):
                deliver = self.gst_round
            else:
                deliver = send_round + 1
        else:
            deliver = send_round + 1
        self.queue.setdefault(deliver, []).append((sender, recipient, bid))

    def deliveries(self, t: Timestamp) -> dict[int, list[bytes]]:
        r = round_index(t, self.f)
        out: dict[int, list[bytes]] = {}
        for sender, recipient, bid in self.queue.pop(r, []):
            if self.sc.model == "ss" and not self.schedule.is_awake(t.slot, recipient):
                self.trace.emit("net-drop", r=r, node=recipient, id=bid.hex(),
                                reason="asleep")
                continue
            out.setdefault(recipient, []).append(bid)
        return out


class Engine:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        from .adversary import ByzantineNode, Workload  # local: avoids a cycle

        self.sc = scenario
        if seed is not None:
            self.sc.seed = seed
        self.seed_key = hash_bytes(f"run:{self.sc.name}:{self.sc.seed}".encode())
        sc = self.sc

        accounts = max(sc.accounts, 1)
        self.auth = Authenticator(self.seed_key, sc.n, accounts)
        self.genesis_tx = genesis_transaction(accounts)
        genesis = make_genesis(self.genesis_tx, sc.f)
        self.universe = BlockUniverse(genesis, sc.f)
        self.trace = Trace({
            "schema_version": SCHEMA_VERSION,
            "scenario": sc.to_dict(),
            "seed": sc.seed,
            "algos": {"hash": HASH_ALGO, "sig": SIG_ALGO, "prng": "sha256-counter"},
            "genesis": genesis.id.hex(),
            "genesis_tx": self.genesis_tx.txid.hex(),
        })
        self.registry = DigestRegistry(self.universe, on_register=self._emit_digest)
        self.validity = ValidityChecker(self.universe, self.registry, sc.f)
        self.certs = CertificateCache(self.universe, self.registry, sc.f)
        self.payments = PaymentsOracle(self.universe, sc.f, self.genesis_tx.txid)
        self.payments.register_block(genesis.id)
        self.ctx = RunContext(sc.n, sc.f, self.universe, self.registry,
                              self.validity, self.certs, self.payments,
                              self.auth, self.trace, self.genesis_tx, sc.tx_cap)
        self.schedule = SleepSchedule(sc, self.seed_key)
        self.trace.header["awake"] = self.schedule.to_header()
        self.trace.header["byzantine"] = sorted(sc.byzantine_ids())
        self.leader_oracle = LeaderOracle(sc, self.seed_key)
        self.net = Network(sc, self.schedule, self.trace, sc.f)

        byz_specs = {b["node"]: b for b in sc.byzantine}
        self.nodes: dict[int, object] = {}
        for i in range(sc.n):
            honest = Node(i, self.ctx)
            # Send-time history updates assume the recipient eventually
            # receives the bundle, which sleep-dropping breaks.
            honest.send_history_updates = sc.model != "ss"
            if i in byz_specs:
                self.nodes[i] = ByzantineNode(honest, byz_specs[i], self)
            else:
                self.nodes[i] = honest
        self.workload = Workload(self)

    def _emit_digest(self, digest, parent, new_blocks) -> None:
        self.trace.emit("digest", digest=digest.value.hex(), slot=digest.slot,
                        parent=parent.value.hex(),
                        blocks=[b.hex() for b in new_blocks])

    def publish(self, block) -> bytes:
        """Insert a freshly created block into the shared universe."""
        bid = self.universe.add(block)
        self.payments.register_block(bid)
        return bid

    def run(self) -> Trace:
        sc = self.sc
        for slot in range(1, sc.horizon_slots + 1):
            for i in range(1, sc.f + 3):
                t = Timestamp(slot, i)
                r = round_index(t, sc.f)
                inboxes = self.net.deliveries(t)
                self.workload.inject(t)
                leader = self.leader_oracle.leader(slot) if i == 1 else None
                for node_id in range(sc.n):
                    if sc.model == "ss" and not self.schedule.is_awake(slot, node_id):
                        continue
                    node = self.nodes[node_id]
                    inbox = inboxes.get(node_id, [])
                    bundles = node.step(t, inbox, leader)
                    if isinstance(bundles, OutboundBundle):
                        bundles = [bundles]
                    sent_bytes = 0
                    for bundle in bundles:
                        for recipient, ids in sorted(bundle.per_recipient.items()):
                            for bid in ids:
                                self.net.send(r, node_id, recipient, bid)
                                sent_bytes += len(self.universe[bid].refs) * 32 + 200
                    self.trace.emit("sent", r=r, node=node_id, bytes=sent_bytes)
                    if sc.validate_every_round and not self._is_byzantine(node_id):
                        self._assert_valid_own_cone(node, t)
            self.workload.end_of_slot(slot)
        self._emit_final_state()
        return self.trace

    def _is_byzantine(self, node_id: int) -> bool:
        return node_id in self.sc.byzantine_ids()

    def _assert_valid_own_cone(self, node: Node, t: Timestamp) -> None:
        ok = self.validity.cone_valid(node.b_own)
        cone = self.universe.cone(node.b_own)
        if ok and len(node.dag.ids) != len(cone):
            ok = False
        self.trace.emit("own-cone-valid", r=round_index(t, self.sc.f),
                        node=node.id, ok=ok)
        if not ok:
            v = self.validity.first_cone_violation(node.b_own)
            raise AssertionError(
                f"node {node.id} holds an invalid DAG at {t}: {v}")

    def _emit_final_state(self) -> None:
        for node_id in range(self.sc.n):
            if self._is_byzantine(node_id):
                continue
            node = self.nodes[node_id]
            self.trace.emit("ledger-snapshot", node=node_id,
                            txs=node.ledger.snapshot())
            self.trace.emit("final-order", node=node_id,
                            digest=len(node.order_final),
                            blocks=[b.hex() for b in node.order_final])


def run_scenario(scenario: Scenario, seed: Optional[int] = None) -> Trace:
    return Engine(scenario, seed).run()
