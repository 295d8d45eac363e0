"""Property checkers: pure functions of a recorded trace.

Each checker reconstructs what it needs from events (digest registrations,
per-slot chain adoptions, block creations, finalizations, confirmations,
ledger snapshots) and returns a PropertyReport carrying pass/fail, the first
violation with a minimal reproducer (scenario, seed, round), and metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .trace import Trace


@dataclass
class PropertyReport:
    name: str
    passed: bool
    detail: str = ""
    first_violation: Optional[dict] = None
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail,
                "first_violation": self.first_violation, "metrics": self.metrics}


class TraceView:
    """Indexes over a trace shared by the checkers."""

    def __init__(self, trace: Trace):
        self.trace = trace
        h = trace.header
        self.scenario = h["scenario"]
        self.n = self.scenario["n"]
        self.f = self.scenario["f"]
        self.model = self.scenario["model"]
        self.gst_slot = self.scenario.get("gst_slot", 1)
        self.horizon = self.scenario["horizon_slots"]
        self.seed = h["seed"]
        self.byzantine = set(h.get("byzantine", []))
        self.correct = [i for i in range(self.n) if i not in self.byzantine]
        self.awake = {int(s): set(v) for s, v in h.get("awake", {}).items()}
        self.genesis = h["genesis"]
        # digest value (hex) -> (slot, parent hex, new block hexes)
        self.digests: dict[str, tuple[int, str, list[str]]] = {}
        zero = "00" * 32
        self.digests[zero] = (-1, zero, [])
        self._orders: dict[str, tuple[str, ...]] = {zero: ()}
        for e in trace.select("digest"):
            self.digests[e["digest"]] = (e["slot"], e["parent"], e["blocks"])
        self.adopts: dict[tuple[int, int], str] = {}
        for e in trace.select("adopt"):
            self.adopts[(e["slot"], e["node"])] = e["digest"]
        self.extends: dict[tuple[int, int], str] = {}
        for e in trace.select("chain-extend"):
            self.extends[(e["slot"], e["node"])] = e["digest"]
        self.blocks = trace.select("block")
        self.finalizes = trace.select("finalize")
        self.confirms = trace.select("confirm")
        self.releases = trace.select("tx-released")
        self.snapshots = {e["node"]: set(e["txs"])
                          for e in trace.select("ledger-snapshot")}

    def order_of(self, digest_hex: str) -> tuple[str, ...]:
        got = self._orders.get(digest_hex)
        if got is None:
            if digest_hex not in self.digests:
                raise KeyError(f"digest {digest_hex[:12]} never registered in trace")
            _, parent, blocks = self.digests[digest_hex]
            got = (self.order_of(parent) + tuple(blocks) if parent != digest_hex
                   else tuple(blocks))
            self._orders[digest_hex] = got
        return got

    def awake_correct(self, slot: int) -> list[int]:
        nodes = self.awake.get(slot, set(range(self.n)))
        return [i for i in self.correct if i in nodes]

    def rounds_per_slot(self) -> int:
        return self.f + 2

    def round_of(self, slot: int, i: int) -> int:
        return (slot - 1) * (self.f + 2) + i


def _prefix_comparable(a: tuple, b: tuple) -> bool:
    k = min(len(a), len(b))
    return a[:k] == b[:k]


def _fail(name: str, view: TraceView, detail: str, **where) -> PropertyReport:
    where.setdefault("scenario", view.scenario.get("name"))
    where.setdefault("seed", view.seed)
    return PropertyReport(name, False, detail, first_violation=where)


def _own_order_start(view: TraceView) -> Optional[int]:
    """Optimistic-order guarantees hold from slot 1 under synchrony, and only
    after the sync slot in the eventual lock-step model."""
    if view.model != "elss":
        return 1
    return s_same_of(view)


def check_order_own_safety(trace: Trace) -> PropertyReport:
    """Per slot, optimistic orders of awake correct nodes are prefix-related."""
    view = TraceView(trace)
    name = "order-own-safety"
    start = _own_order_start(view)
    if start is None:
        return PropertyReport(name, True, "not applicable: nodes never synchronized")
    for slot in range(start, view.horizon + 1):
        entries = [(n, view.adopts.get((slot, n))) for n in view.awake_correct(slot)]
        entries = [(n, d) for n, d in entries if d is not None]
        for i in range(len(entries)):
            for j in range(i + 1, len(entries)):
                a = view.order_of(entries[i][1])
                b = view.order_of(entries[j][1])
                if not _prefix_comparable(a, b):
                    k = next(x for x in range(min(len(a), len(b))) if a[x] != b[x])
                    return _fail(name, view,
                                 f"orders diverge at position {k} in slot {slot}",
                                 slot=slot, nodes=[entries[i][0], entries[j][0]],
                                 position=k)
    return PropertyReport(name, True, "all per-slot optimistic orders prefix-related")


def check_order_own_liveness(trace: Trace) -> PropertyReport:
    """A correct slot-s block is in the optimistic order every correct node
    adopts when entering slot s+2 (if awake then)."""
    view = TraceView(trace)
    name = "order-own-liveness"
    start = _own_order_start(view)
    if start is None:
        return PropertyReport(name, True, "not applicable: nodes never synchronized")
    misses = 0
    for e in view.blocks:
        node, slot = e["node"], e["slot"]
        if node in view.byzantine or slot < start:
            continue
        target_slot = slot + 2
        if target_slot > view.horizon:
            continue
        for other in view.awake_correct(target_slot):
            d = view.adopts.get((target_slot, other))
            if d is None:
                continue
            if e["id"] not in set(view.order_of(d)):
                return _fail(name, view,
                             f"block by {node} at slot {slot} missing from "
                             f"node {other}'s order entering slot {target_slot}",
                             slot=slot, block=e["id"], node=other)
    return PropertyReport(name, True, "every correct block committed within two slots",
                          metrics={"blocks_checked": len(view.blocks), "misses": misses})


def check_same_end_digest(trace: Trace) -> PropertyReport:
    """Post-stabilization, equal entering digests give equal closing digests."""
    view = TraceView(trace)
    name = "same-end-digest"
    start = view.gst_slot if view.model == "elss" else 1
    checked = 0
    for slot in range(start, view.horizon + 1):
        groups: dict[str, dict[int, str]] = {}
        for node in view.awake_correct(slot):
            entering = view.adopts.get((slot, node))
            closing = view.extends.get((slot, node))
            if entering is None or closing is None:
                continue
            groups.setdefault(entering, {})[node] = closing
        for entering, closing_by_node in groups.items():
            vals = set(closing_by_node.values())
            checked += len(closing_by_node)
            if len(vals) > 1:
                return _fail(name, view,
                             f"equal entering digest, different closing digest in slot {slot}",
                             slot=slot, nodes=sorted(closing_by_node))
    return PropertyReport(name, True, "equal slot entries always closed equal",
                          metrics={"node_slots_checked": checked})


def s_same_of(view: TraceView) -> Optional[int]:
    """First slot at or after stabilization where all correct nodes enter equal."""
    start = view.gst_slot if view.model == "elss" else 1
    for slot in range(start, view.horizon + 1):
        ds = {view.adopts.get((slot, n)) for n in view.correct}
        if None not in ds and len(ds) == 1:
            return slot
    return None


def check_order_final(trace: Trace) -> PropertyReport:
    """Final orders of correct nodes are prefix-related across the whole run;
    after the sync slot a correct slot-s block is final everywhere once round
    (s+2, 2) has passed."""
    view = TraceView(trace)
    name = "order-final"
    longest: Optional[tuple] = None
    where: Optional[dict] = None
    for e in view.finalizes:
        if e["node"] in view.byzantine:
            continue
        order = view.order_of(e["digest"])
        if longest is None or len(order) > len(longest):
            if longest is not None and not _prefix_comparable(order, longest):
                return _fail(name, view, "conflicting final orders",
                             round=e["r"], node=e["node"], prev=where)
            longest, where = order, {"round": e["r"], "node": e["node"]}
        elif not _prefix_comparable(order, longest):
            return _fail(name, view, "conflicting final orders",
                         round=e["r"], node=e["node"], prev=where)
    s_same = s_same_of(view)
    metrics = {"s_same": s_same, "gst_slot": view.gst_slot}
    if view.model == "elss":
        if s_same is None:
            return _fail(name, view, "correct nodes never synchronized")
        metrics["sync_lag"] = s_same - view.gst_slot
    # Liveness: block at slot s final everywhere after round (s+2, 2).
    last_final: dict[int, tuple] = {n: () for n in view.correct}
    final_at: dict[tuple[int, str], int] = {}
    for e in view.finalizes:
        if e["node"] in view.byzantine:
            continue
        for bid in view.order_of(e["digest"]):
            final_at.setdefault((e["node"], bid), e["r"])
    # The latency bound needs every node awake; the sleepy model only
    # promises prefix safety for the final order.
    if s_same is not None and view.model != "ss":
        deadline_miss = None
        for e in view.blocks:
            node, slot = e["node"], e["slot"]
            if node in view.byzantine or slot < s_same:
                continue
            if slot + 2 > view.horizon:
                continue
            deadline = view.round_of(slot + 2, 3)
            for other in view.correct:
                got = final_at.get((other, e["id"]))
                if got is None or got > deadline:
                    deadline_miss = {"block": e["id"], "slot": slot, "node": other,
                                     "finalized_round": got, "deadline": deadline}
                    break
            if deadline_miss:
                return _fail(name, view, "final-order latency exceeded", **deadline_miss)
    return PropertyReport(name, True, "final orders prefix-related; latency bound met",
                          metrics=metrics)


def check_ledger(trace: Trace) -> PropertyReport:
    """No double spend anywhere; fast confirmations reach every ledger;
    cautious transactions confirm three rounds after inclusion once synced;
    uncertified double spends resolve by the consensus path."""
    view = TraceView(trace)
    name = "ledger"
    inputs_of: dict[str, list[str]] = {}
    group_of: dict[str, str] = {}
    for e in view.releases:
        inputs_of[e["tx"]] = e["inputs"]
        group_of[e["tx"]] = e["group"]
    # Safety: intersecting inputs inside one ledger snapshot.
    for node, txs in view.snapshots.items():
        seen: dict[str, str] = {}
        for tx in sorted(txs):
            for inp in inputs_of.get(tx, []):
                if inp in seen and seen[inp] != tx:
                    return _fail(name, view, "ledger holds a double spend",
                                 node=node, input=inp, txs=[seen[inp], tx])
                seen[inp] = tx
    # Consistency: fast-path confirmations present in every final ledger.
    for e in view.confirms:
        if e["path"] != "fast" or e["node"] in view.byzantine:
            continue
        for node in view.correct:
            if node in view.snapshots and e["tx"] not in view.snapshots[node]:
                return _fail(name, view, "fast confirmation missing from a ledger",
                             tx=e["tx"], confirmed_by=e["node"], missing_at=node)
    # Fast-path latency for cautious transactions after the sync slot.
    s_same = s_same_of(view)
    latencies = []
    if s_same is not None:
        sync_round = view.round_of(s_same, 1)
        included_at: dict[str, int] = {}
        for e in view.blocks:
            if e["node"] in view.byzantine:
                continue
            for tx in e.get("txs", []):
                included_at.setdefault(tx, e["r"])
        confirm_at: dict[tuple[str, int], int] = {}
        for e in view.confirms:
            if e["path"] == "fast":
                confirm_at.setdefault((e["tx"], e["node"]), e["r"])
        for tx, inc in included_at.items():
            if group_of.get(tx, "").startswith("conflict"):
                continue
            if tx not in group_of or inc < sync_round:
                continue
            for node in view.correct:
                got = confirm_at.get((tx, node))
                if got is None:
                    return _fail(name, view, "cautious transaction never fast-confirmed",
                                 tx=tx, node=node, included=inc)
                if got != inc + 3:
                    return _fail(name, view, "fast-path latency not three rounds",
                                 tx=tx, node=node, included=inc, confirmed=got)
                latencies.append(got - inc)
    # Unlock: per conflict group at most one confirmed, and if none was
    # certified, exactly one confirmed via the consensus path, within four
    # slots of the finality time of its inclusion slot.
    groups: dict[str, set[str]] = {}
    for tx, g in group_of.items():
        if g.startswith("conflict"):
            groups.setdefault(g, set()).add(tx)
    finality_time: dict[int, int] = {}
    for e in trace.select("final-time"):
        prev = finality_time.setdefault(e["slot"], e["tau"])
        if prev != e["tau"]:
            return _fail(name, view, "nodes disagree on a finality time",
                         slot=e["slot"], values=[prev, e["tau"]])
    resolved = {}
    for g, txs in sorted(groups.items()):
        confirmed = sorted(t for t in txs
                           if any(t in view.snapshots.get(n, set()) for n in view.correct))
        if len(confirmed) > 1:
            return _fail(name, view, "both halves of a double spend confirmed",
                         group=g, txs=confirmed)
        if len(confirmed) == 1:
            tx = confirmed[0]
            evs = [e for e in view.confirms if e["tx"] == tx and e["node"] in view.correct]
            by_consensus = [e for e in evs if e["path"].startswith("consensus")]
            if by_consensus and not any(e["path"] == "fast" for e in evs):
                inc_slot = min((e["slot"] for e in view.blocks if tx in e.get("txs", [])),
                               default=None)
                tau = finality_time.get(inc_slot)
                if tau is not None:
                    worst = max(((e["r"] - 1) // view.rounds_per_slot()) + 1
                                for e in by_consensus)
                    if worst > tau + 4:
                        return _fail(name, view, "consensus-path unlock too slow",
                                     group=g, tx=tx, slot=worst, tau=tau)
            resolved[g] = {"confirmed": confirmed[0][:12],
                           "paths": sorted({e['path'] for e in evs})}
        else:
            resolved[g] = {"confirmed": None}
        # Every correct ledger must agree on the group outcome.
        for node in view.correct:
            if node not in view.snapshots:
                continue
            mine = [t for t in txs if t in view.snapshots[node]]
            if sorted(mine) != ([] if not confirmed else confirmed):
                return _fail(name, view, "nodes disagree on a double-spend outcome",
                             group=g, node=node)
    return PropertyReport(name, True, "ledger safety, consistency and latency hold",
                          metrics={"fast_latencies": sorted(set(latencies)),
                                   "conflict_groups": resolved})


def check_own_cone_validity(trace: Trace) -> PropertyReport:
    """The engine revalidates each correct node's cone every round; this
    confirms the events exist and none failed."""
    view = TraceView(trace)
    name = "own-cone-valid"
    events = trace.select("own-cone-valid")
    if view.scenario.get("validate_every_round") and not events:
        return _fail(name, view, "no validation events in trace")
    for e in events:
        if not e["ok"]:
            return _fail(name, view, "a correct node held an invalid DAG",
                         node=e["node"], round=e["r"])
    return PropertyReport(name, True, f"{len(events)} per-round validations clean",
                          metrics={"validations": len(events)})


ALL_CHECKS = {
    "order-own-safety": check_order_own_safety,
    "order-own-liveness": check_order_own_liveness,
    "same-end-digest": check_same_end_digest,
    "order-final": check_order_final,
    "ledger": check_ledger,
    "own-cone-valid": check_own_cone_validity,
}


def run_checks(trace: Trace, names: Optional[list[str]] = None) -> list[PropertyReport]:
    out = []
    for name, fn in ALL_CHECKS.items():
        if names and name not in names:
            continue
        try:
            out.append(fn(trace))
        except Exception as exc:  # corrupted traces must fail, not crash
            out.append(PropertyReport(name, False, f"checker error: {exc}",
                                      first_violation={"error": repr(exc)}))
    return out
