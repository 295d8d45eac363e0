"""Bundled scenarios, one per headline property.

Each maps to a Scenario dict (the JSON schema); `bundled(name, seed=...)`
returns a ready Scenario. The fast variants used in sweeps disable the
per-round DAG validation; single demo runs keep it on.
"""

from __future__ import annotations

import copy

from .simnet import Scenario

BUNDLED: dict[str, dict] = {
    # Sleepy model, honest nodes, random per-slot participation.
    "ss-basic": {
        "name": "ss-basic", "n": 5, "f": 2, "model": "ss",
        "horizon_slots": 50, "leader_mode": "bot",
        "sleep": {"kind": "random", "p_awake": 0.7},
    },
    # Sleepy model with an equivocating node and a rotating adversarial
    # schedule that sleeps as many correct nodes as the model allows.
    "ss-adversarial-sleep": {
        "name": "ss-adversarial-sleep", "n": 5, "f": 2, "model": "ss",
        "horizon_slots": 50, "leader_mode": "bot",
        "sleep": {"kind": "adversarial"},
        "byzantine": [{"node": 4, "kind": "equivocate",
                       "slots": [4, 9, 14, 19, 24], "round": 2,
                       "groups": [[0, 1], [2, 3]]}],
    },
    # Eventual lock-step: an uneven partition until the stabilization slot.
    "elss-partition": {
        "name": "elss-partition", "n": 4, "f": 1, "model": "elss",
        "horizon_slots": 40, "gst_slot": 10, "leader_mode": "coin_after_gst",
        "network": {"pregst_partition": [[0, 1, 2], [3]]},
    },
    # Eventual lock-step: an even split reinforced by a two-faced node, so
    # conflicting digests gather f+1 backers each and the switch rule has to
    # rely on the model indicator and certificate slots.
    "elss-digest-split": {
        "name": "elss-digest-split", "n": 4, "f": 1, "model": "elss",
        "horizon_slots": 40, "gst_slot": 10, "leader_mode": "coin_after_gst",
        "network": {"pregst_partition": [[0, 1], [2]]},
        "byzantine": [{"node": 3, "kind": "split_brain",
                       "groups": [[0, 1], [2]], "feed": [[0, 1], [2]]}],
    },
    # Payments: chains of cautious transactions, fully synchronous.
    "payments-fast": {
        "name": "payments-fast", "n": 4, "f": 1, "model": "lockstep",
        "horizon_slots": 16, "leader_mode": "coin", "accounts": 4,
        "workload": [
            {"kind": "cautious", "account": 0, "start_round": 4, "track": 0,
             "nodes": [0], "payments": [{"value": 10, "to": 1},
                                        {"value": 5, "to": 2},
                                        {"value": 7, "to": 3}]},
            {"kind": "cautious", "account": 1, "start_round": 7, "track": 1,
             "nodes": [1], "payments": [{"value": 3, "to": 2},
                                        {"value": 4, "to": 0}]},
        ],
    },
    # Payments: uncertified double spends resolved by the consensus path,
    # plus a starved half that lets the other half confirm on the fast path.
    "payments-doublespend-lock": {
        "name": "payments-doublespend-lock", "n": 4, "f": 1, "model": "lockstep",
        "horizon_slots": 24, "leader_mode": "coin", "accounts": 6,
        "workload": [
            {"kind": "double_spender", "account": 0, "release_round": 5,
             "targets_a": [0, 1], "targets_b": [2, 3], "pay_to": [4, 5]},
            {"kind": "split_broadcast", "account": 1, "release_round": 8,
             "wide": [0, 1, 2, 3], "narrow": [3], "delay_rounds": 3},
            {"kind": "cautious", "account": 2, "start_round": 6, "track": 0,
             "nodes": [2], "payments": [{"value": 8, "to": 3}]},
        ],
    },
    # A node that equivocates every slot; safety must shrug it off.
    "equivocation-storm": {
        "name": "equivocation-storm", "n": 4, "f": 1, "model": "lockstep",
        "horizon_slots": 20, "leader_mode": "coin",
        "byzantine": [{"node": 3, "kind": "equivocate",
                       "slots": list(range(2, 19)), "round": 2,
                       "groups": [[0], [1, 2]]}],
    },
}


def bundled(name: str, seed: int = 0, fast: bool = False) -> Scenario:
    if name not in BUNDLED:
        raise KeyError(f"no bundled scenario {name!r}; have {sorted(BUNDLED)}")
    raw = copy.deepcopy(BUNDLED[name])
    raw["seed"] = seed
    if fast:
        raw["validate_every_round"] = False
    return Scenario.from_dict(raw)
