"""UTXO transactions and the per-node ledger of confirmed transactions.

The ledger is a set of confirmed transactions, not an ordered log. Two
properties are enforced on every insertion: no two confirmed transactions
consume the same output, and the transaction creating every consumed output
is itself confirmed (the genesis transaction is always present).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .crypto import Authenticator, hash_bytes

# Output id: (creating tx hash, output index).
UtxoId = tuple[bytes, int]

GENESIS_ACCOUNT = -1


@dataclass(frozen=True)
class Utxo:
    id: UtxoId
    value: int
    owner: int


@dataclass(frozen=True)
class UtxoTx:
    """Single-owner UTXO transaction.

    All inputs must be consumable by one account, which signs the content.
    Input and output value sums must match (the genesis mint is exempt).
    """

    inputs: tuple[UtxoId, ...]
    outputs: tuple[tuple[int, int], ...]  # (value, owner account)
    owner: int
    sig: bytes = b""

    def signing_bytes(self) -> bytes:
        return _encode_tx(self, include_sig=False)

    def encode(self) -> bytes:
        return _encode_tx(self, include_sig=True)

    @property
    def txid(self) -> bytes:
        # Identity covers inputs, outputs and signature: identical
        # transactions have identical ids and identical outputs.
        return hash_bytes(self.encode())

    def output_utxos(self) -> list[Utxo]:
        tid = self.txid
        return [Utxo((tid, i), v, o) for i, (v, o) in enumerate(self.outputs)]


def _encode_tx(tx: UtxoTx, include_sig: bool) -> bytes:
    parts = [struct.pack(">I", len(tx.inputs))]
    for tid, idx in tx.inputs:
        parts.append(tid)
        parts.append(struct.pack(">I", idx))
    parts.append(struct.pack(">I", len(tx.outputs)))
    for value, owner in tx.outputs:
        parts.append(struct.pack(">Qq", value, owner))
    parts.append(struct.pack(">q", tx.owner))
    if include_sig:
        parts.append(struct.pack(">I", len(tx.sig)))
        parts.append(tx.sig)
    return b"".join(parts)


def make_tx(auth: Authenticator, owner: int, inputs: list[UtxoId],
            outputs: list[tuple[int, int]]) -> UtxoTx:
    tx = UtxoTx(tuple(inputs), tuple(outputs), owner)
    return UtxoTx(tx.inputs, tx.outputs, owner, auth.sign_account(owner, tx.signing_bytes()))


def genesis_transaction(accounts: int, value: int = 1000) -> UtxoTx:
    """Mint one initial output per account; always part of every ledger."""
    outputs = tuple((value, a) for a in range(accounts))
    return UtxoTx((), outputs, GENESIS_ACCOUNT, b"genesis")


def is_double_spend(a: UtxoTx, b: UtxoTx) -> bool:
    """Two distinct transactions that try to consume a common output."""
    if a.txid == b.txid:
        return False
    return bool(set(a.inputs) & set(b.inputs))


class LedgerViolation(Exception):
    """Raised when an insertion would break a ledger property."""


@dataclass
class UtxoLedger:
    confirmed: dict[bytes, UtxoTx] = field(default_factory=dict)
    spent: dict[UtxoId, bytes] = field(default_factory=dict)  # output -> consuming txid
    utxos: dict[UtxoId, Utxo] = field(default_factory=dict)   # every created output

    @classmethod
    def with_genesis(cls, genesis_tx: UtxoTx) -> "UtxoLedger":
        ledger = cls()
        ledger._commit(genesis_tx)
        return ledger

    def __contains__(self, txid: bytes) -> bool:
        return txid in self.confirmed

    def has_inputs(self, tx: UtxoTx) -> bool:
        """Creators of all consumed outputs are confirmed here."""
        return all(uid[0] in self.confirmed for uid in tx.inputs)

    def conflicts(self, tx: UtxoTx) -> bool:
        """Some input is already spent by a different confirmed transaction."""
        tid = tx.txid
        return any(self.spent.get(uid, tid) != tid for uid in tx.inputs)

    def add(self, tx: UtxoTx) -> bool:
        """Confirm ``tx``; returns False if it was already confirmed.

        Raises LedgerViolation rather than silently accepting a conflict or
        an orphan input: callers on the fast path rely on quorum
        intersection to have excluded both, so a violation here is a safety
        bug worth surfacing loudly.
        """
        tid = tx.txid
        if tid in self.confirmed:
            return False
        if not self.has_inputs(tx):
            raise LedgerViolation(f"inputs of {tid.hex()[:12]} not confirmed")
        if self.conflicts(tx):
            raise LedgerViolation(f"double spend on insert of {tid.hex()[:12]}")
        for uid in tx.inputs:
            if uid not in self.utxos:
                raise LedgerViolation(f"unknown output {uid[0].hex()[:12]}:{uid[1]}")
        self._commit(tx)
        return True

    def _commit(self, tx: UtxoTx) -> None:
        tid = tx.txid
        self.confirmed[tid] = tx
        for uid in tx.inputs:
            self.spent[uid] = tid
        for u in tx.output_utxos():
            self.utxos[u.id] = u

    def available(self) -> dict[UtxoId, Utxo]:
        return {uid: u for uid, u in self.utxos.items() if uid not in self.spent}

    def snapshot(self) -> list[str]:
        return sorted(t.hex() for t in self.confirmed)
