"""Hashing and the pluggable authenticator.

The default authenticator is a keyed simulation: a MAC derived from the run
seed and the signer index. The simulator controls every channel, so the tests
need authentication semantics (who signed what), not cryptographic strength.
A real-signature backend can be swapped in behind the same interface.
"""

from __future__ import annotations

import hashlib

HASH_ALGO = "sha256"
SIG_ALGO = "keyed-sha256-mac"

DIGEST_SIZE = 32


def hash_bytes(data: bytes) -> bytes:
    """Collision-resistant 256-bit hash used for block ids and slot digests."""
    return hashlib.sha256(data).digest()


class UnknownSignerError(Exception):
    pass


class Authenticator:
    """Signs and verifies on behalf of node and account identities.

    Node and account domains are kept separate so a node key can never
    produce a valid account signature and vice versa.
    """

    def __init__(self, run_key: bytes, n_nodes: int, n_accounts: int = 0):
        self._key = run_key
        self.n_nodes = n_nodes
        self.n_accounts = n_accounts

    def _mac(self, domain: bytes, index: int, data: bytes) -> bytes:
        h = hashlib.sha256()
        h.update(self._key)
        h.update(domain)
        h.update(index.to_bytes(8, "big", signed=True))
        h.update(data)
        return h.digest()

    def sign_node(self, node: int, data: bytes) -> bytes:
        if not 0 <= node < self.n_nodes:
            raise UnknownSignerError(f"node {node} not registered")
        return self._mac(b"node", node, data)

    def verify_node(self, node: int, data: bytes, sig: bytes) -> bool:
        if not 0 <= node < self.n_nodes:
            return False
        return sig == self._mac(b"node", node, data)

    def sign_account(self, account: int, data: bytes) -> bytes:
        if not 0 <= account < self.n_accounts:
            raise UnknownSignerError(f"account {account} not registered")
        return self._mac(b"acct", account, data)

    def verify_account(self, account: int, data: bytes, sig: bytes) -> bool:
        if not 0 <= account < self.n_accounts:
            return False
        return sig == self._mac(b"acct", account, data)


def prng_uniform(key: bytes, label: bytes, counter: int, bound: int) -> int:
    """Deterministic uniform draw in [0, bound) from a seeded hash counter.

    Recorded in trace headers as "sha256-counter". Rejection sampling keeps
    the draw unbiased.
    """
    if bound <= 0:
        raise ValueError("bound must be positive")
    i = 0
    limit = (1 << 64) - ((1 << 64) % bound)
    while True:
        h = hashlib.sha256(key + label + counter.to_bytes(8, "big") + i.to_bytes(4, "big"))
        v = int.from_bytes(h.digest()[:8], "big")
        if v < limit:
            return v % bound
        i += 1
