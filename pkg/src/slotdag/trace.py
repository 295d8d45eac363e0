"""Run traces: one JSON event per line, hashable for determinism checks.

Every checker is a pure function of a trace, so anything a property needs
(block creation, DAG accept/reject, chain adoption per slot, digest
registrations with committed lists, finalization, confirmations, ledger
snapshots) is emitted as events. The header records the algorithm names so
a reader can reproduce hashes.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any, Iterable, Optional


class Trace:
    def __init__(self, header: dict):
        self.header = dict(header)
        self.header["type"] = "header"
        self.events: list[dict] = []

    def emit(self, ev: str, **fields: Any) -> None:
        e = {"ev": ev}
        e.update(fields)
        self.events.append(e)

    def lines(self) -> Iterable[str]:
        yield json.dumps(self.header, sort_keys=True, separators=(",", ":"))
        for e in self.events:
            yield json.dumps(e, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write(self, path: str) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line)
                fh.write("\n")

    @classmethod
    def read(cls, path: str) -> "Trace":
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or lines[0].get("type") != "header":
            raise ValueError("trace file has no header line")
        t = cls(lines[0])
        t.header = lines[0]
        t.events = lines[1:]
        return t

    def select(self, ev: str, **match: Any) -> list[dict]:
        out = []
        for e in self.events:
            if e.get("ev") != ev:
                continue
            if all(e.get(k) == v for k, v in match.items()):
                out.append(e)
        return out
