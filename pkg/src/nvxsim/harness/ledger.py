from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass

EFFECT_KINDS = ("net-send", "net-recv", "file-write", "fs-mutation")


@dataclass(frozen=True)
class Effect:
    origin: str
    kind: str
    digest: str
    size: int
    detail: str = ""

    def to_dict(self) -> dict:
        return {"origin": self.origin, "kind": self.kind, "digest": self.digest, "size": self.size, "detail": self.detail}


class SideEffectLedger:
    """Append-only record of externally observable effects, shared by all
    variants of a run."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: list[Effect] = []

    def append(self, origin: str, kind: str, payload: bytes = b"", detail: str = "") -> Effect:
        if kind not in EFFECT_KINDS:
            raise ValueError(f"unknown effect kind {kind!r}")
        e = Effect(origin, kind, hashlib.sha256(payload).hexdigest()[:16], len(payload), detail)
        with self._lock:
            self._records.append(e)
        return e

    @property
    def records(self) -> tuple[Effect, ...]:
        with self._lock:
            return tuple(self._records)

    def origins(self) -> set[str]:
        return {e.origin for e in self.records}

    def __len__(self):
        return len(self.records)
