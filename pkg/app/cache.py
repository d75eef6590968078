"""On-disk store of certified stage sequences, keyed by presentation, strategy and budget.

Stored stages are only hints: callers re-verify every certificate before
trusting a hit.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

CACHE_VERSION = "stages-v1"


@dataclass
class StageDump:
    key: str
    stored_at: float
    ttl: int
    stages: list[dict[str, Any]]

    def expired(self, now: float) -> bool:
        return self.ttl > 0 and now - self.stored_at > self.ttl


def stage_key(spec: dict[str, Any], strategy: str, budget: int) -> str:
    blob = json.dumps(
        {"spec": spec, "strategy": strategy, "budget": budget, "version": CACHE_VERSION},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class StageStore:
    base_dir: Path

    @classmethod
    def at(cls, base_dir: str | os.PathLike[str]) -> StageStore:
        return cls(Path(base_dir))

    def entry(self, key: str) -> Path:
        return self.base_dir / f"{key}.json"

    def load(self, key: str) -> StageDump | None:
        """The stored stages for key, or None when absent, unreadable or expired."""
        try:
            data = json.loads(self.entry(key).read_text(encoding="utf-8"))
            dump = StageDump(
                key=key,
                stored_at=float(data.get("stored_at", 0)),
                ttl=int(data.get("ttl", 0)),
                stages=list(data["stages"]),
            )
        except (OSError, ValueError, KeyError, TypeError):
            return None
        return None if dump.expired(time.time()) else dump

    def save(self, key: str, stages: list[dict[str, Any]], ttl: int) -> None:
        self.base_dir.mkdir(parents=True, exist_ok=True)
        blob = {"key": key, "stored_at": time.time(), "ttl": int(ttl), "stages": stages}
        target = self.entry(key)
        tmp = target.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(blob, sort_keys=True), encoding="utf-8")
        os.replace(tmp, target)

    def footprint(self) -> tuple[int, int]:
        """(stored stage sequences, bytes on disk)."""
        if not self.base_dir.is_dir():
            return 0, 0
        entries = total = 0
        for path in self.base_dir.glob("*.json"):
            try:
                total += path.stat().st_size
            except OSError:
                continue
            entries += 1
        return entries, total
