"""Small shared helpers: stable hashing, canonical JSON, TSV formatting."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any


def stable_hash64(data: bytes | str, seed: int = 0) -> int:
    """64-bit keyed hash that is stable across processes and platforms."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(data, key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dump_json(obj: Any, path: str | Path) -> None:
    """Write JSON deterministically: sorted keys, fixed separators, LF, UTF-8."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, ensure_ascii=False, indent=2)
        fh.write("\n")


def format_weight(w: float) -> str:
    """Fixed 6-decimal weight formatting used by edge/affiliation TSV files."""
    return f"{w:.6f}"
