"""Minimal, strict posts.jsonl reader.

The sidecar only needs (post id, text) pairs, but it validates hard: any
malformed line aborts the whole export before a single output byte exists,
because a silently skipped post would surface later as an id-mismatch error
inside the consuming toolkit — far from the actual culprit.

Line format (one JSON object per line):

    {"id": "p1", "user": "u1", "platform": "x", "ts": 0, "text": "..."}

Only "id" and "text" are read here; other keys pass through unexamined.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class PostText:
    post_id: str
    text: str


def read_post_texts(path: str | Path) -> list[PostText]:
    """All (id, text) pairs of a posts.jsonl file, in file order."""
    path = Path(path)
    out: list[PostText] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ValueError(f"{path}: line {line_no}: expected a JSON object")
            for key in ("id", "text"):
                if key not in obj:
                    raise ValueError(f"{path}: line {line_no}: missing '{key}'")
                if not isinstance(obj[key], str):
                    raise ValueError(f"{path}: line {line_no}: '{key}' must be a string")
            if not obj["id"]:
                raise ValueError(f"{path}: line {line_no}: empty post id")
            if obj["id"] in seen:
                raise ValueError(f"{path}: line {line_no}: duplicate post id '{obj['id']}'")
            seen.add(obj["id"])
            out.append(PostText(post_id=obj["id"], text=obj["text"]))
    if not out:
        raise ValueError(f"{path}: no posts")
    return out
