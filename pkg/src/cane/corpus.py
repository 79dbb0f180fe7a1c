"""Post corpus loading, validation, text normalization, and username de-duplication.

The on-disk interchange format is posts.jsonl: one JSON object per line with
fields {"id", "user", "platform", "ts", "text"} and optional non-negative
integer engagement counters {"likes", "replies", "reposts"}.
"""
from __future__ import annotations

import difflib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

_URL_RE = re.compile(r"https?://\S+")
_HASHTAG_RE = re.compile(r"#\w+")
_MENTION_RE = re.compile(r"@\w+")
_WS_RE = re.compile(r"\s+")

_REQUIRED_FIELDS = ("id", "user", "platform", "ts", "text")
_ENGAGEMENT_FIELDS = ("likes", "replies", "reposts")


def normalize_text(raw: str) -> str:
    """Strip URLs, #hashtag and @mention tokens, then collapse whitespace.

    The whole token is removed (marker plus word). Idempotent; may return "".
    """
    text = _URL_RE.sub(" ", raw)
    text = _HASHTAG_RE.sub(" ", text)
    text = _MENTION_RE.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()


@dataclass(frozen=True)
class PostRecord:
    post_id: str
    user_id: str
    platform: str
    ts: int  # unix seconds, UTC
    text_raw: str
    text_norm: str
    likes: int | None = None
    replies: int | None = None
    reposts: int | None = None


@dataclass
class PostCollection:
    """Immutable-after-construction list of posts plus derived indices.

    Iteration order is the file order. ``by_user`` maps user_id to the indices
    of that user's posts (ascending).
    """

    posts: list[PostRecord]
    platforms: tuple[str, ...] = field(init=False)
    by_user: dict[str, list[int]] = field(init=False)

    def __post_init__(self) -> None:
        by_user: dict[str, list[int]] = {}
        platforms: set[str] = set()
        for i, p in enumerate(self.posts):
            by_user.setdefault(p.user_id, []).append(i)
            platforms.add(p.platform)
        self.by_user = by_user
        self.platforms = tuple(sorted(platforms))

    def __len__(self) -> int:
        return len(self.posts)

    def __iter__(self) -> Iterator[PostRecord]:
        return iter(self.posts)

    @property
    def users(self) -> list[str]:
        return sorted(self.by_user)

    def platform_counts(self) -> dict[str, int]:
        return dict(Counter(p.platform for p in self.posts))

    def user_platforms(self) -> dict[str, str]:
        """Majority platform per user (ties break to the lexicographically first).

        A user posting on several platforms is kept as one user; the ``dedup``
        tooling exists to flag cross-platform handle collisions beforehand.
        """
        out: dict[str, str] = {}
        for user, idxs in self.by_user.items():
            counts = Counter(self.posts[i].platform for i in idxs)
            top = max(counts.values())
            out[user] = min(p for p, c in counts.items() if c == top)
        return out

    def user_post_counts(self) -> dict[str, int]:
        return {u: len(ix) for u, ix in self.by_user.items()}


def _parse_record(obj: dict, line_no: int) -> PostRecord:
    for key in _REQUIRED_FIELDS:
        if key not in obj:
            raise ValueError(f"line {line_no}: missing required field '{key}'")
    for key in ("id", "user", "platform"):
        if not isinstance(obj[key], str) or not obj[key]:
            raise ValueError(f"line {line_no}: field '{key}' must be a non-empty string")
    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise ValueError(f"line {line_no}: field 'ts' must be an integer unix timestamp, got {ts!r}")
    if ts < 0:
        raise ValueError(f"line {line_no}: field 'ts' must be >= 0, got {ts}")
    if not isinstance(obj["text"], str):
        raise ValueError(f"line {line_no}: field 'text' must be a string")
    engagement: dict[str, int | None] = {}
    for key in _ENGAGEMENT_FIELDS:
        val = obj.get(key)
        if val is None:
            engagement[key] = None
            continue
        if isinstance(val, bool) or not isinstance(val, int) or val < 0:
            raise ValueError(f"line {line_no}: field '{key}' must be a non-negative integer, got {val!r}")
        engagement[key] = val
    raw = obj["text"]
    return PostRecord(
        post_id=obj["id"],
        user_id=obj["user"],
        platform=obj["platform"],
        ts=ts,
        text_raw=raw,
        text_norm=normalize_text(raw),
        likes=engagement["likes"],
        replies=engagement["replies"],
        reposts=engagement["reposts"],
    )


def load_posts(path: str | Path) -> PostCollection:
    """Parse a posts.jsonl file into a validated, normalized PostCollection."""
    path = Path(path)
    posts: list[PostRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ValueError(f"line {line_no}: expected a JSON object")
            rec = _parse_record(obj, line_no)
            if rec.post_id in seen:
                raise ValueError(f"duplicate post_id '{rec.post_id}' (line {line_no})")
            seen.add(rec.post_id)
            posts.append(rec)
    coll = PostCollection(posts)
    multi = [u for u, ix in coll.by_user.items() if len({coll.posts[i].platform for i in ix}) > 1]
    if multi:
        logger.warning(
            "%d user id(s) appear on more than one platform (first: %s); "
            "consider running dedup before analysis",
            len(multi),
            ", ".join(sorted(multi)[:5]),
        )
    counts = coll.platform_counts()
    logger.info("loaded %d posts from %s (%s)", len(coll), path,
                ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return coll


def write_posts(coll: PostCollection, path: str | Path) -> None:
    """Serialize back to posts.jsonl. load_posts(write_posts(c)) == c."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in coll:
            obj: dict = {
                "id": p.post_id,
                "user": p.user_id,
                "platform": p.platform,
                "ts": p.ts,
                "text": p.text_raw,
            }
            for key, val in (("likes", p.likes), ("replies", p.replies), ("reposts", p.reposts)):
                if val is not None:
                    obj[key] = val
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def filter_min_activity(coll: PostCollection, min_posts: int) -> PostCollection:
    """Keep only posts by users with at least ``min_posts`` posts."""
    if min_posts < 1:
        raise ValueError(f"min_posts must be >= 1, got {min_posts}")
    keep = {u for u, ix in coll.by_user.items() if len(ix) >= min_posts}
    filtered = [p for p in coll if p.user_id in keep]
    if not filtered:
        logger.warning("filter_min_activity(min_posts=%d) removed every post", min_posts)
    return PostCollection(filtered)


def username_similarity(a: str, b: str) -> float:
    """Ratcliff/Obershelp similarity, 2K/(len_a+len_b), case-insensitive.

    SequenceMatcher's greedy tie-breaking is order-dependent for some pairs
    (e.g. "tide"/"diet"); taking the better of both orders keeps the measure
    symmetric, as a similarity should be.
    """
    a, b = a.lower(), b.lower()
    forward = difflib.SequenceMatcher(None, a, b).ratio()
    if a == b:
        return forward
    return max(forward, difflib.SequenceMatcher(None, b, a).ratio())


def dedup_usernames(
    users: Iterable[tuple[str, str]] | Sequence[tuple[str, str]],
    threshold: float,
) -> list[tuple[str, str, float]]:
    """Flag cross-platform username pairs with similarity >= threshold.

    ``users`` is an iterable of (user_id, platform). Only pairs from distinct
    platforms are compared (same-platform handles are distinct accounts by
    construction). Returned pairs are lexicographically ordered and sorted.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    entries = sorted(set(users))
    flagged: list[tuple[str, str, float]] = []
    seen_pairs: set[tuple[str, str]] = set()
    for i, (ua, pa) in enumerate(entries):
        for ub, pb in entries[i + 1:]:
            if pa == pb:
                continue
            key = (ua, ub) if ua <= ub else (ub, ua)
            if key in seen_pairs:
                continue
            sim = username_similarity(ua, ub)
            if sim >= threshold:
                seen_pairs.add(key)
                flagged.append((key[0], key[1], sim))
    flagged.sort(key=lambda t: (-t[2], t[0], t[1]))
    return flagged
