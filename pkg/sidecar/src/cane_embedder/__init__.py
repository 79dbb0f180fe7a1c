"""Embedding exporter sidecar for the cross-platform analysis toolkit.

Reads a posts.jsonl corpus, runs a sentence encoder over the post texts, and
writes one unit-normalized vector per post in the CANEEMB1 container the main
toolkit ingests. The two packages share nothing but those file formats.
"""

__version__ = "0.1.0"
