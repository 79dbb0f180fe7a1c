"""Encoder loading.

Two families:

* real sentence encoders via the ``sentence-transformers`` package — the
  default model id targets the 768-wide MPNet family;
* ``hash:<dim>`` — a deterministic offline stand-in (seeded Gaussian per
  text) for dry runs and tests on machines without model weights. Same text,
  same vector, on any host.

The model identifier is pass-through configuration: anything
``sentence-transformers`` can load is accepted, with the reported output
width recorded in the file header by the exporter.
"""
from __future__ import annotations

import hashlib
import logging
from typing import Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "sentence-transformers/all-mpnet-base-v2"  # 768-dim


class EncoderLoadError(RuntimeError):
    """Raised when the requested encoder cannot be constructed."""

    def __init__(self, model_id: str, reason: str):
        super().__init__(f"cannot load encoder '{model_id}': {reason}")
        self.model_id = model_id


class Encoder(Protocol):
    model_id: str
    dim: int

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        """(len(texts), dim) float32 rows; not necessarily normalized."""


class HashEncoder:
    """Deterministic pseudo-embedding: a seeded Gaussian draw per text."""

    def __init__(self, model_id: str, dim: int):
        if dim < 1:
            raise EncoderLoadError(model_id, f"dimension must be >= 1, got {dim}")
        self.model_id = model_id
        self.dim = dim

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        rows = np.empty((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            rows[i] = rng.standard_normal(self.dim, dtype=np.float32)
        return rows


class SentenceEncoder:
    """Thin adapter over a sentence-transformers model in inference mode."""

    def __init__(self, model_id: str, device: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EncoderLoadError(model_id, f"sentence-transformers not installed ({exc})") from exc
        try:
            self._model = SentenceTransformer(model_id, device=device)
        except Exception as exc:  # hub/file/device errors all end the run
            raise EncoderLoadError(model_id, str(exc)) from exc
        self.model_id = model_id
        dim = self._model.get_sentence_embedding_dimension()
        if not dim:
            raise EncoderLoadError(model_id, "encoder does not report an output width")
        self.dim = int(dim)

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        vecs = self._model.encode(list(texts), convert_to_numpy=True,
                                  normalize_embeddings=False, show_progress_bar=False)
        return np.asarray(vecs, dtype=np.float32)


def load_encoder(model_id: str, device: str = "cpu") -> Encoder:
    if model_id.startswith("hash:"):
        suffix = model_id[len("hash:"):]
        try:
            dim = int(suffix)
        except ValueError:
            raise EncoderLoadError(model_id, f"'{suffix}' is not a dimension") from None
        return HashEncoder(model_id, dim)
    logger.info("loading encoder %s on %s", model_id, device)
    return SentenceEncoder(model_id, device)
