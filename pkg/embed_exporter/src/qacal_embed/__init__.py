"""Question-answer text to transformer-embedding JSONL exporter.

Bridges raw QA corpora and the qacal calibration pipeline: each (question,
answer) pair becomes one dataset record whose embedding is the pre-trained
model's vector at the leading classification token.
"""

__version__ = "0.1.0"

from .exporter import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_MODEL,
    MANIFEST_FORMAT,
    TextPair,
    TextPairError,
    export_embeddings,
    load_text_pairs,
    manifest_path,
)
