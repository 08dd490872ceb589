"""Question-answer text pairs to leading-token embedding records.

Reads a JSONL file of text pairs, embeds each pair with a pre-trained
transformer (the vector at the leading classification token), and writes the
calibration dataset format consumed by the qacal pipeline, plus a manifest
sidecar recording the model, revision, and dimension.
"""

import inspect
import json
import os
import warnings
from dataclasses import dataclass

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer
from transformers.utils import logging as hf_logging

DEFAULT_MODEL = "distilbert-base-uncased"
DEFAULT_BATCH_SIZE = 32
MANIFEST_FORMAT = "qacal-embed.manifest.v1"
LABEL_KINDS = ("ground_truth", "proxy")

# tokenizers report this sentinel when no length was configured
_UNSET_MAX_LENGTH = int(1e9)


class TextPairError(ValueError):
    """Raised for malformed input records; message carries file:line."""


@dataclass(frozen=True)
class TextPair:
    id: str
    question: str
    answer: str
    confidence: float
    label: float
    label_kind: str

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise TextPairError(f"id must be a non-empty string, got {self.id!r}")
        if not isinstance(self.question, str):
            raise TextPairError(f"question must be a string, got {type(self.question).__name__}")
        if not isinstance(self.answer, str):
            raise TextPairError(f"answer must be a string, got {type(self.answer).__name__}")
        if not 0.0 <= self.confidence <= 1.0:
            raise TextPairError(f"confidence must lie in [0, 1], got {self.confidence}")
        if not 0.0 <= self.label <= 1.0:
            raise TextPairError(f"label must lie in [0, 1], got {self.label}")
        if self.label_kind not in LABEL_KINDS:
            raise TextPairError(f"label_kind must be one of {LABEL_KINDS}, got {self.label_kind!r}")


_FIELDS = ("id", "question", "answer", "confidence", "label", "label_kind")


def load_text_pairs(path: str) -> list[TextPair]:
    """Parse a TextPair JSONL file; errors carry the offending line number."""
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TextPairError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            missing = [k for k in _FIELDS if k not in obj]
            if missing:
                raise TextPairError(f"{path}:{lineno}: missing fields {missing}")
            try:
                pairs.append(
                    TextPair(
                        id=obj["id"],
                        question=obj["question"],
                        answer=obj["answer"],
                        confidence=float(obj["confidence"]),
                        label=float(obj["label"]),
                        label_kind=obj["label_kind"],
                    )
                )
            except (TypeError, ValueError) as exc:
                raise TextPairError(f"{path}:{lineno}: {exc}") from exc
    if not pairs:
        raise TextPairError(f"{path}: no records")
    seen: set[str] = set()
    for p in pairs:
        if p.id in seen:
            raise TextPairError(f"{path}: duplicate id {p.id!r}")
        seen.add(p.id)
    return pairs


def manifest_path(out_path: str) -> str:
    stem = out_path[: -len(".jsonl")] if out_path.endswith(".jsonl") else out_path
    return stem + ".manifest.json"


def _max_length(tokenizer, model) -> int:
    limit = getattr(tokenizer, "model_max_length", _UNSET_MAX_LENGTH) or _UNSET_MAX_LENGTH
    positions = getattr(model.config, "max_position_embeddings", _UNSET_MAX_LENGTH)
    length = min(int(limit), int(positions))
    if length >= _UNSET_MAX_LENGTH:
        raise ValueError(f"model {model.config.model_type!r} reports no usable max length")
    return length


def _model_inputs(encoding: dict, model) -> dict:
    accepted = inspect.signature(model.forward).parameters
    return {k: v for k, v in encoding.items() if k in accepted}


def _embed_texts(texts, pair_texts, tokenizer, model, max_length, device) -> np.ndarray:
    """Leading-token vectors for one sub-batch; pair_texts may be None."""
    encoding = tokenizer(
        texts,
        pair_texts,
        padding=True,
        truncation=True,
        max_length=max_length,
        return_tensors="pt",
    ).to(device)
    with torch.no_grad():
        hidden = model(**_model_inputs(encoding, model)).last_hidden_state
    return hidden[:, 0, :].cpu().numpy().astype(np.float32, copy=False)


def _token_count(tokenizer, text: str, pair: str | None) -> int:
    return len(tokenizer(text, pair, truncation=False)["input_ids"])


def export_embeddings(
    in_path: str,
    out_path: str,
    model_name: str = DEFAULT_MODEL,
    batch_size: int = DEFAULT_BATCH_SIZE,
    revision: str | None = None,
    device: str = "cpu",
) -> int:
    """Embed every pair in in_path and write dataset records to out_path.

    Output order equals input order. Pairs are encoded as question plus answer
    with the tokenizer's native separator; a pair with an empty answer is
    embedded from the question alone (with a warning). Texts beyond the model
    length are truncated (with a warning). Returns the record count.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    pairs = load_text_pairs(in_path)

    hf_logging.disable_progress_bar()
    hf_logging.set_verbosity_error()
    tokenizer = AutoTokenizer.from_pretrained(model_name, revision=revision)
    model = AutoModel.from_pretrained(model_name, revision=revision)
    model.to(device)
    model.eval()
    max_length = _max_length(tokenizer, model)

    n_question_only = 0
    n_truncated = 0
    dimension = None
    tmp_path = out_path + ".tmp"
    with open(tmp_path, "w", encoding="utf-8") as out:
        for start in range(0, len(pairs), batch_size):
            batch = pairs[start : start + batch_size]
            with_answer = [i for i, p in enumerate(batch) if p.answer]
            question_only = [i for i, p in enumerate(batch) if not p.answer]
            vectors: dict[int, np.ndarray] = {}
            if with_answer:
                emb = _embed_texts(
                    [batch[i].question for i in with_answer],
                    [batch[i].answer for i in with_answer],
                    tokenizer, model, max_length, device,
                )
                vectors.update(zip(with_answer, emb))
            if question_only:
                for i in question_only:
                    warnings.warn(
                        f"record {batch[i].id!r}: empty answer, embedding the question alone"
                    )
                n_question_only += len(question_only)
                emb = _embed_texts(
                    [batch[i].question for i in question_only],
                    None,
                    tokenizer, model, max_length, device,
                )
                vectors.update(zip(question_only, emb))

            for i, p in enumerate(batch):
                if _token_count(tokenizer, p.question, p.answer or None) > max_length:
                    warnings.warn(f"record {p.id!r}: text truncated to {max_length} tokens")
                    n_truncated += 1
                vec = vectors[i]
                dimension = len(vec)
                record = {
                    "id": p.id,
                    "embedding": [float(x) for x in vec],
                    "confidence": p.confidence,
                    "label": p.label,
                    "label_kind": p.label_kind,
                }
                out.write(json.dumps(record, separators=(",", ":")) + "\n")
    os.replace(tmp_path, out_path)

    manifest = {
        "format": MANIFEST_FORMAT,
        "model": model_name,
        "revision": revision,
        "dimension": dimension,
        "n_records": len(pairs),
        "question_only": n_question_only,
        "truncated": n_truncated,
    }
    with open(manifest_path(out_path), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return len(pairs)
