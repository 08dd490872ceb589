"""Shared fixtures: a tiny local checkpoint (the model hub is unreachable).

The checkpoint has the same architecture family and embedding width as the
default checkpoint (one transformer layer, dimension 768, WordPiece
tokenizer with a toy vocabulary) but random seeded weights, so every
exporter behavior except embedding quality is exercised for real.
"""

import json

import pytest
import torch
from tokenizers import Tokenizer
from tokenizers.models import WordPiece
from tokenizers.normalizers import BertNormalizer
from tokenizers.pre_tokenizers import BertPreTokenizer
from tokenizers.processors import TemplateProcessing
from transformers import DistilBertConfig, DistilBertModel, PreTrainedTokenizerFast

MAX_LENGTH = 48

_WORDS = [
    "the", "a", "of", "what", "is", "capital", "france", "paris", "answer",
    "question", "who", "wrote", "book", "red", "blue", "cat", "dog", "sun",
    "moon", "river", "city", "year", "color", "name", "ocean", "king",
]


def _vocab() -> dict[str, int]:
    tokens = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + _WORDS
    for piece in list("abcdefghijklmnopqrstuvwxyz0123456789"):
        tokens.extend([piece, "##" + piece])
    # first occurrence wins; letters overlapping _WORDS must not duplicate
    vocab: dict[str, int] = {}
    for token in tokens:
        if token not in vocab:
            vocab[token] = len(vocab)
    return vocab


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory) -> str:
    target = tmp_path_factory.mktemp("tiny_checkpoint")
    vocab = _vocab()

    backend = Tokenizer(WordPiece(vocab, unk_token="[UNK]"))
    backend.normalizer = BertNormalizer(lowercase=True)
    backend.pre_tokenizer = BertPreTokenizer()
    backend.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B:1 [SEP]:1",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=backend,
        unk_token="[UNK]",
        pad_token="[PAD]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
        model_max_length=MAX_LENGTH,
        model_input_names=["input_ids", "attention_mask"],
    )
    tokenizer.save_pretrained(target)

    config = DistilBertConfig(
        vocab_size=len(vocab),
        dim=768,
        n_layers=1,
        n_heads=4,
        hidden_dim=512,
        max_position_embeddings=MAX_LENGTH,
    )
    torch.manual_seed(0)
    DistilBertModel(config).save_pretrained(target)
    return str(target)


@pytest.fixture()
def pairs_factory():
    """Factory writing TextPair JSONL files; returned so tests stay import-free."""
    return make_pairs_file


def make_pairs_file(path, n=20, empty_answer_ids=(), long_question_ids=()):
    """Write n valid TextPair records; selected ids get degenerate text."""
    questions = [
        "what is the capital of france",
        "who wrote the red book",
        "what color is the sun",
        "what is the name of the river",
        "who is the king of the city",
    ]
    answers = ["paris", "the king", "blue", "moon river", "the old king"]
    with open(path, "w", encoding="utf-8") as f:
        for i in range(n):
            rid = f"p{i}"
            question = questions[i % len(questions)]
            answer = answers[(i * 3) % len(answers)]
            if rid in empty_answer_ids:
                answer = ""
            if rid in long_question_ids:
                question = "cat dog sun moon " * 30
            f.write(
                json.dumps(
                    {
                        "id": rid,
                        "question": question,
                        "answer": answer,
                        "confidence": round(0.05 + 0.9 * (i / max(n - 1, 1)), 6),
                        "label": float(i % 2),
                        "label_kind": "ground_truth",
                    }
                )
                + "\n"
            )
    return path
