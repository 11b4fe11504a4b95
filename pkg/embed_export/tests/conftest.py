import json

import pytest
import torch
from tokenizers import Tokenizer
from tokenizers.models import WordPiece
from tokenizers.normalizers import Lowercase
from tokenizers.pre_tokenizers import Whitespace
from tokenizers.processors import TemplateProcessing
from transformers import BertConfig, BertModel, PreTrainedTokenizerFast

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "person", "dog", "snow", "tree", "is", "on", "beside",
    "standing", "related", "to", ".",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """Random-weight BERT saved locally; enough to drive the real export path."""
    model_dir = tmp_path_factory.mktemp("tiny_model") / "model"
    config = BertConfig(
        vocab_size=len(VOCAB), hidden_size=32, num_hidden_layers=2,
        num_attention_heads=4, intermediate_size=64, max_position_embeddings=64,
    )
    torch.manual_seed(0)
    BertModel(config).save_pretrained(model_dir)

    inner = Tokenizer(WordPiece(vocab={t: i for i, t in enumerate(VOCAB)},
                                unk_token="[UNK]"))
    inner.normalizer = Lowercase()
    inner.pre_tokenizer = Whitespace()
    inner.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        special_tokens=[("[CLS]", VOCAB.index("[CLS]")), ("[SEP]", VOCAB.index("[SEP]"))],
    )
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=inner, unk_token="[UNK]", pad_token="[PAD]",
        cls_token="[CLS]", sep_token="[SEP]", mask_token="[MASK]",
    )
    tokenizer.save_pretrained(model_dir)
    return model_dir


def _image(image_id, relations, na_pairs):
    return {
        "image_id": image_id,
        "relations": [
            {
                "relation_id": rid,
                "sub": {"class": sub, "seg": f"s{rid}a"},
                "obj": {"class": obj, "seg": f"s{rid}b"},
                "predicate": pred,
            }
            for rid, sub, pred, obj in relations
        ],
        "na_pairs": [
            {
                "relation_id": rid,
                "sub": {"class": sub, "seg": f"n{rid}a"},
                "obj": {"class": obj, "seg": f"n{rid}b"},
            }
            for rid, sub, obj in na_pairs
        ],
    }


@pytest.fixture
def dataset_dir(tmp_path):
    """Six relations (two with identical sentences) and two NA pairs."""
    lines = [
        _image("img0",
               [(0, "person", "on", "snow"), (1, "dog", "beside", "tree")],
               [(2, "person", "tree")]),
        _image("img1",
               [(3, "person", "on", "snow"), (4, "tree", "beside", "dog")],
               [(5, "dog", "snow")]),
        _image("img2",
               [(6, "dog", "standing on", "snow"), (7, "person", "beside", "tree")],
               []),
    ]
    path = tmp_path / "dataset.jsonl"
    path.write_text("".join(json.dumps(obj) + "\n" for obj in lines))
    (tmp_path / "predicates.json").write_text(
        json.dumps(["on", "beside", "standing on"]))
    (tmp_path / "entities.json").write_text(
        json.dumps(["person", "dog", "snow", "tree"]))
    return tmp_path
