"""Helpers shared by the oracle scripts: reference tokenizer and HF encoder."""
import hashlib
import pathlib
import sys

import torch
from safetensors.torch import load_file
from transformers import CLIPTextConfig, CLIPTextModel

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent))
from tokenizer_oracle import load_reference  # noqa: E402

ROOT = pathlib.Path(__file__).resolve().parents[2]
FIXTURES = ROOT / "tests" / "fixtures"

_TOK = None


def tokenizer():
    global _TOK
    if _TOK is None:
        _TOK = load_reference()
    return _TOK


def body_ids(prompt):
    return tokenizer().encode(prompt)


def padded_ids(prompt):
    tok = tokenizer()
    sot, eot = tok.encoder["<start_of_text>"], tok.encoder["<end_of_text>"]
    ids = [sot] + tok.encode(prompt) + [eot]
    return ids + [eot] * (77 - len(ids))


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_model(weights_path):
    from safetensors import safe_open
    with safe_open(str(weights_path), framework="pt") as f:
        meta = f.metadata() or {}
    state = load_file(str(weights_path))
    d = state["text_model.embeddings.token_embedding.weight"].shape[1]
    vocab = state["text_model.embeddings.token_embedding.weight"].shape[0]
    layers = 0
    while f"text_model.encoder.layers.{layers}.layer_norm1.weight" in state:
        layers += 1
    mlp = state["text_model.encoder.layers.0.mlp.fc1.weight"].shape[0]
    heads = int(meta.get("num_attention_heads", d // 64))
    cfg = CLIPTextConfig(vocab_size=vocab, hidden_size=d, intermediate_size=mlp, num_hidden_layers=layers,
                         num_attention_heads=heads, max_position_embeddings=77, hidden_act="quick_gelu",
                         layer_norm_eps=1e-5, attn_implementation="eager")
    model = CLIPTextModel(cfg)
    # the module tree here has no "text_model." scope
    state = {k.removeprefix("text_model."): v for k, v in state.items()}
    missing, unexpected = model.load_state_dict(state, strict=False)
    assert not unexpected, unexpected
    assert all("position_ids" in m for m in missing), missing
    model.eval()
    return model


class Encoder:
    """Memoized prompt -> [77, d] float32 hidden states (numpy)."""

    def __init__(self, weights_path):
        self.model = load_model(weights_path)
        self.cache = {}

    def __call__(self, prompt):
        if prompt not in self.cache:
            ids = torch.tensor([padded_ids(prompt)], dtype=torch.long)
            with torch.no_grad():
                out = self.model(input_ids=ids).last_hidden_state[0]
            self.cache[prompt] = out.numpy().astype("float32")
        return self.cache[prompt]
