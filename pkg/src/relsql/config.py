"""Run configuration: flat key = value files with strict key checking.

Defaults reproduce the main training configuration (4 attention layers,
full relation vocabulary, pretrained embeddings, batch 50, 40000 steps).
Unknown keys are errors so a misspelled ablation switch cannot silently
run the wrong experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .optim import AdamConfig


@dataclass
class RunConfig:
    # data
    tables_path: str = ""
    train_path: str = ""
    dev_path: str = ""
    embeddings_path: str = ""
    # run switches
    seed: int = 1
    fp64: bool = False
    relation_vocab: str = "full25"
    use_pretrained_embeddings: bool = True
    min_count: int = 3
    # encoder
    encoder_layers: int = 4
    heads: int = 8
    model_dim: int = 256
    ffn_dim: int = 1024
    attn_dropout: float = 0.1
    lstm_hidden: int = 128
    lstm_dropout: float = 0.2
    word_dim: int = 300
    # decoder
    rule_embed_dim: int = 128
    node_type_embed_dim: int = 64
    decoder_hidden: int = 256
    decoder_dropout: float = 0.2
    decoder_heads: int = 8
    max_decode_actions: int = 200
    # optimizer
    base_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-9
    batch_size: int = 50
    max_steps: int = 40000
    # training loop
    eval_every: int = 500
    early_stop_em: float = 2.0  # > 1 disables early stopping

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            layers=self.encoder_layers, heads=self.heads, model_dim=self.model_dim,
            ffn_dim=self.ffn_dim, attn_dropout=self.attn_dropout,
            lstm_hidden=self.lstm_hidden, lstm_dropout=self.lstm_dropout,
            word_dim=self.word_dim, relation_vocab=self.relation_vocab)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            rule_embed_dim=self.rule_embed_dim,
            node_type_embed_dim=self.node_type_embed_dim,
            hidden=self.decoder_hidden, dropout=self.decoder_dropout,
            heads=self.decoder_heads, model_dim=self.model_dim,
            max_actions=self.max_decode_actions)

    def adam_config(self) -> AdamConfig:
        return AdamConfig(max_steps=self.max_steps, base_lr=self.base_lr,
                          beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon,
                          batch_size=self.batch_size)

    def validate(self) -> None:
        self.encoder_config()
        self.decoder_config()
        self.adam_config()
        if self.relation_vocab not in ("full25", "fewer15", "minimal6"):
            raise ValueError(f"relation_vocab must be full25/fewer15/minimal6, "
                             f"got {self.relation_vocab!r}")
        if self.use_pretrained_embeddings and not self.embeddings_path:
            raise ValueError("use_pretrained_embeddings is set but embeddings_path is empty")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    if ftype == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r}: expected true/false, got {raw!r}")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    return raw


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, raw))
    return cfg


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        cfg = parse_config(f.read())
    cfg.validate()
    return cfg
