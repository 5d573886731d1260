"""Single-file checkpoint format.

Layout (all integers little-endian):

    bytes 0..7    magic b"RELSQCK1"
    u32           header length in bytes
    header        UTF-8 JSON: format_version, dtype, relation_vocab, encoder
                  and decoder hyperparameters, vocabulary tokens, grammar
                  fingerprint, names of frozen parameters
    u32           tensor count
    per tensor:   u16 name length, name UTF-8, u8 ndim, u32 per dim,
                  u8 dtype code (4 = float32, 8 = float64), raw values LE

The JSON export path writes the same content as one JSON document with
tensor values as nested lists.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from . import autodiff as ad
from .data import Vocabulary
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .grammar import SQL_GRAMMAR
from .model import Model

MAGIC = b"RELSQCK1"
FORMAT_VERSION = 1

_DTYPE_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def _header(model: Model) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "dtype": str(ad.current_dtype()),
        "relation_vocab": model.enc_config.relation_vocab,
        "encoder": dataclasses.asdict(model.enc_config),
        "decoder": dataclasses.asdict(model.dec_config),
        "vocab": model.vocab.tokens[1:],  # UNK is implicit at index 0
        "grammar": model.grammar.fingerprint(),
        "frozen": [p.name for p in model.parameters() if not p.trainable],
    }


def save(path: str, model: Model) -> None:
    header = json.dumps(_header(model)).encode("utf-8")
    named = model.named_parameters()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(named)))
        for name in sorted(named):
            data = named[name].data
            code = 8 if data.dtype == np.float64 else 4
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                f.write(struct.pack("<I", dim))
            f.write(struct.pack("<B", code))
            f.write(np.ascontiguousarray(data, dtype=_DTYPE_CODES[code]).tobytes())


def read(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format_version "
                                  f"{header.get('format_version')}")
        (count,) = struct.unpack("<I", f.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            (code,) = struct.unpack("<B", f.read(1))
            if code not in _DTYPE_CODES:
                raise CheckpointError(f"{path}: unknown dtype code {code} for {name!r}")
            dtype = _DTYPE_CODES[code]
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            raw = f.read(n_bytes)
            if len(raw) != n_bytes:
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return header, tensors


def _config_pair(header: dict) -> tuple[EncoderConfig, DecoderConfig]:
    return EncoderConfig(**header["encoder"]), DecoderConfig(**header["decoder"])


def load_model(path: str) -> Model:
    """Rebuild a model exactly as checkpointed."""
    header, tensors = read(path)
    enc_config, dec_config = _config_pair(header)
    vocab = Vocabulary(header["vocab"])
    if SQL_GRAMMAR.fingerprint() != header["grammar"]:
        raise CheckpointError(f"{path}: grammar fingerprint mismatch; the checkpoint "
                              "was written by an incompatible grammar")
    model = Model(enc_config, dec_config, vocab, np.random.default_rng(0))
    frozen = set(header.get("frozen", []))
    named = model.named_parameters()
    missing = sorted(set(named) - set(tensors))
    extra = sorted(set(tensors) - set(named))
    if missing or extra:
        raise CheckpointError(f"{path}: parameter names disagree "
                              f"(missing={missing[:3]}, extra={extra[:3]})")
    for name, p in named.items():
        stored = tensors[name]
        if stored.shape != p.data.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name!r}: "
                                  f"{stored.shape} vs {p.data.shape}")
        p.data = stored.astype(ad.current_dtype())
        p.trainable = name not in frozen
        p.zero_grad()
        p.adam_m = np.zeros_like(p.data)
        p.adam_v = np.zeros_like(p.data)
    return model


def check_compatible(header: dict, enc_config: EncoderConfig,
                     dec_config: DecoderConfig) -> None:
    """Raise naming the first field on which a run config disagrees."""
    for section, want in (("encoder", dataclasses.asdict(enc_config)),
                          ("decoder", dataclasses.asdict(dec_config))):
        got = header[section]
        for key, value in want.items():
            if got.get(key) != value:
                raise CheckpointError(
                    f"checkpoint incompatible with config: {section}.{key} is "
                    f"{got.get(key)!r} in the checkpoint but {value!r} in the config")


def export_json(path: str, out_path: str) -> None:
    header, tensors = read(path)
    doc = dict(header)
    doc["tensors"] = {
        name: {"shape": list(arr.shape), "values": arr.tolist()}
        for name, arr in sorted(tensors.items())
    }
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
