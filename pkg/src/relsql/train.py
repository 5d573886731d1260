"""Mini-batch teacher-forced training with periodic dev evaluation.

One seeded generator drives everything random: parameter init, dropout,
and epoch shuffling. The checkpoint retained on disk is the one with the
best dev exact match seen so far; a NaN loss aborts with diagnostics
rather than training onward from poison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tape, backward, zero_grads
from .batching import loss_batch
from .config import RunConfig
from .data import build_vocab, load_embeddings, load_examples, load_schemas
from .evaluate import evaluate_model
from .model import Model
from .optim import adam_step


@dataclass
class TrainResult:
    model: Model
    log_rows: list[dict] = field(default_factory=list)
    best_dev_em: float | None = None
    steps_run: int = 0
    checkpoint_path: str | None = None


def _batches(order: list[int], size: int):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def train(config: RunConfig, checkpoint_path: str | None = None,
          log_every: int = 1, progress=None) -> TrainResult:
    config.validate()
    ad.set_dtype("float64" if config.fp64 else "float32")
    rng = np.random.default_rng(config.seed)

    schemas = load_schemas(config.tables_path)
    train_examples = load_examples(config.train_path, schemas)
    if not train_examples:
        raise ValueError(f"{config.train_path}: no training examples")
    dev_examples = (load_examples(config.dev_path, schemas)
                    if config.dev_path else train_examples)

    vocab = build_vocab(train_examples, schemas, config.min_count)
    pretrained = None
    if config.use_pretrained_embeddings:
        pretrained = load_embeddings(config.embeddings_path, vocab, config.word_dim)

    model = Model(config.encoder_config(), config.decoder_config(), vocab, rng,
                  pretrained=pretrained)
    train_prep = model.prepare_all(train_examples, schemas)
    dev_prep = model.prepare_all(dev_examples, schemas)

    params = model.parameters()
    opt = config.adam_config()
    result = TrainResult(model=model)

    def run_dev_eval() -> float:
        return evaluate_model(model, dev_prep).report["exact_match"]

    step = 0
    stop = False
    while step < config.max_steps and not stop:
        order = list(rng.permutation(len(train_prep)))
        for batch in _batches(order, config.batch_size):
            if step >= config.max_steps:
                break
            zero_grads(params)
            with Tape() as tape:
                loss = loss_batch(model, [train_prep[i] for i in batch],
                                  training=True, rng=rng)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                bad = [train_prep[i].example.gold_sql for i in batch]
                raise RuntimeError(f"non-finite loss {loss_value} at step {step}; "
                                   f"batch gold queries: {bad}")
            backward(loss, tape)
            lr = adam_step(params, opt, step)
            step += 1
            result.steps_run = step

            row = {"step": step, "lr": lr, "loss": loss_value, "dev_em": None}
            if step % config.eval_every == 0 or step == config.max_steps:
                dev_em = run_dev_eval()
                row["dev_em"] = dev_em
                if result.best_dev_em is None or dev_em > result.best_dev_em:
                    result.best_dev_em = dev_em
                    if checkpoint_path:
                        checkpoint.save(checkpoint_path, model)
                        result.checkpoint_path = checkpoint_path
                if dev_em >= config.early_stop_em:
                    stop = True
            if step % log_every == 0 or row["dev_em"] is not None:
                result.log_rows.append(row)
            if progress is not None:
                progress(row)
            if stop:
                break

    if checkpoint_path and result.checkpoint_path is None:
        checkpoint.save(checkpoint_path, model)
        result.checkpoint_path = checkpoint_path
    return result
