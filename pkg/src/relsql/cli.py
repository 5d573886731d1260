"""Command-line interface.

Commands: train, eval, infer, inspect-relations, checkpoint. Failures exit
nonzero after printing a one-line JSON error object to stderr so callers
can read outcomes mechanically.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import report as report_mod
from .config import RunConfig, load_config
from .data import load_examples, load_schemas, tokenize, Example
from .evaluate import evaluate_model, score_prediction_file
from .relations import build_schema_graph, build_relation_matrix, relation_vocab
from .sql_parse import parse_sql
from .train import train


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relsql",
                                description="relation-aware text-to-SQL parser")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="path to a key=value config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--fp64", action="store_true", help="run in 64-bit floats")

    t = sub.add_parser("train", help="train a model and retain the best-dev checkpoint")
    common(t)
    t.add_argument("--out", required=True,
                   help="checkpoint path; the log and figures use this prefix")

    e = sub.add_parser("eval", help="score a checkpoint (or a prediction file)")
    common(e)
    e.add_argument("--checkpoint", help="checkpoint to decode with")
    e.add_argument("--data", help="examples file; defaults to the config dev_path")
    e.add_argument("--predictions-in", help="score this prediction file instead of decoding")
    e.add_argument("--out", help="report JSON path; breakdown/figure/predictions "
                                 "use this prefix")

    i = sub.add_parser("infer", help="translate one question")
    common(i)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--schema-id", required=True)
    i.add_argument("--question", required=True)

    r = sub.add_parser("inspect-relations", help="dump the relation matrix for a question")
    common(r)
    r.add_argument("--schema-id", required=True)
    r.add_argument("--question", required=True)
    r.add_argument("--out", help="write JSON here instead of stdout")

    c = sub.add_parser("checkpoint", help="checkpoint utilities")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--export-json", required=True,
                   help="write the checkpoint content as JSON to this path")
    return p


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "fp64", False):
        config.fp64 = True
    ad.set_dtype("float64" if config.fp64 else "float32")
    return config


def cmd_train(args) -> int:
    config = _load_run_config(args)
    result = train(config, checkpoint_path=args.out)
    written = report_mod.training_log(args.out, result.log_rows)
    summary = {"steps": result.steps_run, "best_dev_exact_match": result.best_dev_em,
               "checkpoint": result.checkpoint_path, "artifacts": written}
    print(json.dumps(summary))
    return 0


def _examples_for_eval(config: RunConfig, args):
    schemas = load_schemas(config.tables_path)
    path = args.data or config.dev_path or config.train_path
    if not path:
        raise ValueError("no examples to evaluate: give --data or set dev_path")
    return schemas, load_examples(path, schemas)


def cmd_eval(args) -> int:
    config = _load_run_config(args)
    schemas, examples = _examples_for_eval(config, args)
    if args.predictions_in:
        with open(args.predictions_in, encoding="utf-8") as f:
            lines = [line.rstrip("\n") for line in f if line.strip()]
        outcome = score_prediction_file(lines, examples, schemas)
    else:
        if not args.checkpoint:
            raise ValueError("eval needs --checkpoint or --predictions-in")
        model = ckpt.load_model(args.checkpoint)
        header, _ = ckpt.read(args.checkpoint)
        ckpt.check_compatible(header, config.encoder_config(), config.decoder_config())
        outcome = evaluate_model(model, model.prepare_all(examples, schemas))
    print(json.dumps(outcome.report))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(outcome.report, f, indent=2)
        prefix = args.out[:-5] if args.out.endswith(".json") else args.out
        report_mod.eval_breakdown(prefix, outcome.report)
        if outcome.predictions:
            with open(f"{prefix}.predictions.sql", "w", encoding="utf-8") as f:
                f.write("\n".join(outcome.predictions) + "\n")
    return 0


def cmd_infer(args) -> int:
    config = _load_run_config(args)
    schemas = load_schemas(config.tables_path)
    if args.schema_id not in schemas:
        raise ValueError(f"unknown schema id {args.schema_id!r}")
    model = ckpt.load_model(args.checkpoint)
    schema = schemas[args.schema_id]
    example = Example(question_tokens=tokenize(args.question),
                      schema_id=args.schema_id, gold_sql="")
    prep = model.prepare(example, schema)
    _, sql, result = model.predict(prep)
    print(sql)
    if result.truncated:
        print(json.dumps({"warning": "decode truncated at the action budget"}),
              file=sys.stderr)
    return 0


def cmd_inspect_relations(args) -> int:
    config = _load_run_config(args)
    schemas = load_schemas(config.tables_path)
    if args.schema_id not in schemas:
        raise ValueError(f"unknown schema id {args.schema_id!r}")
    schema = schemas[args.schema_id]
    tokens = tokenize(args.question)
    vocab = relation_vocab(config.relation_vocab)
    matrix = build_relation_matrix(schema, len(tokens), vocab)
    elements = ([f"col:{schema.column_label(i)}" for i in range(len(schema.columns))]
                + [f"tab:{t.orig_name}" for t in schema.tables]
                + [f"q:{tok}" for tok in tokens])
    doc = {
        "schema_id": schema.id,
        "relation_vocab": vocab.name,
        "question_tokens": tokens,
        "elements": elements,
        "matrix": matrix.tolist(),
        "legend": {str(code): name for code, name in sorted(vocab.legend().items())},
        "graph_edges": [
            [f"{src.kind.value}:{src.index}", f"{dst.kind.value}:{dst.index}",
             label.name.lower().replace("_", "-")]
            for src, dst, label in build_schema_graph(schema)
        ],
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_checkpoint(args) -> int:
    ckpt.export_json(args.checkpoint, args.export_json)
    print(json.dumps({"exported": args.export_json}))
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "inspect-relations": cmd_inspect_relations,
    "checkpoint": cmd_checkpoint,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports, not crashes
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
