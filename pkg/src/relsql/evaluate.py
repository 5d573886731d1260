"""Exact-set-match scoring over an example set.

Predictions come either from greedy decoding a model or from a prediction
file (one SQL string per line, aligned with the examples file). The report
carries overall accuracy, per-difficulty accuracy when labels exist, and
per-clause error counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import DIFFICULTIES, Example
from .match import CLAUSES, exact_set_match
from .model import Model, PreparedExample
from .schema import Schema
from .sql_parse import parse_sql


@dataclass
class EvalOutcome:
    report: dict
    predictions: list[str] = field(default_factory=list)


def _empty_counts() -> dict:
    return {"total": 0, "correct": 0}


def _finish(counts: dict) -> dict:
    total = counts["total"]
    counts["accuracy"] = counts["correct"] / total if total else 0.0
    return counts


def score_pairs(pairs: list[tuple[Example, object]]) -> dict:
    """pairs: (example, predicted ast with FROM attached, or None for a failure)."""
    overall = _empty_counts()
    by_difficulty = {d: _empty_counts() for d in DIFFICULTIES}
    clause_errors = {c: 0 for c in CLAUSES}
    parse_failures = 0
    any_difficulty = False
    for ex, pred in pairs:
        overall["total"] += 1
        if ex.difficulty is not None:
            any_difficulty = True
            by_difficulty[ex.difficulty]["total"] += 1
        if pred is None:
            parse_failures += 1
            continue
        ok, breakdown = exact_set_match(ex.gold_ast, pred)
        if ok:
            overall["correct"] += 1
            if ex.difficulty is not None:
                by_difficulty[ex.difficulty]["correct"] += 1
        else:
            for clause, agree in breakdown.items():
                if not agree:
                    clause_errors[clause] += 1
    report = {"count": overall["total"], "exact_match": _finish(overall)["accuracy"],
              "clause_errors": clause_errors, "parse_failures": parse_failures}
    if any_difficulty:
        report["by_difficulty"] = {
            d: _finish(c) for d, c in by_difficulty.items() if c["total"]
        }
    return report


def evaluate_model(model: Model, prepared: list[PreparedExample]) -> EvalOutcome:
    pairs = []
    predictions = []
    for prep in prepared:
        ast, sql, _ = model.predict(prep)
        pairs.append((prep.example, ast))
        predictions.append(sql)
    return EvalOutcome(report=score_pairs(pairs), predictions=predictions)


def score_prediction_file(lines: list[str], examples: list[Example],
                          schemas: dict[str, Schema]) -> EvalOutcome:
    if len(lines) != len(examples):
        raise ValueError(f"{len(lines)} predictions for {len(examples)} examples")
    pairs = []
    for line, ex in zip(lines, examples):
        try:
            pred = parse_sql(line, schemas[ex.schema_id])
        except ValueError:
            pred = None
        pairs.append((ex, pred))
    return EvalOutcome(report=score_pairs(pairs), predictions=list(lines))
