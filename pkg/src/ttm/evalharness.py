"""Parsing-accuracy evaluation: exact match, gold splitting, reports.

Gold pairs live in tab-separated files (utterance, parse, optional split
label). Splitting marks a pair "iid" when its operation structure, with
argument leaves collapsed to their kinds, already occurs among the
training parses; everything else is "compositional".
"""
import csv
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

from .data import CATEGORICAL, DatasetSchema
from .errors import ConversationError, EvalError, ParseError
from .grammar import (
    CMP_SYMBOL_TO_WORDS,
    CMP_WORDS,
    STAT_ID_TO_WORD,
    STAT_WORDS,
    canonicalize,
    parse_text,
    _flatten_and,
    _flatten_or,
)

__all__ = [
    "EvalReport",
    "GoldPair",
    "convert_mturk",
    "evaluate_backend",
    "exact_match",
    "read_gold",
    "split_gold",
    "structure_key",
    "write_failures",
    "write_gold",
    "write_report",
]


@dataclass(frozen=True)
class GoldPair:
    utterance: str
    parse: str
    split: Optional[str] = None


def exact_match(predicted, gold) -> bool:
    """Canonical-surface equality of two parse trees.

    Number formatting and whitespace cannot cause a mismatch; conjunct
    order can, deliberately: the DSL is order-sensitive.
    """
    return canonicalize(predicted) == canonicalize(gold)


# ---------------------------------------------------------------------------
# Structure keys


def _feature_slot(schema: DatasetSchema, name: str) -> str:
    return "<catfeat>" if schema.kind_of(name) == CATEGORICAL else "<numfeat>"


def _cond_slot(schema: DatasetSchema, cond) -> str:
    if cond.field == "id":
        return "id <num>"
    if cond.field in ("label", "prediction"):
        return f"{cond.field} <cmp> <class>"
    if schema.kind_of(cond.field) == CATEGORICAL:
        return "<catfeat> <cmp> <catval>"
    return "<numfeat> <cmp> <num>"


# operations whose canonical surface carries no arguments at all
_KEYWORD_SURFACE = {
    "predict": "predict",
    "interaction": "interaction",
    "mistakes": "mistakes",
    "incorrect": "incorrect",
    "count": "count data",
    "show": "show data",
    "model_info": "model",
    "function_info": "function",
    "previous_filter": "previous filter",
    "previous_operation": "previous operation",
}


def structure_key(tree, schema: DatasetSchema) -> str:
    """The parse with open-class argument leaves replaced by their kind.

    Closed-class tokens (operation keywords, statistic and metric names,
    explanation methods, change modes, split names, glossary terms, "all")
    are structure and stay literal; dataset-specific leaves (features,
    numbers, classes, categorical values, comparators) collapse.
    """
    parts = []
    for node in tree.ops:
        op, args = node.op, node.args
        if op == "filter":
            clauses = " or ".join(
                " and ".join(_cond_slot(schema, c) for c in _flatten_and(clause))
                for clause in _flatten_or(args[0])
            )
            parts.append(f"filter {clauses}")
        elif op == "likelihood":
            parts.append("likelihood <class>" if args else "likelihood")
        elif op == "explain":
            s = f"explain {args[0]}"
            if len(args) > 1:
                s += " class <class>"
            parts.append(s)
        elif op == "topk":
            parts.append("topk all" if args[0] == "all" else "topk <num>")
        elif op == "important":
            target = "all" if args[0] == "all" else _feature_slot(schema, args[0])
            parts.append(f"important {target}")
        elif op == "change":
            feature, mode, value = args
            slot = "<catval>" if isinstance(value, str) else "<num>"
            parts.append(f"change {_feature_slot(schema, feature)} {mode} {slot}")
        elif op == "cfe":
            parts.append("cfe <num> <class>" if len(args) > 1 else "cfe <num>")
        elif op == "statistic":
            stat, target = args
            slot = "all" if target == "all" else _feature_slot(schema, target)
            parts.append(f"statistic {stat} {slot}")
        elif op == "data":
            parts.append(f"data {args[0]}_data")
        elif op == "score":
            parts.append(f"score {args[0]}")
        elif op == "define":
            term = args[0]
            if schema.has_feature(term):
                parts.append(f"define {_feature_slot(schema, term)}")
            else:
                parts.append(f"define {term}")
        else:
            parts.append(_KEYWORD_SURFACE[op])
    return " and ".join(parts)


_NUM_TOKEN = re.compile(r"^-?\d+(?:\.\d+)?$")


def _abstract_numbers(parse: str) -> str:
    # two parses that differ only in numeric literals always share a
    # structure key, so one representative parse per abstraction suffices
    return " ".join(
        "<n>" if _NUM_TOKEN.match(tok) else tok for tok in parse.split()
    )


def split_gold(gold: Iterable[GoldPair], training_parses: Iterable[str],
               grammar) -> list:
    """Label every gold pair iid or compositional against the training set."""
    schema = grammar.schema
    memo: dict = {}

    def key_of(parse: str, tree=None) -> str:
        abstract = _abstract_numbers(parse)
        if abstract not in memo:
            memo[abstract] = structure_key(
                tree if tree is not None else parse_text(grammar, parse), schema
            )
        return memo[abstract]

    seen = {key_of(parse) for parse in training_parses}
    labeled = []
    for pair in gold:
        tree = _parse_gold(grammar, pair)
        label = "iid" if key_of(pair.parse, tree) in seen else "compositional"
        labeled.append(replace(pair, split=label))
    return labeled


# ---------------------------------------------------------------------------
# Backend evaluation


@dataclass(frozen=True)
class EvalReport:
    """Accuracy rows (split, n, accuracy) and the missed triples."""

    backend: str
    rows: tuple
    failures: tuple


def _parse_gold(grammar, pair: GoldPair):
    try:
        return parse_text(grammar, pair.parse)
    except ParseError as exc:
        raise EvalError(
            f"ungrammatical gold parse {pair.parse!r} for {pair.utterance!r}: {exc}"
        ) from None


def evaluate_backend(backend, gold: Iterable[GoldPair], name: str = "backend") -> EvalReport:
    """Exact-match accuracy of a parsing backend over a gold set.

    Deterministic given the backend's seeds: pairs are scored in order and
    every miss is recorded as an (utterance, predicted, gold) triple. A
    proposal that does not parse counts as a miss with an empty prediction.
    """
    gold = list(gold)
    if not gold:
        raise EvalError("the gold set is empty; nothing to evaluate")
    counts = {"overall": [0, 0], "iid": [0, 0], "compositional": [0, 0]}
    failures = []
    for pair in gold:
        gold_tree = _parse_gold(backend.grammar, pair)
        predicted = ""
        hit = False
        try:
            proposal = backend.propose(pair.utterance)
            tree = parse_text(backend.grammar, proposal)
            predicted = canonicalize(tree)
            hit = exact_match(tree, gold_tree)
        except (ConversationError, ParseError):
            pass
        buckets = ["overall"]
        if pair.split in ("iid", "compositional"):
            buckets.append(pair.split)
        for bucket in buckets:
            counts[bucket][0] += int(hit)
            counts[bucket][1] += 1
        if not hit:
            failures.append((pair.utterance, predicted, canonicalize(gold_tree)))
    rows = tuple(
        (split, n, (hits / n) if n else 0.0) for split, (hits, n) in counts.items()
    )
    return EvalReport(backend=name, rows=rows, failures=tuple(failures))


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["backend", "split", "n", "accuracy"])
        for split, n, accuracy in report.rows:
            writer.writerow([report.backend, split, n, f"{accuracy:.4f}"])


def write_failures(report: EvalReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utterance", "predicted", "gold"])
        for utterance, predicted, gold in report.failures:
            writer.writerow([utterance, predicted, gold])


# ---------------------------------------------------------------------------
# Gold files


def read_gold(path) -> list:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) == 2:
            utterance, parse = fields
            split = None
        elif len(fields) == 3:
            utterance, parse, split = fields
            if split not in ("iid", "compositional"):
                raise EvalError(f"line {lineno}: unknown split label {split!r}")
        else:
            raise EvalError(
                f"line {lineno}: expected tab-separated utterance and parse"
            )
        pairs.append(GoldPair(utterance, parse, split))
    return pairs


def write_gold(pairs: Iterable[GoldPair], path) -> None:
    lines = []
    for pair in pairs:
        for field in (pair.utterance, pair.parse):
            if "\t" in field:
                raise EvalError(f"field contains a tab: {field!r}")
        tail = f"\t{pair.split}" if pair.split else ""
        lines.append(f"{pair.utterance}\t{pair.parse}{tail}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Function-call notation


_CALL_RE = re.compile(r"^\s*([a-z_]+)\s*\(([^()]*)\)\s*$")


def _cmp_words(token: str) -> str:
    if token in CMP_SYMBOL_TO_WORDS:
        return CMP_SYMBOL_TO_WORDS[token]
    if token in CMP_WORDS:
        return token
    raise EvalError(f"unknown comparator {token!r}")


def _convert_one(call: str) -> str:
    m = _CALL_RE.match(call)
    if not m:
        raise EvalError(f"cannot read function call {call!r}")
    name, raw = m.group(1), m.group(2).strip()
    args = [a.strip() for a in raw.split(",")] if raw else []

    def need(*arities):
        if len(args) not in arities:
            raise EvalError(f"{name} takes {arities} arguments, got {len(args)}")

    if name == "filter":
        if len(args) == 2 and args[0] == "id":
            return f"filter id {args[1]}"
        need(3)
        field, cmp_tok, value = args
        return f"filter {field} {_cmp_words(cmp_tok)} {value}"
    if name in _KEYWORD_SURFACE and name not in ("predict",):
        need(0)
        return _KEYWORD_SURFACE[name]
    if name == "predict":
        need(0)
        return "predict"
    if name in ("model", "function"):
        need(0)
        return name
    if name == "likelihood":
        need(0, 1)
        return "likelihood" + (f" {args[0]}" if args else "")
    if name == "explain":
        need(1, 2)
        return f"explain {args[0]}" + (f" class {args[1]}" if len(args) > 1 else "")
    if name in ("topk", "important", "score", "define"):
        need(1)
        return f"{name} {args[0]}"
    if name == "change":
        need(3)
        return f"change {args[0]} {args[1]} {args[2]}"
    if name == "cfe":
        need(1, 2)
        return "cfe " + " ".join(args)
    if name == "statistic":
        need(2)
        stat = STAT_ID_TO_WORD.get(args[0], args[0])
        if stat not in STAT_WORDS:
            raise EvalError(f"unknown statistic {args[0]!r}")
        return f"statistic {stat} {args[1]}"
    if name == "data":
        need(1)
        split = args[0][: -len("_data")] if args[0].endswith("_data") else args[0]
        if split not in ("train", "test"):
            raise EvalError(f"unknown data split {args[0]!r}")
        return f"data {split}_data"
    raise EvalError(f"unknown operation {name!r}")


def convert_mturk(text: str) -> str:
    """Map function-call notation to the canonical DSL surface.

    Example: "filter(age, >, 35) and topk(3)" becomes
    "filter age greater than 35 and topk 3". Purely syntactic; validate
    the result against a grammar to catch dataset mismatches.
    """
    calls = text.split(" and ")
    return " and ".join(_convert_one(c) for c in calls)
