"""Executes resolved parse trees against a model and its dataset splits.

Operations run left to right over a working selection: filters, what-if
changes, and split switches narrow or replace it, terminal operations
consume it. Each operation yields one renderable result; a failing
operation reports its error in band and the rest of the turn still runs.
"""
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import (
    And,
    CATEGORICAL,
    Cond,
    DataFrame,
    Or,
    SemanticError,
    Selection,
    apply_change,
    apply_filter,
    compute_statistic,
)
from .dialogue import (
    ConversationState,
    OpResult,
    Turn,
    compose_response,
    parse_utterance,
    resolve_context,
)
from .explain import (
    INTERACTIVE_CONFIG,
    BENCHMARK_CONFIG,
    PerturbationSpace,
    SURROGATE_WIDTHS,
    feature_interactions,
    generate_counterfactuals,
    kernel_shapley_explain,
    mean_absolute_attribution,
    rank_features,
    select_explanation,
    summarize_mistakes,
    surrogate_linear_explain,
    topk_features,
)
from .grammar import (
    GLOSSARY_TERMS,
    canonicalize,
    format_number,
    _flatten_or,
    _render_clause,
)
from .models import evaluate_metric

__all__ = [
    "Engine",
    "ExecutionResult",
    "GLOSSARY_PATH",
    "glossary_define",
    "load_glossary",
    "run_turn",
]


# ---------------------------------------------------------------------------
# Glossary


GLOSSARY_PATH = Path(__file__).resolve().parent / "resources" / "glossary.txt"


def load_glossary(path: Optional[str] = None) -> dict:
    """Term -> definition map from the shipped glossary file.

    Definitions are stored without a trailing period; the response template
    supplies sentence punctuation.
    """
    src = Path(path) if path else GLOSSARY_PATH
    glossary = {}
    for line in src.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        term, sep, definition = line.partition("|||")
        if not sep:
            raise SemanticError(f"malformed glossary line: {line!r}")
        glossary[term.strip().casefold()] = definition.strip().rstrip(".")
    return glossary


def _edit_distance(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


_GLOSSARY = load_glossary()

# every term the grammar accepts must be answerable
_missing_terms = [t for t in GLOSSARY_TERMS if t not in _GLOSSARY]
if _missing_terms:
    raise RuntimeError(
        "glossary is missing entries for: " + ", ".join(_missing_terms)
    )


def glossary_define(term: str, glossary: Optional[dict] = None) -> str:
    """Definition of a term, or the closest known terms when unknown."""
    glossary = _GLOSSARY if glossary is None else glossary
    key = term.strip().casefold()
    if key in glossary:
        return glossary[key]
    ranked = sorted(glossary, key=lambda t: (_edit_distance(key, t), t))[:3]
    return (
        f"a term I have no definition for; the closest terms I know are"
        f" {', '.join(ranked)}"
    )


# ---------------------------------------------------------------------------
# Execution engine


@dataclass(frozen=True)
class ExecutionResult:
    """One result per operation, plus per-operation wall times in seconds."""

    results: tuple
    trace: tuple


_METHOD_KEYS = {
    "feature importance": "auto",
    "linear surrogate": "surrogate",
    "shapley": "shapley",
}

_KIND_DISPLAY = {
    "gbt": "gradient boosted tree ensemble",
    "logistic": "logistic regression model",
}

# terminal operations that cannot answer anything over zero rows
_NEEDS_ROWS = {
    "predict": "predict anything",
    "likelihood": "estimate a likelihood",
    "explain": "explain a prediction",
    "topk": "rank features",
    "important": "rank features",
    "cfe": "search for counterfactuals",
    "interaction": "measure interactions",
    "mistakes": "summarize mistakes",
    "statistic": "compute a statistic",
    "score": "score the model",
    "incorrect": "look for errors",
    "show": "show rows",
}

_CONTEXT_OPS = ("previous_filter", "previous_operation")


def _mentions_prediction(pred) -> bool:
    if isinstance(pred, Cond):
        return pred.field == "prediction"
    if isinstance(pred, (And, Or)):
        return any(_mentions_prediction(p) for p in pred.parts)
    return False


def _describe_predicate(pred) -> str:
    return " or ".join(_render_clause(c) for c in _flatten_or(pred))


def _value_token(x: dict):
    return tuple(sorted((k, str(v)) for k, v in x.items()))


class Engine:
    """Runs parse trees against one model and its train/test frames.

    mode picks the perturbation budget: interactive answers keep latency
    low, benchmark runs use the full sample count. All sampling is seeded,
    so identical turns produce identical results.
    """

    def __init__(self, model, train: DataFrame, test: DataFrame,
                 mode: str = "interactive", seed: int = 0,
                 group_sample: int = 100, background_size: int = 50,
                 preview_rows: int = 10, n_samples: Optional[int] = None):
        if mode not in ("interactive", "benchmark"):
            raise SemanticError(f"unknown engine mode {mode!r}")
        self.model = model
        self.train = train
        self.test = test
        self.mode = mode
        self.seed = seed
        self.group_sample = group_sample
        self.preview_rows = preview_rows
        base = INTERACTIVE_CONFIG if mode == "interactive" else BENCHMARK_CONFIG
        self.cfg = replace(base, seed=seed)
        if n_samples is not None:
            self.cfg = replace(self.cfg, n_samples=int(n_samples))
        self.space = PerturbationSpace(train.schema, train)
        rng = np.random.default_rng(seed)
        k = min(background_size, len(train))
        self.background = train.take(
            np.sort(rng.choice(len(train), size=k, replace=False))
        )
        self._fingerprint = model.fingerprint()
        self._attributions: dict = {}
        self._model_text: Optional[str] = None

    # -- public API

    def execute(self, state, tree) -> ExecutionResult:
        """Run every operation of a resolved tree, left to right.

        The tree must not carry context operations; resolve it against the
        conversation first. Returns exactly one result per operation.
        """
        for node in tree.ops:
            if node.op in _CONTEXT_OPS:
                raise SemanticError(
                    "the parse still carries context operations;"
                    " resolve it against the conversation first"
                )
        working = self.test
        results = []
        trace = []
        for node in tree.ops:
            start = time.perf_counter()
            working, result = self._run_op(working, node)
            trace.append((node.op, time.perf_counter() - start))
            results.append(result)
        return ExecutionResult(tuple(results), tuple(trace))

    def explain_row(self, x: dict, method: str = "auto",
                    target_class: Optional[int] = None):
        """Feature attribution for one row, cached per model and values.

        The cache keys on the row's values rather than its id: a what-if
        change keeps ids but produces different rows. A new model
        fingerprint (retrain or reload of different parameters) starts a
        fresh key space.
        """
        key = (
            self._fingerprint,
            _value_token(x),
            method,
            target_class,
            self.cfg.seed,
            self.cfg.n_samples,
        )
        hit = self._attributions.get(key)
        if hit is not None:
            return hit
        surrogates = [
            lambda m, xx, s, c, wd=wd: surrogate_linear_explain(
                m, xx, wd, s, c, target_class
            )
            for wd in SURROGATE_WIDTHS
        ]
        shapley = [
            lambda m, xx, s, c: kernel_shapley_explain(
                m, xx, self.background, c, target_class
            )
        ]
        if method == "auto":
            candidates = surrogates + shapley
        elif method == "surrogate":
            candidates = surrogates
        elif method == "shapley":
            candidates = shapley
        else:
            raise SemanticError(f"unknown explanation method {method!r}")
        res = select_explanation(self.model, x, candidates, self.space, self.cfg)
        self._attributions[key] = res
        return res

    # -- dispatch

    def _run_op(self, working: DataFrame, node):
        try:
            if node.op in _NEEDS_ROWS and len(working) == 0:
                return working, OpResult(
                    node.op,
                    {},
                    error=(
                        f"The selection is empty, so I cannot"
                        f" {_NEEDS_ROWS[node.op]}."
                    ),
                )
            handler = getattr(self, f"_op_{node.op}")
            working, payload = handler(working, node)
            return working, OpResult(node.op, payload)
        except SemanticError as exc:
            return working, OpResult(
                node.op, {}, error=f"I could not finish that: {exc}."
            )

    # -- selection operations

    def _op_filter(self, working, node):
        pred = node.args[0]
        predictions = (
            self.model.predict(working) if _mentions_prediction(pred) else None
        )
        selected = apply_filter(working, Selection(predicate=pred), predictions)
        return selected, {
            "rows": len(selected),
            "description": _describe_predicate(pred),
        }

    def _op_change(self, working, node):
        feature, mode, value = node.args
        changed = apply_change(working, feature, mode, value)
        return changed, {
            "feature": feature,
            "mode": mode,
            "value": value,
            "rows": len(changed),
        }

    def _op_data(self, working, node):
        split = node.args[0]
        frame = self.train if split == "train" else self.test
        schema = frame.schema
        return frame, {
            "split": split,
            "rows": len(frame),
            "features": len(schema.features),
            "classes": tuple(schema.target_classes),
        }

    def _op_cfe(self, working, node):
        requested = int(float(node.args[0]))
        if requested < 1:
            raise SemanticError("ask for at least one counterfactual")
        target_name = node.args[1] if len(node.args) > 1 else None
        schema = working.schema
        n_classes = len(schema.target_classes)
        preds = self.model.predict(working)
        found = []
        if len(working) == 1:
            target = (
                schema.class_index(target_name)
                if target_name
                else (int(preds[0]) + 1) % n_classes
            )
            found = generate_counterfactuals(
                self.model, self._row(working, 0), requested, target,
                self.space, self.cfg, row_id=int(working.ids[0]),
            )
        else:
            budget = min(requested, len(working), self.group_sample)
            for i in range(budget):
                target = (
                    schema.class_index(target_name)
                    if target_name
                    else (int(preds[i]) + 1) % n_classes
                )
                found.extend(
                    generate_counterfactuals(
                        self.model, self._row(working, i), 1, target,
                        self.space, self.cfg, row_id=int(working.ids[i]),
                    )
                )
        payload = {
            "requested": requested,
            "found": len(found),
            "rows": len(found),
            "examples": tuple(
                tuple((f, old, new) for f, (old, new) in sorted(cf.deltas.items()))
                for cf in found[:3]
            ),
        }
        if len(working) == 1:
            payload["id"] = int(working.ids[0])
        if target_name:
            payload["target"] = target_name
        return self._counterfactual_frame(found), payload

    def _counterfactual_frame(self, found) -> DataFrame:
        # downstream operations describe the what-if rows; ids are re-issued
        # because one source row can yield several counterfactuals
        schema = self.test.schema
        columns = {}
        for f in schema.features:
            values = [cf.values[f.name] for cf in found]
            if f.kind == CATEGORICAL:
                columns[f.name] = np.array(values, dtype=object)
            else:
                columns[f.name] = np.array(values, dtype=np.float64)
        labels = [cf.after_class for cf in found]
        return DataFrame(schema, list(range(len(found))), columns, labels)

    # -- terminal operations

    def _op_predict(self, working, node):
        proba = self.model.predict_proba(working)
        classes = working.schema.target_classes
        if len(working) == 1:
            winner = int(np.argmax(proba[0]))
            return working, {
                "rows": 1,
                "id": int(working.ids[0]),
                "class_name": classes[winner],
                "per_class": {c: float(proba[0, i]) for i, c in enumerate(classes)},
            }
        preds = np.argmax(proba, axis=1)
        return working, {
            "rows": len(working),
            "breakdown": {c: int((preds == i).sum()) for i, c in enumerate(classes)},
        }

    def _op_likelihood(self, working, node):
        proba = self.model.predict_proba(working)
        classes = working.schema.target_classes
        payload = {"rows": len(working)}
        if len(working) == 1:
            payload["id"] = int(working.ids[0])
        if node.args:
            name = node.args[0]
            idx = working.schema.class_index(name)
            payload["class_name"] = name
            payload["probability"] = float(proba[:, idx].mean())
        else:
            payload["per_class"] = {
                c: float(proba[:, i].mean()) for i, c in enumerate(classes)
            }
        return working, payload

    def _op_score(self, working, node):
        metric = node.args[0]
        report = evaluate_metric(self.model, working, metric)
        return working, {
            "metric": metric,
            "value": float(report.value),
            "rows": report.n,
            "undefined": report.undefined,
        }

    def _op_incorrect(self, working, node):
        preds = self.model.predict(working)
        wrong = [int(i) for i in working.ids[preds != working.labels]]
        return working, {"rows": len(working), "wrong": len(wrong), "ids": wrong[:10]}

    def _op_count(self, working, node):
        payload = {"count": len(working)}
        if len(working) == 0:
            payload["empty_notice"] = True
        return working, payload

    def _op_show(self, working, node):
        schema = working.schema
        k = min(self.preview_rows, len(working))
        lines = []
        for i in range(k):
            cells = ", ".join(
                f"{f.name} {self._cell(working, f, i)}" for f in schema.features
            )
            lines.append(f"id {int(working.ids[i])}: {cells}")
        return working, {
            "rows": len(working),
            "shown": k,
            "preview": "; ".join(lines),
        }

    @staticmethod
    def _cell(frame, feature, i) -> str:
        value = frame.columns[feature.name][i]
        if feature.kind == CATEGORICAL:
            return str(value)
        return format_number(float(value))

    def _op_statistic(self, working, node):
        stat, target = node.args
        feature = None if target == "all" else target
        if stat == "summary":
            report = compute_statistic(working, "summary", feature)
            return working, {
                "stat": "summary",
                "rows": report.n,
                "blocks": dict(report.per_feature),
            }
        if stat == "range" and feature:
            low = compute_statistic(working, "min", feature).per_feature[feature]
            high = compute_statistic(working, "max", feature).per_feature[feature]
            return working, {
                "stat": "range",
                "feature": feature,
                "low": low,
                "high": high,
                "rows": len(working),
            }
        report = compute_statistic(working, stat, feature)
        if feature:
            return working, {
                "stat": stat,
                "feature": feature,
                "value": report.per_feature[feature],
                "rows": report.n,
            }
        return working, {
            "stat": stat,
            "per_feature": dict(report.per_feature),
            "rows": report.n,
        }

    # -- attribution operations

    def _op_explain(self, working, node):
        method_word = node.args[0]
        method = _METHOD_KEYS[method_word]
        target = (
            working.schema.class_index(node.args[1])
            if len(node.args) > 1
            else None
        )
        names = [f.name for f in working.schema.features]
        if len(working) == 1:
            res = self.explain_row(self._row(working, 0), method, target)
            payload = {
                "rows": 1,
                "method": res.method_id,
                "faithfulness": res.faith,
                "contributions": tuple(
                    (names[i], float(res.phi[i])) for i in res.ranking()
                ),
            }
        else:
            agg, sampled = self._group_attribution(working, method, target)
            payload = {
                "rows": len(working),
                "method": method_word,
                "contributions": tuple(
                    (names[i], float(agg[i])) for i in rank_features(agg)
                ),
            }
            if sampled:
                payload["sampled"] = sampled
        if len(node.args) > 1:
            payload["class_name"] = node.args[1]
        return working, payload

    def _op_topk(self, working, node):
        arg = node.args[0]
        agg, sampled = self._group_attribution(working, "auto", None)
        names = [f.name for f in working.schema.features]
        if arg == "all":
            order = topk_features(agg)
            k = "all"
        else:
            k = int(float(arg))
            order = topk_features(agg, k)
        payload = {
            "k": k,
            "features": tuple(names[i] for i in order),
            "rows": len(working),
        }
        if sampled:
            payload["sampled"] = sampled
        return working, payload

    def _op_important(self, working, node):
        target = node.args[0]
        agg, sampled = self._group_attribution(working, "auto", None)
        names = [f.name for f in working.schema.features]
        order = rank_features(agg)
        if target == "all":
            payload = {
                "ranking": tuple(names[i] for i in order),
                "rows": len(working),
            }
        else:
            idx = names.index(target)
            payload = {
                "feature": target,
                "rank": order.index(idx) + 1,
                "of": len(names),
                "weight": float(agg[idx]),
                "rows": len(working),
            }
        if sampled:
            payload["sampled"] = sampled
        return working, payload

    def _op_interaction(self, working, node):
        frame, _ = self._sample_rows(working)
        matrix = feature_interactions(self.model, frame)
        names = [f.name for f in working.schema.features]
        scored = sorted(
            (
                (names[i], names[j], float(matrix[i, j]))
                for i in range(len(names))
                for j in range(i + 1, len(names))
            ),
            key=lambda t: (-t[2], t[0], t[1]),
        )
        return working, {"rows": len(frame), "pairs": tuple(scored[:3])}

    def _op_mistakes(self, working, node):
        summary = summarize_mistakes(self.model, working)
        leaves = sorted(summary.leaves, key=lambda l: (-l.errors, l.conditions))[:3]
        regions = tuple(
            f"{' and '.join(l.conditions)} ({l.errors} of {l.support})"
            for l in leaves
        )
        return working, {
            "rows": summary.total_rows,
            "wrong": summary.total_errors,
            "regions": regions,
        }

    # -- static operations

    def _op_model_info(self, working, node):
        if self._model_text is None:
            acc = evaluate_metric(self.model, self.test, "accuracy")
            kind = _KIND_DISPLAY.get(self.model.kind, self.model.kind)
            d = len(self.train.schema.features)
            self._model_text = (
                f"The model is a {kind} trained on {len(self.train)} instances"
                f" with {d} features; accuracy on {acc.n} held-out instances"
                f" is {acc.value * 100:.1f}%."
            )
        return working, {"text": self._model_text}

    def _op_function_info(self, working, node):
        text = (
            "I answer questions about a trained tabular classifier. I can"
            " filter and show the data, predict instances and report"
            " likelihoods, explain predictions and rank important features,"
            " test what-if changes, search for counterfactuals, summarize"
            " statistics and mistakes, and score performance."
        )
        return working, {"text": text}

    def _op_define(self, working, node):
        term = node.args[0]
        if self.train.schema.has_feature(term):
            definition = self._feature_definition(term)
        else:
            definition = glossary_define(term, _GLOSSARY)
        return working, {"term": term, "definition": definition}

    def _feature_definition(self, name: str) -> str:
        schema = self.train.schema
        if schema.kind_of(name) == CATEGORICAL:
            values = ", ".join(schema.categorical_values[name])
            return f"a categorical feature of the data taking the values {values}"
        col = self.train.columns[name]
        return (
            f"a numeric feature of the data ranging from"
            f" {format_number(float(np.min(col)))} to"
            f" {format_number(float(np.max(col)))} with mean"
            f" {format_number(round(float(np.mean(col)), 1))}"
        )

    # -- shared helpers

    def _row(self, frame: DataFrame, i: int) -> dict:
        return {f.name: frame.columns[f.name][i] for f in frame.schema.features}

    def _sample_rows(self, frame: DataFrame):
        """The frame itself, or a seeded sample when it exceeds the cap."""
        if len(frame) <= self.group_sample:
            return frame, None
        rng = np.random.default_rng(self.seed)
        idx = np.sort(
            rng.choice(len(frame), size=self.group_sample, replace=False)
        )
        return frame.take(idx), self.group_sample

    def _group_attribution(self, frame: DataFrame, method: str,
                           target: Optional[int]):
        sample, sampled = self._sample_rows(frame)
        phis = [
            self.explain_row(self._row(sample, i), method, target).phi
            for i in range(len(sample))
        ]
        return mean_absolute_attribution(phis), sampled


# ---------------------------------------------------------------------------
# The one turn pipeline shared by every front end


def run_turn(engine: Engine, state: ConversationState, text: str, backend) -> Turn:
    """Parse, resolve, execute, render, and record a single user turn."""
    parse = parse_utterance(state, text, backend)
    resolved = resolve_context(state, parse)
    outcome = engine.execute(state, resolved)
    turn = Turn(
        utterance=text,
        parse=parse,
        resolved=resolved,
        parse_text=canonicalize(parse),
        response=compose_response(outcome.results),
        results=outcome.results,
    )
    state.record_turn(turn)
    return turn
