"""Conversation layer: from free text to a parse, and from results to a reply.

The pipeline for one turn is

    parse_utterance -> resolve_context -> execute (engine) -> compose_response

Parsing is retrieval-backed: the utterance is embedded with hashed character
n-grams, the closest training pairs are fetched, and either the neighbor's
parse is rebound to the query's own values (nearest-neighbor backend) or the
neighbors become few-shot demonstrations for an external completion service
whose output is validated, repaired, or discarded in favor of the neighbor
parse. Every path out of a backend is a grammatical canonical parse.
"""

import math
import re
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import And, DatasetSchema, Or, Predicate
from .datagen import TrainingPair
from .errors import ConversationError, ParseError, SemanticError
from .grammar import (
    NUMBER,
    OPERATIONS,
    OpNode,
    ParseTree,
    _flatten_and,
    _flatten_or,
    _tokenize,
    build_grammar,
    canonicalize,
    compile_acceptor,
    format_number,
    parse_text,
)

EMBED_DIM = 1 << 16
_NGRAM_SIZES = (3, 4, 5)
_NUM_TOKEN = re.compile(r"-?\d+(?:\.\d+)?\Z")

# Ops that shape the selection rather than answer a question. They never
# become the "previous operation" and never produce a terminal answer.
_SELECTION_OPS = frozenset(
    {"filter", "change", "previous_filter", "previous_operation"}
)


# ---------------------------------------------------------------------------
# utterance embeddings


@dataclass(frozen=True, eq=False)
class UtteranceEmbedding:
    """Sparse unit-norm vector of hashed character n-gram weights."""

    indices: np.ndarray
    values: np.ndarray
    empty: bool


def _clean(text: str) -> str:
    s = re.sub(r"[^a-z0-9_]+", " ", text.casefold())
    return re.sub(r"\s+", " ", s).strip()


def _term_counts(text: str, dim: int) -> Counter:
    s = _clean(text)
    counts: Counter = Counter()
    for n in _NGRAM_SIZES:
        for i in range(len(s) - n + 1):
            counts[zlib.crc32(s[i : i + n].encode("utf-8")) % dim] += 1
    return counts


def embed_utterance(
    text: str,
    dim: int = EMBED_DIM,
    idf: Optional[dict] = None,
    default_idf: float = 1.0,
) -> UtteranceEmbedding:
    counts = _term_counts(text, dim)
    if not counts:
        return UtteranceEmbedding(
            np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float32), True
        )
    items = sorted(counts.items())
    indices = np.array([b for b, _ in items], dtype=np.int64)
    if idf is None:
        values = np.array([c for _, c in items], dtype=np.float64)
    else:
        values = np.array(
            [c * idf.get(b, default_idf) for b, c in items], dtype=np.float64
        )
    values /= math.sqrt(float(np.sum(values**2)))
    return UtteranceEmbedding(indices, values.astype(np.float32), False)


def cosine(a: UtteranceEmbedding, b: UtteranceEmbedding) -> float:
    if a.empty or b.empty:
        return 0.0
    _, ia, ib = np.intersect1d(a.indices, b.indices, assume_unique=True, return_indices=True)
    if ia.size == 0:
        return 0.0
    return float(np.dot(a.values[ia].astype(np.float64), b.values[ib].astype(np.float64)))


# ---------------------------------------------------------------------------
# corpus retrieval


class CorpusIndex:
    """Inverted index over training-pair utterances.

    Scores are cosine similarities of tf-idf weighted n-gram vectors, computed
    by accumulating posting-list contributions for the query's buckets.
    """

    def __init__(self, corpus: Sequence[TrainingPair], dim: int = EMBED_DIM):
        self.corpus = list(corpus)
        self.dim = dim
        n = max(1, len(self.corpus))
        tfs = [_term_counts(p.utterance, dim) for p in self.corpus]
        df: Counter = Counter()
        for tf in tfs:
            df.update(tf.keys())
        self.idf = {b: math.log(1.0 + n / c) for b, c in df.items()}
        self._default_idf = math.log(1.0 + n)

        rows_by_bucket: dict[int, list] = {}
        vals_by_bucket: dict[int, list] = {}
        for row, tf in enumerate(tfs):
            if not tf:
                continue
            items = sorted(tf.items())
            weights = np.array(
                [c * self.idf[b] for b, c in items], dtype=np.float64
            )
            weights /= math.sqrt(float(np.sum(weights**2)))
            for (bucket, _), w in zip(items, weights):
                rows_by_bucket.setdefault(bucket, []).append(row)
                vals_by_bucket.setdefault(bucket, []).append(w)
        self._postings = {
            b: (
                np.array(rows_by_bucket[b], dtype=np.int64),
                np.array(vals_by_bucket[b], dtype=np.float64),
            )
            for b in rows_by_bucket
        }

    def embed(self, text: str) -> UtteranceEmbedding:
        return embed_utterance(text, self.dim, self.idf, self._default_idf)

    def search(self, text: str, n: int) -> list:
        """Top n (score, pair) hits, best first, one per template."""
        q = self.embed(text)
        if q.empty or not self.corpus:
            return []
        scores = np.zeros(len(self.corpus), dtype=np.float64)
        for bucket, weight in zip(q.indices.tolist(), q.values.tolist()):
            posting = self._postings.get(bucket)
            if posting is not None:
                scores[posting[0]] += weight * posting[1]
        order = np.argsort(-scores, kind="stable")
        out = []
        seen = set()
        for i in order:
            pair = self.corpus[int(i)]
            if pair.template_id in seen:
                continue
            seen.add(pair.template_id)
            out.append((float(scores[int(i)]), pair))
            if len(out) == n:
                break
        return out


def nearest_pairs(
    query: str,
    corpus: Sequence[TrainingPair],
    n: int,
    index: Optional[CorpusIndex] = None,
) -> list:
    """The n closest training pairs, one per template, closest last."""
    if index is None:
        index = CorpusIndex(corpus)
    hits = index.search(query, n)
    return [pair for _, pair in reversed(hits)]


# ---------------------------------------------------------------------------
# query normalization

_UNITS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9,
}
_TEENS = {
    "ten": 10, "eleven": 11, "twelve": 12, "thirteen": 13, "fourteen": 14,
    "fifteen": 15, "sixteen": 16, "seventeen": 17, "eighteen": 18,
    "nineteen": 19,
}
_TENS = {
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50,
    "sixty": 60, "seventy": 70, "eighty": 80, "ninety": 90,
}
_SINGLE_WORDS = {"zero": 0, **_UNITS, **_TEENS, **_TENS}
_COMPOUND_RE = re.compile(
    rf"\b({'|'.join(_TENS)})[\s-]({'|'.join(_UNITS)})\b"
)
_SINGLE_RE = re.compile(rf"\b({'|'.join(_SINGLE_WORDS)})\b")


def normalize_query(text: str, schema: DatasetSchema) -> str:
    """Case-fold, spell out numerals as digits, merge spaced feature names,
    and rewrite a few age idioms so retrieval sees canonical vocabulary."""
    s = text.casefold()
    s = re.sub(r"[^a-z0-9_.\-\s]+", " ", s)
    s = _COMPOUND_RE.sub(lambda m: str(_TENS[m[1]] + _UNITS[m[2]]), s)
    s = _SINGLE_RE.sub(lambda m: str(_SINGLE_WORDS[m[1]]), s)
    for name in sorted(schema.feature_names, key=len, reverse=True):
        if "_" in name:
            s = s.replace(name.replace("_", " "), name)
    if any(f.name == "age" and f.kind == "numeric" for f in schema.features):
        s = re.sub(r"\bolder than\b", "with age above", s)
        s = re.sub(r"\byounger than\b", "with age below", s)
    return re.sub(r"\s+", " ", s).strip()


# ---------------------------------------------------------------------------
# parsing backends


def _rebind_positions(tokens: list, positions: list, found: list) -> None:
    """Rewrite the slot values at `positions` in place. Values already present
    in the query stay put; leftover query values fill the remaining slots in
    order of appearance."""
    remaining = list(found)
    unmatched = []
    for i in positions:
        if tokens[i] in remaining:
            remaining.remove(tokens[i])
        else:
            unmatched.append(i)
    for i in unmatched:
        if not remaining:
            break
        tokens[i] = remaining.pop(0)


def _canon_number(token: str) -> str:
    return format_number(float(token))


class NearestNeighborBackend:
    """Parse by copying the closest training pair and rebinding its values.

    Substitution is kind-aware: numbers map to numbers, numeric features to
    numeric features, class names to class names, and so on, so the rebound
    string stays inside the grammar. The retrieved parse itself is the
    fallback when a substitution goes wrong.
    """

    def __init__(
        self,
        corpus: Sequence[TrainingPair],
        schema: DatasetSchema,
        index: Optional[CorpusIndex] = None,
    ):
        self.schema = schema
        self.grammar = build_grammar(schema)
        self.index = index if index is not None else CorpusIndex(corpus)
        self._numeric = frozenset(schema.numeric_features())
        self._categorical = frozenset(schema.categorical_features())
        self._classes = frozenset(schema.target_classes)
        cat_values = set()
        for values in schema.categorical_values.values():
            cat_values.update(values)
        self._cat_values = frozenset(cat_values - self._classes)

    def hints(self) -> list:
        words = {"previous_filter": "previous filter",
                 "previous_operation": "previous operation",
                 "model_info": "model", "function_info": "function"}
        return sorted(words.get(op, op) for op in OPERATIONS)

    def _fail(self) -> ConversationError:
        starts = ", ".join(self.hints()[:8])
        return ConversationError(
            "I could not understand that. Ask about the data or the model;"
            f" canonical questions start with words like {starts}."
        )

    def propose(self, text: str) -> str:
        norm = normalize_query(text, self.schema)
        hits = self.index.search(norm, 1)
        if not hits:
            raise self._fail()
        best = hits[0][1]
        for candidate in (self._rebind(best.parse, norm), best.parse):
            try:
                return canonicalize(parse_text(self.grammar, candidate))
            except (ParseError, SemanticError):
                continue
        raise self._fail()

    def _rebind(self, parse: str, normalized_query: str) -> str:
        qtoks = _tokenize(normalized_query)
        tokens = list(_tokenize(parse))

        number_positions = [
            i for i, t in enumerate(tokens) if _NUM_TOKEN.match(t)
        ]
        for i in number_positions:
            tokens[i] = _canon_number(tokens[i])
        query_numbers = [_canon_number(t) for t in qtoks if _NUM_TOKEN.match(t)]
        _rebind_positions(tokens, number_positions, query_numbers)

        for vocab in (self._numeric, self._categorical, self._classes, self._cat_values):
            positions = [i for i, t in enumerate(tokens) if t in vocab]
            found = [t for t in qtoks if t in vocab]
            _rebind_positions(tokens, positions, found)
        return " ".join(tokens)


@dataclass(frozen=True)
class ExternalBackendConfig:
    """Connection settings for a completion-style parsing service."""

    endpoint: str
    n_shot: int = 10
    timeout: float = 10.0
    max_tokens: int = 128
    stop: tuple = ("\n",)


def _http_transport(config: ExternalBackendConfig) -> Callable[[dict], dict]:
    def send(request: dict) -> dict:
        import httpx

        response = httpx.post(config.endpoint, json=request, timeout=config.timeout)
        response.raise_for_status()
        return response.json()

    return send


class ExternalBackend:
    """Parse with an external completion service, guarded end to end.

    The prompt shows the n closest corpus pairs (closest last) and asks for
    the next parse. Service output is accepted only if grammatical; otherwise
    its longest grammatical prefix is completed token by token through the
    incremental acceptor, and if that also fails the nearest-neighbor backend
    answers instead. One retry on transport errors.
    """

    def __init__(
        self,
        config: ExternalBackendConfig,
        corpus: Sequence[TrainingPair],
        schema: DatasetSchema,
        index: Optional[CorpusIndex] = None,
        transport: Optional[Callable[[dict], dict]] = None,
    ):
        self.config = config
        self.schema = schema
        self._nn = NearestNeighborBackend(corpus, schema, index)
        self.index = self._nn.index
        self.grammar = self._nn.grammar
        self.transport = transport if transport is not None else _http_transport(config)
        vocab = {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9", ".", "-", " "}
        for term in self.grammar.terminals:
            if term is not NUMBER:
                vocab.update(term.text.split())
        self._acceptor = compile_acceptor(self.grammar, sorted(vocab))

    def propose(self, text: str) -> str:
        norm = normalize_query(text, self.schema)
        hits = self.index.search(norm, self.config.n_shot)
        if not hits:
            raise self._nn._fail()
        blocks = [
            f"User: {pair.utterance}\nParsed: {pair.parse}\n"
            for _, pair in reversed(hits)
        ]
        request = {
            "prompt": "".join(blocks) + f"User: {text}\nParsed:",
            "max_tokens": self.config.max_tokens,
            "stop": list(self.config.stop),
        }
        reply = None
        for _ in range(2):
            try:
                reply = self.transport(request)["text"]
                break
            except Exception:
                continue
        if reply is None:
            return self._nn.propose(text)

        candidate = reply.strip().splitlines()[0].strip().casefold() if reply.strip() else ""
        try:
            return canonicalize(parse_text(self.grammar, candidate))
        except (ParseError, SemanticError):
            pass
        repaired = self._repair(candidate)
        if repaired is not None:
            return repaired
        return self._nn.propose(text)

    # -- acceptor-guided repair

    def _repair(self, candidate: str) -> Optional[str]:
        try:
            words = _tokenize(candidate)
        except ParseError:
            return None
        if not words:
            return None
        numbers = [float(w) for w in words if _NUM_TOKEN.match(w)]
        state = self._acceptor.start(numbers)
        boundaries = []
        buf = ""
        for word in words:
            step = (" " if buf else "") + word
            nxt = self._acceptor.feed(state, step)
            if not nxt.viable:
                break
            state = nxt
            buf += step
            boundaries.append((state, buf))
        for state, prefix in reversed(boundaries):
            completed = self._complete(state, prefix)
            if completed is None:
                continue
            try:
                return canonicalize(parse_text(self.grammar, completed))
            except (ParseError, SemanticError):
                continue
        return None

    def _complete(self, state, buf: str, budget: int = 24) -> Optional[str]:
        for _ in range(budget):
            if self._acceptor.is_accepting(state):
                return buf
            allowed = self._acceptor.allowed_tokens(state)
            words = sorted(t for t in allowed if t != " ")
            if words:
                token = words[0]
            elif " " in allowed:
                token = " "
            else:
                return None
            state = self._acceptor.feed(state, token)
            if not state.viable:
                return None
            buf += token
        return None


def parse_utterance(state: "ConversationState", text: str, backend) -> ParseTree:
    """Turn free text into a parse tree via the given backend.

    Raises ConversationError when the input is unintelligible; the message
    carries hints about how canonical questions start.
    """
    if not text or not text.strip():
        hints = backend.hints() if hasattr(backend, "hints") else []
        raise ConversationError(
            "I could not understand that; the message was empty."
            + (f" Questions start with words like {', '.join(hints[:8])}." if hints else "")
        )
    proposal = backend.propose(text)
    return parse_text(backend.grammar, proposal)


# ---------------------------------------------------------------------------
# conversation state and context resolution


@dataclass(frozen=True)
class OpResult:
    """Outcome of one operation: the payload a template renders, or an
    in-band error sentence when this op alone failed."""

    kind: str
    payload: dict
    error: Optional[str] = None


@dataclass(frozen=True)
class Turn:
    utterance: str
    parse: ParseTree
    resolved: ParseTree
    parse_text: str
    response: str
    results: tuple


class ConversationState:
    """Per-session memory: turn log, the last selection, the last question."""

    def __init__(self, session_id: str):
        self.session_id = session_id
        self.turns: list[Turn] = []
        self.last_filter: Optional[Predicate] = None
        self.last_operation: Optional[OpNode] = None
        self.pinned: list[int] = []

    def record_turn(self, turn: Turn) -> None:
        self.turns.append(turn)
        predicates = [op.args[0] for op in turn.resolved.ops if op.op == "filter"]
        if predicates:
            combined = predicates[0]
            for pred in predicates[1:]:
                combined = _conjoin_dnf(combined, pred)
            self.last_filter = combined
        for op in reversed(turn.resolved.ops):
            if op.op not in _SELECTION_OPS:
                self.last_operation = op
                break

    def pin(self, index: int) -> None:
        if not isinstance(index, int) or not 0 <= index < len(self.turns):
            raise ConversationError(
                f"cannot pin turn {index}: the conversation has {len(self.turns)} turns"
            )
        if index not in self.pinned:
            self.pinned.append(index)
            self.pinned.sort()

    def unpin(self, index: int) -> None:
        if not isinstance(index, int) or not 0 <= index < len(self.turns):
            raise ConversationError(
                f"cannot unpin turn {index}: the conversation has {len(self.turns)} turns"
            )
        if index in self.pinned:
            self.pinned.remove(index)


def _conjoin_dnf(a: Predicate, b: Predicate) -> Predicate:
    """Conjunction in disjunctive normal form, so the result is always
    renderable as `filter ... or filter ...` in the canonical surface."""
    clauses = []
    for ca in _flatten_or(a):
        for cb in _flatten_or(b):
            parts = tuple(_flatten_and(ca)) + tuple(_flatten_and(cb))
            clauses.append(parts[0] if len(parts) == 1 else And(parts))
    return clauses[0] if len(clauses) == 1 else Or(tuple(clauses))


def resolve_context(state: ConversationState, tree: ParseTree) -> ParseTree:
    """Replace context operations with what they refer to.

    `previous filter` becomes a filter over the last selection's predicate;
    `previous operation` becomes the last terminal operation, re-run against
    whatever selection this turn builds. Stored references are themselves
    resolved, so one substitution unwinds any depth of history. Idempotent.
    """
    ops = []
    for node in tree.ops:
        if node.op == "previous_filter":
            if state.last_filter is None:
                raise ConversationError(
                    "There is no earlier selection to reuse; filter the data first."
                )
            ops.append(OpNode("filter", (state.last_filter,)))
        elif node.op == "previous_operation":
            if state.last_operation is None:
                raise ConversationError(
                    "There is no earlier question to repeat; ask one first."
                )
            ops.append(state.last_operation)
        else:
            ops.append(node)
    return ParseTree(tuple(ops))


# ---------------------------------------------------------------------------
# response composition


def _fmt(value) -> str:
    return format_number(round(float(value), 3))


def _pct(p) -> str:
    return f"{float(p) * 100:.1f}%"


def _ordinal(n: int) -> str:
    n = int(n)
    if 10 <= n % 100 <= 13:
        return f"{n}th"
    return f"{n}{({1: 'st', 2: 'nd', 3: 'rd'}).get(n % 10, 'th')}"


def _t_filter(p: dict) -> str:
    n = p.get("rows", 0)
    desc = p.get("description")
    if desc:
        return f"I selected {n} instances where {desc}."
    return f"I selected {n} instances."


def _t_previous_filter(p: dict) -> str:
    return "I reused your earlier selection."


def _t_previous_operation(p: dict) -> str:
    return "I repeated your earlier question."


def _t_predict(p: dict) -> str:
    if p.get("rows") == 1 and "id" in p and "class_name" in p:
        head = f"The model predicts {p['class_name']} for instance {p['id']}"
        if "per_class" in p:
            probs = ", ".join(f"{c} {_pct(v)}" for c, v in p["per_class"].items())
            return f"{head} ({probs})."
        return f"{head}."
    parts = ", ".join(
        f"{cls} for {k} instances" for cls, k in p.get("breakdown", {}).items()
    )
    return f"Across {p.get('rows', 0)} instances the model predicts {parts}."


def _t_likelihood(p: dict) -> str:
    n = p.get("rows", 0)
    if "per_class" in p:
        parts = ", ".join(f"{c} {_pct(v)}" for c, v in p["per_class"].items())
        if n == 1:
            return f"The predicted likelihoods are {parts}."
        return f"The average predicted likelihoods across {n} instances are {parts}."
    cls = p.get("class_name", "")
    prob = p.get("probability", 0.0)
    if "id" in p:
        return f"The likelihood of {cls} for instance {p['id']} is {_pct(prob)}."
    if n == 1:
        return f"The likelihood of {cls} is {_pct(prob)}."
    return f"The average likelihood of {cls} across {n} instances is {_pct(prob)}."


def _t_explain(p: dict) -> str:
    contribs = list(p.get("contributions", ()))[:5]
    body = ", ".join(f"{f} ({w:+.3f})" for f, w in contribs) or "none"
    cls = f" for class {p['class_name']}" if "class_name" in p else ""
    note = ""
    if p.get("sampled"):
        note = f" This summary uses a sample of {p['sampled']} instances."
    method = p.get("method", "feature importance")
    return f"Based on {method}, the most influential features{cls} are {body}.{note}"


def _t_topk(p: dict) -> str:
    feats = ", ".join(p.get("features", ()))
    k = p.get("k")
    if k == "all":
        return f"All features ranked by importance: {feats}."
    return f"The top {k} features are {feats}."


def _t_important(p: dict) -> str:
    if "ranking" in p:
        return f"Every feature ranked by importance: {', '.join(p['ranking'])}."
    return (
        f"The feature {p.get('feature')} ranks {_ordinal(p.get('rank', 0))}"
        f" of {p.get('of', 0)} with average weight {p.get('weight', 0.0):+.3f}."
    )


_CHANGE_VERBS = {
    "set": ("set", "to"),
    "increase": ("increased", "by"),
    "decrease": ("decreased", "by"),
}


def _value_text(value) -> str:
    return value if isinstance(value, str) else _fmt(value)


def _t_change(p: dict) -> str:
    verb, prep = _CHANGE_VERBS.get(p.get("mode", "set"), ("set", "to"))
    vtext = _value_text(p.get("value", 0))
    return f"I {verb} {p.get('feature')} {prep} {vtext} for {p.get('rows', 0)} instances."


def _t_cfe(p: dict) -> str:
    found = p.get("found", 0)
    who = f" for instance {p['id']}" if "id" in p else ""
    target = f" to {p['target']}" if p.get("target") else ""
    if not found:
        return f"No counterfactual{who} was found within the search budget."
    shown = [
        ", ".join(f"set {f} from {_value_text(a)} to {_value_text(b)}" for f, a, b in edits)
        for edits in list(p.get("examples", ()))[:3]
    ]
    more = "; ..." if found > len(shown) else ""
    verb, noun = ("is", "way") if found == 1 else ("are", "ways")
    return (
        f"Here {verb} {found} {noun} to flip the prediction{who}{target}:"
        f" {'; '.join(shown)}{more}."
    )


def _t_interaction(p: dict) -> str:
    pairs = ", ".join(
        f"{a} with {b} ({s:.3f})" for a, b, s in list(p.get("pairs", ()))[:3]
    ) or "none"
    return f"The strongest feature interactions are {pairs}."


def _t_mistakes(p: dict) -> str:
    head = f"The model is wrong on {p.get('wrong', 0)} of {p.get('rows', 0)} instances."
    regions = list(p.get("regions", ()))
    if regions:
        head += " Mistakes concentrate where " + "; ".join(regions) + "."
    return head


_STAT_DISPLAY = {"mean": "mean", "min": "minimum", "max": "maximum"}


def _summary_sentence(feature: str, block: dict) -> str:
    if block.get("count", 0) == 0:
        return f"{feature} has no values"
    if block.get("kind") == "categorical":
        vals = ", ".join(f"{v} ({k})" for v, k in block.get("values", {}).items())
        return f"{feature} takes the values {vals}"
    return (
        f"{feature} has mean {_fmt(block['mean'])}, minimum {_fmt(block['min'])},"
        f" maximum {_fmt(block['max'])}"
    )


def _t_statistic(p: dict) -> str:
    stat = p.get("stat")
    n = p.get("rows", 0)
    if stat == "summary":
        parts = "; ".join(
            _summary_sentence(f, b) for f, b in p.get("blocks", {}).items()
        )
        return f"Across {n} instances: {parts}."
    if stat == "range" and "feature" in p:
        return (
            f"The {p.get('feature')} values across {n} instances range"
            f" from {_fmt(p.get('low', 0))} to {_fmt(p.get('high', 0))}."
        )
    word = _STAT_DISPLAY.get(stat, stat)
    if "per_feature" in p:
        parts = "; ".join(f"{f} {_fmt(v)}" for f, v in p["per_feature"].items())
        return f"Across {n} instances the {word} values are: {parts}."
    return f"The {word} {p.get('feature')} across {n} instances is {_fmt(p.get('value', 0))}."


def _t_count(p: dict) -> str:
    base = f"There are {p['count']} instances in the data you selected."
    if p.get("empty_notice"):
        return f"{base} Your filters matched nothing."
    return base


def _t_data(p: dict) -> str:
    classes = tuple(p.get("classes", ()))
    return (
        f"The {p.get('split', 'train')} data has {p.get('rows', 0)} instances,"
        f" {p.get('features', 0)} features and {len(classes)} classes"
        f" ({', '.join(classes)})."
    )


def _t_score(p: dict) -> str:
    metric = p.get("metric", "accuracy")
    if p.get("undefined"):
        return f"The {metric} is undefined on this selection."
    return f"The model's {metric} on {p.get('rows', 0)} instances is {_pct(p.get('value', 0.0))}."


def _t_incorrect(p: dict) -> str:
    head = f"The model misclassifies {p.get('wrong', 0)} of {p.get('rows', 0)} instances."
    ids = list(p.get("ids", ()))
    if ids:
        head += " Example ids: " + ", ".join(str(i) for i in ids) + "."
    return head


def _t_model_info(p: dict) -> str:
    return p.get("text") or "The model is a tabular classifier."


def _t_function_info(p: dict) -> str:
    return p.get("text") or (
        "The tool answers questions about a tabular classifier and its data."
    )


def _t_define(p: dict) -> str:
    return f"The term {p.get('term')} means {p.get('definition')}."


def _t_show(p: dict) -> str:
    return f"Here are {p.get('shown', 0)} of {p.get('rows', 0)} instances. {p.get('preview', '')}".rstrip()


RESPONSE_TEMPLATES: dict = {
    "filter": _t_filter,
    "previous_filter": _t_previous_filter,
    "previous_operation": _t_previous_operation,
    "predict": _t_predict,
    "likelihood": _t_likelihood,
    "explain": _t_explain,
    "topk": _t_topk,
    "important": _t_important,
    "change": _t_change,
    "cfe": _t_cfe,
    "interaction": _t_interaction,
    "mistakes": _t_mistakes,
    "statistic": _t_statistic,
    "count": _t_count,
    "data": _t_data,
    "score": _t_score,
    "incorrect": _t_incorrect,
    "model_info": _t_model_info,
    "function_info": _t_function_info,
    "define": _t_define,
    "show": _t_show,
}


def _check_template_coverage() -> None:
    missing = set(OPERATIONS) - set(RESPONSE_TEMPLATES)
    extra = set(RESPONSE_TEMPLATES) - set(OPERATIONS)
    if missing or extra:
        raise RuntimeError(
            f"response templates out of sync: missing {sorted(missing)},"
            f" extra {sorted(extra)}"
        )


_check_template_coverage()


def _decap(sentence: str) -> str:
    if len(sentence) > 1 and sentence[0].isupper() and not sentence[1].isupper():
        return sentence[0].lower() + sentence[1:]
    return sentence


def compose_response(results) -> str:
    """Render one reply from per-operation results, in execution order.

    Each result contributes exactly one fragment; adjacent fragments are
    joined by exactly one connective. Error results render their sentence
    in place, so one failing op does not silence the rest of the turn.
    """
    results = list(results)
    if not results:
        raise ValueError("no results to render")
    fragments = []
    for result in results:
        if result.error:
            fragments.append(result.error)
        else:
            fragments.append(RESPONSE_TEMPLATES[result.kind](result.payload))
    reply = fragments[0]
    for fragment in fragments[1:]:
        reply += " Also, " + _decap(fragment)
    return reply
