"""The conversation DSL: dataset-specialized productions, parsing, and the
incremental acceptor for guided decoding.

The surface language is flat keyword text ("filter age greater than 35 and
topk 3"). `and` is overloaded: it joins predicate clauses when what follows
is a condition, and it sequences operations otherwise. The parser is a
table-driven Earley recognizer over word positions, which keeps every viable
reading alive (needed both for the overloaded `and` and for comparison
phrases that are prefixes of longer ones, like "less than" inside "less than
or equal to"). The same chart machinery, advanced one terminal at a time,
powers the acceptor's viable-prefix checks.

Numeric values are not part of the static grammar: each utterance's numbers
are extracted up front and injected as that utterance's number terminals.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional

from .data import And, Cond, DatasetSchema, Or, Predicate
from .errors import ParseError, SchemaError

# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class OpNode:
    """One operation in a parse: op kind, typed args, nested nodes."""

    op: str
    args: tuple = ()
    children: tuple = ()


@dataclass(frozen=True)
class ParseTree:
    ops: tuple[OpNode, ...]


OPERATIONS = (
    "filter",
    "previous_filter",
    "previous_operation",
    "predict",
    "likelihood",
    "explain",
    "topk",
    "important",
    "change",
    "cfe",
    "interaction",
    "mistakes",
    "statistic",
    "count",
    "data",
    "score",
    "incorrect",
    "model_info",
    "function_info",
    "define",
    "show",
)

CMP_WORDS = {
    "greater than": ">",
    "less than": "<",
    "greater than or equal to": ">=",
    "less than or equal to": "<=",
    "equal to": "=",
    "not equal to": "!=",
}
CMP_SYMBOL_TO_WORDS = {v: k for k, v in CMP_WORDS.items()}

STAT_WORDS = {
    "mean": "mean",
    "minimum": "min",
    "maximum": "max",
    "range": "range",
    "summary": "summary",
}
STAT_ID_TO_WORD = {v: k for k, v in STAT_WORDS.items()}

METRICS = ("accuracy", "precision", "recall", "f1")
EXPLAIN_METHODS = ("feature importance", "linear surrogate", "shapley")

# Terms the `define` operation accepts beyond feature names. Every operation
# keyword is definable so users can ask what any verb of the system means.
GLOSSARY_TERMS = tuple(
    sorted(
        set(
            [
                "filter",
                "predict",
                "likelihood",
                "explain",
                "topk",
                "important",
                "change",
                "cfe",
                "interaction",
                "mistakes",
                "statistic",
                "count",
                "data",
                "score",
                "incorrect",
                "model",
                "function",
                "define",
                "show",
                "counterfactual",
                "feature importance",
                "linear surrogate",
                "shapley",
                "faithfulness",
                "stability",
                "accuracy",
                "precision",
                "recall",
                "f1",
                "prediction",
            ]
        )
    )
)


# ---------------------------------------------------------------------------
# Terminals and productions


@dataclass(frozen=True)
class Terminal:
    """A terminal symbol: a fixed word sequence plus an error-class label.

    The number terminal is special: it has no fixed words and matches the
    numeric surfaces extracted from the current utterance.
    """

    words: tuple[str, ...]
    cls: str
    payload: object = None

    @property
    def text(self) -> str:
        return " ".join(self.words)

    def __repr__(self):
        return f"T({self.text or '<number>'})"


NUMBER = Terminal((), "number")


@dataclass(frozen=True)
class Production:
    lhs: str
    rhs: tuple  # Terminal or nonterminal name (str)
    action: str


def _kw(text: str, cls: str = "keyword", payload=None) -> Terminal:
    return Terminal(tuple(text.split()), cls, payload)


class Grammar:
    """Dataset-specialized productions plus terminal inventory."""

    def __init__(self, schema: DatasetSchema, productions: list[Production], start: str):
        self.schema = schema
        self.start = start
        self.productions = tuple(productions)
        self.by_lhs: dict[str, list[int]] = {}
        for i, p in enumerate(self.productions):
            self.by_lhs.setdefault(p.lhs, []).append(i)
        self.nonterminals = set(self.by_lhs)
        terms = []
        seen = set()
        for p in self.productions:
            for sym in p.rhs:
                if isinstance(sym, Terminal) and sym not in seen:
                    seen.add(sym)
                    terms.append(sym)
        self.terminals = tuple(terms)

    def render_productions(self) -> str:
        """Human-readable grammar listing, one production per line."""
        lines = []
        for p in self.productions:
            parts = []
            for sym in p.rhs:
                if isinstance(sym, Terminal):
                    parts.append("<number>" if sym is NUMBER else f"'{sym.text}'")
                else:
                    parts.append(sym)
            lines.append(f"{p.lhs} ::= {' '.join(parts)}")
        return "\n".join(lines) + "\n"


_WORD_RE = re.compile(r"-?\d+(?:\.\d+)?|[a-z_][a-z0-9_-]*")


def _tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _is_number_token(tok: str) -> bool:
    return bool(re.fullmatch(r"-?\d+(?:\.\d+)?", tok))


def _reserved_words() -> set[str]:
    words = set()
    for kw in (
        "filter previous operation predict likelihood explain topk important "
        "change cfe interaction mistakes statistic count data score incorrect "
        "model function define show and or all id label prediction class set "
        "increase decrease train_data test_data"
    ).split():
        words.add(kw)
    for phrase in CMP_WORDS:
        words.update(phrase.split())
    for w in STAT_WORDS:
        words.add(w)
    words.update(METRICS)
    for phrase in EXPLAIN_METHODS:
        words.update(phrase.split())
    for phrase in GLOSSARY_TERMS:
        words.update(phrase.split())
    return words


RESERVED_WORDS = _reserved_words()


def build_grammar(schema: DatasetSchema) -> Grammar:
    """Specialize the DSL to a schema: its features, values, and classes
    become the only acceptable argument terminals.
    """
    for name in schema.feature_names:
        toks = _tokenize(name)
        if tuple(toks) != tuple(name.split()):
            raise SchemaError(
                f"feature name {name!r} is not expressible in the grammar; rename it"
            )
        for w in name.split():
            if w in RESERVED_WORDS:
                raise SchemaError(
                    f"feature name {name!r} uses the reserved word {w!r}; "
                    "rename or alias the column"
                )
            if _is_number_token(w):
                raise SchemaError(
                    f"feature name {name!r} looks like a number; rename the column"
                )
    for cls_name in schema.target_classes:
        for w in cls_name.split():
            if w in RESERVED_WORDS or _is_number_token(w):
                raise SchemaError(
                    f"class name {cls_name!r} uses the reserved word {w!r}; rename it"
                )
    for feat, values in schema.categorical_values.items():
        for v in values:
            for w in str(v).split():
                if w in RESERVED_WORDS or _is_number_token(w):
                    raise SchemaError(
                        f"categorical value {v!r} of {feat!r} uses reserved word {w!r}"
                    )

    feature_terms = {
        f.name: Terminal(tuple(f.name.split()), "feature name", f.name)
        for f in schema.features
    }
    class_terms = {
        c: Terminal(tuple(c.split()), "class name", c) for c in schema.target_classes
    }

    AND = _kw("and")
    OR = _kw("or")
    P: list[Production] = []

    def add(lhs, rhs, action):
        P.append(Production(lhs, tuple(rhs), action))

    add("query", ["ops"], "first")
    add("ops", ["op"], "ops_single")
    add("ops", ["op", AND, "ops"], "ops_cons")

    # every op alternative wraps into an OpNode
    add("op", ["filterexpr"], "op_filter")
    add("op", [_kw("previous filter", "operation")], "op_previous_filter")
    add("op", [_kw("previous operation", "operation")], "op_previous_operation")
    add("op", [_kw("predict", "operation")], "op_predict")
    add("op", ["likelihood_op"], "first")
    add("op", ["explain_op"], "first")
    add("op", ["topk_op"], "first")
    add("op", ["important_op"], "first")
    add("op", ["change_op"], "first")
    add("op", ["cfe_op"], "first")
    add("op", [_kw("interaction", "operation")], "op_interaction")
    add("op", [_kw("mistakes", "operation")], "op_mistakes")
    add("op", ["statistic_op"], "first")
    add("op", ["count_op"], "first")
    add("op", ["data_op"], "first")
    add("op", ["score_op"], "first")
    add("op", [_kw("incorrect", "operation")], "op_incorrect")
    add("op", [_kw("model", "operation")], "op_model_info")
    add("op", [_kw("function", "operation")], "op_function_info")
    add("op", ["define_op"], "first")
    add("op", ["show_op"], "first")

    # filtering: conjunction inside a clause, disjunction across clauses
    FILTER = _kw("filter", "operation")
    add("filterexpr", ["filterclause"], "first")
    add("filterexpr", ["filterexpr", OR, "filterclause"], "filter_or")
    add("filterclause", [FILTER, "conds"], "second")
    add("conds", ["cond"], "first")
    add("conds", ["cond", AND, "conds"], "conds_cons")

    for f in schema.features:
        term = feature_terms[f.name]
        if f.kind == "numeric":
            add("cond", [term, "numcmp", NUMBER], "cond_feature")
        else:
            val_nt = f"value_{f.name.replace(' ', '_')}"
            for v in schema.categorical_values[f.name]:
                add(val_nt, [Terminal(tuple(str(v).split()), "categorical value", v)], "first")
            add("cond", [term, "eqcmp", val_nt], "cond_feature")
    add("cond", [_kw("id"), NUMBER], "cond_id")
    add("cond", [_kw("label"), "eqcmp", "classname"], "cond_label")
    add("cond", [_kw("prediction"), "eqcmp", "classname"], "cond_prediction")

    for phrase, sym in CMP_WORDS.items():
        add("numcmp", [Terminal(tuple(phrase.split()), "comparison", sym)], "first")
    for phrase in ("equal to", "not equal to"):
        add("eqcmp", [Terminal(tuple(phrase.split()), "comparison", CMP_WORDS[phrase])], "first")

    for c in schema.target_classes:
        add("classname", [class_terms[c]], "first")

    LIKELIHOOD = _kw("likelihood", "operation")
    add("likelihood_op", [LIKELIHOOD], "op_likelihood0")
    add("likelihood_op", [LIKELIHOOD, "classname"], "op_likelihood1")

    EXPLAIN = _kw("explain", "operation")
    for m in EXPLAIN_METHODS:
        m_term = Terminal(tuple(m.split()), "explanation method", m)
        add("explain_op", [EXPLAIN, m_term], "op_explain")
        add("explain_op", [EXPLAIN, m_term, _kw("class"), "classname"], "op_explain_class")

    TOPK = _kw("topk", "operation")
    ALL = _kw("all")
    add("topk_op", [TOPK, NUMBER], "op_topk_n")
    add("topk_op", [TOPK, ALL], "op_topk_all")

    IMPORTANT = _kw("important", "operation")
    for f in schema.features:
        add("important_op", [IMPORTANT, feature_terms[f.name]], "op_important")
    add("important_op", [IMPORTANT, ALL], "op_important_all")

    CHANGE = _kw("change", "operation")
    SET = _kw("set")
    for f in schema.features:
        term = feature_terms[f.name]
        if f.kind == "numeric":
            add("change_op", [CHANGE, term, "changemode", NUMBER], "op_change")
        else:
            val_nt = f"value_{f.name.replace(' ', '_')}"
            add("change_op", [CHANGE, term, SET, val_nt], "op_change_set")
    add("changemode", [SET], "first")
    add("changemode", [_kw("increase")], "first")
    add("changemode", [_kw("decrease")], "first")

    CFE = _kw("cfe", "operation")
    add("cfe_op", [CFE, NUMBER], "op_cfe0")
    add("cfe_op", [CFE, NUMBER, "classname"], "op_cfe1")

    STATISTIC = _kw("statistic", "operation")
    add("statistic_op", [STATISTIC, "statname", "stattarget"], "op_statistic")
    for word, stat_id in STAT_WORDS.items():
        add("statname", [Terminal(tuple(word.split()), "statistic name", stat_id)], "first")
    for f in schema.features:
        add("stattarget", [feature_terms[f.name]], "first")
    add("stattarget", [ALL], "first")

    COUNT = _kw("count", "operation")
    DATA = _kw("data", "operation")
    add("count_op", [COUNT], "op_count")
    add("count_op", [COUNT, _kw("data")], "op_count")
    add("data_op", [DATA], "op_data_default")
    add("data_op", [DATA, _kw("train_data", "split name", "train")], "op_data")
    add("data_op", [DATA, _kw("test_data", "split name", "test")], "op_data")

    SCORE = _kw("score", "operation")
    add("score_op", [SCORE], "op_score_default")
    for m in METRICS:
        add("score_op", [SCORE, _kw(m, "metric name", m)], "op_score")

    DEFINE = _kw("define", "operation")
    for f in schema.features:
        add("define_op", [DEFINE, feature_terms[f.name]], "op_define_feature")
    for term in GLOSSARY_TERMS:
        add("define_op", [DEFINE, Terminal(tuple(term.split()), "term", term)], "op_define_term")

    SHOW = _kw("show", "operation")
    add("show_op", [SHOW], "op_show")
    add("show_op", [SHOW, _kw("data")], "op_show")

    return Grammar(schema, P, "query")


# ---------------------------------------------------------------------------
# Semantic actions: derivation values -> AST


def _flatten_or(pred) -> tuple:
    return pred.parts if isinstance(pred, Or) else (pred,)


def _flatten_and(pred) -> tuple:
    return pred.parts if isinstance(pred, And) else (pred,)


_ACTIONS = {
    "first": lambda v: v[0],
    "second": lambda v: v[1],
    "ops_single": lambda v: (v[0],),
    "ops_cons": lambda v: (v[0],) + v[2],
    "op_filter": lambda v: OpNode("filter", (v[0],)),
    "filter_or": lambda v: Or(_flatten_or(v[0]) + (v[2],)),
    "conds_cons": lambda v: And((v[0],) + _flatten_and(v[2])),
    "cond_feature": lambda v: Cond(v[0], v[1], v[2]),
    "cond_id": lambda v: Cond("id", "=", v[1]),
    "cond_label": lambda v: Cond("label", v[1], v[2]),
    "cond_prediction": lambda v: Cond("prediction", v[1], v[2]),
    "op_previous_filter": lambda v: OpNode("previous_filter"),
    "op_previous_operation": lambda v: OpNode("previous_operation"),
    "op_predict": lambda v: OpNode("predict"),
    "op_likelihood0": lambda v: OpNode("likelihood"),
    "op_likelihood1": lambda v: OpNode("likelihood", (v[1],)),
    "op_explain": lambda v: OpNode("explain", (v[1],)),
    "op_explain_class": lambda v: OpNode("explain", (v[1], v[3])),
    "op_topk_n": lambda v: OpNode("topk", (v[1],)),
    "op_topk_all": lambda v: OpNode("topk", ("all",)),
    "op_important": lambda v: OpNode("important", (v[1],)),
    "op_important_all": lambda v: OpNode("important", ("all",)),
    "op_change": lambda v: OpNode("change", (v[1], v[2], v[3])),
    "op_change_set": lambda v: OpNode("change", (v[1], "set", v[3])),
    "op_cfe0": lambda v: OpNode("cfe", (v[1],)),
    "op_cfe1": lambda v: OpNode("cfe", (v[1], v[2])),
    "op_interaction": lambda v: OpNode("interaction"),
    "op_mistakes": lambda v: OpNode("mistakes"),
    "op_statistic": lambda v: OpNode("statistic", (v[1], v[2])),
    "op_count": lambda v: OpNode("count"),
    "op_data_default": lambda v: OpNode("data", ("test",)),
    "op_data": lambda v: OpNode("data", (v[1],)),
    "op_score_default": lambda v: OpNode("score", ("accuracy",)),
    "op_score": lambda v: OpNode("score", (v[1],)),
    "op_incorrect": lambda v: OpNode("incorrect"),
    "op_model_info": lambda v: OpNode("model_info"),
    "op_function_info": lambda v: OpNode("function_info"),
    "op_define_feature": lambda v: OpNode("define", (v[1],)),
    "op_define_term": lambda v: OpNode("define", (v[1],)),
    "op_show": lambda v: OpNode("show"),
}


def _terminal_value(term: Terminal, matched_words: tuple[str, ...]):
    if term is NUMBER:
        return _word_number_value(matched_words)
    if term.payload is not None:
        return term.payload
    return term.text


# ---------------------------------------------------------------------------
# Numeric extraction

_UNITS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11,
    "twelve": 12, "thirteen": 13, "fourteen": 14, "fifteen": 15,
    "sixteen": 16, "seventeen": 17, "eighteen": 18, "nineteen": 19,
}
_TENS = {
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50,
    "sixty": 60, "seventy": 70, "eighty": 80, "ninety": 90,
}


def _word_number_value(words: tuple[str, ...]) -> float:
    assert len(words) == 1
    tok = words[0]
    if _is_number_token(tok):
        return float(tok)
    if tok in _UNITS:
        return float(_UNITS[tok])
    if tok in _TENS:
        return float(_TENS[tok])
    tens, _, unit = tok.partition("-")
    return float(_TENS[tens] + _UNITS[unit])


def _numeric_surfaces(tokens: list[str]) -> list[tuple[tuple[str, ...], float]]:
    """(surface words, value) for every numeric mention, in order."""
    out = []
    for tok in tokens:
        if _is_number_token(tok):
            out.append(((tok,), float(tok)))
        elif tok in _UNITS or tok in _TENS:
            out.append(((tok,), _word_number_value((tok,))))
        elif "-" in tok:
            tens, _, unit = tok.partition("-")
            if tens in _TENS and unit in _UNITS and 1 <= _UNITS[unit] <= 9:
                out.append(((tok,), _word_number_value((tok,))))
    return out


def extract_numeric_values(text: str) -> list[float]:
    """Numbers mentioned in the text: digits and word numbers up to
    hyphenated tens ("fifty-five"), in order of occurrence.
    """
    return [v for _, v in _numeric_surfaces(_tokenize(text))]


# ---------------------------------------------------------------------------
# Earley core

# Item: (production index, dot position, origin set index)
_SCAN, _COMPLETE = 0, 1


class _Chart:
    """Earley state sets with backpointers, advanced set by set.

    Scanning is pluggable: the word-level parser matches multi-word
    terminals against a token list, while the acceptor advances one
    terminal object per set.
    """

    def __init__(self, grammar: Grammar):
        self.g = grammar
        self.sets: list[dict] = [dict()]  # item -> backpointer (first wins)
        start_items = {}
        for pi in grammar.by_lhs[grammar.start]:
            start_items[(pi, 0, 0)] = None
        self.sets[0] = start_items
        self._closure(0)

    def _closure(self, k: int):
        items = self.sets[k]
        work = list(items)
        while work:
            item = work.pop()
            pi, dot, origin = item
            rhs = self.g.productions[pi].rhs
            if dot < len(rhs):
                sym = rhs[dot]
                if isinstance(sym, str):  # predict
                    for qi in self.g.by_lhs.get(sym, ()):
                        new = (qi, 0, k)
                        if new not in items:
                            items[new] = None
                            work.append(new)
            else:  # complete
                lhs = self.g.productions[pi].lhs
                parent_sets = self.sets[origin]
                for parent in list(parent_sets):
                    ppi, pdot, porigin = parent
                    prhs = self.g.productions[ppi].rhs
                    if pdot < len(prhs) and prhs[pdot] == lhs:
                        new = (ppi, pdot + 1, porigin)
                        if new not in items:
                            items[new] = (_COMPLETE, origin, parent, item)
                            work.append(new)

    def expected_terminals(self, k: int) -> list[Terminal]:
        seen, out = set(), []
        for pi, dot, _ in self.sets[k]:
            rhs = self.g.productions[pi].rhs
            if dot < len(rhs) and isinstance(rhs[dot], Terminal):
                t = rhs[dot]
                if t not in seen:
                    seen.add(t)
                    out.append(t)
        return out

    def scan_into(self, k: int, terminal: Terminal, width: int, matched_words):
        """Advance items over `terminal`, landing in set k+width."""
        while len(self.sets) <= k + width:
            self.sets.append(dict())
        target = self.sets[k + width]
        added = False
        for item in list(self.sets[k]):
            pi, dot, origin = item
            rhs = self.g.productions[pi].rhs
            if dot < len(rhs) and rhs[dot] == terminal:
                new = (pi, dot + 1, origin)
                if new not in target:
                    target[new] = (_SCAN, k, item, terminal, matched_words)
                    added = True
        return added

    def accepting(self, k: int) -> bool:
        for pi, dot, origin in self.sets[k]:
            p = self.g.productions[pi]
            if p.lhs == self.g.start and dot == len(p.rhs) and origin == 0:
                return True
        return False

    # -- derivation extraction

    def build_value(self, k: int):
        """Semantic value of the completed start item in set k."""
        for item in self.sets[k]:
            pi, dot, origin = item
            p = self.g.productions[pi]
            if p.lhs == self.g.start and dot == len(p.rhs) and origin == 0:
                return _ACTIONS[p.action](self._item_value(k, item))
        raise ParseError("no complete parse")

    def _item_value(self, k: int, item) -> list:
        """Values of the rhs symbols consumed so far by this item."""
        pi, dot, origin = item
        if dot == 0:
            return []
        bp = self.sets[k][item]
        if bp is None:
            return []
        if bp[0] == _SCAN:
            _, prev_k, prev_item, terminal, matched_words = bp
            vals = self._item_value(prev_k, prev_item)
            return vals + [_terminal_value(terminal, matched_words)]
        _, child_origin, parent_item, child_item = bp
        vals = self._item_value(child_origin, parent_item)
        cpi = child_item[0]
        child_prod = self.g.productions[cpi]
        child_vals = self._item_value(k, child_item)
        return vals + [_ACTIONS[child_prod.action](child_vals)]


def _parse_words(grammar: Grammar, words: list[str], numeric_surfaces) -> ParseTree:
    chart = _Chart(grammar)
    n = len(words)
    surface_map = {}
    for surf, value in numeric_surfaces:
        surface_map.setdefault(surf, value)
    for k in range(n + 1):
        if k > 0:
            chart._closure(k)
        if k == n:
            break
        progressed = False
        for term in chart.expected_terminals(k):
            if term is NUMBER:
                nxt = (words[k],)
                if nxt in surface_map:
                    progressed |= chart.scan_into(k, term, 1, nxt)
            else:
                w = len(term.words)
                if tuple(words[k : k + w]) == term.words:
                    progressed |= chart.scan_into(k, term, 1 if w == 0 else w, term.words)
        if not progressed and all(len(s) == 0 for s in chart.sets[k + 1 :]):
            frontier = max(i for i, s in enumerate(chart.sets[: k + 1]) if s)
            _raise_parse_error(grammar, chart, words, frontier)
    if not chart.accepting(n):
        frontier = max(i for i, s in enumerate(chart.sets[: n + 1]) if s)
        _raise_parse_error(grammar, chart, words, frontier, at_end=True)
    ops = chart.build_value(n)
    return ParseTree(tuple(ops))


def _raise_parse_error(grammar, chart, words, k, at_end=False):
    expected = []
    for t in chart.expected_terminals(k):
        if t.cls not in expected:
            expected.append(t.cls)
    if at_end and chart.accepting(k):
        expected = ["end of input"] + expected
    prefix = " ".join(words[:k])
    where = f"after {prefix!r}" if prefix else "at the start"
    raise ParseError(
        f"could not parse the request {where}; expected one of: {', '.join(expected) or 'nothing'}",
        prefix=prefix,
        expected=tuple(expected),
    )


def parse_text(grammar: Grammar, text: str) -> ParseTree:
    """Parse canonical DSL text. Numbers in the text become this utterance's
    number terminals before parsing.
    """
    words = _tokenize(text)
    if not words:
        raise ParseError("empty input", prefix="", expected=("operation",))
    return _parse_words(grammar, words, _numeric_surfaces(words))


# ---------------------------------------------------------------------------
# Canonical rendering


def format_number(v: float) -> str:
    f = float(v)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def _render_cond(c: Cond) -> str:
    if c.field == "id":
        return f"id {format_number(c.value)}"
    word = CMP_SYMBOL_TO_WORDS[c.cmp]
    if isinstance(c.value, str):
        return f"{c.field} {word} {c.value}"
    return f"{c.field} {word} {format_number(c.value)}"


def _render_clause(pred) -> str:
    parts = _flatten_and(pred)
    return " and ".join(_render_cond(p) for p in parts)


def _render_filter(pred: Predicate) -> str:
    clauses = _flatten_or(pred)
    return " or ".join("filter " + _render_clause(c) for c in clauses)


def canonicalize(tree: ParseTree) -> str:
    """Render a parse back to its canonical surface string.

    parse_text(canonicalize(t)) == t; integers print unpadded, reals with
    minimal digits.
    """
    parts = []
    for node in tree.ops:
        op, args = node.op, node.args
        if op == "filter":
            parts.append(_render_filter(args[0]))
        elif op == "previous_filter":
            parts.append("previous filter")
        elif op == "previous_operation":
            parts.append("previous operation")
        elif op == "likelihood":
            parts.append("likelihood" + (f" {args[0]}" if args else ""))
        elif op == "explain":
            s = f"explain {args[0]}"
            if len(args) > 1:
                s += f" class {args[1]}"
            parts.append(s)
        elif op == "topk":
            arg = args[0]
            parts.append("topk all" if arg == "all" else f"topk {format_number(arg)}")
        elif op == "important":
            parts.append(f"important {args[0]}")
        elif op == "change":
            f, mode, v = args
            vtxt = v if isinstance(v, str) else format_number(v)
            parts.append(f"change {f} {mode} {vtxt}")
        elif op == "cfe":
            s = f"cfe {format_number(args[0])}"
            if len(args) > 1:
                s += f" {args[1]}"
            parts.append(s)
        elif op == "statistic":
            stat, target = args
            parts.append(f"statistic {STAT_ID_TO_WORD[stat]} {target}")
        elif op == "count":
            parts.append("count data")
        elif op == "data":
            parts.append(f"data {args[0]}_data")
        elif op == "score":
            parts.append(f"score {args[0]}")
        elif op == "model_info":
            parts.append("model")
        elif op == "function_info":
            parts.append("function")
        elif op == "define":
            parts.append(f"define {args[0]}")
        elif op == "show":
            parts.append("show data")
        elif op in ("predict", "interaction", "mistakes", "incorrect"):
            parts.append(op)
        else:
            raise ParseError(f"cannot render op {op!r}")
    return " and ".join(parts)


# ---------------------------------------------------------------------------
# Acceptor: incremental viable-prefix automaton over a token vocabulary


class _ChartNode:
    """A node of the lazily built trie of terminal sequences; holds the
    Earley chart for its path and memoizes successors."""

    __slots__ = ("chart", "pos", "children", "_expected")

    def __init__(self, chart: _Chart, pos: int):
        self.chart = chart
        self.pos = pos
        self.children: dict[Terminal, Optional[_ChartNode]] = {}
        self._expected: Optional[list[Terminal]] = None

    def advance(self, terminal: Terminal) -> Optional["_ChartNode"]:
        if terminal in self.children:
            return self.children[terminal]
        # copy-on-advance: charts are cheap at conversational lengths
        chart = _Chart.__new__(_Chart)
        chart.g = self.chart.g
        chart.sets = [dict(s) for s in self.chart.sets[: self.pos + 1]]
        ok = chart.scan_into(self.pos, terminal, 1, terminal.words)
        child = None
        if ok:
            chart._closure(self.pos + 1)
            child = _ChartNode(chart, self.pos + 1)
        self.children[terminal] = child
        return child

    def expected(self) -> list[Terminal]:
        if self._expected is None:
            self._expected = self.chart.expected_terminals(self.pos)
        return self._expected

    def accepting(self) -> bool:
        return self.chart.accepting(self.pos)


class AcceptorState:
    """Set of (trie node, partial terminal text) configurations, plus the
    utterance's injected numeric surfaces."""

    __slots__ = ("configs", "numeric_texts")

    def __init__(self, configs, numeric_texts):
        self.configs = configs  # list of (node, partial string)
        self.numeric_texts = numeric_texts

    @property
    def viable(self) -> bool:
        return bool(self.configs)


class Acceptor:
    """Char-level viable-prefix automaton compiled against a vocabulary.

    A token sequence is allowed iff its concatenation remains a prefix of
    some complete parse (with this utterance's numbers injected).
    """

    def __init__(self, grammar: Grammar, vocab: Iterable[str]):
        self.grammar = grammar
        self.vocab = list(vocab)
        if not self.vocab:
            raise ParseError("empty vocabulary")
        self._check_spellable()
        self._root = _ChartNode(_Chart(grammar), 0)

    def _check_spellable(self):
        for term in self.grammar.terminals:
            if term is NUMBER:
                continue
            s = term.text
            reach = {0}
            frontier = [0]
            done = False
            while frontier and not done:
                p = frontier.pop()
                if p == len(s):
                    done = True
                    break
                for tok in self.vocab:
                    if s.startswith(tok, p):
                        q = p + len(tok)
                        if q not in reach:
                            reach.add(q)
                            frontier.append(q)
                    # token may finish the terminal and spill into the separator
                    elif tok.startswith(s[p:]) and tok[len(s) - p] == " ":
                        done = True
                        break
            if not done and len(s) not in reach:
                raise ParseError(
                    f"vocabulary cannot spell the terminal {term.text!r}"
                )

    # -- state construction

    def start(self, numeric_values: Iterable[float] = ()) -> AcceptorState:
        texts = []
        for v in numeric_values:
            t = format_number(v)
            if t not in texts:
                texts.append(t)
        return AcceptorState([(self._root, "")], tuple(texts))

    def _terminal_texts(self, node: _ChartNode, numeric_texts) -> list[tuple[str, Terminal]]:
        out = []
        for term in node.expected():
            if term is NUMBER:
                for t in numeric_texts:
                    out.append((t, term))
            else:
                out.append((term.text, term))
        return out

    def _feed_char(self, state: AcceptorState, ch: str) -> AcceptorState:
        new = []
        seen = set()

        def push(node, partial):
            key = (id(node), partial)
            if key not in seen:
                seen.add(key)
                new.append((node, partial))

        for node, partial in state.configs:
            options = self._terminal_texts(node, state.numeric_texts)
            if ch == " ":
                for text, term in options:
                    if text == partial:
                        child = node.advance(term)
                        if child is not None:
                            push(child, "")
                cand = partial + " "
                if any(t.startswith(cand) for t, _ in options):
                    push(node, cand)
            else:
                cand = partial + ch
                if any(t.startswith(cand) for t, _ in options):
                    push(node, cand)
        return AcceptorState(new, state.numeric_texts)

    def feed(self, state: AcceptorState, token: str) -> AcceptorState:
        for ch in token:
            if not state.viable:
                break
            state = self._feed_char(state, ch)
        return state

    def is_accepting(self, state: AcceptorState) -> bool:
        for node, partial in state.configs:
            if partial == "":
                if node.accepting():
                    return True
            else:
                for text, term in self._terminal_texts(node, state.numeric_texts):
                    if text == partial:
                        child = node.advance(term)
                        if child is not None and child.accepting():
                            return True
        return False

    def allowed_tokens(self, state: AcceptorState) -> list[str]:
        """Vocabulary tokens that keep the state viable."""
        first_chars = set()
        for node, partial in state.configs:
            for text, _ in self._terminal_texts(node, state.numeric_texts):
                if text == partial:
                    first_chars.add(" ")
                if text.startswith(partial) and len(text) > len(partial):
                    first_chars.add(text[len(partial)])
        out = []
        for tok in self.vocab:
            if not tok or tok[0] not in first_chars:
                continue
            if self.feed(state, tok).viable:
                out.append(tok)
        return out


def compile_acceptor(grammar: Grammar, vocab: Iterable[str]) -> Acceptor:
    return Acceptor(grammar, vocab)
