"""Synthetic (utterance, parse) training corpus from wildcard templates.

The parser backends learn the dataset-specialized DSL from generated
pairs instead of hand-labeled utterances. A template file line pairs a
natural-language pattern with its target parse:

    show people with {FILTER_EXPR} ||| {FILTER_EXPR} and show data

Expansion recursively enumerates wildcard bindings against a dataset
schema. Value wildcards bind to the nearest preceding feature wildcard;
numeric candidates come from training-data quartiles. Templates with
many wildcards are downsampled to a couple of values per slot so no
single template dominates the corpus. Every emitted parse is validated
against the live grammar.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .data import DataFrame, DatasetSchema
from .errors import GenerationError, ParseError
from .grammar import _tokenize, build_grammar, format_number, parse_text

WILDCARD_KINDS = frozenset(
    {
        "NUMERIC_FEATURE",
        "CATEGORICAL_FEATURE",
        "CLASS_NAME",
        "NUMERIC_VALUE",
        "CATEGORICAL_VALUE",
        "FILTER_EXPR",
    }
)

_SLOT_RE = re.compile(r"\{([A-Z_]+)\}")
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")

# Slot kinds whose candidates depend on an earlier feature binding.
_VALUE_GOVERNORS = {
    "NUMERIC_VALUE": "NUMERIC_FEATURE",
    "CATEGORICAL_VALUE": "CATEGORICAL_FEATURE",
}


@dataclass(frozen=True)
class Template:
    template_id: str
    utterance_pattern: str
    parse_pattern: str
    utterance_slots: tuple[tuple[str, int], ...] = field(default=(), repr=False)
    parse_slots: tuple[tuple[str, int], ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class TrainingPair:
    utterance: str
    parse: str
    template_id: str
    split: str = "train"


@dataclass(frozen=True)
class GenerationCaps:
    """Enumeration limits for template expansion.

    numeric_values maps each numeric feature to its candidate values
    (training-data quartiles by default). Templates with at least
    downsample_threshold wildcard slots keep only downsample_to values
    per slot, chosen with a seeded RNG.
    """

    numeric_values: Mapping[str, tuple[float, ...]]
    downsample_to: int = 2
    downsample_threshold: int = 3
    max_filter_expressions: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.downsample_to < 1:
            raise ValueError("downsample_to must be >= 1")
        if self.downsample_threshold < 1:
            raise ValueError("downsample_threshold must be >= 1")
        if self.max_filter_expressions < 1:
            raise ValueError("max_filter_expressions must be >= 1")


# ---------------------------------------------------------------------------
# Template file parsing


def _pattern_slots(pattern: str) -> tuple[tuple[str, int], ...]:
    slots = []
    per_kind: dict[str, int] = {}
    for m in _SLOT_RE.finditer(pattern):
        kind = m.group(1)
        if kind not in WILDCARD_KINDS:
            raise GenerationError(f"unknown wildcard {{{kind}}} in {pattern!r}")
        idx = per_kind.get(kind, 0)
        per_kind[kind] = idx + 1
        slots.append((kind, idx))
    return tuple(slots)


def _check_template(t: Template) -> None:
    available = set(t.utterance_slots)
    for kind, idx in t.parse_slots:
        if (kind, idx) not in available:
            raise GenerationError(
                f"template {t.template_id}: parse slot {{{kind}}} occurrence"
                f" {idx + 1} has no matching utterance slot",
                template_id=t.template_id,
            )
    for pos, (kind, _) in enumerate(t.utterance_slots):
        governor = _VALUE_GOVERNORS.get(kind)
        if governor is None:
            continue
        earlier = (k for k, _ in t.utterance_slots[:pos])
        if governor not in earlier:
            raise GenerationError(
                f"template {t.template_id}: {{{kind}}} has no preceding"
                f" {{{governor}}} to bind values from",
                template_id=t.template_id,
            )


def parse_templates(text: str) -> list[Template]:
    """Parse `utterance ||| parse` lines; blanks and # comments are skipped."""
    templates = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if " ||| " not in line:
            raise GenerationError(
                f"line {lineno}: expected 'utterance ||| parse', got {line!r}"
            )
        utterance, parse = (part.strip() for part in line.split(" ||| ", 1))
        if not utterance or not parse:
            raise GenerationError(f"line {lineno}: empty utterance or parse")
        t = Template(
            template_id=f"t{len(templates) + 1:03d}",
            utterance_pattern=utterance,
            parse_pattern=parse,
            utterance_slots=_pattern_slots(utterance),
            parse_slots=_pattern_slots(parse),
        )
        _check_template(t)
        templates.append(t)
    return templates


def load_templates(path: Union[str, Path]) -> list[Template]:
    return parse_templates(Path(path).read_text(encoding="utf-8"))


def template_pack_path() -> Path:
    """Location of the template pack shipped with the package."""
    return Path(__file__).resolve().parent / "resources" / "templates.txt"


def question_bank_path() -> Path:
    """Location of the prototypical-question bank shipped with the package.

    Tab-separated columns: intent id, category, question, canonical DSL
    string instantiated for the bundled diabetes dataset.
    """
    return Path(__file__).resolve().parent / "resources" / "xai_intents.tsv"


def load_question_bank(path: Union[str, Path, None] = None) -> list[dict]:
    source = Path(path) if path is not None else question_bank_path()
    lines = source.read_text(encoding="utf-8").splitlines()
    header = lines[0].split("\t")
    if header != ["id", "category", "question", "dsl"]:
        raise GenerationError(f"{source}: not a question bank file (bad header)")
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        fields = line.split("\t")
        if len(fields) != 4:
            raise GenerationError(f"{source}: line {lineno} has {len(fields)} fields")
        rows.append(dict(zip(header, fields)))
    return rows


# ---------------------------------------------------------------------------
# Wildcard candidates


def numeric_value_candidates(frame: DataFrame) -> dict[str, tuple[float, ...]]:
    """25th/75th percentile of each numeric column, rounded to match the
    column's precision (whole numbers for integral columns, one decimal
    otherwise). Collapses to a single value when the quartiles agree.
    """
    out = {}
    for name in frame.schema.numeric_features():
        col = frame.columns[name]
        integral = bool(np.all(col == np.round(col)))
        vals: list[float] = []
        for q in (25, 75):
            p = float(np.percentile(col, q))
            p = float(round(p)) if integral else round(p, 1)
            if p not in vals:
                vals.append(p)
        out[name] = tuple(vals)
    return out


def default_caps(
    frame: DataFrame, seed: int = 0, max_filter_expressions: int = 400
) -> GenerationCaps:
    return GenerationCaps(
        numeric_values=numeric_value_candidates(frame),
        seed=seed,
        max_filter_expressions=max_filter_expressions,
    )


# Natural surface forms for a numeric predicate, paired with the DSL
# comparator they stand for.
_NUMERIC_SURFACES = (
    ("{f} above {v}", "greater than"),
    ("{f} below {v}", "less than"),
    ("{f} of at least {v}", "greater than or equal to"),
    ("{f} of at most {v}", "less than or equal to"),
    ("{f} equal to {v}", "equal to"),
    ("{f} other than {v}", "not equal to"),
)

# Training-shape ids for id-based predicates; real ids are recovered at
# inference time by number rebinding, so the literal values only matter
# for surface variety.
_FILTER_IDS = (10, 25)


def filter_expressions(
    schema: DatasetSchema,
    numeric_values: Mapping[str, tuple[float, ...]],
    limit: int = 400,
    seed: int = 0,
) -> list[tuple[str, str]]:
    """Pool of (utterance fragment, parse fragment) filter predicates.

    Single clauses are enumerated exhaustively; two-clause and/or
    combinations over distinct subjects are sampled to fill the pool up
    to `limit`.
    """
    singles: list[tuple[str, str]] = []
    subjects: list[str] = []

    def add(utterance_frag: str, parse_frag: str, subject: str) -> None:
        singles.append((utterance_frag, parse_frag))
        subjects.append(subject)

    for f in schema.numeric_features():
        for v in numeric_values.get(f, ()):
            vs = format_number(v)
            for surface, cmp_words in _NUMERIC_SURFACES:
                add(surface.format(f=f, v=vs), f"filter {f} {cmp_words} {vs}", f)
    for f in schema.categorical_features():
        for v in schema.categorical_values[f]:
            add(f"a {f} of {v}", f"filter {f} equal to {v}", f)
            add(f"a {f} other than {v}", f"filter {f} not equal to {v}", f)
    for c in schema.target_classes:
        add(f"the label {c}", f"filter label equal to {c}", "label")
        add(f"a label other than {c}", f"filter label not equal to {c}", "label")
        add(f"a prediction of {c}", f"filter prediction equal to {c}", "prediction")
        add(f"a prediction other than {c}", f"filter prediction not equal to {c}", "prediction")
    for i in _FILTER_IDS:
        add(f"id {i}", f"filter id {i}", "id")

    if limit <= len(singles):
        return singles[:limit]

    combos = [
        (i, j)
        for i in range(len(singles))
        for j in range(i + 1, len(singles))
        if subjects[i] != subjects[j]
    ]
    rng = np.random.default_rng(seed)
    need = min(limit - len(singles), len(combos))
    chosen = rng.choice(len(combos), size=need, replace=False)
    use_or = rng.random(need) < 0.25
    pool = list(singles)
    for pick, disjunct in zip(chosen, use_or):
        i, j = combos[int(pick)]
        (utt_a, parse_a), (utt_b, parse_b) = singles[i], singles[j]
        if disjunct:
            pool.append((f"{utt_a} or {utt_b}", f"{parse_a} or {parse_b}"))
        else:
            # one filter clause, two conjoined conditions
            pool.append(
                (f"{utt_a} and {utt_b}", f"{parse_a} and {parse_b[len('filter '):]}")
            )
    return pool


# ---------------------------------------------------------------------------
# Expansion


def _fill(pattern: str, bindings: dict, fragment_side: int) -> str:
    per_kind: dict[str, int] = {}

    def repl(m: re.Match) -> str:
        kind = m.group(1)
        idx = per_kind.get(kind, 0)
        per_kind[kind] = idx + 1
        value = bindings[(kind, idx)]
        if kind == "FILTER_EXPR":
            return value[fragment_side]
        return value

    return _SLOT_RE.sub(repl, pattern)


def _downsample(values: list, rng: Optional[np.random.Generator], k: int) -> list:
    if rng is None or len(values) <= k:
        return values
    keep = sorted(rng.choice(len(values), size=k, replace=False).tolist())
    return [values[i] for i in keep]


def _abstract_numbers(parse: str) -> tuple[str, ...]:
    # Grammar treats all number tokens alike, so parses that differ only
    # in numerals share one validation.
    return tuple(
        "0" if _NUMBER_RE.fullmatch(tok) else tok for tok in _tokenize(parse)
    )


def expand_templates(
    templates: Sequence[Template],
    schema: DatasetSchema,
    caps: GenerationCaps,
) -> list[TrainingPair]:
    """Recursively enumerate wildcard bindings for every template.

    Raises GenerationError (naming the template) if any expansion fails
    to parse under the schema's grammar.
    """
    grammar = build_grammar(schema)
    pool: Optional[list[tuple[str, str]]] = None
    if any(k == "FILTER_EXPR" for t in templates for k, _ in t.utterance_slots):
        pool = filter_expressions(
            schema, caps.numeric_values, caps.max_filter_expressions, caps.seed
        )

    checked: set[tuple[str, ...]] = set()
    pairs: list[TrainingPair] = []

    for ordinal, t in enumerate(templates):
        slots = t.utterance_slots
        downsampling = len(slots) >= caps.downsample_threshold

        def candidates(pos: int, bindings: dict) -> list:
            kind, _ = slots[pos]
            if kind == "NUMERIC_FEATURE":
                values: list = list(schema.numeric_features())
            elif kind == "CATEGORICAL_FEATURE":
                values = list(schema.categorical_features())
            elif kind == "CLASS_NAME":
                values = list(schema.target_classes)
            elif kind == "FILTER_EXPR":
                values = list(pool or ())
            else:
                governor = _VALUE_GOVERNORS[kind]
                feature = next(
                    bindings[(k, i)]
                    for k, i in reversed(slots[:pos])
                    if k == governor
                )
                if kind == "NUMERIC_VALUE":
                    values = [
                        format_number(v)
                        for v in caps.numeric_values.get(feature, ())
                    ]
                else:
                    values = list(schema.categorical_values.get(feature, ()))
            rng = (
                np.random.default_rng((caps.seed, ordinal, pos))
                if downsampling
                else None
            )
            return _downsample(values, rng, caps.downsample_to)

        def emit(bindings: dict) -> None:
            utterance = _fill(t.utterance_pattern, bindings, 0)
            parse = _fill(t.parse_pattern, bindings, 1)
            key = _abstract_numbers(parse)
            if key not in checked:
                try:
                    parse_text(grammar, parse)
                except ParseError as err:
                    raise GenerationError(
                        f"template {t.template_id}: ungrammatical parse"
                        f" {parse!r} ({err})",
                        template_id=t.template_id,
                    ) from err
                checked.add(key)
            pairs.append(TrainingPair(utterance, parse, t.template_id))

        def bind(pos: int, bindings: dict) -> None:
            if pos == len(slots):
                emit(bindings)
                return
            kind, occ = slots[pos]
            for value in candidates(pos, bindings):
                bindings[(kind, occ)] = value
                bind(pos + 1, bindings)
                del bindings[(kind, occ)]

        bind(0, {})
    return pairs


# ---------------------------------------------------------------------------
# Train/validation split


def split_corpus(
    pairs: Sequence[TrainingPair], ratio: float, seed: int = 0
) -> tuple[list[TrainingPair], list[TrainingPair]]:
    """Deterministic split, stratified by template_id.

    Each template keeps max(1, round(n * ratio)) pairs in train, so every
    template that generated anything is represented in training.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0, 1]")
    groups: dict[str, list[int]] = {}
    for i, p in enumerate(pairs):
        groups.setdefault(p.template_id, []).append(i)

    rng = np.random.default_rng(seed)
    val_indices: set[int] = set()
    for indices in groups.values():
        n = len(indices)
        n_train = max(1, min(n, int(n * ratio + 0.5)))
        perm = rng.permutation(n)
        val_indices.update(indices[int(j)] for j in perm[n_train:])

    train = [replace(p, split="train") for i, p in enumerate(pairs) if i not in val_indices]
    val = [replace(p, split="validation") for i, p in enumerate(pairs) if i in val_indices]
    return train, val


# ---------------------------------------------------------------------------
# Corpus files


_CORPUS_HEADER = ("utterance", "parse", "template_id", "split")


def write_corpus(pairs: Iterable[TrainingPair], path: Union[str, Path]) -> None:
    lines = ["\t".join(_CORPUS_HEADER)]
    for p in pairs:
        fields = (p.utterance, p.parse, p.template_id, p.split)
        for value in fields:
            if "\t" in value or "\n" in value:
                raise GenerationError(
                    f"corpus field contains a tab or newline: {value!r}"
                )
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_corpus(path: Union[str, Path]) -> list[TrainingPair]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != _CORPUS_HEADER:
        raise GenerationError(f"{path}: not a corpus file (bad header)")
    pairs = []
    for lineno, line in enumerate(lines[1:], 2):
        fields = line.split("\t")
        if len(fields) != 4:
            raise GenerationError(f"{path}: line {lineno} has {len(fields)} fields")
        utterance, parse, template_id, split = fields
        if split not in ("train", "validation"):
            raise GenerationError(f"{path}: line {lineno} has bad split {split!r}")
        pairs.append(TrainingPair(utterance, parse, template_id, split))
    return pairs
