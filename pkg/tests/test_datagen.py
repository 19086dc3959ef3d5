"""Training-corpus generation tests.

Oracles: hand-written expansions on tiny schemas, numpy percentile
recomputation for value candidates, and per-group counting for the
stratified split. The shipped template pack is checked against the
live grammar and a golden corpus count.
"""
import re
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from ttm.data import DataFrame, DatasetSchema, Feature
from ttm.datagen import (
    GenerationCaps,
    TrainingPair,
    default_caps,
    expand_templates,
    filter_expressions,
    load_templates,
    numeric_value_candidates,
    parse_templates,
    read_corpus,
    split_corpus,
    template_pack_path,
    write_corpus,
)
from ttm.errors import GenerationError
from ttm.grammar import build_grammar, canonicalize, parse_text

GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


# ---------------------------------------------------------------------------
# Small fixtures


def two_feature_schema():
    return DatasetSchema(
        features=(Feature("age", "numeric"), Feature("bmi", "numeric")),
        categorical_values={},
        target_classes=("no", "yes"),
    )


def caps_for(values, **kw):
    return GenerationCaps(numeric_values=values, **kw)


TWO_BY_TWO_VALUES = {"age": (30.0, 50.0), "bmi": (22.5, 33.5)}


# template_pack and diabetes_corpus fixtures live in conftest; the corpus
# expansion is shared with the dialogue and engine test modules.


# ---------------------------------------------------------------------------
# Template file parsing


def test_parse_templates_assigns_ordered_ids():
    text = (
        "how accurate are you ||| score accuracy\n"
        "describe the model ||| model\n"
        "what can you do ||| function\n"
    )
    templates = parse_templates(text)
    assert [t.template_id for t in templates] == ["t001", "t002", "t003"]
    assert templates[0].utterance_pattern == "how accurate are you"
    assert templates[0].parse_pattern == "score accuracy"


def test_parse_templates_skips_blanks_and_comments():
    text = "# greeting ops\n\ndescribe the model ||| model\n\n# more\n"
    templates = parse_templates(text)
    assert len(templates) == 1
    # ids are positional over kept templates, not file lines
    assert templates[0].template_id == "t001"


def test_parse_templates_rejects_missing_separator():
    with pytest.raises(GenerationError, match="line 2"):
        parse_templates("a ||| model\nno separator here\n")


def test_parse_templates_rejects_unknown_wildcard():
    with pytest.raises(GenerationError, match="BOGUS"):
        parse_templates("show {BOGUS} ||| model\n")


def test_parse_templates_rejects_parse_only_slot():
    # parse side references a class slot the utterance never binds
    with pytest.raises(GenerationError, match="t001"):
        parse_templates("how likely is that ||| likelihood {CLASS_NAME}\n")


def test_parse_templates_rejects_extra_parse_occurrence():
    text = (
        "is {NUMERIC_FEATURE} used |||"
        " important {NUMERIC_FEATURE} and important {NUMERIC_FEATURE}\n"
    )
    with pytest.raises(GenerationError, match="NUMERIC_FEATURE"):
        parse_templates(text)


@pytest.mark.parametrize(
    "line",
    [
        "set it to {NUMERIC_VALUE} ||| model",
        "make {CATEGORICAL_VALUE} of it ||| model",
    ],
)
def test_parse_templates_rejects_orphan_value_slots(line):
    # value wildcards bind to the nearest preceding feature wildcard
    with pytest.raises(GenerationError, match="preceding"):
        parse_templates(line + "\n")


# ---------------------------------------------------------------------------
# Expansion: enumeration oracles


def test_expand_two_by_two_enumeration():
    templates = parse_templates(
        "what if {NUMERIC_FEATURE} were {NUMERIC_VALUE} for data point 3 |||"
        " filter id 3 and change {NUMERIC_FEATURE} set {NUMERIC_VALUE} and predict\n"
    )
    schema = two_feature_schema()
    pairs = expand_templates(templates, schema, caps_for(TWO_BY_TWO_VALUES))
    expected = set()
    for f, vals in TWO_BY_TWO_VALUES.items():
        for v in vals:
            vs = f"{v:g}"
            expected.add(
                (
                    f"what if {f} were {vs} for data point 3",
                    f"filter id 3 and change {f} set {vs} and predict",
                )
            )
    assert {(p.utterance, p.parse) for p in pairs} == expected
    assert len(pairs) == 4
    assert all(p.template_id == "t001" and p.split == "train" for p in pairs)


def test_expand_explain_template_matches_expected_surface(diabetes_train):
    templates = parse_templates(
        "Explain the predictions on data with {NUMERIC_FEATURE} greater than"
        " {NUMERIC_VALUE} ||| filter {NUMERIC_FEATURE} greater than"
        " {NUMERIC_VALUE} and explain feature importance\n"
    )
    schema = diabetes_train.schema
    caps = default_caps(diabetes_train)
    pairs = expand_templates(templates, schema, caps)
    assert len(pairs) == 16  # 8 features x 2 values
    grammar = build_grammar(schema)
    for p in pairs:
        m = re.match(
            r"filter (\w+) greater than (\S+) and explain feature importance",
            p.parse,
        )
        assert m, p.parse
        assert p.utterance == (
            f"Explain the predictions on data with {m.group(1)} greater than {m.group(2)}"
        )
        assert canonicalize(parse_text(grammar, p.parse)) == p.parse


def test_expand_binds_value_to_governing_feature():
    templates = parse_templates(
        "people with {NUMERIC_FEATURE} above {NUMERIC_VALUE} |||"
        " filter {NUMERIC_FEATURE} greater than {NUMERIC_VALUE}\n"
    )
    pairs = expand_templates(templates, two_feature_schema(), caps_for(TWO_BY_TWO_VALUES))
    seen = {}
    for p in pairs:
        feat, val = re.match(r"filter (\w+) greater than (\S+)", p.parse).groups()
        seen.setdefault(feat, set()).add(float(val))
    assert seen == {"age": {30.0, 50.0}, "bmi": {22.5, 33.5}}


def test_expand_class_name_slot():
    templates = parse_templates(
        "how likely is {CLASS_NAME} ||| likelihood {CLASS_NAME}\n"
    )
    pairs = expand_templates(templates, two_feature_schema(), caps_for({}))
    assert {p.parse for p in pairs} == {"likelihood no", "likelihood yes"}


def test_expand_repeated_slot_is_a_full_product():
    templates = parse_templates(
        "compare average {NUMERIC_FEATURE} with average {NUMERIC_FEATURE} |||"
        " statistic mean {NUMERIC_FEATURE} and statistic mean {NUMERIC_FEATURE}\n"
    )
    pairs = expand_templates(templates, two_feature_schema(), caps_for({}))
    parses = {p.parse for p in pairs}
    assert len(pairs) == 4  # ordered pairs, diagonal included
    assert "statistic mean age and statistic mean bmi" in parses
    assert "statistic mean age and statistic mean age" in parses


def test_expand_categorical_value_pairs(mixed_schema):
    templates = parse_templates(
        "people whose {CATEGORICAL_FEATURE} is {CATEGORICAL_VALUE} |||"
        " filter {CATEGORICAL_FEATURE} equal to {CATEGORICAL_VALUE}\n"
    )
    pairs = expand_templates(templates, mixed_schema, caps_for({}))
    assert {p.parse for p in pairs} == {
        "filter job equal to clerk",
        "filter job equal to nurse",
        "filter job equal to pilot",
    }


def test_expand_categorical_template_is_empty_on_numeric_schema():
    templates = parse_templates(
        "group by {CATEGORICAL_FEATURE} ||| statistic summary {CATEGORICAL_FEATURE}\n"
    )
    assert expand_templates(templates, two_feature_schema(), caps_for({})) == []


def test_expand_ungrammatical_template_errors_with_id():
    templates = parse_templates(
        "describe the model ||| model\n"
        "frob the {NUMERIC_FEATURE} ||| frobnicate {NUMERIC_FEATURE}\n"
    )
    with pytest.raises(GenerationError, match="t002") as exc:
        expand_templates(templates, two_feature_schema(), caps_for({}))
    assert exc.value.template_id == "t002"


def test_expand_is_deterministic(diabetes_train, template_pack):
    caps = default_caps(diabetes_train, seed=3)
    small = template_pack[:25]
    a = expand_templates(small, diabetes_train.schema, caps)
    b = expand_templates(small, diabetes_train.schema, caps)
    assert a == b


# ---------------------------------------------------------------------------
# Downsampling


THREE_SLOT = (
    "how likely is {CLASS_NAME} when {NUMERIC_FEATURE} is above {NUMERIC_VALUE} |||"
    " filter {NUMERIC_FEATURE} greater than {NUMERIC_VALUE}"
    " and likelihood {CLASS_NAME}\n"
)


def test_expand_downsamples_many_wildcard_templates(diabetes_train):
    templates = parse_templates(THREE_SLOT)
    schema = diabetes_train.schema
    caps = default_caps(diabetes_train, seed=1)
    down = expand_templates(templates, schema, caps)
    full = expand_templates(
        templates, schema, replace(caps, downsample_threshold=99)
    )
    assert len(full) == 8 * 2 * 2
    assert len(down) <= 2 * 2 * 2
    assert {(p.utterance, p.parse) for p in down} <= {
        (p.utterance, p.parse) for p in full
    }
    features_used = {p.parse.split()[1] for p in down}
    assert len(features_used) <= 2


def test_expand_two_slot_templates_are_not_downsampled(diabetes_train):
    templates = parse_templates(
        "show people with {NUMERIC_FEATURE} under {NUMERIC_VALUE} |||"
        " filter {NUMERIC_FEATURE} less than {NUMERIC_VALUE} and show data\n"
    )
    pairs = expand_templates(
        templates, diabetes_train.schema, default_caps(diabetes_train)
    )
    assert len(pairs) == 16


# ---------------------------------------------------------------------------
# Filter-expression pool


def test_filter_expressions_all_parse(diabetes_schema):
    values = {f: (100.0, 120.0) for f in diabetes_schema.feature_names}
    pool = filter_expressions(diabetes_schema, values, limit=150, seed=0)
    grammar = build_grammar(diabetes_schema)
    assert len(pool) == 150
    for utterance_frag, parse_frag in pool:
        assert utterance_frag and "{" not in utterance_frag
        assert canonicalize(parse_text(grammar, parse_frag)) == parse_frag


def test_filter_expressions_deterministic_and_unique(diabetes_schema):
    values = {f: (100.0,) for f in diabetes_schema.feature_names}
    a = filter_expressions(diabetes_schema, values, limit=90, seed=4)
    b = filter_expressions(diabetes_schema, values, limit=90, seed=4)
    assert a == b
    assert len(set(a)) == len(a)


def test_filter_expressions_cover_the_predicate_surface(diabetes_schema):
    values = {f: (100.0, 120.0) for f in diabetes_schema.feature_names}
    pool = filter_expressions(diabetes_schema, values, limit=400, seed=0)
    parses = [p for _, p in pool]
    for phrase in (
        "greater than",
        "less than",
        "greater than or equal to",
        "less than or equal to",
        "equal to",
        "not equal to",
    ):
        assert any(f" {phrase} " in p for p in parses), phrase
    assert any(" label equal to " in p for p in parses)
    assert any(" prediction equal to " in p for p in parses)
    assert any(re.search(r"\bid \d", p) for p in parses)
    assert any(" and " in p for p in parses)
    assert any(" or filter " in p for p in parses)


# ---------------------------------------------------------------------------
# Numeric value candidates


def test_numeric_value_candidates_are_quartiles():
    schema = two_feature_schema()
    ages = [20, 30, 40, 50, 60, 70, 80, 90]
    bmis = [20.5, 25.5, 30.5, 35.5, 40.5, 45.5, 50.5, 55.5]
    frame = DataFrame(
        schema, list(range(8)), {"age": ages, "bmi": bmis}, [0, 1] * 4
    )
    cands = numeric_value_candidates(frame)
    assert cands["age"] == (
        float(round(np.percentile(ages, 25))),
        float(round(np.percentile(ages, 75))),
    )
    assert cands["bmi"] == (
        round(float(np.percentile(bmis, 25)), 1),
        round(float(np.percentile(bmis, 75)), 1),
    )


def test_numeric_value_candidates_round_like_the_column():
    schema = two_feature_schema()
    frame = DataFrame(
        schema,
        [0, 1, 2, 3],
        {"age": [20, 21, 22, 23], "bmi": [20.25, 20.75, 21.25, 21.75]},
        [0, 1, 0, 1],
    )
    cands = numeric_value_candidates(frame)
    # integral column stays integral; fractional column keeps one decimal
    assert all(v == int(v) for v in cands["age"])
    assert cands["bmi"] == (20.6, 21.4)


def test_numeric_value_candidates_collapse_constant_columns():
    schema = two_feature_schema()
    frame = DataFrame(
        schema, [0, 1, 2], {"age": [50, 50, 50], "bmi": [20.0, 30.0, 40.0]}, [0, 1, 0]
    )
    assert numeric_value_candidates(frame)["age"] == (50.0,)


def test_default_caps_cover_all_numeric_features(diabetes_train):
    caps = default_caps(diabetes_train)
    for name in diabetes_train.schema.feature_names:
        vals = caps.numeric_values[name]
        assert 1 <= len(vals) <= 2
        col = diabetes_train.columns[name]
        assert all(col.min() <= v <= col.max() for v in vals)


# ---------------------------------------------------------------------------
# Splitting


def make_pairs(n, template_id="t001"):
    return [
        TrainingPair(f"utterance {i}", "count data", template_id) for i in range(n)
    ]


def test_split_100_pairs_is_90_10():
    train, val = split_corpus(make_pairs(100), 0.9, seed=0)
    assert len(train) == 90 and len(val) == 10
    assert all(p.split == "train" for p in train)
    assert all(p.split == "validation" for p in val)


def test_split_same_seed_is_identical_and_seeds_differ():
    pairs = make_pairs(100)
    a = split_corpus(pairs, 0.9, seed=5)
    b = split_corpus(pairs, 0.9, seed=5)
    c = split_corpus(pairs, 0.9, seed=6)
    assert a == b
    assert {p.utterance for p in a[1]} != {p.utterance for p in c[1]}


def test_split_is_stratified_per_template():
    pairs = (
        make_pairs(1, "t001")
        + make_pairs(2, "t002")
        + make_pairs(8, "t003")
        + make_pairs(40, "t004")
    )
    train, val = split_corpus(pairs, 0.9, seed=2)
    by_template = {}
    for p in train:
        by_template[p.template_id] = by_template.get(p.template_id, 0) + 1
    # per-group train count: max(1, min(n, round-half-up(n * ratio)))
    assert by_template == {"t001": 1, "t002": 2, "t003": 7, "t004": 36}
    assert len(train) + len(val) == len(pairs)


def test_split_preserves_the_pair_multiset():
    pairs = make_pairs(13, "t001") + make_pairs(7, "t002")
    train, val = split_corpus(pairs, 0.8, seed=9)
    key = lambda p: (p.utterance, p.parse, p.template_id)
    assert sorted(map(key, train + val)) == sorted(map(key, pairs))


# ---------------------------------------------------------------------------
# Corpus serialization


def test_corpus_round_trips_through_tsv(tmp_path):
    pairs = [
        TrainingPair("how accurate are you", "score accuracy", "t001", "train"),
        TrainingPair("describe the data", "data test_data", "t002", "validation"),
    ]
    path = tmp_path / "corpus.tsv"
    write_corpus(pairs, path)
    assert read_corpus(path) == pairs


def test_write_corpus_rejects_tabs_in_fields(tmp_path):
    bad = [TrainingPair("a\tb", "model", "t001")]
    with pytest.raises(GenerationError, match="tab"):
        write_corpus(bad, tmp_path / "corpus.tsv")


def test_regeneration_is_byte_identical(tmp_path, diabetes_train, template_pack):
    caps = default_caps(diabetes_train, seed=0)
    small = template_pack[:20]
    out = []
    for name in ("a.tsv", "b.tsv"):
        pairs = expand_templates(small, diabetes_train.schema, caps)
        marked = split_corpus(pairs, 0.9, seed=0)
        write_corpus(marked[0] + marked[1], tmp_path / name)
        out.append((tmp_path / name).read_bytes())
    assert out[0] == out[1]


# ---------------------------------------------------------------------------
# Shipped template pack


OP_MARKERS = {
    "filter": r"\{FILTER_EXPR\}|(?<!previous )\bfilter\b",
    "previous_filter": r"\bprevious filter\b",
    "previous_operation": r"\bprevious operation\b",
    "predict": r"\bpredict\b",
    "likelihood": r"\blikelihood\b",
    "explain": r"\bexplain\b",
    "topk": r"\btopk\b",
    "important": r"\bimportant\b",
    "change": r"\bchange\b",
    "cfe": r"\bcfe\b",
    "interaction": r"\binteraction\b",
    "mistakes": r"\bmistakes\b",
    "statistic": r"\bstatistic\b",
    "count": r"\bcount data\b",
    "data": r"\bdata (train_data|test_data)\b",
    "score": r"\bscore\b",
    "incorrect": r"\bincorrect\b",
    "model": r"\bmodel\b",
    "function": r"\bfunction\b",
    "define": r"\bdefine\b",
    "show": r"\bshow data\b",
}


def test_pack_size_is_in_the_intended_band(template_pack):
    assert 150 <= len(template_pack) <= 180


def test_pack_covers_every_operation_at_least_twice(template_pack):
    counts = {op: 0 for op in OP_MARKERS}
    for t in template_pack:
        for op, pattern in OP_MARKERS.items():
            if re.search(pattern, t.parse_pattern):
                counts[op] += 1
    lacking = {op: n for op, n in counts.items() if n < 2}
    assert not lacking


def test_pack_corpus_count_matches_golden(diabetes_corpus):
    golden = int((GOLDEN_DIR / "diabetes_corpus_count.txt").read_text().strip())
    assert 20_000 <= len(diabetes_corpus) <= 40_000
    assert len(diabetes_corpus) == golden


def test_pack_corpus_sample_is_canonical(diabetes_corpus, diabetes_train):
    grammar = build_grammar(diabetes_train.schema)
    rng = np.random.default_rng(0)
    idx = rng.choice(len(diabetes_corpus), size=300, replace=False)
    for i in idx:
        pair = diabetes_corpus[int(i)]
        assert canonicalize(parse_text(grammar, pair.parse)) == pair.parse


def test_pack_no_template_dominates(template_pack, diabetes_corpus, diabetes_train):
    schema = diabetes_train.schema
    caps = default_caps(diabetes_train)
    kind_cap = {
        "NUMERIC_FEATURE": len(schema.numeric_features()),
        "CATEGORICAL_FEATURE": max(len(schema.categorical_features()), 1),
        "CLASS_NAME": len(schema.target_classes),
        "NUMERIC_VALUE": 2,
        "CATEGORICAL_VALUE": 1,
        "FILTER_EXPR": caps.max_filter_expressions,
    }
    counts = {}
    for p in diabetes_corpus:
        counts[p.template_id] = counts.get(p.template_id, 0) + 1
    by_id = {t.template_id: t for t in template_pack}
    for tid, n in counts.items():
        slots = by_id[tid].utterance_slots
        bound = (2 ** len(slots)) * max(
            (kind_cap[k] for k, _ in slots), default=1
        )
        assert n <= bound, (tid, n, bound)


def test_pack_many_wildcard_templates_stay_small(template_pack, diabetes_corpus):
    counts = {}
    for p in diabetes_corpus:
        counts[p.template_id] = counts.get(p.template_id, 0) + 1
    for t in template_pack:
        if len(t.utterance_slots) >= 3:
            assert counts.get(t.template_id, 0) <= 2 ** len(t.utterance_slots)


def test_pack_expands_on_a_mixed_schema(template_pack, mixed_frame):
    caps = default_caps(mixed_frame, max_filter_expressions=40)
    pairs = expand_templates(template_pack, mixed_frame.schema, caps)
    assert len(pairs) > 500
    assert any("job" in p.parse for p in pairs)  # categorical templates engage
    grammar = build_grammar(mixed_frame.schema)
    rng = np.random.default_rng(1)
    for i in rng.choice(len(pairs), size=100, replace=False):
        parse_text(grammar, pairs[int(i)].parse)
