"""Tests for attribution methods, faithfulness selection, counterfactuals,
interactions, and mistake summaries.

Oracles come first and are computed independently of the implementation:
a closed form for Gaussian fudge on linear scores, a permutation-definition
Shapley calculator, and hand-built rankings.
"""

import math
import warnings
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttm.data import CATEGORICAL, NUMERIC, DataFrame, DatasetSchema, Feature
from ttm.errors import SemanticError
from ttm.explain import (
    AttributionResult,
    Counterfactual,
    PerturbationConfig,
    PerturbationSpace,
    SURROGATE_WIDTHS,
    TIE_DELTA,
    faithfulness,
    feature_interactions,
    fudge_score,
    generate_counterfactuals,
    kernel_shapley_explain,
    mean_absolute_attribution,
    pgi_pgu,
    rank_features,
    select_explanation,
    stability,
    summarize_mistakes,
    surrogate_linear_explain,
    topk_features,
)
from ttm.models import Encoder, train_gbt


# ------------------------------------------------------------------ oracles


def oracle_fudge_linear(w, mask, sigma):
    # E|sum_j w_j m_j eps_j| with eps_j ~ N(0, sigma^2) is the half-normal
    # mean: sigma * ||w (.) m||_2 * sqrt(2 / pi)
    s = math.sqrt(sum((wj * mj) ** 2 for wj, mj in zip(w, mask)))
    return sigma * s * math.sqrt(2.0 / math.pi)


def oracle_faith_linear(w, ranking, k_max, sigma):
    d = len(w)
    total = 0.0
    for k in range(1, k_max + 1):
        mask = [1 if j in ranking[:k] else 0 for j in range(d)]
        total += oracle_fudge_linear(w, mask, sigma)
    return total


def oracle_shapley(value_fn, d):
    """Average marginal contribution over every ordering; the definition."""
    phi = [0.0] * d
    for perm in permutations(range(d)):
        have = set()
        for i in perm:
            before = value_fn(frozenset(have))
            have.add(i)
            phi[i] += value_fn(frozenset(have)) - before
    n = math.factorial(d)
    return [p / n for p in phi]


def make_value_fn(predict, x_vec, bg_rows):
    # v(S): pin the features in S to x, let the rest follow each background
    # row, average the prediction
    bg = np.asarray(bg_rows, dtype=float)

    def value(subset):
        rows = bg.copy()
        for j in subset:
            rows[:, j] = x_vec[j]
        return float(np.mean(predict(rows)))

    return value


# ------------------------------------------------------------------ helpers


class _RawProbModel:
    """Duck-typed model whose probabilities come from a raw-matrix function."""

    def __init__(self, schema, fn):
        self.schema = schema
        self.encoder = Encoder(schema)
        self.fn = fn

    def predict_proba_matrix(self, X):
        return np.asarray(self.fn(np.asarray(X, dtype=float)))

    def predict_proba(self, df):
        return self.predict_proba_matrix(self.encoder.transform(df))

    def predict(self, df):
        return np.argmax(self.predict_proba(df), axis=1)


def num_schema(d):
    feats = tuple(Feature(f"f{j}", NUMERIC) for j in range(d))
    return DatasetSchema(
        features=feats, categorical_values={}, target_classes=("no", "yes")
    )


def unit_space(schema):
    # reference rows at 0 and 1 give every numeric feature a span of 1, so
    # normalized space coincides with raw space
    cols = {}
    for f in schema.features:
        if f.kind == NUMERIC:
            cols[f.name] = [0.0, 1.0]
        else:
            vals = schema.categorical_values[f.name]
            cols[f.name] = [vals[0], vals[-1]]
    ref = DataFrame(schema, ids=[0, 1], columns=cols, labels=[0, 1])
    return PerturbationSpace(schema, ref)


def linear_model(schema, w, b=0.0):
    w = np.asarray(w, dtype=float)
    return _RawProbModel(schema, lambda X: (X @ w + b).reshape(-1, 1))


def step_model(schema, feature_idx, threshold):
    # binary model: class 1 iff the feature exceeds the threshold
    def fn(X):
        g = (X[:, feature_idx] > threshold).astype(float)
        return np.column_stack([1.0 - g, g])

    return _RawProbModel(schema, fn)


def zeros_row(schema, value=0.0):
    return {f.name: value for f in schema.features}


CFG = PerturbationConfig(n_samples=2000, seed=11)
BIG = PerturbationConfig(n_samples=10_000, seed=5)
FAST = PerturbationConfig(n_samples=300, seed=3)


# ------------------------------------------------------------ configuration


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        PerturbationConfig(sigma=0.0)
    with pytest.raises(ValueError):
        PerturbationConfig(n_samples=0)
    with pytest.raises(ValueError):
        PerturbationConfig(categorical_resample_rate=1.5)


def test_config_defaults():
    cfg = PerturbationConfig()
    assert cfg.sigma == 0.05
    assert cfg.n_samples == 10_000
    assert cfg.categorical_resample_rate == 0.3


# -------------------------------------------------------------- fudge score


def test_fudge_zero_mask_is_exactly_zero():
    schema = num_schema(3)
    model = linear_model(schema, [2.0, -1.0, 0.5])
    space = unit_space(schema)
    x = zeros_row(schema)
    assert fudge_score(model, x, (0, 0, 0), space, FAST) == 0.0


def test_fudge_constant_model_is_zero():
    schema = num_schema(3)
    model = _RawProbModel(schema, lambda X: np.full((len(X), 1), 0.4))
    space = unit_space(schema)
    x = zeros_row(schema)
    assert fudge_score(model, x, (1, 1, 1), space, FAST) == 0.0


@pytest.mark.parametrize(
    "w,mask",
    [
        ((3.0, 1.0, 0.0, -2.0), (1, 1, 0, 0)),
        ((3.0, 1.0, 0.0, -2.0), (1, 1, 1, 1)),
        ((0.5, -0.25, 1.5, 0.75), (0, 1, 0, 1)),
    ],
)
def test_fudge_matches_closed_form(w, mask):
    schema = num_schema(4)
    model = linear_model(schema, w)
    space = unit_space(schema)
    x = zeros_row(schema, 0.3)
    got = fudge_score(model, x, mask, space, BIG)
    want = oracle_fudge_linear(w, mask, BIG.sigma)
    assert got == pytest.approx(want, rel=0.02)


def test_fudge_deterministic_given_seed():
    schema = num_schema(3)
    model = linear_model(schema, [1.0, 2.0, 3.0])
    space = unit_space(schema)
    x = zeros_row(schema)
    a = fudge_score(model, x, (1, 0, 1), space, CFG)
    b = fudge_score(model, x, (1, 0, 1), space, CFG)
    c = fudge_score(model, x, (1, 0, 1), space, PerturbationConfig(n_samples=2000, seed=12))
    assert a == b
    assert a != c


def test_fudge_monotone_in_sigma_for_linear_scores():
    schema = num_schema(3)
    model = linear_model(schema, [1.0, -2.0, 0.7])
    space = unit_space(schema)
    x = zeros_row(schema)
    scores = [
        fudge_score(model, x, (1, 1, 1), space,
                    PerturbationConfig(sigma=s, n_samples=500, seed=2))
        for s in (0.01, 0.02, 0.05, 0.1, 0.2)
    ]
    assert all(a < b for a, b in zip(scores, scores[1:]))


def test_fudge_categorical_resample_rate():
    # model is the indicator of keeping the original category; with a pool
    # of 4 values the flip probability is rate * 3/4
    schema = DatasetSchema(
        features=(Feature("job", CATEGORICAL), Feature("age", NUMERIC)),
        categorical_values={"job": ("a", "b", "c", "d")},
        target_classes=("no", "yes"),
    )
    ref = DataFrame(
        schema,
        ids=[0, 1, 2, 3],
        columns={"job": ["a", "b", "c", "d"], "age": [0.0, 1.0, 0.5, 0.25]},
        labels=[0, 1, 0, 1],
    )
    space = PerturbationSpace(schema, ref)
    enc = Encoder(schema)
    col_a = enc.columns.index(("job", "a"))
    model = _RawProbModel(schema, lambda X: X[:, [col_a]])
    x = {"job": "a", "age": 0.5}
    got = fudge_score(model, x, (1, 0), space, BIG)
    assert got == pytest.approx(BIG.categorical_resample_rate * 0.75, abs=0.02)


@settings(max_examples=30, deadline=None)
@given(
    w=st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    mask=st.lists(st.integers(0, 1), min_size=3, max_size=3),
    sigma=st.floats(0.01, 0.3),
    seed=st.integers(0, 1000),
)
def test_property_fudge_nonnegative_and_finite(w, mask, sigma, seed):
    schema = num_schema(3)
    model = linear_model(schema, w)
    space = unit_space(schema)
    x = zeros_row(schema)
    cfg = PerturbationConfig(sigma=sigma, n_samples=50, seed=seed)
    got = fudge_score(model, x, mask, space, cfg)
    assert got >= 0.0
    assert math.isfinite(got)


# ------------------------------------------------------------- faithfulness


def test_faithfulness_matches_closed_form_oracle():
    w = (3.0, -2.0, 1.0, 0.5)
    schema = num_schema(4)
    model = linear_model(schema, w)
    space = unit_space(schema)
    x = zeros_row(schema)
    phi = w  # true attribution of a linear score
    got = faithfulness(phi, model, x, space, BIG)
    want = oracle_faith_linear(w, rank_features(phi), 2, BIG.sigma)
    assert got == pytest.approx(want, rel=0.05)


def test_faithfulness_default_k_is_floor_half():
    w = tuple(float(j + 1) for j in range(8))
    schema = num_schema(8)
    model = linear_model(schema, w)
    space = unit_space(schema)
    x = zeros_row(schema)
    assert faithfulness(w, model, x, space, FAST) == faithfulness(
        w, model, x, space, FAST, k=4
    )


def test_faithfulness_k_beyond_d_rejected():
    schema = num_schema(3)
    model = linear_model(schema, [1.0, 2.0, 3.0])
    space = unit_space(schema)
    with pytest.raises(SemanticError):
        faithfulness((1.0, 2.0, 3.0), model, zeros_row(schema), space, FAST, k=4)


def test_faithfulness_true_ranking_is_optimal_exhaustively():
    # oracle side: over all 24 rankings of a d=4 linear model, the true
    # |w| ordering maximizes the closed-form faithfulness
    rng = np.random.default_rng(0)
    for trial in range(20):
        w = rng.uniform(0.2, 3.0, size=4) * rng.choice([-1, 1], size=4)
        true_rank = tuple(sorted(range(4), key=lambda j: -abs(w[j])))
        f_true = oracle_faith_linear(w, true_rank, 2, 0.05)
        for r in permutations(range(4)):
            assert f_true >= oracle_faith_linear(w, r, 2, 0.05) - 1e-12


def test_faithfulness_implementation_prefers_true_ranking():
    w = (3.0, -2.5, 0.8, 0.1)
    schema = num_schema(4)
    model = linear_model(schema, w)
    space = unit_space(schema)
    x = zeros_row(schema)
    phi_true = w
    phi_rev = tuple(reversed(w))
    f_true = faithfulness(phi_true, model, x, space, CFG)
    f_rev = faithfulness(phi_rev, model, x, space, CFG)
    assert f_true > f_rev


# ----------------------------------------------------------------- rankings


def test_rank_features_breaks_ties_by_index():
    assert rank_features((0.5, -0.5, 0.2)) == (0, 1, 2)
    assert rank_features((0.9, -1.2, 0.1)) == (1, 0, 2)


def test_topk_features_examples():
    assert topk_features((0.9, -1.2, 0.1), 2) == (1, 0)
    assert topk_features((0.9, -1.2, 0.1)) == (1, 0, 2)
    # k beyond d clamps to d
    assert topk_features((0.9, -1.2, 0.1), 10) == (1, 0, 2)


def test_mean_absolute_attribution_matches_brute_force():
    rng = np.random.default_rng(4)
    phis = [tuple(rng.normal(size=5)) for _ in range(20)]
    got = mean_absolute_attribution(phis)
    want = np.mean(np.abs(np.asarray(phis)), axis=0)
    assert np.allclose(got, want)
    assert rank_features(got) == rank_features(tuple(want))


def test_attribution_result_validation():
    with pytest.raises(SemanticError):
        AttributionResult(phi=(float("nan"), 1.0), method_id="m", target_class=0)
    res = AttributionResult(phi=(0.5, -2.0), method_id="m", target_class=1)
    assert res.ranking() == (1, 0)


# --------------------------------------------------------- linear surrogate


def test_surrogate_recovers_linear_signs_and_order():
    schema = num_schema(2)
    model = linear_model(schema, [3.0, 1.0])
    space = unit_space(schema)
    x = zeros_row(schema)
    res = surrogate_linear_explain(model, x, 0.5, space, CFG)
    assert abs(res.phi[0]) > abs(res.phi[1])
    assert res.phi[0] > 0 and res.phi[1] > 0
    assert res.method_id == "surrogate-linear width 0.5"


def test_surrogate_constant_model_phi_near_zero():
    schema = num_schema(3)
    model = _RawProbModel(schema, lambda X: np.full((len(X), 1), 0.7))
    space = unit_space(schema)
    res = surrogate_linear_explain(model, zeros_row(schema), 0.75, space, CFG)
    assert max(abs(v) for v in res.phi) < 1e-3


def test_surrogate_unused_feature_gets_small_weight():
    schema = num_schema(2)
    model = step_model(schema, 0, 0.5)
    space = unit_space(schema)
    x = zeros_row(schema, 0.5)
    used, unused = [], []
    for seed in range(10):
        cfg = PerturbationConfig(n_samples=2000, seed=seed)
        res = surrogate_linear_explain(model, x, 0.5, space, cfg)
        used.append(abs(res.phi[0]))
        unused.append(abs(res.phi[1]))
    assert np.mean(unused) < 0.05 * np.mean(used)


def test_surrogate_degenerate_width_warns_and_recovers():
    schema = num_schema(2)
    model = linear_model(schema, [1.0, 2.0])
    space = unit_space(schema)
    with pytest.warns(UserWarning):
        res = surrogate_linear_explain(model, zeros_row(schema), 1e-8, space, FAST)
    assert all(math.isfinite(v) for v in res.phi)


def test_surrogate_rejects_nonpositive_width():
    schema = num_schema(2)
    model = linear_model(schema, [1.0, 2.0])
    space = unit_space(schema)
    with pytest.raises(SemanticError):
        surrogate_linear_explain(model, zeros_row(schema), 0.0, space, FAST)


# ------------------------------------------------------------ kernel shapley


def _bg_frame(schema, rows):
    cols = {f.name: [r[j] for r in rows] for j, f in enumerate(schema.features)}
    return DataFrame(
        schema,
        ids=list(range(len(rows))),
        columns=cols,
        labels=[0] * len(rows),
    )


def test_shapley_exact_matches_permutation_oracle():
    schema = num_schema(4)
    rng = np.random.default_rng(8)

    def fn(X):
        z = X[:, 0] * X[:, 1] + 0.5 * X[:, 2] - np.sin(X[:, 3])
        return (1.0 / (1.0 + np.exp(-z))).reshape(-1, 1)

    model = _RawProbModel(schema, fn)
    rows = rng.uniform(0, 1, size=(6, 4))
    bg = _bg_frame(schema, rows)
    x_vec = np.array([0.9, 0.2, 0.7, 0.4])
    x = dict(zip(schema.feature_names, x_vec))

    res = kernel_shapley_explain(model, x, bg, FAST, mode="exact")
    value = make_value_fn(lambda M: fn(M)[:, 0], x_vec, rows)
    want = oracle_shapley(value, 4)
    assert np.allclose(res.phi, want, atol=1e-8)
    assert res.method_id == "kernel-shapley"


def test_shapley_sampled_close_to_exact():
    schema = num_schema(4)
    rng = np.random.default_rng(9)

    def fn(X):
        z = X[:, 0] * X[:, 1] - X[:, 2] + 0.3 * X[:, 3] ** 2
        return (1.0 / (1.0 + np.exp(-z))).reshape(-1, 1)

    model = _RawProbModel(schema, fn)
    bg = _bg_frame(schema, rng.uniform(0, 1, size=(8, 4)))
    x = dict(zip(schema.feature_names, [0.8, 0.1, 0.6, 0.3]))

    exact = kernel_shapley_explain(model, x, bg, FAST, mode="exact")
    sampled = kernel_shapley_explain(
        model, x, bg, PerturbationConfig(n_samples=600, seed=21), mode="sampled"
    )
    assert max(abs(a - b) for a, b in zip(exact.phi, sampled.phi)) < 0.05


def test_shapley_efficiency_constraint():
    schema = num_schema(4)

    def fn(X):
        z = X[:, 0] ** 2 + X[:, 1] * X[:, 3]
        return np.column_stack([1.0 - z / 10.0, z / 10.0])

    model = _RawProbModel(schema, fn)
    rng = np.random.default_rng(10)
    rows = rng.uniform(0, 1, size=(12, 4))
    bg = _bg_frame(schema, rows)
    x = dict(zip(schema.feature_names, [0.7, 0.5, 0.1, 0.9]))

    x_enc = np.asarray([[0.7, 0.5, 0.1, 0.9]])
    p = model.predict_proba_matrix(x_enc)[0]
    cls = int(np.argmax(p))
    fx = p[cls]
    f_bg = float(np.mean(model.predict_proba_matrix(rows)[:, cls]))

    for mode in ("exact", "sampled"):
        res = kernel_shapley_explain(model, x, bg, FAST, mode=mode)
        assert sum(res.phi) == pytest.approx(fx - f_bg, abs=1e-6)


def test_shapley_additive_closed_form():
    # for f = sum_j f_j(x_j) under background mixing, phi_j is exactly
    # f_j(x_j) - mean_background f_j
    schema = num_schema(3)

    def fn(X):
        return (X[:, 0] ** 2 + 3.0 * X[:, 1] - 2.0 * X[:, 2]).reshape(-1, 1)

    model = _RawProbModel(schema, fn)
    rng = np.random.default_rng(12)
    rows = rng.uniform(0, 1, size=(10, 3))
    bg = _bg_frame(schema, rows)
    x_vec = np.array([0.9, 0.4, 0.2])
    x = dict(zip(schema.feature_names, x_vec))

    res = kernel_shapley_explain(model, x, bg, FAST, mode="exact")
    want = [
        x_vec[0] ** 2 - np.mean(rows[:, 0] ** 2),
        3.0 * x_vec[1] - np.mean(3.0 * rows[:, 1]),
        -2.0 * x_vec[2] - np.mean(-2.0 * rows[:, 2]),
    ]
    assert np.allclose(res.phi, want, atol=1e-8)


def test_shapley_duplicated_features_get_equal_credit():
    schema = num_schema(3)

    def fn(X):
        return ((X[:, 0] + X[:, 1]) ** 2 + X[:, 2]).reshape(-1, 1)

    model = _RawProbModel(schema, fn)
    rng = np.random.default_rng(13)
    base = rng.uniform(0, 1, size=(8, 1))
    rows = np.column_stack([base, base, rng.uniform(0, 1, size=(8, 1))])
    bg = _bg_frame(schema, rows)
    x = {"f0": 0.6, "f1": 0.6, "f2": 0.3}

    res = kernel_shapley_explain(model, x, bg, FAST, mode="exact")
    assert res.phi[0] == pytest.approx(res.phi[1], abs=1e-9)


def test_shapley_empty_background_rejected():
    schema = num_schema(2)
    model = linear_model(schema, [1.0, 1.0])
    bg = DataFrame(schema, ids=[], columns={"f0": [], "f1": []}, labels=[])
    with pytest.raises(SemanticError):
        kernel_shapley_explain(model, {"f0": 0.1, "f1": 0.2}, bg, FAST)


# ---------------------------------------------------------------- stability


def _fixed_explainer(phi, method_id="fixed"):
    def run(model, x, space, cfg):
        return AttributionResult(phi=tuple(phi), method_id=method_id, target_class=0)

    return run


def test_stability_constant_explainer_is_one():
    schema = num_schema(4)
    model = linear_model(schema, [1.0, 2.0, 3.0, 4.0])
    space = unit_space(schema)
    explainer = _fixed_explainer((4.0, 3.0, 2.0, 1.0))
    got = stability(explainer, model, zeros_row(schema), space, FAST)
    assert got == 1.0


def test_stability_reversed_rankings_is_zero():
    # top-1 sets {0} vs {3} and top-2 sets {0,1} vs {3,2} share nothing, so
    # both Jaccard levels are 0 and their average is 0
    schema = num_schema(4)
    model = linear_model(schema, [1.0, 1.0, 1.0, 1.0])
    space = unit_space(schema)
    x0 = zeros_row(schema)
    true_phi = (4.0, 3.0, 2.0, 1.0)

    def explainer(model_, x, space_, cfg_):
        at_origin = all(v == 0.0 for v in x.values())
        phi = true_phi if at_origin else tuple(reversed(true_phi))
        return AttributionResult(phi=phi, method_id="flip", target_class=0)

    assert stability(explainer, model, x0, space, FAST) == 0.0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 100))
def test_property_stability_in_unit_interval(seed):
    schema = num_schema(3)
    model = linear_model(schema, [1.0, -1.0, 0.5])
    space = unit_space(schema)
    cfg = PerturbationConfig(n_samples=60, seed=seed)

    def wobbly(model_, x, space_, cfg_):
        h = hash(tuple(round(float(v), 6) for v in x.values()))
        rng = np.random.default_rng(abs(h) % (2**32))
        return AttributionResult(
            phi=tuple(rng.normal(size=3)), method_id="wobbly", target_class=0
        )

    got = stability(wobbly, model, zeros_row(schema), space, cfg)
    assert 0.0 <= got <= 1.0


# ---------------------------------------------------------------- selection


def test_select_single_candidate_returned():
    schema = num_schema(4)
    model = linear_model(schema, [4.0, 3.0, 2.0, 1.0])
    space = unit_space(schema)
    cand = _fixed_explainer((4.0, 3.0, 2.0, 1.0), "only")
    res = select_explanation(model, zeros_row(schema), [cand], space, FAST)
    assert res.method_id == "only"
    assert res.faith is not None
    assert res.stability is not None


def test_select_prefers_true_ranking_over_reversed():
    w = (4.0, 3.0, 2.0, 1.0)
    schema = num_schema(4)
    model = linear_model(schema, w)
    space = unit_space(schema)
    cands = [
        _fixed_explainer(tuple(reversed(w)), "reversed"),
        _fixed_explainer(w, "true"),
    ]
    res = select_explanation(model, zeros_row(schema), cands, space, CFG)
    assert res.method_id == "true"
    # the margin between these candidates dwarfs the tie window
    assert oracle_faith_linear(w, (0, 1, 2, 3), 2, CFG.sigma) - oracle_faith_linear(
        w, (3, 2, 1, 0), 2, CFG.sigma
    ) > 10 * TIE_DELTA


def test_select_tie_broken_by_stability():
    # both candidates give the same attribution at x, hence identical
    # faithfulness; only the unstable one changes under perturbation
    w = (4.0, 3.0, 2.0, 1.0)
    schema = num_schema(4)
    model = linear_model(schema, w)
    space = unit_space(schema)

    def unstable(model_, x, space_, cfg_):
        at_origin = all(v == 0.0 for v in x.values())
        phi = w if at_origin else tuple(reversed(w))
        return AttributionResult(phi=phi, method_id="unstable", target_class=0)

    stable = _fixed_explainer(w, "stable")
    res = select_explanation(model, zeros_row(schema), [unstable, stable], space, FAST)
    assert res.method_id == "stable"
    assert res.stability == 1.0


def test_select_duplicate_candidates_first_wins():
    w = (2.0, 1.0)
    schema = num_schema(2)
    model = linear_model(schema, w)
    space = unit_space(schema)
    cands = [_fixed_explainer(w, "first"), _fixed_explainer(w, "second")]
    res = select_explanation(model, zeros_row(schema), cands, space, FAST)
    assert res.method_id == "first"


def test_select_empty_candidates_rejected():
    schema = num_schema(2)
    model = linear_model(schema, [1.0, 1.0])
    space = unit_space(schema)
    with pytest.raises(SemanticError):
        select_explanation(model, zeros_row(schema), [], space, FAST)


def test_select_propagates_first_error_when_all_fail():
    schema = num_schema(2)
    model = linear_model(schema, [1.0, 1.0])
    space = unit_space(schema)

    def boom_a(model_, x, space_, cfg_):
        raise ValueError("boom a")

    def boom_b(model_, x, space_, cfg_):
        raise ValueError("boom b")

    with pytest.raises(ValueError, match="boom a"):
        select_explanation(model, zeros_row(schema), [boom_a, boom_b], space, FAST)


def test_select_runs_on_trained_model(mixed_frame):
    model = train_gbt(mixed_frame, {"n_trees": 10, "max_depth": 2})
    space = PerturbationSpace(mixed_frame.schema, mixed_frame)
    cfg = PerturbationConfig(n_samples=150, seed=1)
    x = mixed_frame.row(0)

    def shap_cand(model_, x_, space_, cfg_):
        return kernel_shapley_explain(model_, x_, mixed_frame, cfg_)

    cands = [
        lambda m, x_, s, c, wd=wd: surrogate_linear_explain(m, x_, wd, s, c)
        for wd in SURROGATE_WIDTHS
    ] + [shap_cand]
    res = select_explanation(model, x, cands, space, cfg)
    assert len(res.phi) == 3
    assert all(math.isfinite(v) for v in res.phi)
    assert res.faith >= 0.0
    assert 0.0 <= res.stability <= 1.0


# ------------------------------------------------------------------ pgi/pgu


def test_pgi_pgu_constant_model_both_zero():
    schema = num_schema(4)
    model = _RawProbModel(schema, lambda X: np.full((len(X), 1), 0.5))
    space = unit_space(schema)
    got = pgi_pgu((1.0, 2.0, 3.0, 4.0), model, zeros_row(schema), space, FAST)
    assert got == (0.0, 0.0)


def test_pgi_pgu_ordering_tracks_ranking_quality():
    w = (5.0, 4.0, 1.0, 0.5)
    schema = num_schema(4)
    model = linear_model(schema, w)
    space = unit_space(schema)
    x = zeros_row(schema)
    pgi, pgu = pgi_pgu(w, model, x, space, CFG)
    assert pgi > pgu
    pgi_r, pgu_r = pgi_pgu(tuple(reversed(w)), model, x, space, CFG)
    assert pgi_r < pgu_r
    # closed-form check for the perfect ranking
    assert pgi == pytest.approx(
        oracle_fudge_linear(w, (1, 1, 0, 0), CFG.sigma), rel=0.06
    )
    assert pgu == pytest.approx(
        oracle_fudge_linear(w, (0, 0, 1, 1), CFG.sigma), rel=0.06
    )


# ----------------------------------------------------------- counterfactuals


def test_cfe_already_in_target_class_returns_zero_change():
    schema = num_schema(2)
    model = step_model(schema, 0, 0.5)
    space = unit_space(schema)
    x = {"f0": 0.8, "f1": 0.2}
    got = generate_counterfactuals(model, x, 3, 1, space, FAST, row_id=7)
    assert len(got) == 1
    cf = got[0]
    assert cf.original_id == 7
    assert cf.deltas == {}
    assert cf.distance == 0.0
    assert cf.before_class == cf.after_class == 1


def test_cfe_threshold_model_minimal_delta():
    schema = num_schema(1)
    model = step_model(schema, 0, 0.5)
    space = unit_space(schema)
    got = generate_counterfactuals(model, {"f0": 0.4}, 1, 1, space, FAST)
    assert len(got) == 1
    v = got[0].values["f0"]
    assert 0.5 < v <= 0.6
    assert got[0].distance == pytest.approx(v - 0.4, abs=1e-9)
    assert got[0].deltas["f0"] == (0.4, v)


def test_cfe_returns_distinct_valid_points():
    schema = num_schema(2)

    def fn(X):
        g = (X[:, 0] + X[:, 1] > 1.0).astype(float)
        return np.column_stack([1.0 - g, g])

    model = _RawProbModel(schema, fn)
    space = unit_space(schema)
    x = {"f0": 0.2, "f1": 0.2}
    got = generate_counterfactuals(model, x, 3, 1, space, FAST)
    assert len(got) == 3
    seen = {tuple(cf.values.items()) for cf in got}
    assert len(seen) == 3
    for cf in got:
        assert cf.values["f0"] + cf.values["f1"] > 1.0
        assert cf.after_class == 1
        assert cf.before_class == 0


def test_cfe_validity_postcondition_across_models():
    rng = np.random.default_rng(20)
    schema = num_schema(2)
    space = unit_space(schema)
    for trial in range(10):
        w = rng.uniform(-3, 3, size=2)
        b = rng.uniform(-1, 1)

        def fn(X, w=w, b=b):
            g = 1.0 / (1.0 + np.exp(-(X @ w + b) * 4.0))
            return np.column_stack([1.0 - g, g])

        model = _RawProbModel(schema, fn)
        x = dict(zip(schema.feature_names, rng.uniform(0, 1, size=2)))
        x_enc = np.array([[x["f0"], x["f1"]]])
        before = int(np.argmax(model.predict_proba_matrix(x_enc)[0]))
        target = 1 - before
        cfg = PerturbationConfig(n_samples=200, seed=trial)
        for cf in generate_counterfactuals(model, x, 2, target, space, cfg):
            row = np.array([[cf.values["f0"], cf.values["f1"]]])
            assert int(np.argmax(model.predict_proba_matrix(row)[0])) == target


def test_cfe_impossible_target_returns_empty():
    schema = num_schema(2)
    model = _RawProbModel(
        schema, lambda X: np.column_stack([np.ones(len(X)), np.zeros(len(X))])
    )
    space = unit_space(schema)
    got = generate_counterfactuals(model, {"f0": 0.5, "f1": 0.5}, 2, 1, space, FAST)
    assert got == []


def test_cfe_respects_frozen_features():
    schema = num_schema(2)
    model = step_model(schema, 0, 0.5)  # only f0 can flip the class
    space = unit_space(schema)
    x = {"f0": 0.3, "f1": 0.3}
    none = generate_counterfactuals(
        model, x, 2, 1, space, FAST, frozen=("f0",)
    )
    assert none == []
    some = generate_counterfactuals(
        model, x, 2, 1, space, FAST, frozen=("f1",)
    )
    assert some
    for cf in some:
        assert cf.values["f1"] == 0.3


def test_cfe_deterministic_given_seed():
    schema = num_schema(2)
    model = step_model(schema, 1, 0.7)
    space = unit_space(schema)
    x = {"f0": 0.1, "f1": 0.1}
    a = generate_counterfactuals(model, x, 3, 1, space, FAST)
    b = generate_counterfactuals(model, x, 3, 1, space, FAST)
    assert [cf.values for cf in a] == [cf.values for cf in b]


def test_cfe_categorical_change(mixed_frame):
    # force the class to depend only on the categorical column
    schema = mixed_frame.schema
    enc = Encoder(schema)
    col = enc.columns.index(("job", "pilot"))

    def fn(X):
        g = X[:, col]
        return np.column_stack([1.0 - g, g])

    model = _RawProbModel(schema, fn)
    space = PerturbationSpace(schema, mixed_frame)
    x = dict(mixed_frame.row(0))
    x["job"] = "clerk"
    got = generate_counterfactuals(model, x, 1, 1, space, FAST)
    assert got
    assert got[0].values["job"] == "pilot"


# --------------------------------------------------------------- interactions


def test_interactions_additive_model_has_flat_off_diagonal():
    schema = num_schema(3)

    def fn(X):
        return (X[:, 0] ** 2 + 3.0 * X[:, 1]).reshape(-1, 1)

    model = _RawProbModel(schema, fn)
    rng = np.random.default_rng(30)
    df = _bg_frame(schema, rng.uniform(0, 1, size=(20, 3)))
    M = feature_interactions(model, df)
    off = [M[i, j] for i in range(3) for j in range(3) if i != j]
    assert max(off) < 0.01 * M.diagonal().max()


def test_interactions_product_pair_dominates():
    schema = num_schema(3)

    def fn(X):
        return (X[:, 0] * X[:, 1]).reshape(-1, 1)

    model = _RawProbModel(schema, fn)
    rng = np.random.default_rng(31)
    df = _bg_frame(schema, rng.uniform(0, 1, size=(20, 3)))
    M = feature_interactions(model, df)
    others = max(M[0, 2], M[1, 2])
    assert M[0, 1] > 10 * max(others, 1e-12)
    assert np.allclose(M, M.T)
    assert (M >= 0).all()
    # the unused feature has a flat dependence curve
    assert M[2, 2] == pytest.approx(0.0, abs=1e-12)


def test_interactions_single_feature_is_zero_matrix():
    schema = num_schema(1)
    model = linear_model(schema, [2.0])
    df = DataFrame(
        schema, ids=[0, 1, 2], columns={"f0": [0.0, 0.5, 1.0]}, labels=[0, 1, 0]
    )
    M = feature_interactions(model, df)
    assert M.shape == (1, 1)
    assert M[0, 0] == 0.0


# ------------------------------------------------------------------ mistakes


def _age_frame(schema, n=60, seed=2):
    rng = np.random.default_rng(seed)
    ages = rng.uniform(20, 80, size=n)
    bmis = rng.uniform(15, 40, size=n)
    labels = (ages > 50).astype(int)
    return DataFrame(
        schema,
        ids=list(range(n)),
        columns={"f0": ages, "f1": bmis},
        labels=labels,
    )


def test_mistakes_finds_constructed_error_region():
    # the model always answers class 0, so it errs exactly when age > 50
    schema = num_schema(2)
    model = _RawProbModel(
        schema, lambda X: np.column_stack([np.ones(len(X)), np.zeros(len(X))])
    )
    df = _age_frame(schema)
    summary = summarize_mistakes(model, df)
    assert summary.total_errors == int(np.sum(df.labels))
    assert summary.leaves
    for leaf in summary.leaves:
        first = leaf.conditions[0]
        assert first.startswith("f0 ")
        threshold = float(first.split()[-1])
        assert 45.0 <= threshold <= 55.0
    high = [leaf for leaf in summary.leaves if leaf.conditions[0].startswith("f0 >")]
    assert high and all(leaf.error_rate > 0.9 for leaf in high)


def test_mistakes_zero_errors_reports_no_tree():
    schema = num_schema(2)
    model = step_model(schema, 0, 50.0)  # matches the labels exactly
    df = _age_frame(schema)
    summary = summarize_mistakes(model, df)
    assert summary.total_errors == 0
    assert summary.leaves == ()


def test_mistakes_depth_bound_holds():
    schema = num_schema(2)
    rng = np.random.default_rng(3)
    df = DataFrame(
        schema,
        ids=list(range(80)),
        columns={"f0": rng.uniform(0, 1, 80), "f1": rng.uniform(0, 1, 80)},
        labels=rng.integers(0, 2, 80),
    )
    model = _RawProbModel(
        schema, lambda X: np.column_stack([np.ones(len(X)), np.zeros(len(X))])
    )
    summary = summarize_mistakes(model, df, max_depth=3)
    assert all(len(leaf.conditions) <= 3 for leaf in summary.leaves)
    assert all(0.0 <= leaf.error_rate <= 1.0 for leaf in summary.leaves)


def test_mistakes_empty_frame_rejected():
    schema = num_schema(2)
    model = linear_model(schema, [1.0, 1.0])
    empty = DataFrame(schema, ids=[], columns={"f0": [], "f1": []}, labels=[])
    with pytest.raises(SemanticError):
        summarize_mistakes(model, empty)


def test_mistakes_categorical_split(mixed_frame):
    # construct labels so the model errs exactly on one job category
    schema = mixed_frame.schema
    model = _RawProbModel(
        schema,
        lambda X: np.column_stack([np.ones(len(X)), np.zeros(len(X))]),
    )
    is_nurse = mixed_frame.columns["job"] == "nurse"
    labels = np.where(is_nurse, 1, 0)
    df = DataFrame(
        schema,
        ids=mixed_frame.ids,
        columns=mixed_frame.columns,
        labels=labels,
    )
    summary = summarize_mistakes(model, df)
    assert summary.total_errors == int(is_nurse.sum())
    roots = {leaf.conditions[0] for leaf in summary.leaves}
    assert roots == {"job = nurse", "job != nurse"}
    bad = [leaf for leaf in summary.leaves if leaf.conditions[0] == "job = nurse"]
    assert bad and bad[0].error_rate == 1.0
