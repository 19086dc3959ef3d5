"""Feature attribution, faithfulness scoring, and explanation selection.

The module answers "why" questions about a classifier: local surrogate and
Shapley attributions, a perturbation-based faithfulness score used to pick
the most trustworthy attribution automatically, counterfactual search,
pairwise feature interactions, and mistake summaries.

Every perturbation operates in min-max-normalized feature space, so a scale
of 0.05 always means 5% of a feature's observed range regardless of units.
All stochastic operations are deterministic given the config seed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .data import CATEGORICAL, NUMERIC, DataFrame, DatasetSchema
from .errors import SemanticError

# Kernel widths tried for the local linear surrogate.
SURROGATE_WIDTHS = (0.25, 0.5, 0.75, 1.0)

# Faithfulness gap under which two explanations count as tied and the more
# stable one wins.
TIE_DELTA = 0.01

# Sampling scale for the surrogate neighborhood. Chosen so the widths above
# span weak to strong locality; the perturbation sigma in the config stays
# reserved for faithfulness scoring.
SURROGATE_SAMPLE_SIGMA = 0.2

_RIDGE_ALPHA = 1.0

# Counterfactual search budget: restarts cycle through the radii.
CFE_RESTARTS = 20
CFE_STEPS = 500
_CFE_RADII = (0.1, 0.25, 0.5, 1.0)
_CFE_SEARCH_RESAMPLE_RATE = 0.5
_DIVERSITY_WEIGHT = 0.5

_MISTAKE_MIN_LEAF = 5
_MISTAKE_MAX_THRESHOLDS = 32

_INTERACTION_GRID = 10


@dataclass(frozen=True)
class PerturbationConfig:
    """Scale, sample count, and seed for every stochastic operation here.

    sigma is a fraction of each numeric feature's range. Categorical
    features cannot take Gaussian noise; masked ones are resampled from the
    reference column at the given rate instead.
    """

    sigma: float = 0.05
    n_samples: int = 10_000
    categorical_resample_rate: float = 0.3
    seed: int = 0
    stability_samples: int = 10

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if not 0.0 <= self.categorical_resample_rate <= 1.0:
            raise ValueError("categorical_resample_rate must be in [0, 1]")
        if self.stability_samples < 1:
            raise ValueError("stability_samples must be at least 1")


# Interactive replies trade sample count for latency; benchmarks keep the
# full count.
INTERACTIVE_CONFIG = PerturbationConfig(n_samples=1_000)
BENCHMARK_CONFIG = PerturbationConfig(n_samples=10_000)


def rank_features(phi: Sequence[float]) -> tuple[int, ...]:
    """Feature indices by descending |phi|; ties break on the lower index."""
    return tuple(
        sorted(range(len(phi)), key=lambda i: (-abs(float(phi[i])), i))
    )


def topk_features(phi: Sequence[float], k: Optional[int] = None) -> tuple[int, ...]:
    order = rank_features(phi)
    if k is None:
        return order
    k = int(k)
    if k < 1:
        raise SemanticError("top-k size must be at least 1")
    return order[: min(k, len(order))]


def mean_absolute_attribution(phis: Iterable[Sequence[float]]) -> tuple[float, ...]:
    """Group-level importance: mean |phi| across per-row attributions."""
    arr = np.asarray([tuple(p) for p in phis], dtype=float)
    if arr.ndim != 2 or arr.size == 0:
        raise SemanticError("need at least one attribution vector")
    return tuple(np.mean(np.abs(arr), axis=0).tolist())


@dataclass(frozen=True)
class AttributionResult:
    """Per-feature importance vector plus how it was produced and scored."""

    phi: tuple[float, ...]
    method_id: str
    target_class: int
    faith: Optional[float] = None
    stability: Optional[float] = None

    def __post_init__(self):
        phi = tuple(float(v) for v in self.phi)
        if not phi:
            raise SemanticError("attribution vector is empty")
        if not all(math.isfinite(v) for v in phi):
            raise SemanticError("attribution vector has non-finite entries")
        object.__setattr__(self, "phi", phi)
        if self.stability is not None and not 0.0 <= self.stability <= 1.0:
            raise SemanticError("stability must lie in [0, 1]")

    def ranking(self) -> tuple[int, ...]:
        return rank_features(self.phi)


@dataclass
class _PerturbationBatch:
    columns: dict
    numeric_offsets: np.ndarray  # n x d, normalized units, 0 for categorical
    categorical_changed: np.ndarray  # n x d bool


class PerturbationSpace:
    """Observed feature ranges and categorical pools from a reference frame.

    Gaussian noise is drawn in units of each feature's range; categorical
    pools hold the distinct values seen in the reference column.
    """

    def __init__(self, schema: DatasetSchema, reference: DataFrame):
        if len(reference) == 0:
            raise SemanticError("perturbation reference frame is empty")
        self.schema = schema
        self._low: dict[str, float] = {}
        self._span: dict[str, float] = {}
        self._pool: dict[str, np.ndarray] = {}
        for f in schema.features:
            col = reference.columns[f.name]
            if f.kind == NUMERIC:
                lo = float(np.min(col))
                hi = float(np.max(col))
                self._low[f.name] = lo
                self._span[f.name] = (hi - lo) if hi > lo else 1.0
            else:
                self._pool[f.name] = np.array(sorted(set(col)), dtype=object)

    def span(self, name: str) -> float:
        return self._span[name]

    def normalize(self, name: str, value) -> float:
        return (float(value) - self._low[name]) / self._span[name]

    def distance(self, a: dict, b: dict) -> float:
        """Normalized L1 distance; a categorical change costs 1."""
        total = 0.0
        for f in self.schema.features:
            if f.kind == NUMERIC:
                total += abs(float(a[f.name]) - float(b[f.name])) / self._span[f.name]
            elif a[f.name] != b[f.name]:
                total += 1.0
        return total

    def sample_batch(
        self,
        x: dict,
        mask: Sequence[int],
        cfg: PerturbationConfig,
        rng: np.random.Generator,
        n: int,
        sigma: float,
        rate: Optional[float] = None,
    ) -> _PerturbationBatch:
        if rate is None:
            rate = cfg.categorical_resample_rate
        feats = self.schema.features
        d = len(feats)
        offsets = np.zeros((n, d))
        changed = np.zeros((n, d), dtype=bool)
        cols: dict = {}
        for j, f in enumerate(feats):
            xv = x[f.name]
            if f.kind == NUMERIC:
                if mask[j]:
                    eps = rng.normal(0.0, sigma, n)
                    cols[f.name] = float(xv) + eps * self._span[f.name]
                    offsets[:, j] = eps
                else:
                    cols[f.name] = np.full(n, float(xv))
            else:
                if mask[j]:
                    pool = self._pool[f.name]
                    flip = rng.random(n) < rate
                    pick = pool[rng.integers(0, len(pool), n)]
                    col = np.where(flip, pick, xv).astype(object)
                    cols[f.name] = col
                    changed[:, j] = col != xv
                else:
                    cols[f.name] = np.full(n, xv, dtype=object)
        return _PerturbationBatch(cols, offsets, changed)


def _encode_columns(encoder, columns: dict, n: int) -> np.ndarray:
    out = np.zeros((n, encoder.width))
    for j, (name, value) in enumerate(encoder.columns):
        col = columns[name]
        if value is None:
            out[:, j] = np.asarray(col, dtype=float)
        else:
            out[:, j] = np.fromiter(
                (1.0 if v == value else 0.0 for v in col), float, count=n
            )
    return out


def _encode_row(encoder, x: dict) -> np.ndarray:
    return _encode_columns(encoder, {k: [v] for k, v in x.items()}, 1)


def _base_probabilities(model, x: dict) -> np.ndarray:
    return np.asarray(model.predict_proba_matrix(_encode_row(model.encoder, x)))[0]


def _resolve_target(model, x: dict, target_class: Optional[int]):
    p = _base_probabilities(model, x)
    if target_class is None:
        cls = int(np.argmax(p))
    else:
        cls = int(target_class)
        if not 0 <= cls < len(p):
            raise SemanticError(f"class index {cls} out of range")
    return p, cls


def _check_mask(mask: Sequence[int], d: int) -> tuple[int, ...]:
    mask = tuple(int(m) for m in mask)
    if len(mask) != d:
        raise SemanticError("mask length does not match the feature count")
    if any(m not in (0, 1) for m in mask):
        raise SemanticError("mask entries must be 0 or 1")
    return mask


def fudge_score(model, x: dict, mask, space: PerturbationSpace,
                cfg: PerturbationConfig) -> float:
    """Mean absolute prediction change when the masked features are jiggled.

    The prediction is the probability of x's predicted class. Numeric
    features take Gaussian noise of scale sigma in normalized space;
    categorical ones get resampled from the reference pool.
    """
    d = len(space.schema.features)
    mask = _check_mask(mask, d)
    if not any(mask):
        return 0.0
    p0, cls = _resolve_target(model, x, None)
    rng = np.random.default_rng(cfg.seed)
    batch = space.sample_batch(x, mask, cfg, rng, cfg.n_samples, cfg.sigma)
    X = _encode_columns(model.encoder, batch.columns, cfg.n_samples)
    p = np.asarray(model.predict_proba_matrix(X))[:, cls]
    return float(np.mean(np.abs(p0[cls] - p)))


def faithfulness(phi: Sequence[float], model, x: dict, space: PerturbationSpace,
                 cfg: PerturbationConfig, k: Optional[int] = None) -> float:
    """Area under the fudge curve over the top-k features of phi.

    k defaults to floor(d/2). |phi| ties break on the lower feature index,
    so the top-k set is a function of phi.
    """
    d = len(space.schema.features)
    if len(phi) != d:
        raise SemanticError("attribution length does not match the feature count")
    if k is None:
        k = d // 2
    if not 0 <= k <= d:
        raise SemanticError("top-k depth must be between 0 and the feature count")
    order = rank_features(phi)
    total = 0.0
    for kk in range(1, k + 1):
        mask = [0] * d
        for idx in order[:kk]:
            mask[idx] = 1
        total += fudge_score(model, x, mask, space, cfg)
    return total


def surrogate_linear_explain(model, x: dict, width: float,
                             space: PerturbationSpace, cfg: PerturbationConfig,
                             target_class: Optional[int] = None) -> AttributionResult:
    """Weighted ridge fit of a local linear model around x.

    Samples live in normalized space; the kernel weight is
    exp(-D^2 / (width * sqrt(d))^2) with D the normalized Euclidean
    distance (a categorical change counts as distance 1).
    """
    if not width > 0:
        raise SemanticError("surrogate width must be positive")
    feats = space.schema.features
    d = len(feats)
    p0, cls = _resolve_target(model, x, target_class)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_samples
    batch = space.sample_batch(x, (1,) * d, cfg, rng, n, SURROGATE_SAMPLE_SIGMA)
    X = _encode_columns(model.encoder, batch.columns, n)
    y = np.asarray(model.predict_proba_matrix(X))[:, cls]

    # design: numeric columns are normalized values, categorical columns are
    # 1 when the sample kept x's value
    Z = np.zeros((n, d))
    for j, f in enumerate(feats):
        if f.kind == NUMERIC:
            Z[:, j] = space.normalize(f.name, x[f.name]) + batch.numeric_offsets[:, j]
        else:
            Z[:, j] = 1.0 - batch.categorical_changed[:, j]
    d2 = (batch.numeric_offsets**2).sum(axis=1) + batch.categorical_changed.sum(axis=1)

    w_eff = width
    for _ in range(80):
        kern = np.exp(-d2 / (w_eff * math.sqrt(d)) ** 2)
        if kern.sum() > 1e-12:
            break
        w_eff *= 2.0
    else:
        raise SemanticError("surrogate kernel weights stayed degenerate")
    if w_eff != width:
        warnings.warn(
            f"surrogate kernel width {width:g} left all samples weightless; "
            f"refit with width {w_eff:g}"
        )

    sw = kern / kern.sum()
    Zc = Z - sw @ Z
    yc = y - sw @ y
    A = Zc.T @ (Zc * kern[:, None]) + _RIDGE_ALPHA * np.eye(d)
    b = Zc.T @ (kern * yc)
    phi = np.linalg.solve(A, b)
    return AttributionResult(
        phi=tuple(phi.tolist()),
        method_id=f"surrogate-linear width {width:g}",
        target_class=cls,
    )


def _coalition_values(model, x: dict, background: DataFrame,
                      subsets: Sequence[int], d: int) -> np.ndarray:
    """Mean prediction per coalition bitmask, pinning member features to x.

    Mixing happens per feature group in encoded space, which is equivalent
    to mixing raw values because encoding is columnwise.
    """
    enc = model.encoder
    bg = _encode_columns(enc, background.columns, len(background))
    xe = _encode_row(enc, x)[0]
    groups = enc.group_slices()
    names = [f.name for f in model.schema.features]
    blocks = []
    for s in subsets:
        m = bg.copy()
        for j in range(d):
            if s >> j & 1:
                m[:, groups[names[j]]] = xe[groups[names[j]]]
        blocks.append(m)
    X = np.vstack(blocks)
    p = np.asarray(model.predict_proba_matrix(X))
    return p.reshape(len(subsets), len(background), -1)


def kernel_shapley_explain(model, x: dict, background: DataFrame,
                           cfg: PerturbationConfig,
                           target_class: Optional[int] = None,
                           mode: str = "auto") -> AttributionResult:
    """Shapley values of the target-class probability against a background.

    Exact enumeration when d <= 12 (or mode="exact"); otherwise coalitions
    are sampled with Shapley kernel weights and solved as a least squares
    problem under the efficiency constraint.
    """
    if mode not in ("auto", "exact", "sampled"):
        raise SemanticError(f"unknown shapley mode {mode!r}")
    if len(background) == 0:
        raise SemanticError("shapley background frame is empty")
    d = len(model.schema.features)
    p0, cls = _resolve_target(model, x, target_class)
    exact = mode == "exact" or (mode == "auto" and d <= 12)

    if exact:
        subsets = list(range(2**d))
        probs = _coalition_values(model, x, background, subsets, d)
        values = probs[:, :, cls].mean(axis=1)
        fact = [math.factorial(i) for i in range(d + 1)]
        weights = [fact[s] * fact[d - s - 1] / fact[d] for s in range(d)]
        phi = np.zeros(d)
        for s in subsets:
            size = bin(s).count("1")
            if size == d:
                continue
            w = weights[size]
            for j in range(d):
                if not s >> j & 1:
                    phi[j] += w * (values[s | (1 << j)] - values[s])
    else:
        phi = _sampled_shapley(model, x, background, cfg, cls, d)

    return AttributionResult(
        phi=tuple(phi.tolist()), method_id="kernel-shapley", target_class=cls
    )


def _sampled_shapley(model, x, background, cfg, cls, d):
    rng = np.random.default_rng(cfg.seed)
    sizes = np.arange(1, d)
    size_w = (d - 1) / (sizes * (d - sizes))
    size_w = size_w / size_w.sum()
    counts: dict[int, int] = {}
    for _ in range(cfg.n_samples):
        s = int(rng.choice(sizes, p=size_w))
        members = rng.choice(d, size=s, replace=False)
        bits = 0
        for j in members:
            bits |= 1 << int(j)
        counts[bits] = counts.get(bits, 0) + 1

    subsets = sorted(counts)
    probs = _coalition_values(model, x, background, subsets, d)
    values = probs[:, :, cls].mean(axis=1)
    v0 = float(
        np.asarray(model.predict_proba_matrix(
            _encode_columns(model.encoder, background.columns, len(background))
        ))[:, cls].mean()
    )
    vn = float(_base_probabilities(model, x)[cls])
    delta = vn - v0

    Z = np.zeros((len(subsets), d))
    for i, s in enumerate(subsets):
        for j in range(d):
            Z[i, j] = s >> j & 1
    w = np.asarray([counts[s] for s in subsets], dtype=float)

    # eliminate the efficiency constraint: phi_last = delta - sum(others)
    y = values - v0 - Z[:, -1] * delta
    Zr = Z[:, :-1] - Z[:, [-1]]
    A = Zr.T @ (Zr * w[:, None]) + 1e-10 * np.eye(d - 1)
    b = Zr.T @ (w * y)
    head = np.linalg.solve(A, b)
    return np.concatenate([head, [delta - head.sum()]])


Explainer = Callable[[object, dict, PerturbationSpace, PerturbationConfig],
                     AttributionResult]


def stability(explainer: Explainer, model, x: dict, space: PerturbationSpace,
              cfg: PerturbationConfig, k: Optional[int] = None) -> float:
    """Average top-k Jaccard overlap between the explanation at x and the
    explanations at perturbed copies of x."""
    d = len(space.schema.features)
    if k is None:
        k = d // 2
    if k < 1:
        return 1.0
    base = explainer(model, x, space, cfg).ranking()
    rng = np.random.default_rng(cfg.seed)
    mask = (1,) * d
    sims = []
    for _ in range(cfg.stability_samples):
        batch = space.sample_batch(x, mask, cfg, rng, 1, cfg.sigma)
        x2 = {name: col[0] for name, col in batch.columns.items()}
        other = explainer(model, x2, space, cfg).ranking()
        levels = []
        for kk in range(1, k + 1):
            a, b = set(base[:kk]), set(other[:kk])
            levels.append(len(a & b) / len(a | b))
        sims.append(sum(levels) / k)
    return float(np.mean(sims))


def select_explanation(model, x: dict, candidates: Sequence[Explainer],
                       space: PerturbationSpace,
                       cfg: PerturbationConfig) -> AttributionResult:
    """Run every candidate explainer and keep the most faithful one.

    Candidates whose faithfulness lands within TIE_DELTA of the best are
    re-ranked by stability; remaining ties keep the earliest candidate.
    """
    candidates = list(candidates)
    if not candidates:
        raise SemanticError("no explanation candidates given")
    scored = []
    errors: list[Exception] = []
    for idx, cand in enumerate(candidates):
        try:
            res = cand(model, x, space, cfg)
            faith = faithfulness(res.phi, model, x, space, cfg)
        except Exception as exc:
            errors.append(exc)
            continue
        scored.append((idx, cand, res, faith))
    if not scored:
        raise errors[0]

    best_faith = max(item[3] for item in scored)
    tied = [item for item in scored if best_faith - item[3] < TIE_DELTA]
    winner = None
    winner_stab = -1.0
    for idx, cand, res, faith in tied:
        stab = stability(cand, model, x, space, cfg) if len(tied) > 1 else None
        if winner is None or (stab is not None and stab > winner_stab):
            winner = (idx, cand, res, faith)
            winner_stab = stab if stab is not None else winner_stab
    idx, cand, res, faith = winner
    if len(tied) == 1:
        winner_stab = stability(cand, model, x, space, cfg)
    return replace(res, faith=float(faith), stability=float(winner_stab))


def default_candidates(background: DataFrame) -> list[Explainer]:
    """Surrogate fits at every width plus kernel Shapley."""
    cands: list[Explainer] = [
        lambda model, x, space, cfg, wd=wd: surrogate_linear_explain(
            model, x, wd, space, cfg
        )
        for wd in SURROGATE_WIDTHS
    ]
    cands.append(
        lambda model, x, space, cfg: kernel_shapley_explain(model, x, background, cfg)
    )
    return cands


def pgi_pgu(phi: Sequence[float], model, x: dict, space: PerturbationSpace,
            cfg: PerturbationConfig) -> tuple[float, float]:
    """Prediction gaps when perturbing the most vs least influential half.

    The middle feature counts as influential when d is odd.
    """
    d = len(space.schema.features)
    if len(phi) != d:
        raise SemanticError("attribution length does not match the feature count")
    order = rank_features(phi)
    top = d - d // 2
    mask_top = [0] * d
    mask_bot = [0] * d
    for idx in order[:top]:
        mask_top[idx] = 1
    for idx in order[top:]:
        mask_bot[idx] = 1
    return (
        fudge_score(model, x, mask_top, space, cfg),
        fudge_score(model, x, mask_bot, space, cfg),
    )


@dataclass(frozen=True)
class Counterfactual:
    """One what-if row that flips the model to the requested class."""

    original_id: int
    values: dict
    before_class: int
    after_class: int
    deltas: dict  # feature name -> (old value, new value)
    distance: float


def _predicted_class(model, values: dict) -> int:
    return int(np.argmax(np.asarray(
        model.predict_proba_matrix(_encode_row(model.encoder, values))
    )[0]))


def _refine_candidate(model, x: dict, cand: dict, target: int,
                      space: PerturbationSpace, frozen: set) -> dict:
    """Shrink a valid candidate toward x while it still hits the target."""
    feats = space.schema.features
    numeric = [f.name for f in feats if f.kind == NUMERIC and f.name not in frozen]
    deltas = {n: float(cand[n]) - float(x[n]) for n in numeric}

    def at_scale(t: float) -> dict:
        out = dict(cand)
        for n in numeric:
            out[n] = float(x[n]) + t * deltas[n]
        return out

    lo, hi = 0.0, 1.0
    if _predicted_class(model, at_scale(0.0)) == target:
        hi = 0.0
    else:
        for _ in range(30):
            mid = (lo + hi) / 2.0
            if _predicted_class(model, at_scale(mid)) == target:
                hi = mid
            else:
                lo = mid
    out = at_scale(hi)

    # drop changes one feature at a time, largest normalized delta first
    changed = [
        f.name
        for f in feats
        if f.name not in frozen and out[f.name] != x[f.name]
    ]

    def magnitude(name: str) -> float:
        if space.schema.kind_of(name) == NUMERIC:
            return abs(float(out[name]) - float(x[name])) / space.span(name)
        return 1.0

    for name in sorted(changed, key=lambda n: (-magnitude(n), n)):
        trial = dict(out)
        trial[name] = x[name]
        if _predicted_class(model, trial) == target:
            out = trial
    return out


def generate_counterfactuals(model, x: dict, n: int, target_class: int,
                             space: PerturbationSpace, cfg: PerturbationConfig,
                             row_id: int = -1,
                             frozen: Sequence[str] = ()) -> list[Counterfactual]:
    """Search for up to n nearby rows the model assigns to target_class.

    Multi-restart random search over growing radii, followed by shrinking
    each hit toward x and greedily dropping unnecessary changes. The
    returned set trades distance against pairwise diversity. Empty when the
    budget finds nothing; never an exception.
    """
    if n < 1:
        raise SemanticError("counterfactual count must be at least 1")
    feats = space.schema.features
    frozen = set(frozen)
    for name in frozen:
        if not space.schema.has_feature(name):
            raise SemanticError(f"unknown frozen feature {name!r}")
    p0, target = _resolve_target(model, x, target_class)
    before = int(np.argmax(p0))
    if before == target:
        values = dict(x)
        return [Counterfactual(row_id, values, before, target, {}, 0.0)]

    d = len(feats)
    mask = tuple(0 if f.name in frozen else 1 for f in feats)
    rng = np.random.default_rng(cfg.seed)
    found: dict[tuple, dict] = {}
    for restart in range(CFE_RESTARTS):
        radius = _CFE_RADII[restart % len(_CFE_RADII)]
        batch = space.sample_batch(
            x, mask, cfg, rng, CFE_STEPS, radius, rate=_CFE_SEARCH_RESAMPLE_RATE
        )
        X = _encode_columns(model.encoder, batch.columns, CFE_STEPS)
        preds = np.argmax(np.asarray(model.predict_proba_matrix(X)), axis=1)
        hits = np.flatnonzero(preds == target)
        if hits.size == 0:
            continue
        rows = [
            {f.name: batch.columns[f.name][i] for f in feats} for i in hits
        ]
        rows.sort(key=lambda r: space.distance(r, x))
        for cand in rows[:3]:
            refined = _refine_candidate(model, x, cand, target, space, frozen)
            key = tuple(
                round(float(refined[f.name]), 9) if f.kind == NUMERIC
                else refined[f.name]
                for f in feats
            )
            found.setdefault(key, refined)

    if not found:
        return []

    pool = sorted(
        found.items(), key=lambda kv: (space.distance(kv[1], x), kv[0])
    )
    selected: list[dict] = []
    remaining = [v for _, v in pool]
    while remaining and len(selected) < n:
        if not selected:
            best = remaining[0]
        else:
            best = min(
                remaining,
                key=lambda c: space.distance(c, x)
                - _DIVERSITY_WEIGHT * min(space.distance(c, s) for s in selected),
            )
        selected.append(best)
        remaining.remove(best)

    out = []
    for values in selected:
        deltas = {
            f.name: (x[f.name], values[f.name])
            for f in feats
            if values[f.name] != x[f.name]
        }
        out.append(
            Counterfactual(
                original_id=row_id,
                values=values,
                before_class=before,
                after_class=target,
                deltas=deltas,
                distance=space.distance(values, x),
            )
        )
    return out


def _partial_dependence_curve(model, base_cols: dict, n_rows: int, name: str,
                              grid, fixed=None) -> np.ndarray:
    """Mean positive-class probability as `name` sweeps the grid."""
    reps = len(grid)
    cols = {}
    for col_name, col in base_cols.items():
        if col_name == name:
            cols[col_name] = np.repeat(np.asarray(grid, dtype=col.dtype), n_rows)
        elif fixed is not None and col_name == fixed[0]:
            cols[col_name] = np.full(reps * n_rows, fixed[1], dtype=col.dtype)
        else:
            cols[col_name] = np.tile(col, reps)
    X = _encode_columns(model.encoder, cols, reps * n_rows)
    p = np.asarray(model.predict_proba_matrix(X))[:, -1]
    return p.reshape(reps, n_rows).mean(axis=1)


def feature_interactions(model, df: DataFrame) -> np.ndarray:
    """Pairwise interaction strengths from partial dependence.

    The importance of feature i is the std of its dependence curve; the
    interaction of (i, j) is how much that importance moves as j is pinned
    across its grid, symmetrized. The diagonal holds the unconditional
    importances. Grids use 10 quantile points.
    """
    feats = df.schema.features
    d = len(feats)
    M = np.zeros((d, d))
    if d == 1 or len(df) == 0:
        return M

    grids = []
    for f in feats:
        col = df.columns[f.name]
        if f.kind == NUMERIC:
            grids.append(np.unique(np.quantile(col, np.linspace(0, 1, _INTERACTION_GRID))))
        else:
            grids.append(np.array(sorted(set(col)), dtype=object))

    n_rows = len(df)
    for i, f in enumerate(feats):
        curve = _partial_dependence_curve(model, df.columns, n_rows, f.name, grids[i])
        M[i, i] = float(np.std(curve))

    for i in range(d):
        for j in range(i + 1, d):
            imp_ij = [
                float(np.std(_partial_dependence_curve(
                    model, df.columns, n_rows, feats[i].name, grids[i],
                    fixed=(feats[j].name, v),
                )))
                for v in grids[j]
            ]
            imp_ji = [
                float(np.std(_partial_dependence_curve(
                    model, df.columns, n_rows, feats[j].name, grids[j],
                    fixed=(feats[i].name, v),
                )))
                for v in grids[i]
            ]
            M[i, j] = M[j, i] = (float(np.std(imp_ij)) + float(np.std(imp_ji))) / 2.0
    return M


@dataclass(frozen=True)
class MistakeLeaf:
    conditions: tuple[str, ...]
    support: int
    errors: int

    @property
    def error_rate(self) -> float:
        return self.errors / self.support


@dataclass(frozen=True)
class MistakeSummary:
    """Where the model goes wrong, as shallow conjunctive regions."""

    total_rows: int
    total_errors: int
    leaves: tuple[MistakeLeaf, ...]


def _fmt_threshold(v: float) -> str:
    return f"{v:g}"


def _gini(y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    p = float(np.mean(y))
    return 2.0 * p * (1.0 - p)


def summarize_mistakes(model, df: DataFrame, max_depth: int = 3) -> MistakeSummary:
    """Fit a shallow tree to (prediction != label) and report its leaves."""
    if len(df) == 0:
        raise SemanticError("cannot summarize mistakes of an empty selection")
    wrong = (np.asarray(model.predict(df)) != df.labels).astype(int)
    total_errors = int(wrong.sum())
    if total_errors == 0:
        return MistakeSummary(len(df), 0, ())

    feats = df.schema.features
    leaves: list[MistakeLeaf] = []

    def best_split(idx: np.ndarray):
        y = wrong[idx]
        parent = _gini(y)
        best = None  # (gain, feature, kind, value, left_mask)
        for f in feats:
            col = df.columns[f.name][idx]
            if f.kind == NUMERIC:
                uniq = np.unique(col)
                if len(uniq) > _MISTAKE_MAX_THRESHOLDS:
                    qs = np.linspace(0, 1, _MISTAKE_MAX_THRESHOLDS + 1)[1:-1]
                    uniq = np.unique(np.quantile(col, qs))
                cuts = (uniq[:-1] + uniq[1:]) / 2.0
                for t in cuts:
                    left = col <= t
                    nl = int(left.sum())
                    if nl < _MISTAKE_MIN_LEAF or len(idx) - nl < _MISTAKE_MIN_LEAF:
                        continue
                    gain = parent - (
                        nl * _gini(y[left]) + (len(idx) - nl) * _gini(y[~left])
                    ) / len(idx)
                    if best is None or gain > best[0] + 1e-12:
                        best = (gain, f.name, NUMERIC, float(t), left)
            else:
                for v in df.schema.categorical_values[f.name]:
                    left = col == v
                    nl = int(left.sum())
                    if nl < _MISTAKE_MIN_LEAF or len(idx) - nl < _MISTAKE_MIN_LEAF:
                        continue
                    gain = parent - (
                        nl * _gini(y[left]) + (len(idx) - nl) * _gini(y[~left])
                    ) / len(idx)
                    if best is None or gain > best[0] + 1e-12:
                        best = (gain, f.name, CATEGORICAL, v, left)
        if best is not None and best[0] > 1e-9:
            return best
        return None

    def grow(idx: np.ndarray, path: tuple[str, ...], depth: int):
        y = wrong[idx]
        split = None
        if depth < max_depth and y.min() != y.max():
            split = best_split(idx)
        if split is None:
            leaves.append(MistakeLeaf(path, len(idx), int(y.sum())))
            return
        _, name, kind, value, left = split
        if kind == NUMERIC:
            t = _fmt_threshold(value)
            grow(idx[left], path + (f"{name} <= {t}",), depth + 1)
            grow(idx[~left], path + (f"{name} > {t}",), depth + 1)
        else:
            grow(idx[left], path + (f"{name} = {value}",), depth + 1)
            grow(idx[~left], path + (f"{name} != {value}",), depth + 1)

    grow(np.arange(len(df)), (), 0)
    return MistakeSummary(len(df), total_errors, tuple(leaves))
