"""Second-order gradient boosting of regression trees with learned missing-value routing.

Squared-error loss, so every row carries gradient ``prediction - target`` and
hessian 1. Splits are found by an exact scan over sorted distinct present
values; rows missing the split feature are tried on both sides and the
better side becomes the node's default direction.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, Sequence, Union

import numpy as np

from .dataset import Dataset, schema_fingerprint
from .errors import BoosterError


@dataclass(frozen=True)
class Hyperparams:
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    reg_lambda: float = 1.0
    reg_gamma: float = 0.0
    min_child_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        checks = [
            ("n_estimators", isinstance(self.n_estimators, (int, np.integer)) and self.n_estimators >= 0, "a non-negative integer"),
            ("learning_rate", 0.0 < self.learning_rate <= 1.0, "in (0, 1]"),
            ("max_depth", isinstance(self.max_depth, (int, np.integer)) and self.max_depth >= 0, "a non-negative integer"),
            ("subsample", 0.0 < self.subsample <= 1.0, "in (0, 1]"),
            ("colsample_bytree", 0.0 < self.colsample_bytree <= 1.0, "in (0, 1]"),
            ("reg_lambda", self.reg_lambda >= 0.0, ">= 0"),
            ("reg_gamma", self.reg_gamma >= 0.0, ">= 0"),
            ("min_child_weight", self.min_child_weight >= 0.0, ">= 0"),
        ]
        for name, ok, what in checks:
            if not ok:
                raise BoosterError(f"{name} must be {what}, got {getattr(self, name)!r}")
        object.__setattr__(self, "n_estimators", int(self.n_estimators))
        object.__setattr__(self, "max_depth", int(self.max_depth))
        object.__setattr__(self, "seed", int(self.seed))
        for name in ("learning_rate", "subsample", "colsample_bytree", "reg_lambda", "reg_gamma", "min_child_weight"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> Hyperparams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise BoosterError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Leaf:
    weight: float
    cover: float


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    default_left: bool
    left: "TreeNode"
    right: "TreeNode"
    cover: float


TreeNode = Union[Split, Leaf]


class FlatTree:
    """Array form of one tree, preorder; ``left[i] == -1`` marks a leaf."""

    __slots__ = ("feature", "threshold", "default_left", "left", "right", "value", "cover")

    def __init__(self, root: TreeNode):
        feature, threshold, default_left, left, right, value, cover = [], [], [], [], [], [], []

        def visit(node: TreeNode) -> int:
            i = len(feature)
            feature.append(-1)
            threshold.append(math.nan)
            default_left.append(True)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            cover.append(node.cover)
            if isinstance(node, Leaf):
                value[i] = node.weight
            else:
                feature[i] = node.feature
                threshold[i] = node.threshold
                default_left[i] = node.default_left
                left[i] = visit(node.left)
                right[i] = visit(node.right)
            return i

        visit(root)
        self.feature = np.array(feature, dtype=np.intp)
        self.threshold = np.array(threshold, dtype=float)
        self.default_left = np.array(default_left, dtype=bool)
        self.left = np.array(left, dtype=np.intp)
        self.right = np.array(right, dtype=np.intp)
        self.value = np.array(value, dtype=float)
        self.cover = np.array(cover, dtype=float)

    def is_leaf(self, i: int) -> bool:
        return self.left[i] < 0

    def goes_left(self, i: int, v: float) -> bool:
        if math.isnan(v):
            return bool(self.default_left[i])
        return v < self.threshold[i]

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        while True:
            active = self.left[node] >= 0
            if not active.any():
                return node
            r, n = rows[active], node[active]
            v = X[r, self.feature[n]]
            go_left = np.where(np.isnan(v), self.default_left[n], v < self.threshold[n])
            node[r] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.leaf_index(X)]


@dataclass(frozen=True, eq=False)
class Ensemble:
    base_score: float
    trees: tuple[TreeNode, ...]
    schema_fingerprint: str
    params: Hyperparams
    feature_names: tuple[str, ...] = ()
    _flat: tuple[FlatTree, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "_flat", tuple(FlatTree(t) for t in self.trees))

    @property
    def flat_trees(self) -> tuple[FlatTree, ...]:
        return self._flat

    @property
    def max_feature(self) -> int:
        return max((int(t.feature.max()) for t in self._flat), default=-1)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "params": self.params.to_dict(),
            "schema_fingerprint": self.schema_fingerprint,
            "feature_names": list(self.feature_names),
            "trees": [_node_to_dict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Ensemble:
        try:
            return cls(
                base_score=float(d["base_score"]),
                trees=tuple(_node_from_dict(t) for t in d["trees"]),
                schema_fingerprint=str(d["schema_fingerprint"]),
                params=Hyperparams.from_dict(d["params"]),
                feature_names=tuple(d.get("feature_names", ())),
            )
        except KeyError as e:
            raise BoosterError(f"model document lacks field {e.args[0]!r}") from None


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": node.weight, "cover": node.cover}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "default_left": node.default_left,
        "cover": node.cover,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict) -> TreeNode:
    if "leaf" in d:
        return Leaf(float(d["leaf"]), float(d["cover"]))
    return Split(
        int(d["feature"]),
        float(d["threshold"]),
        bool(d["default_left"]),
        _node_from_dict(d["left"]),
        _node_from_dict(d["right"]),
        float(d["cover"]),
    )


def dumps(m: Ensemble) -> str:
    return json.dumps(m.to_dict(), indent=1)


def loads(text: str) -> Ensemble:
    return Ensemble.from_dict(json.loads(text))


def iter_nodes(node: TreeNode) -> Iterator[TreeNode]:
    yield node
    if isinstance(node, Split):
        yield from iter_nodes(node.left)
        yield from iter_nodes(node.right)


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    """Minimiser ``-G / (H + lambda)`` of the second-order leaf objective."""
    denom = H + reg_lambda
    if not denom > 0:
        raise BoosterError(f"leaf weight needs H + lambda > 0, got {denom}")
    return -G / denom


def split_gain(GL: float, HL: float, GR: float, HR: float, reg_lambda: float, reg_gamma: float) -> float:
    """Loss reduction of splitting a node into (L, R), less the per-leaf penalty ``gamma``."""
    dl, dr, dp = HL + reg_lambda, HR + reg_lambda, HL + HR + reg_lambda
    if not (dl > 0 and dr > 0 and dp > 0):
        raise BoosterError("split gain needs every H + lambda > 0")
    return 0.5 * (GL * GL / dl + GR * GR / dr - (GL + GR) ** 2 / dp) - reg_gamma


def _check_arity(m: Ensemble, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if m.feature_names and X.shape[1] != m.n_features:
        raise BoosterError(f"instance has {X.shape[1]} values, model expects {m.n_features}")
    used = m.max_feature
    if X.shape[1] <= used:
        raise BoosterError(f"instance has {X.shape[1]} values, model splits on feature {used}")
    return X


def predict_many(m: Ensemble, X, n_trees: int | None = None) -> np.ndarray:
    """Predictions for every row of ``X`` (NaN = missing), optionally from the first ``n_trees``."""
    X = _check_arity(m, X)
    out = np.full(X.shape[0], m.base_score)
    for tree in m.flat_trees[:n_trees]:
        out += tree.predict(X)
    return out


def predict(m: Ensemble, x: Sequence[float | None]) -> float:
    x = np.array([math.nan if v is None else v for v in x], dtype=float)
    return float(predict_many(m, x)[0])


class _ValueIndex:
    """Per-feature rank of every cell among that feature's distinct present values.

    Bin ``offset[f] + r`` holds the r-th smallest distinct value of feature f;
    bin ``n_bins + f`` collects rows missing feature f. Aggregating gradients
    per bin is an exact scan: every distinct value keeps its own bin.
    """

    def __init__(self, X: np.ndarray):
        n, F = X.shape
        codes = np.empty((n, F), dtype=np.intp)
        values, segment, offset = [], [], 0
        for f in range(F):
            col = X[:, f]
            miss = np.isnan(col)
            uniq = np.unique(col[~miss])
            codes[:, f] = np.where(miss, -1, offset + np.searchsorted(uniq, np.where(miss, 0.0, col)))
            values.append(uniq)
            segment.append(np.full(uniq.size, f, dtype=np.intp))
            offset += uniq.size
        self.n_bins = offset
        self.n_features = F
        codes = np.where(codes < 0, offset + np.arange(F)[None, :], codes)
        self.codes = codes
        self.values = np.concatenate(values) if values else np.empty(0)
        self.segment = np.concatenate(segment) if segment else np.empty(0, dtype=np.intp)


class _Grower:
    """Grows one tree on the sampled rows and columns."""

    def __init__(self, X, index: _ValueIndex, g, h, features, p: Hyperparams):
        self.X, self.index, self.g, self.h, self.p = X, index, g, h, p
        self.sampled = np.zeros(index.n_features, dtype=bool)
        self.sampled[features] = True

    def grow(self, rows: np.ndarray, depth: int) -> TreeNode:
        g, h = self.g[rows], self.h[rows]
        G, H = float(g.sum()), float(h.sum())
        if depth < self.p.max_depth and rows.size >= 2:
            best = self._best_split(rows, g, h, G, H)
            if best is not None:
                feature, threshold, default_left = best
                v = self.X[rows, feature]
                go_left = np.where(np.isnan(v), default_left, v < threshold)
                return Split(
                    feature,
                    threshold,
                    default_left,
                    self.grow(rows[go_left], depth + 1),
                    self.grow(rows[~go_left], depth + 1),
                    H,
                )
        return Leaf(self.p.learning_rate * leaf_weight(G, H, self.p.reg_lambda), H)

    def _best_split(self, rows, g, h, G, H):
        ix, lam, mcw = self.index, self.p.reg_lambda, self.p.min_child_weight
        B, F = ix.n_bins, ix.n_features
        codes = ix.codes[rows].ravel()
        size = B + F
        cnt = np.bincount(codes, minlength=size)
        bg = np.bincount(codes, weights=np.repeat(g, F), minlength=size)
        bh = np.bincount(codes, weights=np.repeat(h, F), minlength=size)
        nz = np.flatnonzero(cnt[:B])
        seg = ix.segment[nz]
        # candidate i cuts between nonempty bins nz[i] and nz[i+1] of one feature
        cand = (seg[:-1] == seg[1:]) & self.sampled[seg[:-1]]
        if not cand.any():
            return None
        cg, ch = np.cumsum(bg[nz]), np.cumsum(bh[nz])
        first = np.r_[True, seg[1:] != seg[:-1]]
        start = np.flatnonzero(first)
        run = np.cumsum(first) - 1
        before_g = (cg - bg[nz])[start][run]
        before_h = (ch - bh[nz])[start][run]
        GL, HL = (cg - before_g)[:-1], (ch - before_h)[:-1]
        s = seg[:-1]
        Gm, Hm, Cm = bg[B + s], bh[B + s], cnt[B + s]

        def gains(GL, HL):
            GR, HR = G - GL, H - HL
            ok = cand & (HL >= mcw) & (HR >= mcw) & (HL + lam > 0) & (HR + lam > 0)
            with np.errstate(divide="ignore", invalid="ignore"):
                score = GL * GL / (HL + lam) + GR * GR / (HR + lam)
            return np.where(ok, score, -np.inf)

        gain_right = gains(GL, HL)  # missing rows sent right
        gain_left = np.where(Cm > 0, gains(GL + Gm, HL + Hm), gain_right)
        default_left = gain_left >= gain_right
        best = np.where(default_left, gain_left, gain_right)
        i = int(np.argmax(best))  # feature-major order: ties go to lower feature, lower threshold
        if not np.isfinite(best[i]):
            return None
        parent = G * G / (H + lam) if H + lam > 0 else 0.0
        gain = 0.5 * (best[i] - parent) - self.p.reg_gamma
        # reject gains that are floating-point noise around zero
        if not gain > 1e-12 * max(abs(parent), 1e-300):
            return None
        lo, hi = ix.values[nz[i]], ix.values[nz[i + 1]]
        threshold = 0.5 * (lo + hi)
        if not lo < threshold <= hi:
            threshold = hi
        return int(s[i]), float(threshold), bool(default_left[i])


def _sample_size(rate: float, n: int) -> int:
    return max(1, int(round(rate * n)))


def train(d: Dataset, p: Hyperparams | None = None) -> Ensemble:
    """Fit ``p.n_estimators`` trees to ``d`` starting from the target mean."""
    p = p or Hyperparams()
    X, y = np.asarray(d.X, float), np.asarray(d.y, float)
    n, F = X.shape
    if n == 0:
        raise BoosterError("cannot train on an empty dataset")
    if n < 2:
        raise BoosterError(f"training needs at least 2 rows, got {n}")
    if not np.all(np.isfinite(y)):
        raise BoosterError("training targets must be finite")
    base = float(y.mean())
    pred = np.full(n, base)
    h = np.ones(n)
    rng = np.random.default_rng(p.seed)
    all_rows, all_features = np.arange(n), np.arange(F)
    index = _ValueIndex(X)
    trees = []
    for _ in range(p.n_estimators):
        g = pred - y
        rows = all_rows
        if p.subsample < 1.0:
            rows = np.sort(rng.choice(n, size=_sample_size(p.subsample, n), replace=False))
        features = all_features
        if p.colsample_bytree < 1.0 and F > 0:
            features = np.sort(rng.choice(F, size=_sample_size(p.colsample_bytree, F), replace=False))
        tree = _Grower(X, index, g, h, features, p).grow(rows, 0)
        trees.append(tree)
        pred += FlatTree(tree).predict(X)
    return Ensemble(base, tuple(trees), schema_fingerprint(d.schema), p, tuple(d.names))


def training_rmse_curve(m: Ensemble, d: Dataset) -> np.ndarray:
    """Training RMSE after 0, 1, ..., T rounds."""
    X = _check_arity(m, d.X)
    pred = np.full(len(d), m.base_score)
    out = [math.sqrt(float(np.mean((pred - d.y) ** 2)))]
    for tree in m.flat_trees:
        pred = pred + tree.predict(X)
        out.append(math.sqrt(float(np.mean((pred - d.y) ** 2))))
    return np.array(out)
