"""Exact Shapley attributions and pairwise interaction values for tree ensembles.

The coalition value of a feature subset S is the path-dependent tree
expectation: at a node splitting on a feature in S the instance's branch is
followed, otherwise both children are averaged by training cover.

``tree_shap`` works leaf by leaf. Along the path to a leaf, each distinct
feature j contributes a factor ``z_j`` (product of cover ratios of its
splits, used when j is absent from S) or ``o_j`` (1 if the instance follows
every split on j, else 0, used when j is present). A leaf's share of v(S) is
its value times the product of those factors, so its Shapley values follow
from the coefficients of ``prod_j (z_j + o_j t)``; summing over leaves gives
exact attributions in time polynomial in tree size and depth, vectorised
over instances. ``brute_shap`` enumerates coalitions directly and serves as
the independent check.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .booster import Ensemble, FlatTree, _check_arity, predict_many
from .dataset import Dataset
from .errors import ExplainError

MAX_BRUTE_FEATURES = 15


@dataclass(frozen=True, eq=False)
class Attribution:
    base_value: float
    phi: np.ndarray
    instance: np.ndarray
    feature_names: tuple[str, ...] = ()

    @property
    def output(self) -> float:
        return float(self.base_value + self.phi.sum())

    def to_dict(self) -> dict:
        return {
            "base_value": self.base_value,
            "phi": self.phi.tolist(),
            "instance": [None if math.isnan(v) else float(v) for v in self.instance],
            "feature_names": list(self.feature_names),
        }


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    values: np.ndarray
    feature_names: tuple[str, ...] = ()

    @property
    def main_effects(self) -> np.ndarray:
        return np.diag(self.values).copy()

    def to_dict(self) -> dict:
        return {"feature_names": list(self.feature_names), "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class GlobalImportance:
    ranking: list[tuple[str, float]]
    per_instance: np.ndarray
    base_value: float = 0.0

    def to_dict(self) -> dict:
        return {
            "ranking": [{"variable": n, "score": s} for n, s in self.ranking],
            "base_value": self.base_value,
            "per_instance": self.per_instance.tolist(),
        }


@dataclass(frozen=True)
class ForceRecord:
    base_value: float
    output: float
    contributions: list[tuple[str, float | None, float]]

    def to_dict(self) -> dict:
        return {
            "base_value": self.base_value,
            "output": self.output,
            "contributions": [
                {"variable": n, "value": v, "phi": p} for n, v, p in self.contributions
            ],
        }


def _as_matrix(m: Ensemble, X) -> np.ndarray:
    """Rows as a float matrix with NaN for missing; accepts ``None`` cells."""
    if isinstance(X, Dataset):
        X = X.X
    if not isinstance(X, np.ndarray):
        X = np.array(X, dtype=object)
        X = np.where(X == None, np.nan, X)  # noqa: E711
    return _check_arity(m, np.atleast_2d(np.asarray(X, dtype=float)))


def _n_features(m: Ensemble, X: np.ndarray) -> int:
    return m.n_features or X.shape[1]


def _names(m: Ensemble, M: int) -> tuple[str, ...]:
    return m.feature_names or tuple(f"x{j}" for j in range(M))


# ---------------------------------------------------------------- oracle side


def _tree_expectation(tree: FlatTree, x: np.ndarray, S: frozenset, node: int = 0) -> float:
    if tree.is_leaf(node):
        return float(tree.value[node])
    left, right = tree.left[node], tree.right[node]
    if tree.feature[node] in S:
        child = left if tree.goes_left(node, x[tree.feature[node]]) else right
        return _tree_expectation(tree, x, S, child)
    c = tree.cover[node]
    if not c > 0:
        raise ExplainError(f"node {node} has non-positive cover {c}")
    return (
        tree.cover[left] / c * _tree_expectation(tree, x, S, left)
        + tree.cover[right] / c * _tree_expectation(tree, x, S, right)
    )


def conditional_expectation(m: Ensemble, x, S) -> float:
    """Coalition value v(S): base score plus each tree's path-dependent expectation."""
    x = _as_matrix(m, x)[0]
    S = frozenset(int(j) for j in S)
    return m.base_score + sum(_tree_expectation(t, x, S) for t in m.flat_trees)


def _coalition_values(m: Ensemble, x: np.ndarray, M: int) -> np.ndarray:
    if M > MAX_BRUTE_FEATURES:
        raise ExplainError(f"subset enumeration limited to {MAX_BRUTE_FEATURES} features, got {M}")
    v = np.empty(1 << M)
    for mask in range(1 << M):
        S = frozenset(j for j in range(M) if mask >> j & 1)
        v[mask] = conditional_expectation(m, x, S)
    return v


def brute_shap(m: Ensemble, x) -> Attribution:
    """Shapley values by enumerating every coalition (2^M value calls)."""
    x = _as_matrix(m, x)[0]
    M = _n_features(m, x[None, :])
    v = _coalition_values(m, x, M)
    fact = [math.factorial(k) for k in range(M + 1)]
    phi = np.zeros(M)
    for i in range(M):
        bit = 1 << i
        for mask in range(1 << M):
            if mask & bit:
                continue
            s = bin(mask).count("1")
            phi[i] += fact[s] * fact[M - s - 1] / fact[M] * (v[mask | bit] - v[mask])
    return Attribution(float(v[0]), phi, x, _names(m, M))


def brute_interactions(m: Ensemble, x) -> InteractionMatrix:
    """Pairwise Shapley interaction index by enumeration, halved into each of [i][j] and [j][i].

    The pair total is sum over S of |S|!(M-|S|-2)!/(M-1)! times the joint
    difference v(S+ij) - v(S+i) - v(S+j) + v(S); the diagonal is the phi
    remainder.
    """
    x = _as_matrix(m, x)[0]
    M = _n_features(m, x[None, :])
    v = _coalition_values(m, x, M)
    phi = brute_shap(m, x).phi
    fact = [math.factorial(k) for k in range(M + 1)]
    out = np.zeros((M, M))
    for i, j in itertools.combinations(range(M), 2):
        bi, bj = 1 << i, 1 << j
        total = 0.0
        for mask in range(1 << M):
            if mask & (bi | bj):
                continue
            s = bin(mask).count("1")
            w = fact[s] * fact[M - s - 2] / fact[M - 1]
            total += w * (v[mask | bi | bj] - v[mask | bi] - v[mask | bj] + v[mask])
        out[i, j] = out[j, i] = total / 2
    out[np.diag_indices(M)] = phi - (out.sum(axis=1) - np.diag(out))
    return InteractionMatrix(out, _names(m, M))


# ------------------------------------------------------------- fast exact side


@dataclass(frozen=True)
class _LeafPath:
    value: float
    features: tuple[int, ...]
    zero: np.ndarray  # cover-ratio product per path feature
    conditions: tuple[tuple[tuple[int, bool], ...], ...]  # (node, went_left) per path feature


def _leaf_paths(tree: FlatTree) -> list[_LeafPath]:
    out = []

    def walk(node: int, steps: list[tuple[int, bool]]):
        if tree.is_leaf(node):
            feats: dict[int, list[tuple[int, bool]]] = {}
            for n, went_left in steps:
                feats.setdefault(int(tree.feature[n]), []).append((n, went_left))
            zero = []
            for conds in feats.values():
                z = 1.0
                for n, went_left in conds:
                    child = tree.left[n] if went_left else tree.right[n]
                    if not tree.cover[n] > 0:
                        raise ExplainError(f"node {n} has non-positive cover {tree.cover[n]}")
                    z *= tree.cover[child] / tree.cover[n]
                zero.append(z)
            out.append(
                _LeafPath(float(tree.value[node]), tuple(feats), np.array(zero), tuple(tuple(c) for c in feats.values()))
            )
            return
        walk(int(tree.left[node]), steps + [(node, True)])
        walk(int(tree.right[node]), steps + [(node, False)])

    walk(0, [])
    return out


def _one_fractions(tree: FlatTree, leaf: _LeafPath, X: np.ndarray) -> np.ndarray:
    """``o[r, k]``: 1 where row r follows every split on the k-th path feature."""
    o = np.ones((X.shape[0], len(leaf.features)))
    for k, conds in enumerate(leaf.conditions):
        for n, went_left in conds:
            v = X[:, tree.feature[n]]
            go_left = np.where(np.isnan(v), tree.default_left[n], v < tree.threshold[n])
            o[:, k] *= go_left == went_left
    return o


def _shapley_weights(u: int) -> np.ndarray:
    """w[s] = s!(u-1-s)!/u! for s in 0..u-1."""
    return np.array([math.factorial(s) * math.factorial(u - 1 - s) / math.factorial(u) for s in range(u)])


def _weighted_product_sum(zero: np.ndarray, one: np.ndarray, players: Sequence[int], weights: np.ndarray) -> np.ndarray:
    """sum_S weights[|S|] prod_{j in S} one_j prod_{j not in S} zero_j over subsets S of players."""
    n = one.shape[0]
    coef = np.zeros((n, len(players) + 1))
    coef[:, 0] = 1.0
    for size, j in enumerate(players, start=1):
        coef[:, 1 : size + 1] = coef[:, 1 : size + 1] * zero[j] + coef[:, :size] * one[:, j][:, None]
        coef[:, 0] *= zero[j]
    return coef @ weights


class _TreeCache:
    def __init__(self, m: Ensemble):
        self.paths = [_leaf_paths(t) for t in m.flat_trees]


_CACHE: dict[int, tuple[Ensemble, _TreeCache]] = {}


def _cache(m: Ensemble) -> _TreeCache:
    hit = _CACHE.get(id(m))
    if hit is None or hit[0] is not m:
        if len(_CACHE) > 32:
            _CACHE.clear()
        hit = (m, _TreeCache(m))
        _CACHE[id(m)] = hit
    return hit[1]


def expected_value(m: Ensemble) -> float:
    """v(empty set): the cover-weighted mean model output."""
    total = m.base_score
    for paths in _cache(m).paths:
        total += sum(p.value * float(np.prod(p.zero)) for p in paths)
    return total


def shap_values(m: Ensemble, X) -> tuple[float, np.ndarray]:
    """Base value and an (n, M) matrix of exact Shapley values for every row of ``X``."""
    X = _as_matrix(m, X)
    M = _n_features(m, X)
    phi = np.zeros((X.shape[0], M))
    for tree, paths in zip(m.flat_trees, _cache(m).paths):
        for leaf in paths:
            u = len(leaf.features)
            if u == 0:
                continue
            one = _one_fractions(tree, leaf, X)
            w = _shapley_weights(u)
            for k, feat in enumerate(leaf.features):
                others = [j for j in range(u) if j != k]
                s = _weighted_product_sum(leaf.zero, one, others, w)
                phi[:, feat] += leaf.value * (one[:, k] - leaf.zero[k]) * s
    return expected_value(m), phi


def interaction_values(m: Ensemble, X) -> np.ndarray:
    """(n, M, M) interaction tensors; off-diagonal cells hold half of each pair's interaction."""
    X = _as_matrix(m, X)
    M = _n_features(m, X)
    _, phi = shap_values(m, X)
    out = np.zeros((X.shape[0], M, M))
    for tree, paths in zip(m.flat_trees, _cache(m).paths):
        for leaf in paths:
            u = len(leaf.features)
            if u < 2:
                continue
            one = _one_fractions(tree, leaf, X)
            w = _shapley_weights(u - 1)
            delta = one - leaf.zero
            for a, b in itertools.combinations(range(u), 2):
                others = [j for j in range(u) if j not in (a, b)]
                s = _weighted_product_sum(leaf.zero, one, others, w)
                cell = 0.5 * leaf.value * delta[:, a] * delta[:, b] * s
                fa, fb = leaf.features[a], leaf.features[b]
                out[:, fa, fb] += cell
                out[:, fb, fa] += cell
    idx = np.arange(M)
    out[:, idx, idx] = 0.0
    out[:, idx, idx] = phi - out.sum(axis=2)
    return out


def tree_shap(m: Ensemble, x) -> Attribution:
    x = _as_matrix(m, x)
    if x.shape[0] != 1:
        raise ExplainError("tree_shap explains one instance; use shap_values for batches")
    base, phi = shap_values(m, x)
    return Attribution(base, phi[0], x[0], _names(m, phi.shape[1]))


def interactions(m: Ensemble, x) -> InteractionMatrix:
    x = _as_matrix(m, x)
    if x.shape[0] != 1:
        raise ExplainError("interactions explains one instance; use interaction_values for batches")
    values = interaction_values(m, x)[0]
    return InteractionMatrix(values, _names(m, values.shape[0]))


def global_importance(m: Ensemble, d: Dataset) -> GlobalImportance:
    """Rank variables by summed |phi| over ``d``; ties keep schema order."""
    if len(d) == 0:
        raise ExplainError("global importance needs a non-empty dataset")
    base, phi = shap_values(m, d.X)
    scores = np.abs(phi).sum(axis=0)
    names = _names(m, phi.shape[1]) if m.feature_names else tuple(d.names)
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return GlobalImportance([(names[j], float(scores[j])) for j in order], phi, base)


def dependence_data(m: Ensemble, d: Dataset, feature: int | str) -> list[dict]:
    """Per-instance main effect, total phi and the strongest interacting (colour) feature."""
    names = list(_names(m, len(d.names)) if m.feature_names else d.names)
    if isinstance(feature, str):
        if feature not in names:
            raise ExplainError(f"unknown feature {feature!r}")
        feature = names.index(feature)
    if not 0 <= feature < len(names):
        raise ExplainError(f"feature index {feature} outside 0..{len(names) - 1}")
    inter = interaction_values(m, d.X)
    mass = np.abs(inter[:, feature, :]).sum(axis=0)
    mass[feature] = -np.inf
    color = int(np.argmax(mass)) if len(names) > 1 else feature
    records = []
    for r in range(len(d)):
        fv, cv = d.X[r, feature], d.X[r, color]
        records.append(
            {
                "feature": names[feature],
                "feature_value": None if math.isnan(fv) else float(fv),
                "main_effect": float(inter[r, feature, feature]),
                "phi_total": float(inter[r, feature, :].sum()),
                "color_feature": names[color],
                "color_value": None if math.isnan(cv) else float(cv),
                "color_interaction_mass": float(mass[color]) if color != feature else 0.0,
            }
        )
    return records


DEPENDENCE_COLUMNS = ("feature_value", "main_effect", "phi_total", "color_feature", "color_value")


def dependence_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DEPENDENCE_COLUMNS)
    for rec in records:
        w.writerow(["" if rec[c] is None else (repr(rec[c]) if isinstance(rec[c], float) else rec[c]) for c in DEPENDENCE_COLUMNS])
    return buf.getvalue()


def force_data(m: Ensemble, x) -> ForceRecord:
    """Local explanation: non-zero contributions sorted by |phi|, largest first."""
    a = tree_shap(m, x)
    contributions = [
        (a.feature_names[j], None if math.isnan(a.instance[j]) else float(a.instance[j]), float(a.phi[j]))
        for j in sorted(range(len(a.phi)), key=lambda j: (-abs(a.phi[j]), j))
        if a.phi[j] != 0.0
    ]
    output = float(predict_many(m, a.instance)[0])
    return ForceRecord(float(a.base_value), output, contributions)
