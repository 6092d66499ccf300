"""Representative learning algorithms: k-means, kNN, ridge-able OLS, plus a
distance-to-centroid anomaly scorer.

All randomness comes from a seeded xorshift64* generator so fits are exactly
reproducible; all metrics are Euclidean.  Tie rules are fixed: assignment
ties go to the lowest centroid index, neighbor distance ties to the lower
training index, and vote ties to the lexicographically smallest label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadK, DimMismatch, ShapeMismatch, SingularMatrix, TooFewPoints
from .processing import as_matrix

_M64 = (1 << 64) - 1


class Xorshift64Star:
    """Deterministic 64-bit PRNG (xorshift64*)."""

    def __init__(self, seed: int):
        self.state = seed & _M64
        if self.state == 0:
            self.state = 0x9E3779B97F4A7C15  # generator needs a nonzero state

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _M64
        x ^= x >> 27
        self.state = x
        return (x * 2685821657736338717) & _M64

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def next_below(self, n: int) -> int:
        return self.next_u64() % n


# --- k-means ------------------------------------------------------------------

@dataclass
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    iterations: int
    inertia_history: list[float] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {"kind": "kmeans", "centroids": self.centroids.tolist()}

    @staticmethod
    def from_json_dict(d: dict) -> "KMeansModel":
        return KMeansModel(np.asarray(d["centroids"], dtype=np.float64), 0.0, 0)


def _sq_dists(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - centroids[None, :, :]
    return (diff * diff).sum(axis=2)


def kmeans_fit(X, k: int, seed: int, max_iter: int = 100,
               tol: float = 1e-9) -> KMeansModel:
    """Lloyd's algorithm with k-means++ seeding from the given PRNG seed.

    Stops when the largest centroid shift drops below ``tol`` or after
    ``max_iter`` rounds.  An emptied cluster is reseeded to the point
    farthest from its assigned centroid.  Per-round inertia is recorded in
    ``inertia_history`` and is non-increasing by construction.
    """
    A = as_matrix(X)
    n, d = A.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise TooFewPoints(f"{n} points for k={k}")
    rng = Xorshift64Star(seed)

    # k-means++: D^2-weighted sampling
    centroids = [A[rng.next_below(n)].copy()]
    d2 = ((A - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = rng.next_below(n)
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, n - 1)
        centroids.append(A[idx].copy())
        d2 = np.minimum(d2, ((A - centroids[-1]) ** 2).sum(axis=1))
    C = np.array(centroids)

    history: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        sq = _sq_dists(A, C)
        assign = sq.argmin(axis=1)  # argmin takes the lowest index on ties
        assign_d2 = sq[np.arange(n), assign]
        inertia = float(assign_d2.sum())
        if history and inertia > history[-1] + 1e-9 * max(1.0, history[-1]):
            raise AssertionError("inertia increased during Lloyd iteration")
        history.append(inertia)

        new_C = C.copy()
        for c in range(k):
            members = assign == c
            if members.any():
                new_C[c] = A[members].mean(axis=0)
        empties = [c for c in range(k) if not (assign == c).any()]
        taken: set[int] = set()
        for c in empties:
            order = np.argsort(-assign_d2, kind="stable")
            pick = next(int(i) for i in order if int(i) not in taken)
            taken.add(pick)
            new_C[c] = A[pick]

        shift = float(np.sqrt(((new_C - C) ** 2).sum(axis=1)).max())
        C = new_C
        iterations += 1
        if shift < tol:
            break

    final_sq = _sq_dists(A, C)
    final_inertia = float(final_sq.min(axis=1).sum())
    if history and final_inertia > history[-1] + 1e-9 * max(1.0, history[-1]):
        raise AssertionError("inertia increased after final update")
    history.append(final_inertia)
    return KMeansModel(centroids=C, inertia=final_inertia, iterations=iterations,
                       inertia_history=history)


def _check_point(model_dim: int, x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != model_dim:
        raise DimMismatch(f"point has shape {v.shape}, model expects ({model_dim},)")
    return v


def kmeans_assign(model: KMeansModel, x) -> tuple[int, float]:
    v = _check_point(model.centroids.shape[1], x)
    sq = ((model.centroids - v) ** 2).sum(axis=1)
    idx = int(sq.argmin())
    return idx, math.sqrt(float(sq[idx]))


def anomaly_score(model: KMeansModel, x) -> float:
    """Distance to the nearest centroid, used as the anomaly signal."""
    return kmeans_assign(model, x)[1]


# --- k nearest neighbors --------------------------------------------------------

@dataclass
class KnnModel:
    points: np.ndarray
    labels: list[str]

    def to_json_dict(self) -> dict:
        return {"kind": "knn", "points": self.points.tolist(), "labels": list(self.labels)}

    @staticmethod
    def from_json_dict(d: dict) -> "KnnModel":
        return KnnModel(np.asarray(d["points"], dtype=np.float64),
                        [str(x) for x in d["labels"]])


def knn_predict(model: KnnModel, x, k: int) -> tuple[str, float]:
    """Majority label among the k nearest training points."""
    n = model.points.shape[0]
    if not 1 <= k <= n:
        raise BadK(f"k must be in [1, {n}], got {k}")
    v = _check_point(model.points.shape[1], x)
    sq = ((model.points - v) ** 2).sum(axis=1)
    nearest = sorted(range(n), key=lambda i: (sq[i], i))[:k]
    votes: dict[str, int] = {}
    for i in nearest:
        votes[model.labels[i]] = votes.get(model.labels[i], 0) + 1
    label = min(votes, key=lambda lab: (-votes[lab], lab))
    return label, votes[label] / k


# --- linear regression ------------------------------------------------------------

@dataclass
class LinRegModel:
    weights: np.ndarray  # bias first
    lam: float = 0.0

    def to_json_dict(self) -> dict:
        return {"kind": "linreg", "weights": self.weights.tolist()}

    @staticmethod
    def from_json_dict(d: dict) -> "LinRegModel":
        return LinRegModel(np.asarray(d["weights"], dtype=np.float64))


def linreg_fit(X, y, lam: float = 0.0) -> LinRegModel:
    """Least squares on [1 | X] via the normal equations.

    Solves (A'A + lam*I')w = A'y with Gaussian elimination and partial
    pivoting, where I' is the identity with a zero in the bias position.
    Pivots below 1e-12 in magnitude raise SingularMatrix.
    """
    A = as_matrix(X)
    n, d = A.shape
    yv = np.asarray(y, dtype=np.float64).reshape(-1)
    if yv.shape[0] != n:
        raise ShapeMismatch(f"{n} rows but {yv.shape[0]} targets")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    Ab = np.hstack([np.ones((n, 1)), A])
    M = Ab.T @ Ab
    if lam:
        reg = np.eye(d + 1) * lam
        reg[0, 0] = 0.0
        M = M + reg
    b = Ab.T @ yv
    w = _solve_gauss(M, b)
    return LinRegModel(weights=w, lam=lam)


def _solve_gauss(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = M.shape[0]
    aug = np.hstack([M.astype(np.float64, copy=True), b.reshape(-1, 1)])
    for col in range(m):
        pivot_row = col + int(np.abs(aug[col:, col]).argmax())
        if abs(aug[pivot_row, col]) < 1e-12:
            raise SingularMatrix(f"pivot {aug[pivot_row, col]:.3e} at column {col}")
        if pivot_row != col:
            aug[[col, pivot_row]] = aug[[pivot_row, col]]
        factors = aug[col + 1 :, col] / aug[col, col]
        aug[col + 1 :] -= factors[:, None] * aug[col]
    x = np.zeros(m)
    for row in range(m - 1, -1, -1):
        x[row] = (aug[row, -1] - aug[row, row + 1 : m] @ x[row + 1 :]) / aug[row, row]
    return x


def linreg_predict(model: LinRegModel, X) -> np.ndarray:
    A = as_matrix(X)
    if A.shape[1] + 1 != model.weights.shape[0]:
        raise DimMismatch(
            f"matrix has {A.shape[1]} columns, model expects {model.weights.shape[0] - 1}"
        )
    return model.weights[0] + A @ model.weights[1:]
