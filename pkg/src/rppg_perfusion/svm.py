"""Soft-margin SVM with a polynomial kernel, trained by SMO.

The solver follows the working-set selection of Fan, Chen & Lin (2005):
the first index maximally violates the optimality conditions, the second
maximizes the second-order decrease of the dual objective.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InputError, NoConvergence, SingleClass

TAU = 1e-12


def poly_kernel(a: np.ndarray, b: np.ndarray, gamma: float, coef0: float, degree: int) -> np.ndarray:
    return (gamma * (a @ b.T) + coef0) ** degree


@dataclass
class Scaler:
    mean: np.ndarray
    scale: np.ndarray  # 0 marks a constant feature, which maps to 0

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        return cls(x.mean(axis=0), x.std(axis=0))

    @classmethod
    def identity(cls, n_features: int) -> "Scaler":
        return cls(np.zeros(n_features), np.ones(n_features))

    def transform(self, x: np.ndarray) -> np.ndarray:
        constant = self.scale == 0
        out = (x - self.mean) / np.where(constant, 1.0, self.scale)
        out[:, constant] = 0.0
        return out


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    iterations: int
    gradient: np.ndarray
    objective: list[float] = field(default_factory=list)


def smo_solve(
    K: np.ndarray,
    y: np.ndarray,
    C: float = 1.0,
    tol: float = 1e-4,
    max_iter: int = 1_000_000,
    record_objective: bool = False,
) -> SmoResult:
    """Minimize 0.5 a'Qa - e'a subject to y'a = 0, 0 <= a <= C, Q = yy'K.

    `y` holds +1/-1 labels. Stops when the maximal violating pair gap drops
    below `tol`. With `record_objective` the dual objective (e'a - 0.5 a'Qa)
    is stored after every update.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    Q = (y[:, None] * y[None, :]) * K
    diag = np.diag(K).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    pos = y > 0
    history = [0.0] if record_objective else []

    for it in range(max_iter):
        yg = -y * grad
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        if not up.any() or not low.any():
            break
        yg_up = np.where(up, yg, -np.inf)
        i = int(np.argmax(yg_up))
        m = yg_up[i]
        big_m = np.min(np.where(low, yg, np.inf))
        if m - big_m < tol:
            break
        cand = low & (yg < m)
        b = m - yg
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, TAU)
        score = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(score))

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = diag[i] + diag[j] - 2.0 * K[i, j]
            quad = quad if quad > 0 else TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = diag[i] + diag[j] - 2.0 * K[i, j]
            quad = quad if quad > 0 else TAU
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += Q[i] * (ai - ai_old) + Q[j] * (aj - aj_old)
        if record_objective:
            history.append(float(-0.5 * alpha @ (grad - 1.0)))
    else:
        raise NoConvergence(f"SMO did not converge in {max_iter} iterations")

    return SmoResult(alpha, _bias(alpha, grad, y, C), it, grad, history)


def _bias(alpha, grad, y, C) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yg[free].mean())
    else:
        at_upper = alpha >= C
        ub_set = np.where(at_upper, y < 0, y > 0)
        lb_set = ~ub_set
        ub = yg[ub_set].min() if ub_set.any() else np.inf
        lb = yg[lb_set].max() if lb_set.any() else -np.inf
        rho = float((ub + lb) / 2)
    return -rho


def kkt_violation(alpha, K, y, C, bias) -> float:
    """Largest violation of the soft-margin KKT conditions (0 when optimal)."""
    y = np.asarray(y, dtype=float)
    margin = y * (K @ (alpha * y) + bias)  # y_i f(x_i)
    slack = margin - 1.0
    at_zero = alpha <= 0
    at_c = alpha >= C
    free = ~at_zero & ~at_c
    viol = np.zeros_like(slack)
    viol[at_zero] = np.maximum(0.0, -slack[at_zero])
    viol[at_c] = np.maximum(0.0, slack[at_c])
    viol[free] = np.abs(slack[free])
    return float(viol.max()) if viol.size else 0.0


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # standardized
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    scaler: Scaler
    C: float = 1.0
    gamma: float = 1.0 / 3.0
    coef0: float = 1.0
    degree: int = 3
    feature_names: tuple[str, ...] = ("snr_db", "magnitude", "rho_ref")

    @property
    def n_features(self) -> int:
        return self.scaler.mean.shape[0]

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n_features:
            raise DimensionMismatch(f"model expects {self.n_features} features, got {x.shape[1]}")
        z = self.scaler.transform(x)
        k = poly_kernel(z, self.support_vectors, self.gamma, self.coef0, self.degree)
        return k @ self.dual_coef + self.bias

    def to_dict(self) -> dict:
        return {
            "kernel": {"type": "poly", "degree": self.degree, "gamma": self.gamma, "coef0": self.coef0},
            "C": self.C,
            "bias": self.bias,
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "scaler": {"mean": self.scaler.mean.tolist(), "scale": self.scaler.scale.tolist()},
            "feature_names": list(self.feature_names),
            "labels": {"-1": 0, "1": 1},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        try:
            kern = d["kernel"]
            return cls(
                support_vectors=np.asarray(d["support_vectors"], dtype=float).reshape(
                    -1, len(d["scaler"]["mean"])
                ),
                dual_coef=np.asarray(d["dual_coef"], dtype=float),
                bias=float(d["bias"]),
                scaler=Scaler(np.asarray(d["scaler"]["mean"], float), np.asarray(d["scaler"]["scale"], float)),
                C=float(d["C"]),
                gamma=float(kern["gamma"]),
                coef0=float(kern["coef0"]),
                degree=int(kern["degree"]),
                feature_names=tuple(d.get("feature_names", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed model: {exc}") from exc

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "SvmModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read model {path}: {exc}") from exc


def fit_svm(
    x: np.ndarray,
    labels: np.ndarray,
    C: float = 1.0,
    gamma: float | None = None,
    coef0: float = 1.0,
    degree: int = 3,
    tol: float = 1e-4,
    scaler: Scaler | None = None,
    max_iter: int = 1_000_000,
) -> tuple[SvmModel, SmoResult]:
    """Train on raw features; labels are 0 (no attack) / 1 (attack)."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise SingleClass("training data holds a single class")
    y = np.where(labels == 1, 1.0, -1.0)
    scaler = scaler or Scaler.fit(x)
    z = scaler.transform(x)
    gamma = 1.0 / x.shape[1] if gamma is None else gamma
    K = poly_kernel(z, z, gamma, coef0, degree)
    res = smo_solve(K, y, C=C, tol=tol, max_iter=max_iter)
    sv = res.alpha > 0
    model = SvmModel(
        support_vectors=z[sv],
        dual_coef=(res.alpha * y)[sv],
        bias=res.bias,
        scaler=scaler,
        C=C,
        gamma=gamma,
        coef0=coef0,
        degree=degree,
    )
    return model, res


def svm_predict(model: SvmModel, features) -> tuple[np.ndarray, np.ndarray]:
    """Labels (0/1) and decision values; a zero decision counts as attack."""
    dec = model.decision_function(features)
    return (dec >= 0).astype(int), dec
