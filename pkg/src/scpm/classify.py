"""One-vs-rest linear SVM trained by dual coordinate descent.

Each binary subproblem is the L2-regularized L2-loss SVM solved
liblinear-style: coordinate descent on the dual with samples visited in a
seeded per-epoch permutation, stopping when the relative duality gap
drops below `tol`. The bias is an augmented constant feature. All
subproblems draw the same permutation sequence, so negating every label
negates the solution bitwise.
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import svm_cd_epoch
from .modelio import load_model, save_model

DEFAULT_C = 1.0
DEFAULT_TOL = 1e-3
DEFAULT_MAX_EPOCHS = 1000


class ClassifyError(ValueError):
    pass


@dataclass
class BinaryFitLog:
    dual_objectives: list = field(default_factory=list)  # one per epoch
    duality_gaps: list = field(default_factory=list)
    n_epochs: int = 0


@dataclass
class LinearModel:
    weights: np.ndarray  # (n_classes, n_dims)
    bias: np.ndarray  # (n_classes,)
    class_names: list
    c_reg: float
    fit_logs: list | None = None

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_dims(self) -> int:
        return self.weights.shape[1]

    def save(self, path):
        save_model(
            path,
            "linear",
            {"classes": self.class_names, "C": self.c_reg},
            {"weights": self.weights, "bias": self.bias},
        )

    @classmethod
    def load(cls, path):
        _, meta, arrays = load_model(path, expect_kind="linear")
        return cls(
            weights=arrays["weights"],
            bias=arrays["bias"],
            class_names=list(meta["classes"]),
            c_reg=float(meta["C"]),
        )


def _solve_binary(x_aug, y_signed, c_reg, seed, tol, max_epochs):
    """Dual CD for one binary problem; returns (w_augmented, fit log)."""
    n, d = x_aug.shape
    sqnorm = np.einsum("ij,ij->i", x_aug, x_aug)
    alpha = np.zeros(n)
    w = np.zeros(d)
    diag = 1.0 / (2.0 * c_reg)
    rng = np.random.default_rng(seed)
    log = BinaryFitLog()
    for epoch in range(max_epochs):
        order = rng.permutation(n)
        svm_cd_epoch(x_aug, y_signed, sqnorm, alpha, w, diag, order)
        margins = y_signed * (x_aug @ w)
        hinge = np.maximum(0.0, 1.0 - margins)
        primal = 0.5 * (w @ w) + c_reg * float(hinge @ hinge)
        dual = float(alpha.sum()) - 0.5 * (w @ w) - float(alpha @ alpha) / (4.0 * c_reg)
        gap = primal - dual
        log.dual_objectives.append(-dual)  # the minimized dual objective f(alpha)
        log.duality_gaps.append(gap)
        log.n_epochs = epoch + 1
        if gap <= tol * max(1.0, primal):
            break
    return w, log


def svm_train(
    x,
    y,
    c_reg: float = DEFAULT_C,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_epochs: int = DEFAULT_MAX_EPOCHS,
    class_names=None,
) -> LinearModel:
    """Train one-vs-rest on dense labels 0..C-1.

    Duplicating every training row doubles the loss sum; to reproduce the
    original decision function pass c_reg/2 (per-sample-equivalent scaling).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ClassifyError("x must be (n_samples, n_dims) aligned with y")
    if x.shape[0] == 0:
        raise ClassifyError("empty training set")
    classes = np.unique(y)
    n_classes = classes.shape[0]
    if n_classes < 2:
        raise ClassifyError("need at least 2 classes")
    if not np.array_equal(classes, np.arange(n_classes)):
        raise ClassifyError(f"labels must be dense 0..{n_classes - 1}, got {classes}")
    if class_names is None:
        class_names = [f"class_{i}" for i in range(n_classes)]
    if len(class_names) != n_classes:
        raise ClassifyError("class_names length does not match label count")
    x_aug = np.hstack([x, np.ones((x.shape[0], 1))])
    weights = np.empty((n_classes, x.shape[1]))
    bias = np.empty(n_classes)
    logs = []
    for cls in range(n_classes):
        y_signed = np.where(y == cls, 1.0, -1.0)
        # same seed for every subproblem: the per-epoch permutations are
        # shared, which makes label negation an exact sign flip
        w_aug, log = _solve_binary(x_aug, y_signed, c_reg, seed, tol, max_epochs)
        weights[cls] = w_aug[:-1]
        bias[cls] = w_aug[-1]
        logs.append(log)
    return LinearModel(weights=weights, bias=bias, class_names=list(class_names), c_reg=c_reg, fit_logs=logs)


def decision_function(model: LinearModel, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != model.n_dims:
        raise ClassifyError(f"input dim {arr.shape[-1]} != model dim {model.n_dims}")
    return arr @ model.weights.T + model.bias


def predict(model: LinearModel, x):
    """Argmax of per-class scores; ties go to the lowest class index."""
    scores = decision_function(model, x)
    return int(np.argmax(scores)) if scores.ndim == 1 else np.argmax(scores, axis=1)


def evaluate(model: LinearModel, x, y) -> dict:
    """Exact accuracy plus per-class accuracies and confusion counts."""
    y = np.asarray(y)
    if y.shape[0] == 0:
        raise ClassifyError("empty test set")
    pred = predict(model, np.asarray(x, dtype=np.float64))
    n_classes = model.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    per_class = {}
    for cls in range(n_classes):
        total = int(confusion[cls].sum())
        per_class[model.class_names[cls]] = (
            float(confusion[cls, cls] / total) if total else float("nan")
        )
    return {
        "accuracy": float(np.mean(pred == y)),
        "per_class": per_class,
        "confusion": confusion.tolist(),
        "n_test": int(y.shape[0]),
    }
