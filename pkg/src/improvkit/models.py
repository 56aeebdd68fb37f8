"""Scorers: logistic GLM and a small ReLU MLP, with hand-written gradients.

Both models map a feature matrix to acceptance scores in (0, 1). A row is
accepted when its score is at least 0.5, i.e. when the logit is non-negative.
Gradients are exposed in two directions: with respect to inputs (used by the
best-response maximizer) and with respect to parameters (used by the trainer,
which supplies d objective / d score per row).
"""

from __future__ import annotations

import numpy as np

from scipy.special import expit

from .effort import EffortBudget
from .errors import DataError

LOSS_EPS = 1e-7


def sigmoid(t: np.ndarray) -> np.ndarray:
    return expit(np.asarray(t, dtype=float))


def bce_loss(y: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Elementwise cross-entropy with scores clamped to [eps, 1-eps]."""
    sc = np.clip(s, LOSS_EPS, 1.0 - LOSS_EPS)
    y = np.asarray(y, dtype=float)
    return -(y * np.log(sc) + (1.0 - y) * np.log(1.0 - sc))


def bce_grad_score(y: np.ndarray, s: np.ndarray) -> np.ndarray:
    """d loss / d score. Zero where the clamp is active, matching the loss."""
    y = np.asarray(y, dtype=float)
    inside = (s > LOSS_EPS) & (s < 1.0 - LOSS_EPS)
    sc = np.clip(s, LOSS_EPS, 1.0 - LOSS_EPS)
    g = -y / sc + (1.0 - y) / (1.0 - sc)
    return np.where(inside, g, 0.0)


class GlmScorer:
    """Logistic regression: score = sigmoid(x @ weights + bias)."""

    kind = "glm"

    def __init__(self, weights, bias: float):
        self.weights = np.array(weights, dtype=float).reshape(-1)
        self.bias = float(bias)

    @classmethod
    def zeros(cls, n_features: int) -> "GlmScorer":
        return cls(np.zeros(n_features), 0.0)

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.weights + self.bias

    def scores(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(self.logits(x))

    def grad_input(self, x: np.ndarray) -> np.ndarray:
        """d score / d x per row: s (1 - s) w."""
        s = self.scores(x)
        return (s * (1.0 - s))[:, None] * self.weights[None, :]

    def backprop_params(self, x: np.ndarray, dscore: np.ndarray,
                        scores: np.ndarray | None = None) -> list[np.ndarray]:
        """Given d objective / d score per row of x, return [d w, d bias].

        scores, when given, must be this model's scores on x (saves a forward
        pass in the training loop).
        """
        x = np.asarray(x, dtype=float)
        s = self.scores(x) if scores is None else np.asarray(scores, dtype=float)
        dlogit = np.asarray(dscore, dtype=float) * s * (1.0 - s)
        return [x.T @ dlogit, np.array([dlogit.sum()])]

    def param_arrays(self) -> list[np.ndarray]:
        # live references, shaped to match backprop_params output
        if not hasattr(self, "_bias_arr"):
            self._bias_arr = np.empty(1)
        self._bias_arr[0] = self.bias
        return [self.weights, self._bias_arr]

    def commit_params(self) -> None:
        self.bias = float(self._bias_arr[0])


class MlpScorer:
    """Fully connected ReLU network with a single sigmoid output unit."""

    kind = "mlp"

    def __init__(self, layer_weights, layer_biases):
        self.layer_weights = [np.array(w, dtype=float) for w in layer_weights]
        self.layer_biases = [np.array(b, dtype=float).reshape(-1) for b in layer_biases]
        if len(self.layer_weights) != len(self.layer_biases):
            raise DataError("layer weight and bias counts differ")
        for w, b in zip(self.layer_weights, self.layer_biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DataError("inconsistent layer shapes")
        if self.layer_weights[-1].shape[1] != 1:
            raise DataError("output layer must have a single unit")

    @classmethod
    def init(cls, n_features: int, hidden: tuple[int, ...], seed: int) -> "MlpScorer":
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights and biases."""
        rng = np.random.default_rng(seed)
        sizes = [n_features] + list(hidden) + [1]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @property
    def n_features(self) -> int:
        return self.layer_weights[0].shape[0]

    def _forward(self, x: np.ndarray):
        h = np.asarray(x, dtype=float)
        pres = []
        acts = [h]
        last = len(self.layer_weights) - 1
        for l, (w, b) in enumerate(zip(self.layer_weights, self.layer_biases)):
            pre = h @ w + b
            pres.append(pre)
            if l < last:
                h = np.maximum(pre, 0.0)  # ReLU, subgradient 0 at the kink
                acts.append(h)
        logit = pres[-1][:, 0]
        return logit, pres, acts

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[0]

    def scores(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(self.logits(x))

    def _backward(self, x, dscore, want_params: bool, want_input: bool):
        logit, pres, acts = self._forward(x)
        s = sigmoid(logit)
        dpre = (np.asarray(dscore, dtype=float) * s * (1.0 - s))[:, None]
        param_grads = [None] * (2 * len(self.layer_weights)) if want_params else None
        for l in range(len(self.layer_weights) - 1, -1, -1):
            if want_params:
                param_grads[2 * l] = acts[l].T @ dpre
                param_grads[2 * l + 1] = dpre.sum(axis=0)
            dh = dpre @ self.layer_weights[l].T
            if l > 0:
                dpre = dh * (pres[l - 1] > 0.0)
        dinput = dh if want_input else None
        return param_grads, dinput

    def grad_input(self, x: np.ndarray) -> np.ndarray:
        ones = np.ones(np.asarray(x).shape[0])
        return self._backward(x, ones, want_params=False, want_input=True)[1]

    def backprop_params(self, x: np.ndarray, dscore: np.ndarray,
                        scores: np.ndarray | None = None) -> list[np.ndarray]:
        # scores is accepted for interface parity with GlmScorer; the
        # backward pass needs the full activation stack regardless.
        return self._backward(x, dscore, want_params=True, want_input=False)[0]

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.layer_weights, self.layer_biases):
            out.append(w)
            out.append(b)
        return out

    def commit_params(self) -> None:
        pass  # arrays are updated in place


# ---------------------------------------------------------------------------
# Serialization: a self-describing text format. Floats are written as C99
# hex literals so that serialize -> parse -> serialize is byte-identical.
# ---------------------------------------------------------------------------

_MAGIC = "improvkit model v1"


def _fmt(values) -> str:
    return " ".join(float(v).hex() for v in np.asarray(values, dtype=float).reshape(-1))


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float.fromhex(tok) for tok in text.split()], dtype=float)


def serialize_model(model, budget: EffortBudget | None = None) -> str:
    lines = [_MAGIC, f"kind = {model.kind}", f"n_features = {model.n_features}"]
    if model.kind == "glm":
        lines.append(f"weights = {_fmt(model.weights)}")
        lines.append(f"bias = {_fmt([model.bias])}")
    elif model.kind == "mlp":
        sizes = [model.n_features] + [w.shape[1] for w in model.layer_weights]
        lines.append("layers = " + " ".join(str(n) for n in sizes))
        for l, (w, b) in enumerate(zip(model.layer_weights, model.layer_biases)):
            lines.append(f"w{l} = {_fmt(w)}")
            lines.append(f"b{l} = {_fmt(b)}")
    else:
        raise DataError(f"cannot serialize model kind {model.kind!r}")
    if budget is not None:
        lines.append(f"budget.norm = {budget.norm_kind}")
        lines.append(f"budget.delta = {_fmt([budget.delta])}")
        if budget.cost_diag is not None:
            lines.append(f"budget.cost = {_fmt(budget.cost_diag)}")
    return "\n".join(lines) + "\n"


def deserialize_model(text: str):
    """Parse serialize_model output. Returns (model, budget-or-None)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _MAGIC:
        raise DataError("not a model file (bad header)")
    fields: dict[str, str] = {}
    for ln in lines[1:]:
        if "=" not in ln:
            raise DataError(f"bad model file line: {ln!r}")
        key, value = (part.strip() for part in ln.split("=", 1))
        fields[key] = value
    try:
        kind = fields["kind"]
        d = int(fields["n_features"])
        if kind == "glm":
            weights = _parse_floats(fields["weights"])
            if weights.shape != (d,):
                raise DataError("weight count does not match n_features")
            model = GlmScorer(weights, float(_parse_floats(fields["bias"])[0]))
        elif kind == "mlp":
            sizes = [int(tok) for tok in fields["layers"].split()]
            if sizes[0] != d:
                raise DataError("layer sizes do not match n_features")
            weights, biases = [], []
            for l, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                weights.append(_parse_floats(fields[f"w{l}"]).reshape(fan_in, fan_out))
                biases.append(_parse_floats(fields[f"b{l}"]))
            model = MlpScorer(weights, biases)
        else:
            raise DataError(f"unknown model kind {kind!r}")
        budget = None
        if "budget.norm" in fields:
            cost = fields.get("budget.cost")
            budget = EffortBudget(
                norm_kind=fields["budget.norm"],
                delta=float(_parse_floats(fields["budget.delta"])[0]),
                cost_diag=tuple(_parse_floats(cost)) if cost is not None else None,
            )
    except KeyError as exc:
        raise DataError(f"model file is missing field {exc}") from None
    return model, budget
