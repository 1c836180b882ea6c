"""Linear and MLP heads implemented directly on numpy arrays.

Everything trains in float64.  The MLP hidden layers carry no bias term:
each one feeds a batch-norm whose beta already provides the offset, and a
pre-norm bias would receive an exactly-zero gradient (batch centering
removes it), which is both wasted state and a degenerate case for
finite-difference verification.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

N_CLASSES = 4
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1
DEFAULT_HIDDEN = (512, 128)
DEFAULT_DROPOUT = 0.3


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy of integer labels."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(len(labels)), labels]
    return float(np.mean(log_norm - picked))


def _d_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of mean cross-entropy w.r.t. logits."""
    grad = softmax(logits)
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)


@dataclass
class LinearModel:
    """Multinomial logistic regression: logits = x @ W.T + b."""

    in_dim: int
    weight: np.ndarray = field(init=False)
    bias: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.in_dim < 1:
            raise ValueError(f"in_dim must be positive, got {self.in_dim}")
        # zero init: the untrained head predicts the uniform distribution
        self.weight = np.zeros((N_CLASSES, self.in_dim), dtype=np.float64)
        self.bias = np.zeros(N_CLASSES, dtype=np.float64)

    @property
    def out_dim(self) -> int:
        return N_CLASSES

    def parameters(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.T + self.bias

    # alias so training code can treat both heads uniformly
    def forward_eval(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def loss_and_grads(
        self,
        x: np.ndarray,
        labels: np.ndarray,
        weight_decay: float = 0.0,
        dropout_rng: np.random.Generator | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Objective value and gradients on one batch.

        Weight decay enters the objective as 0.5 * wd * ||W||^2 (bias
        excluded), so the returned loss is exactly the function whose
        gradient is returned.
        """
        logits = self.forward(x)
        loss = cross_entropy(logits, labels)
        if weight_decay:
            loss += 0.5 * weight_decay * float(np.sum(self.weight**2))
        dl = _d_logits(logits, labels)
        grads = {
            "weight": dl.T @ x + weight_decay * self.weight,
            "bias": dl.sum(axis=0),
        }
        return loss, grads

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.weight = state["weight"].astype(np.float64).copy()
        self.bias = state["bias"].astype(np.float64).copy()


class MLPModel:
    """Two-hidden-layer classifier with batch-norm, ReLU and dropout.

    Layer stack per hidden block: Linear (no bias) -> BatchNorm -> ReLU
    -> Dropout.  The output layer is a plain affine map initialised to
    zero so the initial loss on balanced labels is ln(num classes).
    """

    def __init__(
        self,
        in_dim: int,
        hidden: tuple[int, ...] = DEFAULT_HIDDEN,
        dropout: float = DEFAULT_DROPOUT,
        init_rng: np.random.Generator | None = None,
    ) -> None:
        if in_dim < 1:
            raise ValueError(f"in_dim must be positive, got {in_dim}")
        if not hidden or any(h < 1 for h in hidden):
            raise ValueError(f"hidden sizes must be positive, got {hidden}")
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {dropout}")
        self.in_dim = in_dim
        self.hidden = tuple(int(h) for h in hidden)
        self.dropout = float(dropout)
        rng = init_rng if init_rng is not None else np.random.default_rng(0)

        self.params: dict[str, np.ndarray] = {}
        self.bufs: dict[str, np.ndarray] = {}
        fan_in = in_dim
        for i, width in enumerate(self.hidden, start=1):
            bound = np.sqrt(6.0 / fan_in)  # He-uniform for ReLU fan-in
            self.params[f"w{i}"] = rng.uniform(
                -bound, bound, size=(width, fan_in)
            ).astype(np.float64)
            self.params[f"gamma{i}"] = np.ones(width, dtype=np.float64)
            self.params[f"beta{i}"] = np.zeros(width, dtype=np.float64)
            self.bufs[f"running_mean{i}"] = np.zeros(width, dtype=np.float64)
            self.bufs[f"running_var{i}"] = np.ones(width, dtype=np.float64)
            fan_in = width
        self.params["w_out"] = np.zeros((N_CLASSES, fan_in), dtype=np.float64)
        self.params["b_out"] = np.zeros(N_CLASSES, dtype=np.float64)

    @property
    def out_dim(self) -> int:
        return N_CLASSES

    def parameters(self) -> dict[str, np.ndarray]:
        return self.params

    def buffers(self) -> dict[str, np.ndarray]:
        return self.bufs

    def forward_train(
        self, x: np.ndarray, dropout_rng: np.random.Generator | None
    ) -> tuple[np.ndarray, dict]:
        """Training-mode forward pass; returns logits and a backward cache.

        Batch statistics normalise each hidden layer and update the running
        buffers.  Dropout is applied (inverted scaling) only when a
        generator is supplied, so gradient verification can run the exact
        training-mode graph deterministically.
        """
        cache: dict = {"blocks": [], "x": x}
        h = x
        for i in range(1, len(self.hidden) + 1):
            z = h @ self.params[f"w{i}"].T
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + BN_EPSILON)
            z_hat = (z - mu) * inv_std
            bn = self.params[f"gamma{i}"] * z_hat + self.params[f"beta{i}"]
            relu = np.maximum(bn, 0.0)
            if dropout_rng is not None and self.dropout > 0.0:
                keep = 1.0 - self.dropout
                mask = (dropout_rng.random(relu.shape) < keep) / keep
            else:
                mask = None
            out = relu if mask is None else relu * mask
            self.bufs[f"running_mean{i}"] *= 1.0 - BN_MOMENTUM
            self.bufs[f"running_mean{i}"] += BN_MOMENTUM * mu
            self.bufs[f"running_var{i}"] *= 1.0 - BN_MOMENTUM
            self.bufs[f"running_var{i}"] += BN_MOMENTUM * var
            cache["blocks"].append(
                {"h_in": h, "z": z, "z_hat": z_hat, "inv_std": inv_std,
                 "bn": bn, "mask": mask}
            )
            h = out
        logits = h @ self.params["w_out"].T + self.params["b_out"]
        cache["h_last"] = h
        return logits, cache

    def forward_eval(self, x: np.ndarray) -> np.ndarray:
        """Inference-mode forward pass using running statistics, no dropout."""
        h = x
        for i in range(1, len(self.hidden) + 1):
            z = h @ self.params[f"w{i}"].T
            inv_std = 1.0 / np.sqrt(self.bufs[f"running_var{i}"] + BN_EPSILON)
            z_hat = (z - self.bufs[f"running_mean{i}"]) * inv_std
            h = np.maximum(
                self.params[f"gamma{i}"] * z_hat + self.params[f"beta{i}"], 0.0
            )
        return h @ self.params["w_out"].T + self.params["b_out"]

    def hidden_activations(self, x: np.ndarray) -> list[np.ndarray]:
        """Inference-mode post-ReLU activations of each hidden layer."""
        acts = []
        h = x
        for i in range(1, len(self.hidden) + 1):
            z = h @ self.params[f"w{i}"].T
            inv_std = 1.0 / np.sqrt(self.bufs[f"running_var{i}"] + BN_EPSILON)
            z_hat = (z - self.bufs[f"running_mean{i}"]) * inv_std
            h = np.maximum(
                self.params[f"gamma{i}"] * z_hat + self.params[f"beta{i}"], 0.0
            )
            acts.append(h)
        return acts

    def loss_and_grads(
        self,
        x: np.ndarray,
        labels: np.ndarray,
        weight_decay: float = 0.0,
        dropout_rng: np.random.Generator | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        logits, cache = self.forward_train(x, dropout_rng)
        loss = cross_entropy(logits, labels)
        if weight_decay:
            penalty = sum(
                float(np.sum(v**2))
                for k, v in self.params.items()
                if k.startswith("w")
            )
            loss += 0.5 * weight_decay * penalty
        grads = self._backward(cache, _d_logits(logits, labels))
        if weight_decay:
            for k in grads:
                if k.startswith("w"):
                    grads[k] += weight_decay * self.params[k]
        return loss, grads

    def _backward(self, cache: dict, d_logits: np.ndarray) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {
            "w_out": d_logits.T @ cache["h_last"],
            "b_out": d_logits.sum(axis=0),
        }
        d_h = d_logits @ self.params["w_out"]
        for i in range(len(self.hidden), 0, -1):
            blk = cache["blocks"][i - 1]
            if blk["mask"] is not None:
                d_h = d_h * blk["mask"]
            d_bn = d_h * (blk["bn"] > 0.0)
            grads[f"gamma{i}"] = (d_bn * blk["z_hat"]).sum(axis=0)
            grads[f"beta{i}"] = d_bn.sum(axis=0)
            # batch-norm backward through the per-batch mean and variance
            n = d_bn.shape[0]
            d_zhat = d_bn * self.params[f"gamma{i}"]
            s1 = d_zhat.sum(axis=0)
            s2 = (d_zhat * blk["z_hat"]).sum(axis=0)
            d_z = (blk["inv_std"] / n) * (n * d_zhat - s1 - blk["z_hat"] * s2)
            grads[f"w{i}"] = d_z.T @ blk["h_in"]
            d_h = d_z @ self.params[f"w{i}"]
        return grads

    def state(self) -> dict[str, np.ndarray]:
        out = {k: v.copy() for k, v in self.params.items()}
        out.update({k: v.copy() for k, v in self.bufs.items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k] = state[k].astype(np.float64).copy()
        for k in self.bufs:
            self.bufs[k] = state[k].astype(np.float64).copy()


class AdamOptimizer:
    """Adam with bias-corrected first and second moments."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g**2
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.epsilon)


def clone_state(model) -> dict[str, np.ndarray]:
    return copy.deepcopy(model.state())
