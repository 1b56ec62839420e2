"""Minimal dense network substrate: forward pass, manual backprop, SGD.

Two head kinds exist: an actor head (softmax over the action set) and a
critic head (single linear output). Hidden layers use ELU. Everything is
float64 so analytic gradients can be checked against central finite
differences to tight tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError

ACTOR_HEAD = "actor"
CRITIC_HEAD = "critic"


@dataclass
class NetworkParams:
    """Weights and biases of one dense network, plus its head kind."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]  # weights[i]: (layer_dims[i], layer_dims[i+1])
    biases: list[np.ndarray]   # biases[i]: (layer_dims[i+1],)
    head: str

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            layer_dims=self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            head=self.head,
        )


@dataclass
class GradientSet:
    """Gradients shaped exactly like a NetworkParams' weights and biases."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_params(layer_dims, head: str, rng: np.random.Generator) -> NetworkParams:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ContractError(f"invalid layer dims {dims}")
    if head not in (ACTOR_HEAD, CRITIC_HEAD):
        raise ContractError(f"unknown head '{head}'")
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return NetworkParams(layer_dims=dims, weights=weights, biases=biases, head=head)


def elu(x, alpha: float = 1.0):
    """x for x > 0, alpha * (exp(x) - 1) otherwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))
    return float(out) if out.ndim == 0 else out


def _elu_grad_from_activation(a: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    # For a = elu(z): derivative is 1 where z > 0, else alpha*exp(z) = a + alpha.
    return np.where(a > 0, 1.0, a + alpha)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax stabilized by max subtraction."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward_cached(params: NetworkParams, x: np.ndarray,
                   ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass returning (output, layer activations).

    Input must be (batch, input_dim). The activations list holds the input
    followed by every hidden-layer activation; the output has already been
    passed through the head (softmax rows or squeezed linear values).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layer_dims[0]:
        raise ContractError(
            f"input of shape {x.shape} does not match network input dim "
            f"{params.layer_dims[0]}")
    activations = [x]
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        if i < last:
            a = elu(z)
            activations.append(a)
        else:
            a = z
    if params.head == ACTOR_HEAD:
        out = softmax(a)
    else:
        out = a[:, 0]
    return out, activations


def forward(params: NetworkParams, x) -> np.ndarray | float:
    """Evaluate the network on one input vector or a batch of them.

    Actor networks return action probabilities summing to 1; critic
    networks return scalar values. Pure function of its arguments.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    out, _ = forward_cached(params, arr[None, :] if single else arr)
    if single:
        return float(out[0]) if params.head == CRITIC_HEAD else out[0]
    return out


def backward(params: NetworkParams, activations: list[np.ndarray],
             output_grad: np.ndarray) -> GradientSet:
    """Exact gradients of a scalar loss given its gradient at the output.

    ``output_grad`` matches the output shape from forward_cached: (batch,
    n_actions) for an actor, (batch,) for a critic. Per-sample contributions
    are summed, so the caller owns any averaging.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if params.head == ACTOR_HEAD:
        probs = softmax(activations[-1] @ params.weights[-1] + params.biases[-1])
        if g.shape != probs.shape:
            raise ContractError(
                f"output grad shape {g.shape} does not match probs {probs.shape}")
        # Softmax Jacobian: dL/dz_i = p_i * (g_i - sum_j g_j p_j)
        dz = probs * (g - (g * probs).sum(axis=1, keepdims=True))
    else:
        if g.ndim != 1 or g.shape[0] != activations[0].shape[0]:
            raise ContractError(
                f"output grad shape {g.shape} does not match batch "
                f"{activations[0].shape[0]}")
        dz = g[:, None]
    d_weights: list[np.ndarray] = [None] * len(params.weights)
    d_biases: list[np.ndarray] = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        a_prev = activations[i]
        d_weights[i] = a_prev.T @ dz
        d_biases[i] = dz.sum(axis=0)
        if not np.isfinite(d_weights[i]).all():
            raise NumericError(f"non-finite gradient at layer {i}")
        if i > 0:
            da = dz @ params.weights[i].T
            dz = da * _elu_grad_from_activation(a_prev)
    return GradientSet(weights=d_weights, biases=d_biases)


def sgd_update(params: NetworkParams, grads: GradientSet, lr: float) -> NetworkParams:
    """Plain gradient descent step: w <- w - lr * g, returned as new params."""
    if len(grads.weights) != len(params.weights):
        raise ContractError("gradient set has wrong number of layers")
    new_w = []
    new_b = []
    for w, b, gw, gb in zip(params.weights, params.biases,
                            grads.weights, grads.biases):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ContractError(
                f"gradient shape {gw.shape}/{gb.shape} does not match "
                f"parameter shape {w.shape}/{b.shape}")
        new_w.append(w - lr * gw)
        new_b.append(b - lr * gb)
    return NetworkParams(params.layer_dims, new_w, new_b, params.head)


def gradient_check(params: NetworkParams, x: np.ndarray, loss_fn,
                   grads: GradientSet | None = None, samples_per_tensor: int = 4,
                   step: float = 1e-5, rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` maps the network output to (loss, grad_of_loss_wrt_output).
    Pass a mutated ``grads`` to verify the harness itself flags bad
    gradients. Relative error uses |a - n| / max(|a|, |n|, 1e-8).
    """
    rng = rng or np.random.default_rng(0)
    x = np.asarray(x, dtype=np.float64)
    batch = x[None, :] if x.ndim == 1 else x

    def loss_at() -> float:
        out, _ = forward_cached(params, batch)
        return float(loss_fn(out)[0])

    if grads is None:
        out, acts = forward_cached(params, batch)
        _, output_grad = loss_fn(out)
        grads = backward(params, acts, np.asarray(output_grad, dtype=np.float64))

    worst = 0.0
    for layer in range(len(params.weights)):
        for tensor, grad in ((params.weights[layer], grads.weights[layer]),
                             (params.biases[layer], grads.biases[layer])):
            flat = tensor.reshape(-1)
            gflat = grad.reshape(-1)
            n = min(samples_per_tensor, flat.size)
            for idx in rng.choice(flat.size, size=n, replace=False):
                original = flat[idx]
                flat[idx] = original + step
                loss_plus = loss_at()
                flat[idx] = original - step
                loss_minus = loss_at()
                flat[idx] = original
                numeric = (loss_plus - loss_minus) / (2.0 * step)
                analytic = gflat[idx]
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
                worst = max(worst, rel)
    return worst
