"""Adaptive allocation: length probe, budget policy, and the Huber loss.

The probe pools the encoder's final-layer hidden states with a learned query
vector (two attention reads, then a small MLP) and emits a nonnegative length
estimate. The output is the input length scaled by a logistic gate, so the
estimate is bounded by the sequence it describes and the network effectively
learns the relevant *proportion*.

The policy converts the estimate into a token budget::

    k = clamp(ceil(l_hat / r), k_min, k_max)

with the ceiling so a fractional requirement never under-allocates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ContractError
from .model import ModelConfig, ParamSet


@dataclass(frozen=True)
class AllocationPolicy:
    r: float = 10.0
    k_max: int = 8
    k_min: int = 1

    def __post_init__(self):
        if not self.r > 0:
            raise ConfigurationError(f"policy ratio r must be > 0, got {self.r}")
        if not 1 <= self.k_min <= self.k_max:
            raise ConfigurationError(
                f"need 1 <= k_min <= k_max, got k_min={self.k_min}, k_max={self.k_max}"
            )

    def with_r(self, r: float) -> "AllocationPolicy":
        return AllocationPolicy(r=r, k_max=self.k_max, k_min=self.k_min)


def allocate(policy: AllocationPolicy, l_hat: float) -> int:
    """Token budget for an estimated relevant length."""
    if l_hat < 0:
        raise ContractError(f"estimated length must be >= 0, got {l_hat}")
    k = math.ceil(l_hat / policy.r)
    return int(min(max(k, policy.k_min), policy.k_max))


def huber(error, delta: float):
    """Pointwise Huber value: quadratic inside |e| <= delta, linear outside."""
    if not delta > 0:
        raise ConfigurationError(f"delta must be > 0, got {delta}")
    e = np.asarray(error, dtype=np.float64)
    out = np.where(np.abs(e) <= delta, 0.5 * e * e, delta * (np.abs(e) - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def huber_grad(error, delta: float):
    """Derivative of :func:`huber` with respect to the error."""
    if not delta > 0:
        raise ConfigurationError(f"delta must be > 0, got {delta}")
    e = np.asarray(error, dtype=np.float64)
    out = np.where(np.abs(e) <= delta, e, delta * np.sign(e))
    return float(out) if out.ndim == 0 else out


def probe_predict(params: ParamSet, config: ModelConfig, h_input: Tensor, valid_len=None) -> Tensor:
    """Estimate the relevant-content token length from hidden states (T, d).

    ``valid_len`` masks padding: positions at or beyond it take no part in
    the pooling and do not count toward the length scale.
    """
    t = h_input.shape[0]
    if t == 0:
        raise ContractError("probe input is empty")
    n = t if valid_len is None else int(valid_len)
    if not 1 <= n <= t:
        raise ContractError(f"valid_len={valid_len} outside [1, {t}]")
    dt = config.np_dtype
    scale = 1.0 / np.sqrt(config.d_model)
    mask = None
    if n < t:
        m = np.zeros((1, t), dtype=dt)
        m[0, n:] = -1e9
        mask = Tensor(m)

    state = params.tensor("probe", "q0")
    for j in range(config.n_probe_layers):
        q = state @ params.tensor("probe", f"p{j}.wq")          # (1, d)
        keys = h_input @ params.tensor("probe", f"p{j}.wk")      # (T, d)
        values = h_input @ params.tensor("probe", f"p{j}.wv")    # (T, d)
        scores = ad.mul(q @ keys.swapaxes(0, 1), scale)          # (1, T)
        if mask is not None:
            scores = scores + mask
        state = state + ad.softmax(scores, axis=-1) @ values
    hidden = ad.tanh(state @ params.tensor("probe", "mlp.w1") + params.tensor("probe", "mlp.b1"))
    z = hidden @ params.tensor("probe", "mlp.w2") + params.tensor("probe", "mlp.b2")
    return ad.mul(ad.sigmoid(z), float(n)).reshape(())
