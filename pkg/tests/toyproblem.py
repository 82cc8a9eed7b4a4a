"""Closed-form toy instance shared by engine unit tests and acceptance.

The generator is the identity on a 2-vector (two classes, one code dim
each); the decision model is a logistic regression P(class 2) =
sigmoid(w . z + b).  The counterfactual objective then has the closed form

    -log sigmoid(w . z + b) + lambda * ||z - z_init||^2

whose optimum below was computed once with a long plain-gradient-descent
run (200k steps, step 0.02) and frozen.
"""

import numpy as np
import torch

TOY_W = np.array([1.7, -1.1])
TOY_B = 0.4
TOY_Z_INIT = np.array([[-0.8], [0.6]])
TOY_LAMBDA = 0.3
TOY_OPTIMUM = np.array([0.15329495, -0.01683791])
TOY_OPTIMUM_OBJECTIVE = 0.7969397636086482


def toy_render(z):
    return z.squeeze(-1)


def toy_predict(x):
    w = torch.as_tensor(TOY_W, dtype=x.dtype)
    p2 = torch.sigmoid(x @ w + TOY_B)
    return torch.stack([1 - p2, p2], dim=1)


def toy_scores(x):
    """(probs, log_probs) pair, with logs from logsigmoid for stability."""
    w = torch.as_tensor(TOY_W, dtype=x.dtype)
    u = x @ w + TOY_B
    log_p2 = torch.nn.functional.logsigmoid(u)
    log_p1 = torch.nn.functional.logsigmoid(-u)
    return torch.stack([torch.exp(log_p1), torch.exp(log_p2)], dim=1), torch.stack(
        [log_p1, log_p2], dim=1
    )


def toy_closed_form(z_flat: np.ndarray, counter: int = 2):
    u = TOY_W @ z_flat + TOY_B
    p2 = 1.0 / (1.0 + np.exp(-u))
    p = p2 if counter == 2 else 1.0 - p2
    value = -np.log(p) + TOY_LAMBDA * np.sum((z_flat - TOY_Z_INIT.ravel()) ** 2)
    sign = (p2 - 1.0) if counter == 2 else p2
    grad = sign * TOY_W + 2 * TOY_LAMBDA * (z_flat - TOY_Z_INIT.ravel())
    return value, grad


def toy_gd_oracle(steps=200_000, lr=0.02):
    z = TOY_Z_INIT.ravel().copy()
    for _ in range(steps):
        _, g = toy_closed_form(z)
        z = z - lr * g
    return z
