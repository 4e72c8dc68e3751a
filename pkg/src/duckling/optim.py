"""Rectified Adam.

Standard Adam keeps exponential moving averages of the gradient (m) and its
square (v). The rectified variant tracks the length of the approximated SMA,
``rho_t``, and only divides by sqrt(v-hat) once ``rho_t > 4``, applying a
variance-rectification factor ``r_t``; before that point the adaptive step
is undefined and the update falls back to plain bias-corrected momentum.
"""

import math

import numpy as np


class RAdam:
    """Rectified Adam over a list of ndarray parameters.

    ``step`` mutates the parameter arrays in place. Updates are
    deterministic functions of (state, gradients), so two optimizers with
    equal state fed equal gradients produce bitwise-equal trajectories.
    """

    def __init__(self, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        """Apply one update to every parameter array, in place."""
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        t = self.t
        b1, b2 = self.beta1, self.beta2
        b1t = b1**t
        b2t = b2**t
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        rectified = rho_t > 4.0
        if rectified:
            rect = math.sqrt(
                ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
            )
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1t)
            if rectified:
                v_hat = np.sqrt(v / (1.0 - b2t))
                p -= self.lr * rect * m_hat / (v_hat + self.eps)
            else:
                p -= self.lr * m_hat

    def state_dict(self):
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": [m.tolist() for m in self.m] if self.m is not None else None,
            "v": [v.tolist() for v in self.v] if self.v is not None else None,
        }

    @classmethod
    def from_state_dict(cls, state):
        opt = cls(lr=state["lr"], beta1=state["beta1"], beta2=state["beta2"], eps=state["eps"])
        opt.t = state["t"]
        if state["m"] is not None:
            opt.m = [np.asarray(m, dtype=np.float64) for m in state["m"]]
            opt.v = [np.asarray(v, dtype=np.float64) for v in state["v"]]
        return opt
