"""Parameterized layers (dense, LSTM), initialization, Adam, checkpoints.

The LSTM records as a single tape op with a hand-derived backward-through-time
rule; its gradients are pinned down by the finite-difference suite.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .errors import CheckpointError, ContractError, NumericError, ShapeError
from .tensor import Tensor

ACTIVATIONS = ("none", "tanh", "sigmoid", "softmax")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Orthogonal square matrix; sign-fixed so it is a pure function of rng."""
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted dropout mask: zeros with probability `rate`, survivors scaled
    by 1/(1-rate) so the masked value is unbiased."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    return (rng.random(shape) >= rate) / (1.0 - rate)


class DenseLayer:
    """Fully connected layer: act(x @ weight + bias), strictly 2-D."""

    def __init__(self, weight: Tensor, bias: Tensor, activation: str = "none"):
        if activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        if weight.data.ndim != 2 or bias.data.ndim != 1 or weight.shape[1] != bias.shape[0]:
            raise ShapeError(f"inconsistent dense shapes {weight.shape} / {bias.shape}")
        self.weight = weight
        self.bias = bias
        self.activation = activation

    @classmethod
    def create(cls, in_size: int, out_size: int, activation: str, rng: np.random.Generator):
        w = Tensor(glorot_uniform(rng, in_size, out_size, (in_size, out_size)), requires_grad=True)
        b = Tensor(np.zeros(out_size), requires_grad=True)
        return cls(w, b, activation)

    @property
    def in_size(self) -> int:
        return self.weight.shape[0]

    @property
    def out_size(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.in_size:
            raise ShapeError(f"dense expects (batch, {self.in_size}), got {x.shape}")
        y = tt.add(tt.matmul(x, self.weight), tt.repeat(self.bias, x.shape[0], axis=0))
        if self.activation == "tanh":
            return tt.tanh(y)
        if self.activation == "sigmoid":
            return tt.sigmoid(y)
        if self.activation == "softmax":
            return tt.softmax(y, axis=-1)
        return y

    def params(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


_GATES = ("i", "f", "o", "g")


class LstmLayer:
    """Standard LSTM cell over full sequences, with per-sequence (variational)
    input and recurrent dropout and an L2 coefficient consumed by the
    optimizer for its gate/recurrent weights."""

    def __init__(self, input_size, hidden_size, w, u, b,
                 dropout_rate=0.0, recurrent_dropout_rate=0.0, l2_coeff=0.0):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w = w  # dict gate -> Tensor[input, hidden]
        self.u = u  # dict gate -> Tensor[hidden, hidden]
        self.b = b  # dict gate -> Tensor[hidden]
        self.dropout_rate = dropout_rate
        self.recurrent_dropout_rate = recurrent_dropout_rate
        self.l2_coeff = l2_coeff

    @classmethod
    def create(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
               dropout_rate: float = 0.0, recurrent_dropout_rate: float = 0.0,
               l2_coeff: float = 0.0):
        w, u, b = {}, {}, {}
        for gate in _GATES:
            w[gate] = Tensor(glorot_uniform(rng, input_size, hidden_size,
                                            (input_size, hidden_size)), requires_grad=True)
            u[gate] = Tensor(orthogonal(rng, hidden_size), requires_grad=True)
            # forget-gate bias starts at 1 to ease early gradient flow
            init = np.ones(hidden_size) if gate == "f" else np.zeros(hidden_size)
            b[gate] = Tensor(init, requires_grad=True)
        return cls(input_size, hidden_size, w, u, b,
                   dropout_rate, recurrent_dropout_rate, l2_coeff)

    def params(self, prefix: str):
        out = []
        for gate in _GATES:
            out.append((f"{prefix}.w_{gate}", self.w[gate]))
        for gate in _GATES:
            out.append((f"{prefix}.u_{gate}", self.u[gate]))
        for gate in _GATES:
            out.append((f"{prefix}.b_{gate}", self.b[gate]))
        return out

    def regularized_params(self, prefix: str):
        """The gate and recurrent weight tensors subject to the L2 penalty."""
        return [(name, t) for name, t in self.params(prefix) if ".b_" not in name]

    def forward(self, x: Tensor, mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
        """Run the cell over x of shape (batch, T, input); returns the full
        hidden sequence (batch, T, hidden). Train mode draws one input mask
        and one recurrent mask per call, fixed across time steps."""
        if mode not in ("train", "eval"):
            raise ContractError(f"unknown mode {mode!r}")
        if x.data.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError(
                f"lstm expects (batch, T, {self.input_size}), got {x.shape}"
            )
        batch, steps, _ = x.shape
        hidden = self.hidden_size

        m_x = m_h = None
        if mode == "train":
            if self.dropout_rate > 0.0:
                if rng is None:
                    raise ContractError("train-mode dropout needs an rng")
                m_x = dropout_mask(rng, (batch, self.input_size), self.dropout_rate)
            if self.recurrent_dropout_rate > 0.0:
                if rng is None:
                    raise ContractError("train-mode dropout needs an rng")
                m_h = dropout_mask(rng, (batch, hidden), self.recurrent_dropout_rate)

        W = np.concatenate([self.w[g].data for g in _GATES], axis=1)  # (in, 4H)
        U = np.concatenate([self.u[g].data for g in _GATES], axis=1)  # (H, 4H)
        bias = np.concatenate([self.b[g].data for g in _GATES])       # (4H,)

        xd = x.data if m_x is None else x.data * m_x[:, None, :]
        xproj = (xd.reshape(batch * steps, self.input_size) @ W).reshape(batch, steps, 4 * hidden) + bias

        gates = np.empty((batch, steps, 4 * hidden))  # i|f|o post-sigmoid, g post-tanh
        cs = np.empty((batch, steps, hidden))
        tcs = np.empty((batch, steps, hidden))
        hms = np.empty((batch, steps, hidden))  # masked h_{t-1} fed to step t
        out = np.empty((batch, steps, hidden))

        h3 = 3 * hidden
        h = np.zeros((batch, hidden))
        c = np.zeros((batch, hidden))
        for t in range(steps):
            hm = h if m_h is None else h * m_h
            a = xproj[:, t, :] + hm @ U
            gt = gates[:, t, :]
            np.tanh(a[:, :h3] * 0.5, out=gt[:, :h3])  # sigmoid via tanh identity
            gt[:, :h3] += 1.0
            gt[:, :h3] *= 0.5
            np.tanh(a[:, h3:], out=gt[:, h3:])
            i = gt[:, :hidden]
            f = gt[:, hidden:2 * hidden]
            o = gt[:, 2 * hidden:h3]
            g = gt[:, h3:]
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            cs[:, t], tcs[:, t], hms[:, t] = c, tc, hm
            out[:, t] = h

        inputs = (x,) + tuple(self.w[g] for g in _GATES) \
            + tuple(self.u[g] for g in _GATES) + tuple(self.b[g] for g in _GATES)

        def bwd(grad_out):
            das = np.empty((batch, steps, 4 * hidden))  # pre-activation grads
            dh_next = np.zeros((batch, hidden))
            dc_next = np.zeros((batch, hidden))
            zeros = np.zeros((batch, hidden))
            for t in range(steps - 1, -1, -1):
                gt = gates[:, t, :]
                i = gt[:, :hidden]
                f = gt[:, hidden:2 * hidden]
                o = gt[:, 2 * hidden:h3]
                g = gt[:, h3:]
                tc = tcs[:, t]
                c_prev = cs[:, t - 1] if t > 0 else zeros
                dh = grad_out[:, t, :] + dh_next
                do = dh * tc
                dc = dc_next + dh * o * (1.0 - tc * tc)
                da = das[:, t, :]
                da[:, :hidden] = dc * g * i * (1.0 - i)
                da[:, hidden:2 * hidden] = dc * c_prev * f * (1.0 - f)
                da[:, 2 * hidden:h3] = do * o * (1.0 - o)
                da[:, h3:] = dc * i * (1.0 - g * g)
                dc_next = dc * f
                dh_prev = da @ U.T
                dh_next = dh_prev if m_h is None else dh_prev * m_h
            # weight grads batched over all steps at once
            da_flat = das.reshape(batch * steps, 4 * hidden)
            dW = xd.reshape(batch * steps, self.input_size).T @ da_flat
            dU = hms.reshape(batch * steps, hidden).T @ da_flat
            db = da_flat.sum(axis=0)
            dxd = (da_flat @ W.T).reshape(batch, steps, self.input_size)
            dx = dxd if m_x is None else dxd * m_x[:, None, :]
            grads = [dx]
            for k in range(4):
                grads.append(dW[:, k * hidden:(k + 1) * hidden])
            for k in range(4):
                grads.append(dU[:, k * hidden:(k + 1) * hidden])
            for k in range(4):
                grads.append(db[k * hidden:(k + 1) * hidden])
            return tuple(grads)

        return tt.record_op(out, inputs, bwd)


class Adam:
    """Bias-corrected Adam over named parameters; an optional per-parameter
    L2 coefficient adds coeff*w to the gradient before the update (plain L2,
    not decoupled decay)."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8, l2=None):
        self.params = list(params)  # [(name, Tensor)]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.l2 = dict(l2 or {})  # name -> coeff
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        live = []
        for name, p in self.params:
            if p.grad is None:
                continue
            if not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient for {name}; step aborted")
            g = p.grad
            coeff = self.l2.get(name, 0.0)
            if coeff:
                g = g + coeff * p.data
            live.append((name, p, g))
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p, g in live:
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# checkpoints


def save_params(path, named_params, meta: str | None = None) -> None:
    """Write named float64 arrays to an .npz; round-trips bit-exactly."""
    arrays = {name: p.data for name, p in named_params}
    if meta is not None:
        arrays["__meta__"] = np.frombuffer(meta.encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_params(path):
    """Read back (arrays: dict name -> ndarray, meta: str | None)."""
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
        meta = None
        if "__meta__" in z.files:
            meta = z["__meta__"].tobytes().decode("utf-8")
    return arrays, meta


def restore_params(named_params, arrays) -> None:
    """Copy checkpoint arrays into live parameter tensors, strict on names
    and shapes."""
    named = dict(named_params)
    missing = sorted(set(named) - set(arrays))
    extra = sorted(set(arrays) - set(named))
    if missing or extra:
        raise CheckpointError(f"parameter sets differ: missing={missing} unexpected={extra}")
    for name, p in named.items():
        arr = arrays[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"{name}: expected dims {p.data.shape}, found {arr.shape}"
            )
        p.data = np.ascontiguousarray(arr, dtype=np.float64)
