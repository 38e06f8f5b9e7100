"""Shared test oracles: finite differences, naive reference implementations."""

import numpy as np

EPS = 1e-4
REL_TOL = 1e-3


def fd_grad(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central-difference gradient of scalar-valued f() w.r.t. x, mutating
    x in place one element at a time. f must re-read x on every call."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def grad_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def assert_grads_close(analytic, numeric, tol: float = REL_TOL, label: str = ""):
    err = grad_rel_err(np.asarray(analytic), np.asarray(numeric))
    assert err <= tol, f"gradient mismatch{' for ' + label if label else ''}: rel err {err:.3e} > {tol}"


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product, independent of numpy's dot."""
    m, n = a.shape
    n2, p = b.shape
    assert n == n2
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            s = 0.0
            for k in range(n):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def naive_lstm_sequence(x, params, h0=None, c0=None):
    """Unbatched per-step LSTM reference. x: (T, input); params: dict with
    keys w_i..w_g (input, hidden), u_i..u_g (hidden, hidden), b_i..b_g
    (hidden,). Returns (T, hidden) hidden sequence."""

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    T = x.shape[0]
    hidden = params["b_i"].shape[0]
    h = np.zeros(hidden) if h0 is None else h0.copy()
    c = np.zeros(hidden) if c0 is None else c0.copy()
    seq = np.zeros((T, hidden))
    for t in range(T):
        xt = x[t]
        i = sig(xt @ params["w_i"] + h @ params["u_i"] + params["b_i"])
        f = sig(xt @ params["w_f"] + h @ params["u_f"] + params["b_f"])
        o = sig(xt @ params["w_o"] + h @ params["u_o"] + params["b_o"])
        g = np.tanh(xt @ params["w_g"] + h @ params["u_g"] + params["b_g"])
        c = f * c + i * g
        h = o * np.tanh(c)
        seq[t] = h
    return seq
