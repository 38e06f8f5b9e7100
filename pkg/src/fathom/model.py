"""FATHOM model assembly: per-task feature attention, shared time attention,
LSTM stacks, prediction heads, ablations, baselines, and the two losses.

Dataflow for the full variant, per forward pass:
  each task:  X -> feature attention -> C1 -> LSTM1 -> hidden sequence h
  shared:     concat(h over tasks) -> flatten -> dense+tanh -> softmax over
              time -> time weights a
  each task:  raw X * a (repeated across features) -> LSTM2 -> last hidden
              -> two dense layers -> predictions

Note the second pass deliberately re-weights the RAW inputs, not C1, so the
feature attention influences predictions only through h shaping the time
weights.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .errors import ContractError, DataError, ShapeError
from .layers import DenseLayer, LstmLayer
from .tensor import Tensor

VARIANTS = ("fathom", "fathom_sa", "fathom_ca", "s_lstm", "m_lstm", "lr", "mlp_16_16")
KINDS = ("classification", "regression")

_SHARED_STREAM = 2 ** 20  # rng lane for parameters not owned by any task


def normalize_variant(name: str) -> str:
    v = name.strip().lower().replace("-", "_")
    if v not in VARIANTS:
        raise ContractError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return v


class AttentionCapture:
    """Detached per-forward attention values, for export and invariants."""

    def __init__(self):
        self.sensor = {}  # task index -> (batch, T, D)
        self.time = None  # (batch, T)


def sensor_attention(score_layer: DenseLayer, x: Tensor):
    """Per-task feature attention. For every time step, scores each of the D
    features with a shared D->D dense layer, softmaxes across features, and
    gates the inputs: C1 = tanh(X * A). Returns (C1, A), both (batch, T, D)."""
    b, steps, d = x.shape
    scores = score_layer.forward(tt.reshape(x, (b * steps, d)))
    attn = tt.reshape(tt.softmax(scores, axis=-1), (b, steps, d))
    c1 = tt.tanh(tt.ewmul(x, attn))
    return c1, attn


def time_attention_scores(score_layer: DenseLayer, hidden_seqs) -> Tensor:
    """Shared time-attention weights from all tasks' hidden sequences:
    concatenate along the hidden axis, flatten per batch row, map to one
    score per time step (dense layer with tanh), softmax over time.
    Consumes only hidden sequences — this is the coordinator's entire view."""
    if len(hidden_seqs) == 0:
        raise ContractError("central attention needs at least one task")
    b, steps, _ = hidden_seqs[0].shape
    for h in hidden_seqs:
        if h.shape[:2] != (b, steps):
            raise ShapeError(f"hidden sequence shapes disagree: {h.shape} vs {(b, steps)}")
    stacked = tt.concat(hidden_seqs, axis=2) if len(hidden_seqs) > 1 else hidden_seqs[0]
    flat = tt.reshape(stacked, (b, stacked.size // b))
    return tt.softmax(score_layer.forward(flat), axis=-1)


def central_attention(score_layer: DenseLayer, hidden_seqs, raw_inputs):
    """Shared time attention plus its application: re-weights each task's RAW
    inputs by the time weights. Returns (contexts, a), a of shape (batch, T)."""
    if len(hidden_seqs) != len(raw_inputs):
        raise ContractError("hidden sequences and inputs must pair up per task")
    b = raw_inputs[0].shape[0] if raw_inputs else 0
    steps = raw_inputs[0].shape[1] if raw_inputs else 0
    for x in raw_inputs:
        if x.shape[:2] != (b, steps):
            raise ShapeError(f"input window shapes disagree: {x.shape} vs {(b, steps)}")
    a = time_attention_scores(score_layer, hidden_seqs)
    contexts = [tt.ewmul(x, tt.repeat(a, x.shape[2], axis=2)) for x in raw_inputs]
    return contexts, a


def last_step(seq: Tensor) -> Tensor:
    """(batch, T, H) -> (batch, H) at the final time step."""
    b, steps, h = seq.shape
    return tt.reshape(tt.narrow(seq, 1, steps - 1, 1), (b, h))


class TaskModel:
    """All parameters private to one task; which fields exist depends on the
    variant (see MultiTaskModel.build)."""

    def __init__(self, kind: str, n_labels: int):
        if kind not in KINDS:
            raise ContractError(f"unknown task kind {kind!r}")
        self.kind = kind
        self.n_labels = n_labels
        self.sensor_attn: DenseLayer | None = None
        self.lstm1: LstmLayer | None = None
        self.lstm2: LstmLayer | None = None
        self.fc1: DenseLayer | None = None
        self.fc2: DenseLayer | None = None

    def head_activation(self) -> str:
        return "sigmoid" if self.kind == "classification" else "none"

    def layers(self):
        for name in ("sensor_attn", "lstm1", "lstm2", "fc1", "fc2"):
            layer = getattr(self, name)
            if layer is not None:
                yield name, layer


class SharedTrunk:
    """Parameters shared across tasks by the joint baselines."""

    def __init__(self):
        self.lstm: LstmLayer | None = None
        self.mlp: list[DenseLayer] = []


class MultiTaskModel:
    """One model over K tasks: per-task private parameters plus, depending on
    the variant, a shared time-attention score layer or a shared trunk."""

    def __init__(self, variant, window, n_features, hidden, tasks, central, trunk):
        self.variant = variant
        self.window = window
        self.n_features = n_features
        self.hidden = hidden
        self.tasks = tasks
        self.central = central  # DenseLayer (T*K*H -> T, tanh) or None
        self.trunk = trunk      # SharedTrunk or None

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def has_central(self) -> bool:
        return self.central is not None

    @classmethod
    def build(cls, variant, n_tasks, window, n_features, n_labels, hidden, kinds,
              seed, dropout=0.0, recurrent_dropout=0.0, l2=0.0):
        """Deterministically initialize a model. `n_labels` may be an int or a
        per-task list; `kinds` a string or per-task list."""
        variant = normalize_variant(variant)
        if n_tasks < 1:
            raise ContractError("need at least one task")
        labels = n_labels if isinstance(n_labels, (list, tuple)) else [n_labels] * n_tasks
        kinds = [kinds] * n_tasks if isinstance(kinds, str) else list(kinds)
        if len(labels) != n_tasks or len(kinds) != n_tasks:
            raise ContractError("per-task label counts / kinds must have K entries")

        lstm_kw = dict(dropout_rate=dropout, recurrent_dropout_rate=recurrent_dropout,
                       l2_coeff=l2)
        tasks = []
        for k in range(n_tasks):
            rng = np.random.default_rng([seed, k, 0])
            task = TaskModel(kinds[k], labels[k])
            if variant in ("fathom", "fathom_ca"):
                task.sensor_attn = DenseLayer.create(n_features, n_features, "none", rng)
            if variant in ("fathom", "fathom_sa", "fathom_ca", "s_lstm"):
                task.lstm1 = LstmLayer.create(n_features, hidden, rng, **lstm_kw)
            if variant in ("fathom", "fathom_sa"):
                task.lstm2 = LstmLayer.create(n_features, hidden, rng, **lstm_kw)
            elif variant == "fathom_ca":
                task.lstm2 = LstmLayer.create(hidden, hidden, rng, **lstm_kw)
            if variant in ("fathom", "fathom_sa", "fathom_ca", "s_lstm", "m_lstm"):
                task.fc1 = DenseLayer.create(hidden, hidden, "tanh", rng)
                task.fc2 = DenseLayer.create(hidden, labels[k], task.head_activation(), rng)
            elif variant == "lr":
                task.fc2 = DenseLayer.create(window * n_features, labels[k],
                                             task.head_activation(), rng)
            elif variant == "mlp_16_16":
                task.fc2 = DenseLayer.create(16, labels[k], task.head_activation(), rng)
            tasks.append(task)

        shared_rng = np.random.default_rng([seed, _SHARED_STREAM, 0])
        central = None
        trunk = None
        if variant in ("fathom", "fathom_sa"):
            central = DenseLayer.create(window * n_tasks * hidden, window, "tanh", shared_rng)
        elif variant == "m_lstm":
            trunk = SharedTrunk()
            trunk.lstm = LstmLayer.create(n_features, hidden, shared_rng, **lstm_kw)
        elif variant == "mlp_16_16":
            trunk = SharedTrunk()
            trunk.mlp = [
                DenseLayer.create(window * n_features, 16, "tanh", shared_rng),
                DenseLayer.create(16, 16, "tanh", shared_rng),
            ]
        return cls(variant, window, n_features, hidden, tasks, central, trunk)

    # -- parameter plumbing --------------------------------------------------

    def named_params(self):
        out = []
        for k, task in enumerate(self.tasks):
            for lname, layer in task.layers():
                out.extend(layer.params(f"task{k}.{lname}"))
        if self.central is not None:
            out.extend(self.central.params("central.score"))
        if self.trunk is not None:
            if self.trunk.lstm is not None:
                out.extend(self.trunk.lstm.params("trunk.lstm"))
            for i, layer in enumerate(self.trunk.mlp):
                out.extend(layer.params(f"trunk.mlp{i}"))
        return out

    def task_params(self, k: int):
        return [(n, p) for n, p in self.named_params() if n.startswith(f"task{k}.")]

    def central_params(self):
        return [(n, p) for n, p in self.named_params() if n.startswith("central.")]

    def l2_map(self):
        """L2 coefficients for the optimizer: LSTM gate/recurrent weights only."""
        out = {}
        for k, task in enumerate(self.tasks):
            for lname, layer in task.layers():
                if isinstance(layer, LstmLayer) and layer.l2_coeff > 0:
                    out.update({n: layer.l2_coeff
                                for n, _ in layer.regularized_params(f"task{k}.{lname}")})
        if self.trunk is not None and self.trunk.lstm is not None and self.trunk.lstm.l2_coeff > 0:
            out.update({n: self.trunk.lstm.l2_coeff
                        for n, _ in self.trunk.lstm.regularized_params("trunk.lstm")})
        return out

    # -- forward passes -------------------------------------------------------

    def task_pass1(self, k, x, mode="eval", rng=None, capture=None):
        """Per-task first stage: (optional) feature attention, then LSTM1.
        Returns the full hidden sequence (batch, T, hidden)."""
        task = self.tasks[k]
        c1 = x
        if task.sensor_attn is not None:
            c1, attn = sensor_attention(task.sensor_attn, x)
            if capture is not None:
                capture.sensor[k] = attn.data.copy()
        return task.lstm1.forward(c1, mode=mode, rng=rng)

    def central_scores(self, hidden_seqs, raw_inputs):
        return central_attention(self.central, hidden_seqs, raw_inputs)

    def task_pass2(self, k, context, mode="eval", rng=None):
        """Per-task second stage: LSTM2 over the time-attended context (or the
        first hidden sequence when there is no central attention), then heads."""
        task = self.tasks[k]
        z = task.lstm2.forward(context, mode=mode, rng=rng)
        return task.fc2.forward(task.fc1.forward(last_step(z)))

    def forward(self, batches, mode="eval", rngs=None, capture=None):
        """Monolithic forward over aligned per-task batches (list of K
        tensors, each (batch, T, D)); returns K prediction tensors."""
        variant = self.variant
        if len(batches) != self.n_tasks:
            raise ContractError(f"expected {self.n_tasks} task batches, got {len(batches)}")
        rngs = rngs or [None] * self.n_tasks

        if variant in ("fathom", "fathom_sa", "fathom_ca"):
            hs = [self.task_pass1(k, x, mode, rngs[k], capture)
                  for k, x in enumerate(batches)]
            if self.has_central:
                contexts, a = self.central_scores(hs, batches)
                if capture is not None:
                    capture.time = a.data.copy()
            else:
                contexts = hs
            return [self.task_pass2(k, c, mode, rngs[k]) for k, c in enumerate(contexts)]

        if variant in ("s_lstm", "m_lstm"):
            preds = []
            for k, x in enumerate(batches):
                lstm = self.tasks[k].lstm1 if variant == "s_lstm" else self.trunk.lstm
                z = lstm.forward(x, mode=mode, rng=rngs[k])
                task = self.tasks[k]
                preds.append(task.fc2.forward(task.fc1.forward(last_step(z))))
            return preds

        if variant == "lr":
            return [self.tasks[k].fc2.forward(_flatten_windows(x))
                    for k, x in enumerate(batches)]

        if variant == "mlp_16_16":
            preds = []
            for k, x in enumerate(batches):
                hid = _flatten_windows(x)
                for layer in self.trunk.mlp:
                    hid = layer.forward(hid)
                preds.append(self.tasks[k].fc2.forward(hid))
            return preds

        raise ContractError(f"unknown variant {variant!r}")


def _flatten_windows(x: Tensor) -> Tensor:
    b = x.shape[0]
    return tt.reshape(x, (b, x.size // b))


# ---------------------------------------------------------------------------
# losses


def loss_classification(pred: Tensor, labels: np.ndarray) -> Tensor:
    """Binary cross-entropy summed over labels, averaged over the batch."""
    labels = np.asarray(labels, dtype=np.float64)
    if not (np.isin(labels, (0.0, 1.0))).all():
        raise DataError("classification labels must be in {0, 1}")
    if labels.shape != pred.data.shape:
        raise ShapeError(f"prediction shape {pred.shape} != label shape {labels.shape}")
    n = pred.shape[0]
    return tt.ewmul(tt.sum_all(tt.binary_cross_entropy(pred, labels)), 1.0 / n)


def loss_regression(pred: Tensor, targets: np.ndarray) -> Tensor:
    """Mean absolute error: summed |error| scaled by 1/(labels * batch)."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != pred.data.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {targets.shape}")
    n, m = pred.shape
    diff = tt.absolute(tt.sub(pred, Tensor(targets)))
    return tt.ewmul(tt.sum_all(diff), 1.0 / (m * n))


def task_loss(kind: str, pred: Tensor, labels: np.ndarray) -> Tensor:
    if kind == "classification":
        return loss_classification(pred, labels)
    if kind == "regression":
        return loss_regression(pred, labels)
    raise ContractError(f"unknown task kind {kind!r}")
