"""Simulated synchronous federated training.

K task nodes hold private data and private parameters; a coordinator owns
only the time-attention score layer. One round realizes:

  1. each node: feature attention + LSTM1 on its private batch, then sends
     its hidden sequence to the coordinator          (node -> coord)
  2. coordinator: time attention weights from the concatenated hidden
     sequences, broadcast back                       (coord -> node)
  3. each node: re-weights its raw batch, LSTM2 + heads + loss, local
     backward; sends its gradient w.r.t. the received attention weights --
     its contribution to the coordinator's parameter gradients
                                                     (node -> coord)
  4. coordinator: backward through its own graph, yielding its parameter
     gradients and each node's hidden-sequence gradient, sent back so nodes
     can finish their first-stage gradients          (coord -> node)
  5. everyone applies Adam locally.

Raw features and labels never leave a node; every cross-boundary payload is
recorded in a message log so tests can audit that claim byte by byte.
The partitioned computation is numerically the monolithic one: gradients
match a single-graph model on the same parameters and batch.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .errors import ConfigError, StragglerError
from .layers import Adam
from .metrics import AttentionRecord, classification_metrics, smape
from .model import AttentionCapture, MultiTaskModel, task_loss, time_attention_scores
from .tensor import Tape, Tensor

DROPOUT_STREAM = 1  # rng lane per node: [seed, node_index, DROPOUT_STREAM]
EVAL_CHUNK = 1024


def node_rng(seed: int, node_index: int) -> np.random.Generator:
    """Per-node stream: adding a node never perturbs existing nodes' draws."""
    return np.random.default_rng([seed, node_index, DROPOUT_STREAM])


@dataclass
class RoundMessage:
    round: int
    direction: str  # "node_to_coord" | "coord_to_node"
    node_id: str
    kind: str       # hidden_seq | time_attention | central_grad_contribution | hidden_seq_grad
    shape: tuple
    n_bytes: int
    payload: np.ndarray | None = None  # retained only when auditing


class MessageLog:
    """Capture of every cross-boundary message; shapes and sizes always,
    payload bytes only when `retain_payloads` (used by locality audits)."""

    def __init__(self, retain_payloads: bool = False):
        self.retain_payloads = retain_payloads
        self.entries: list[RoundMessage] = []

    def record(self, round_index, direction, node_id, kind, payload: np.ndarray):
        self.entries.append(RoundMessage(
            round=round_index,
            direction=direction,
            node_id=node_id,
            kind=kind,
            shape=tuple(payload.shape),
            n_bytes=payload.nbytes,
            payload=payload.copy() if self.retain_payloads else None,
        ))

    def coordinator_bound_payloads(self):
        if not self.retain_payloads:
            raise ConfigError("message log was not retaining payloads")
        return [m.payload for m in self.entries if m.direction == "node_to_coord"]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for m in self.entries:
                fh.write(json.dumps({
                    "round": m.round,
                    "direction": m.direction,
                    "node": m.node_id,
                    "kind": m.kind,
                    "payload_shape": list(m.shape),
                    "bytes": m.n_bytes,
                }, sort_keys=True) + "\n")


class TaskNode:
    """One task's private world: its windowed splits, its parameters, its
    optimizer state, and its own rng stream."""

    def __init__(self, index, splits, task_model, named_params, l2_map, cfg_lr, seed):
        self.k = index
        self.node_id = splits.task_id
        self.data = splits
        self.task = task_model
        self.adam = Adam(named_params, lr=cfg_lr,
                         l2={n: c for n, c in l2_map.items() if n in dict(named_params)})
        self.rng = node_rng(seed, index)
        # per-round transients
        self.tape = None
        self.x_in = None
        self.h = None
        self.a_in = None
        self.loss_value = None


class Coordinator:
    """Holds only the shared time-attention parameters."""

    def __init__(self, score_layer, named_params, cfg_lr):
        self.score = score_layer
        self.adam = Adam(named_params, lr=cfg_lr)
        self.round = 0
        self.tape = None
        self.h_in = None
        self.attention = None


class FederatedTrainer:
    """Synchronous rounds over per-node compute graphs with explicit value
    messages; used for the attention variants (the coordinator is absent
    when the variant has no central attention)."""

    def __init__(self, model: MultiTaskModel, splits, cfg, log: MessageLog | None = None):
        self.model = model
        self.cfg = cfg
        self.log = log if log is not None else MessageLog()
        l2 = model.l2_map()
        self.nodes = [
            TaskNode(k, sp, model.tasks[k], model.task_params(k), l2, cfg.lr, cfg.seed)
            for k, sp in enumerate(splits)
        ]
        self.coord = None
        if model.has_central:
            self.coord = Coordinator(model.central, model.central_params(), cfg.lr)
        workers = cfg.workers or len(self.nodes)
        self._pool = ThreadPoolExecutor(max_workers=max(1, min(workers, len(self.nodes)))) \
            if workers > 1 and len(self.nodes) > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _map(self, fn):
        if self._pool is None:
            return [fn(n) for n in self.nodes]
        return list(self._pool.map(fn, self.nodes))

    def round_batches(self, perms, round_index, size, offset):
        """Aligned batches: every node furnishes `size` windows, cycling its
        own permutation when shorter than the schedule demands."""
        out = []
        for node in self.nodes:
            n = node.data.train.n_windows
            if n == 0:
                raise StragglerError(node.node_id)
            pos = np.arange(offset, offset + size)
            idx = perms[node.k][pos % n]
            out.append((node.data.train.X[idx], node.data.train.Y[idx]))
        return out

    def train_round(self, batches, apply_updates: bool = True) -> list:
        """One synchronous round over aligned per-node (X, Y) batches;
        returns the per-task losses. With apply_updates=False the gradients
        are left in place for inspection and no parameter moves."""
        n_tasks = len(self.nodes)
        r = self.coord.round if self.coord is not None else 0
        scale = 1.0 / n_tasks

        def pass1(node):
            x, _ = batches[node.k]
            node.tape = Tape()
            with node.tape:
                node.x_in = Tensor(x)
                node.h = self.model.task_pass1(node.k, node.x_in, "train", node.rng)
            return node.h.data

        hidden = self._map(pass1)

        attention_values = None
        if self.coord is not None:
            for node, h in zip(self.nodes, hidden):
                self.log.record(r, "node_to_coord", node.node_id, "hidden_seq", h)
            self.coord.tape = Tape()
            with self.coord.tape:
                self.coord.h_in = [Tensor(h.copy(), requires_grad=True) for h in hidden]
                self.coord.attention = time_attention_scores(self.coord.score, self.coord.h_in)
            attention_values = self.coord.attention.data
            for node in self.nodes:
                self.log.record(r, "coord_to_node", node.node_id, "time_attention",
                                attention_values)

        def pass2(node):
            x, y = batches[node.k]
            with node.tape:
                if self.coord is not None:
                    node.a_in = Tensor(attention_values.copy(), requires_grad=True)
                    context = tt.ewmul(node.x_in,
                                       tt.repeat(node.a_in, x.shape[2], axis=2))
                else:
                    context = node.h
                pred = self.model.task_pass2(node.k, context, "train", node.rng)
                loss = task_loss(node.task.kind, pred, y)
                node.loss_value = loss.item()
                tt.backward(tt.ewmul(loss, scale))
            return node.a_in.grad if self.coord is not None else None

        attn_grads = self._map(pass2)

        if self.coord is not None:
            for node, g in zip(self.nodes, attn_grads):
                # the node's contribution to the coordinator's parameter
                # gradients, expressed at the attention-output boundary
                self.log.record(r, "node_to_coord", node.node_id,
                                "central_grad_contribution", g)
            total = attn_grads[0]
            for g in attn_grads[1:]:
                total = total + g
            self.coord.tape.backward(self.coord.attention, seed=total)
            hidden_grads = [h.grad for h in self.coord.h_in]
            for node, g in zip(self.nodes, hidden_grads):
                self.log.record(r, "coord_to_node", node.node_id, "hidden_seq_grad", g)

            def finish_pass1(node):
                with node.tape:
                    tt.backward_from(node.h, hidden_grads[node.k])

            self._map(finish_pass1)

        if apply_updates:
            def apply_update(node):
                node.adam.step()
                node.adam.zero_grad()
                node.tape = None

            self._map(apply_update)
            if self.coord is not None:
                self.coord.adam.step()
                self.coord.adam.zero_grad()
                self.coord.tape = None
        if self.coord is not None:
            self.coord.round += 1
        return [node.loss_value for node in self.nodes]

    def epoch_permutations(self):
        return [node.rng.permutation(node.data.train.n_windows) for node in self.nodes]


class JointTrainer:
    """Monolithic counterpart: one graph, one backward on the task-averaged
    loss. Used for the shared-trunk baselines and as the reference the
    federated trainer is measured against."""

    def __init__(self, model: MultiTaskModel, splits, cfg, log: MessageLog | None = None):
        self.model = model
        self.cfg = cfg
        self.nodes_data = splits
        self.log = log if log is not None else MessageLog()
        self.adam = Adam(model.named_params(), lr=cfg.lr, l2=model.l2_map())
        self.rngs = [node_rng(cfg.seed, k) for k in range(model.n_tasks)]

    def close(self):
        pass

    def round_batches(self, perms, round_index, size, offset):
        out = []
        for k, sp in enumerate(self.nodes_data):
            n = sp.train.n_windows
            if n == 0:
                raise StragglerError(sp.task_id)
            pos = np.arange(offset, offset + size)
            idx = perms[k][pos % n]
            out.append((sp.train.X[idx], sp.train.Y[idx]))
        return out

    def train_round(self, batches, apply_updates: bool = True) -> list:
        model = self.model
        losses = []
        with Tape():
            xs = [Tensor(x) for x, _ in batches]
            preds = model.forward(xs, mode="train", rngs=self.rngs)
            total = None
            for k, pred in enumerate(preds):
                lk = task_loss(model.tasks[k].kind, pred, batches[k][1])
                losses.append(lk.item())
                total = lk if total is None else tt.add(total, lk)
            tt.backward(tt.ewmul(total, 1.0 / model.n_tasks))
        if apply_updates:
            self.adam.step()
            self.adam.zero_grad()
        return losses

    def epoch_permutations(self):
        return [rng.permutation(sp.train.n_windows)
                for rng, sp in zip(self.rngs, self.nodes_data)]


# ---------------------------------------------------------------------------
# evaluation


def evaluate_losses(model: MultiTaskModel, splits, which: str) -> list:
    """Per-task loss on a full split (eval mode, no graph)."""
    preds = predict(model, splits, which)
    out = []
    for k, sp in enumerate(splits):
        y = getattr(sp, which).Y
        out.append(task_loss(model.tasks[k].kind, Tensor(preds[k]), y).item())
    return out


def predict(model: MultiTaskModel, splits, which: str, capture=None) -> list:
    """Eval-mode predictions for a full split, chunked to bound memory.

    Forward passes need aligned batches across tasks (the shared attention
    consumes all K hidden sequences), so shorter tasks cycle their windows
    for context; only each task's own first n_k predictions are kept."""
    counts = [getattr(sp, which).n_windows for sp in splits]
    n_max = max(counts)
    outs = [[] for _ in splits]
    for lo in range(0, n_max, EVAL_CHUNK):
        hi = min(n_max, lo + EVAL_CHUNK)
        pos = np.arange(lo, hi)
        xs = [Tensor(getattr(sp, which).X[pos % counts[k]])
              for k, sp in enumerate(splits)]
        preds = model.forward(xs, mode="eval", capture=capture)
        for k, p in enumerate(preds):
            outs[k].append(p.data)
    return [np.concatenate(chunks)[:counts[k]] for k, chunks in enumerate(outs)]


def split_metrics(model: MultiTaskModel, splits, which: str = "test") -> list:
    """Per-task metric dicts on a split."""
    preds = predict(model, splits, which)
    out = []
    for k, sp in enumerate(splits):
        ds = getattr(sp, which)
        entry = {"task_id": sp.task_id, "kind": sp.kind,
                 "loss": task_loss(sp.kind, Tensor(preds[k]), ds.Y).item()}
        if sp.kind == "classification":
            rep = classification_metrics(preds[k], ds.Y)
            entry.update(precision=rep.precision, recall=rep.recall,
                         f1=rep.f1, ba=rep.ba)
        else:
            entry["smape"] = smape(preds[k], ds.Y)
        out.append(entry)
    return out


def macro_metrics(per_task: list) -> dict:
    keys = [k for k in per_task[0] if isinstance(per_task[0][k], float)]
    return {k: float(np.mean([t[k] for t in per_task]))
            for k in keys if all(k in t for t in per_task)}


def collect_attention_records(model: MultiTaskModel, splits, which: str = "test",
                              max_windows: int = 8) -> list:
    """Forward over the first max_windows of a split (aligned across tasks)
    and turn the captured attention into per-window records."""
    n = min(min(getattr(sp, which).n_windows for sp in splits), max_windows)
    if n == 0:
        raise ConfigError(f"no {which} windows to export")
    xs = [Tensor(getattr(sp, which).X[:n]) for sp in splits]
    cap = AttentionCapture()
    model.forward(xs, mode="eval", capture=cap)
    records = []
    for k, sp in enumerate(splits):
        sens = cap.sensor.get(k)
        for i in range(n):
            records.append(AttentionRecord(
                task_id=sp.task_id,
                window_index=i,
                sensor_attention=None if sens is None else sens[i],
                time_attention=None if cap.time is None else cap.time[i],
                feature_names=list(getattr(sp, which).feature_names),
            ))
    return records


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class TrainingReport:
    config: dict
    variant: str
    task_ids: list
    per_task: list
    macro: dict
    best_epoch: int
    epochs_run: int
    val_history: list
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "variant": self.variant,
            "task_ids": self.task_ids,
            "per_task": self.per_task,
            "macro": self.macro,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "val_history": self.val_history,
            "wall_time_s": self.wall_time_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


@dataclass
class FitResult:
    report: TrainingReport
    model: MultiTaskModel
    log: MessageLog
    best_params: dict = field(default_factory=dict)


def build_model_for_splits(splits, cfg) -> MultiTaskModel:
    windows = {sp.train.X.shape[1] for sp in splits}
    feats = {sp.train.X.shape[2] for sp in splits}
    if len(windows) != 1 or len(feats) != 1:
        raise ConfigError(
            f"tasks disagree on window/feature dims: T={sorted(windows)} D={sorted(feats)}")
    return MultiTaskModel.build(
        cfg.variant,
        n_tasks=len(splits),
        window=windows.pop(),
        n_features=feats.pop(),
        n_labels=[sp.train.Y.shape[1] for sp in splits],
        hidden=cfg.hidden,
        kinds=[sp.kind for sp in splits],
        seed=cfg.seed,
        dropout=cfg.dropout,
        recurrent_dropout=cfg.recurrent_dropout,
        l2=cfg.l2,
    )


def fit(splits, cfg, log: MessageLog | None = None, monolithic: bool = False) -> FitResult:
    """Train with epoch-level early stopping on the task-averaged validation
    loss; restores the best epoch's parameters and reports test metrics.

    The trainer is federated for the attention variants unless `monolithic`
    forces the single-graph reference; baselines always train jointly."""
    t0 = time.perf_counter()
    for sp in splits:
        for which in ("train", "val", "test"):
            if getattr(sp, which).n_windows == 0:
                raise ConfigError(f"{sp.task_id}: empty {which} split")

    model = build_model_for_splits(splits, cfg)
    federated = model.variant in ("fathom", "fathom_sa", "fathom_ca") and not monolithic
    trainer_cls = FederatedTrainer if federated else JointTrainer
    trainer = trainer_cls(model, splits, cfg, log=log)

    n_max = max(sp.train.n_windows for sp in splits)
    best_val = np.inf
    best_epoch = -1
    best_params = {}
    counter = 0
    val_history = []
    epochs_run = 0
    try:
        for epoch in range(cfg.max_epochs):
            perms = trainer.epoch_permutations()
            offset = 0
            while offset < n_max:
                size = min(cfg.batch, n_max - offset)
                trainer.train_round(trainer.round_batches(perms, epoch, size, offset))
                offset += size
            epochs_run = epoch + 1

            val = float(np.mean(evaluate_losses(model, splits, "val")))
            val_history.append(val)
            if val < best_val:
                best_val = val
                best_epoch = epoch
                best_params = {n: p.data.copy() for n, p in model.named_params()}
                counter = 0
            else:
                counter += 1
                if counter >= max(1, cfg.patience):
                    break
    finally:
        trainer.close()

    for name, p in model.named_params():
        p.data = best_params[name].copy()

    per_task = split_metrics(model, splits, "test")
    report = TrainingReport(
        config=cfg.to_dict(),
        variant=model.variant,
        task_ids=[sp.task_id for sp in splits],
        per_task=per_task,
        macro=macro_metrics(per_task),
        best_epoch=best_epoch,
        epochs_run=epochs_run,
        val_history=val_history,
        wall_time_s=time.perf_counter() - t0,
    )
    return FitResult(report=report, model=model, log=trainer.log, best_params=best_params)
