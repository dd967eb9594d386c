"""GCN and GraphSAGE node classifiers with full-batch transductive training.

Both models stack three graph layers (batchnorm + activation + dropout
after each) and a dense classification head. GCN propagates with the
symmetric-normalized adjacency including self-loops; SAGE concatenates
each node's state with the mean of its neighbors' states (zero vector
for neighborless nodes) before the layer weight. Training is Adam on
masked cross-entropy with early stopping on validation loss and
best-checkpoint restore.
"""

from __future__ import annotations

import json
import copy
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graphgen import Graph
from .nncore import (AdamState, BatchNormState, Tape, Tensor, adam_step,
                     glorot_uniform)

N_CLASSES = 3


class TrainError(RuntimeError):
    pass


def _graph_to_coo(graph: Graph) -> tuple[np.ndarray, np.ndarray]:
    rows = np.repeat(np.arange(graph.n_nodes), graph.degrees())
    return rows, graph.indices


def normalize_adjacency(graph: Graph) -> sp.csr_matrix:
    """Symmetric-normalized adjacency with self-loops.

    Entry (u, v) is 1/sqrt(deg~(u) deg~(v)) for v in N(u) or v == u,
    where deg~ counts the self-loop.
    """
    n = graph.n_nodes
    rows, cols = _graph_to_coo(graph)
    rows = np.concatenate([rows, np.arange(n)])
    cols = np.concatenate([cols, np.arange(n)])
    deg = graph.degrees() + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def neighbor_mean_operator(graph: Graph) -> sp.csr_matrix:
    """Row-normalized adjacency (no self-loops); zero rows for isolated nodes."""
    n = graph.n_nodes
    rows, cols = _graph_to_coo(graph)
    deg = graph.degrees().astype(np.float64)
    inv = np.zeros(n)
    nz = deg > 0
    inv[nz] = 1.0 / deg[nz]
    vals = inv[rows]
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


@dataclass
class TrainConfig:
    lr: float = 0.01
    hidden: int = 64
    dropout: float = 0.3
    max_epochs: int = 100
    patience: int = 15
    seed: int = 0

    def validate(self):
        if not 1e-4 <= self.lr <= 1e-1:
            raise ValueError(f"lr {self.lr} outside [1e-4, 1e-1]")
        if not 16 <= self.hidden <= 256:
            raise ValueError(f"hidden {self.hidden} outside [16, 256]")
        if not 0.1 <= self.dropout <= 0.5:
            raise ValueError(f"dropout {self.dropout} outside [0.1, 0.5]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_acc"]
        for i, (tl, vl, va) in enumerate(zip(self.train_loss, self.val_loss, self.val_acc), 1):
            lines.append(f"{i},{tl!r},{vl!r},{va!r}")
        return "\n".join(lines) + "\n"


class GcnModel:
    """Three graph-convolution layers plus a dense head (widths D-h-h-h-3)."""

    kind = "gcn"

    def __init__(self, in_dim: int, hidden: int, dropout: float, seed: int):
        rng = np.random.default_rng(seed)
        dims = [(in_dim, hidden), (hidden, hidden), (hidden, hidden)]
        self.weights = [Tensor(glorot_uniform(rng, a, b), name=f"gcn.w{i + 1}")
                        for i, (a, b) in enumerate(dims)]
        self.bns = [BatchNormState.create(hidden) for _ in dims]
        self.head_w = Tensor(glorot_uniform(rng, hidden, N_CLASSES), name="gcn.head_w")
        self.head_b = Tensor(np.zeros((1, N_CLASSES)), name="gcn.head_b")
        self.dropout = dropout
        self.in_dim = in_dim
        self.hidden = hidden

    def parameters(self) -> list[Tensor]:
        params = list(self.weights) + [self.head_w, self.head_b]
        for bn in self.bns:
            params += [bn.gamma, bn.beta]
        return params

    def forward(self, tape: Tape, adj: sp.csr_matrix, x: Tensor, mode: str,
                rng: np.random.Generator) -> Tensor:
        h = x
        for w, bn in zip(self.weights, self.bns):
            h = tape.spmm(adj, tape.matmul(h, w))
            h = tape.batchnorm(h, bn, mode)
            h = tape.leaky_relu(h, 0.01)
            h = tape.dropout(h, self.dropout, mode, rng)
        return tape.add_bias(tape.matmul(h, self.head_w), self.head_b)

    # checkpoint plumbing -------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, w in enumerate(self.weights):
            out[f"w{i + 1}"] = w.values
        out["head_w"] = self.head_w.values
        out["head_b"] = self.head_b.values
        for i, bn in enumerate(self.bns):
            out[f"bn{i + 1}.gamma"] = bn.gamma.values
            out[f"bn{i + 1}.beta"] = bn.beta.values
            out[f"bn{i + 1}.running_mean"] = bn.running_mean
            out[f"bn{i + 1}.running_var"] = bn.running_var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for i, w in enumerate(self.weights):
            w.values = np.array(arrays[f"w{i + 1}"], dtype=np.float64)
        self.head_w.values = np.array(arrays["head_w"], dtype=np.float64)
        self.head_b.values = np.array(arrays["head_b"], dtype=np.float64)
        for i, bn in enumerate(self.bns):
            bn.gamma.values = np.array(arrays[f"bn{i + 1}.gamma"], dtype=np.float64)
            bn.beta.values = np.array(arrays[f"bn{i + 1}.beta"], dtype=np.float64)
            bn.running_mean = np.array(arrays[f"bn{i + 1}.running_mean"], dtype=np.float64).reshape(-1)
            bn.running_var = np.array(arrays[f"bn{i + 1}.running_var"], dtype=np.float64).reshape(-1)


class SageModel:
    """Three concat-mean layers plus a dense head; W^(l) maps 2*in -> out."""

    kind = "sage"

    def __init__(self, in_dim: int, hidden: int, dropout: float, seed: int):
        rng = np.random.default_rng(seed)
        dims = [(2 * in_dim, hidden), (2 * hidden, hidden), (2 * hidden, hidden)]
        self.weights = [Tensor(glorot_uniform(rng, a, b), name=f"sage.w{i + 1}")
                        for i, (a, b) in enumerate(dims)]
        self.bns = [BatchNormState.create(hidden) for _ in dims]
        self.head_w = Tensor(glorot_uniform(rng, hidden, N_CLASSES), name="sage.head_w")
        self.head_b = Tensor(np.zeros((1, N_CLASSES)), name="sage.head_b")
        self.dropout = dropout
        self.in_dim = in_dim
        self.hidden = hidden

    parameters = GcnModel.parameters
    state_arrays = GcnModel.state_arrays
    load_state_arrays = GcnModel.load_state_arrays

    def forward(self, tape: Tape, mean_op: sp.csr_matrix, x: Tensor, mode: str,
                rng: np.random.Generator) -> Tensor:
        h = x
        for w, bn in zip(self.weights, self.bns):
            agg = tape.neighbor_mean(mean_op, h)
            h = tape.matmul(tape.concat_cols(h, agg), w)
            h = tape.batchnorm(h, bn, mode)
            h = tape.relu(h)
            h = tape.dropout(h, self.dropout, mode, rng)
        return tape.add_bias(tape.matmul(h, self.head_w), self.head_b)


def build_model(kind: str, in_dim: int, config: TrainConfig):
    if kind == "gcn":
        return GcnModel(in_dim, config.hidden, config.dropout, config.seed)
    if kind == "sage":
        return SageModel(in_dim, config.hidden, config.dropout, config.seed)
    raise ValueError(f"unknown model kind {kind!r}")


def model_operator(kind: str, graph: Graph) -> sp.csr_matrix:
    return normalize_adjacency(graph) if kind == "gcn" else neighbor_mean_operator(graph)


class EarlyStopper:
    """Stop after `patience` consecutive epochs without val-loss improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def train(kind: str, graph: Graph, x: np.ndarray, labels: np.ndarray,
          masks, config: TrainConfig):
    """Full-batch training; returns (model, TrainHistory) at the best epoch."""
    config.validate()
    operator = model_operator(kind, graph)
    model = build_model(kind, x.shape[1], config)
    params = model.parameters()
    adam = AdamState.create(params)
    rng = np.random.default_rng(config.seed + 1)
    xt = Tensor(np.asarray(x, dtype=np.float64), name="features")
    labels = np.asarray(labels, dtype=np.int64)

    history = TrainHistory()
    stopper = EarlyStopper(config.patience)
    best_state = None
    for epoch in range(1, config.max_epochs + 1):
        tape = Tape()
        logits = model.forward(tape, operator, xt, "train", rng)
        loss = tape.cross_entropy(logits, labels, masks.train)
        if not np.isfinite(loss.item()):
            raise TrainError(f"non-finite training loss at epoch {epoch} (lr={config.lr})")
        tape.backward(loss)
        adam_step(params, adam, config.lr)

        eval_tape = Tape()
        eval_logits = model.forward(eval_tape, operator, xt, "eval", rng)
        val_loss = eval_tape.cross_entropy(eval_logits, labels, masks.val).item()
        pred = eval_logits.values.argmax(axis=1)
        val_acc = float((pred[masks.val] == labels[masks.val]).mean())

        history.train_loss.append(loss.item())
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)

        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best_state = copy.deepcopy(model.state_arrays())
        if stop:
            history.stop_reason = "early_stopping"
            break
    else:
        history.stop_reason = "max_epochs"
    history.best_epoch = stopper.best_epoch
    if best_state is not None:
        model.load_state_arrays(best_state)
    return model, history


def predict(model, graph: Graph, x: np.ndarray) -> np.ndarray:
    operator = model_operator(model.kind, graph)
    tape = Tape()
    logits = model.forward(tape, operator, Tensor(x), "eval", np.random.default_rng(0))
    return logits.values.argmax(axis=1)


# -- random hyperparameter search -----------------------------------------


@dataclass
class Trial:
    index: int
    config: TrainConfig
    val_loss: float
    val_acc: float
    best_epoch: int


def sample_config(rng: np.random.Generator, max_epochs: int = 100,
                  patience: int = 15, seed: int = 0) -> TrainConfig:
    return TrainConfig(
        lr=float(10.0 ** rng.uniform(-4.0, -1.0)),
        hidden=int(rng.integers(16, 257)),
        dropout=float(rng.uniform(0.1, 0.5)),
        max_epochs=max_epochs,
        patience=patience,
        seed=seed,
    )


def random_search(kind: str, graph: Graph, x: np.ndarray, labels: np.ndarray,
                  masks, n_trials: int = 20, seed: int = 0,
                  max_epochs: int = 100, patience: int = 15):
    """Sample n_trials configs, train each, keep the lowest validation loss.

    Ties go to the earlier trial. Each trial trains with a seed derived
    from the master seed and trial index.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    trials: list[Trial] = []
    best = None
    for t in range(n_trials):
        config = sample_config(rng, max_epochs=max_epochs, patience=patience,
                               seed=int((seed * 100003 + 7919 * t + 1) % (2**31)))
        model, history = train(kind, graph, x, labels, masks, config)
        i = history.best_epoch - 1
        trial = Trial(index=t, config=config, val_loss=history.val_loss[i],
                      val_acc=history.val_acc[i], best_epoch=history.best_epoch)
        trials.append(trial)
        if best is None or trial.val_loss < best[0].val_loss:
            best = (trial, model, history)
    best_trial, best_model, best_history = best
    return best_trial, best_model, best_history, trials


# -- checkpoint io ----------------------------------------------------------


def save_checkpoint(model, path):
    arrays = model.state_arrays()
    doc = {
        "kind": model.kind,
        "in_dim": model.in_dim,
        "hidden": model.hidden,
        "dropout": model.dropout,
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "arrays": {k: v.reshape(-1).tolist() for k, v in arrays.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    config = TrainConfig(hidden=doc["hidden"], dropout=max(doc["dropout"], 0.1))
    model = build_model(doc["kind"], doc["in_dim"], config)
    model.dropout = doc["dropout"]
    arrays = {
        k: np.array(v, dtype=np.float64).reshape(doc["shapes"][k])
        for k, v in doc["arrays"].items()
    }
    model.load_state_arrays(arrays)
    return model
