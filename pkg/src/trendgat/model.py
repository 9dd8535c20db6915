"""Full network assembly, training loop, prediction and persistence.

The forward pass projects each stock's lag window to the hidden width,
applies a learnable per-channel rectifier, runs the stacked dual-stream
blocks over the snapshot's graph and maps the parallel stream to one
logit pair per forecast step.  Each optimizer step uses the full stock
set of one time step (no node sampling); an epoch sweeps all training
time steps in chronological order.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import energy_graph as eg
from . import gnn_blocks as gb
from . import market_data as md
from . import metrics as mt
from .errors import (
    ConfigError,
    FormatError,
    LabelError,
    NumericError,
    TrainingDivergedError,
)

MAGIC = b"EPGT"
FORMAT_VERSION = 1

# documented hyperparameter search ranges; parse-time validation cites these
RANGES = {
    "tau": (7, 27),
    "k": (0.02, 2.0),
    "s": (0.25, 0.85),
    "heads": (2, 30),
    "layers": (2, 6),
    "lr": (1e-4, 2e-3),
    "wd": (1e-4, 1e-3),
}


@dataclass
class ModelConfig:
    tau: int = 14
    k: float = 0.5
    s: float = 0.4
    f: int = 4
    phi: int = 1
    alpha: int = 2
    hidden: int = 16
    heads: int = 2
    layers: int = 2
    lr: float = 1e-3
    wd: float = 5e-4
    epochs: int = 800
    seed: int = 0
    parallel_attention: bool = True
    grad_clip: float | None = None

    def validate(self, strict_ranges: bool = True) -> None:
        if self.alpha != 2:
            raise ConfigError(f"alpha must be 2, got {self.alpha}")
        if self.phi < 1 or self.epochs < 1 or self.hidden < 1:
            raise ConfigError("phi, epochs and hidden must be positive")
        if not strict_ranges:
            return
        for key, (lo, hi) in RANGES.items():
            val = getattr(self, key)
            if not lo <= val <= hi:
                raise ConfigError(f"{key}={val} outside the permitted range [{lo}, {hi}]")

    @property
    def input_width(self) -> int:
        return self.tau * self.f

    @property
    def output_width(self) -> int:
        return self.phi * self.alpha


@dataclass
class ModelParams:
    config: ModelConfig
    w_in: ad.Value                    # (tau*f) x d
    prelu_in: ad.Value                # 1 x d learnable rectifier slopes
    blocks: list[gb.BlockParams]
    w_out: ad.Value                   # d x (phi*alpha)

    def named(self) -> list[tuple[str, ad.Value]]:
        out = [("w_in", self.w_in), ("prelu_in", self.prelu_in)]
        for i, block in enumerate(self.blocks):
            out += gb.block_parameters(block, f"block{i}")
        out.append(("w_out", self.w_out))
        return out

    def parameter_count(self) -> int:
        return sum(v.data.size for _, v in self.named())

    def clone(self) -> "ModelParams":
        cloned = copy.copy(self)
        cloned.config = copy.copy(self.config)
        cloned.w_in = ad.Value(self.w_in.data.copy())
        cloned.prelu_in = ad.Value(self.prelu_in.data.copy())
        cloned.w_out = ad.Value(self.w_out.data.copy())
        cloned.blocks = []
        for block in self.blocks:
            heads = None
            if block.heads is not None:
                heads = [tuple(ad.Value(w.data.copy()) for w in head) for head in block.heads]
            cloned.blocks.append(gb.BlockParams(
                gat=gb.GatLayerParams(
                    w_left=ad.Value(block.gat.w_left.data.copy()),
                    w_right=ad.Value(block.gat.w_right.data.copy()),
                    attn=ad.Value(block.gat.attn.data.copy()),
                    edge_bias=ad.Value(block.gat.edge_bias.data.copy()),
                    leaky_slope=block.gat.leaky_slope,
                ),
                w_skip=ad.Value(block.w_skip.data.copy()),
                heads=heads,
                w_merge=ad.Value(block.w_merge.data.copy()) if block.w_merge is not None else None,
            ))
        return cloned


@dataclass
class Sample:
    """One training/evaluation unit: a graph snapshot plus its labels."""

    snapshot: eg.GraphSnapshot
    labels: np.ndarray


@dataclass
class OptimizerState:
    """Per-parameter first/second moment accumulators for AdamW."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: dict = field(default_factory=dict)   # name -> (m, v)


def init_model(config: ModelConfig) -> ModelParams:
    config.validate(strict_ranges=False)
    d, seed = config.hidden, config.seed
    blocks = [gb.init_block(d, config.heads, seed, name=f"block{i}",
                            parallel=config.parallel_attention)
              for i in range(config.layers)]
    return ModelParams(
        config=copy.copy(config),
        w_in=gb.xavier(seed, "w_in", config.input_width, d),
        prelu_in=ad.Value(np.full((1, d), gb.PRELU_INIT)),
        blocks=blocks,
        w_out=gb.xavier(seed, "w_out", d, config.output_width),
    )


def forward(params: ModelParams, snapshot: eg.GraphSnapshot) -> ad.Value:
    """Logits, one (phi*alpha)-wide row per stock."""
    cfg = params.config
    if snapshot.features.shape[1] != cfg.input_width:
        raise ConfigError(
            f"forward: features width {snapshot.features.shape[1]} != tau*f = {cfg.input_width}")
    x = ad.const(snapshot.features)
    h0 = ad.prelu(ad.matmul(x, params.w_in), params.prelu_in)
    state = gb.BlockState(h=h0, hp=h0)
    for block in params.blocks:
        if cfg.parallel_attention:
            state = gb.parallel_block(state, snapshot.adjacency, block)
        else:
            state = gb.plain_block(state, snapshot.adjacency, block)
    return ad.matmul(state.hp, params.w_out)


def loss(logits: ad.Value, labels: np.ndarray, alpha: int = 2) -> ad.Value:
    """Mean over stocks of the summed per-step cross-entropies, each
    alpha-wide logit block softmaxed independently."""
    labels = np.asarray(labels)
    if labels.shape != logits.data.shape:
        raise LabelError(f"loss: labels {labels.shape} vs logits {logits.data.shape}")
    n, width = labels.shape
    if width % alpha != 0:
        raise LabelError(f"loss: width {width} is not a multiple of alpha={alpha}")
    total = None
    for start in range(0, width, alpha):
        block = ad.cross_entropy_with_logits(
            ad.slice_cols(logits, start, start + alpha), labels[:, start:start + alpha])
        total = block if total is None else ad.add(total, block)
    return ad.smul(total, 1.0 / n)


def adamw_step(params: ModelParams, opt: OptimizerState, lr: float, wd: float,
               named: list[tuple[str, ad.Value]] | None = None) -> None:
    """Bias-corrected Adam update with decoupled weight decay (decay acts on
    the pre-update parameter).  ``named`` lets callers reuse the parameter
    listing across steps."""
    opt.step += 1
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    for name, value in (params.named() if named is None else named):
        g = value.grad
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter {name}")
        state = opt.moments.get(name)
        if state is None:
            state = (np.zeros_like(g), np.zeros_like(g))
        m, v = state
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * (g * g)
        opt.moments[name] = (m, v)
        value.data -= lr * ((m / c1) / (np.sqrt(v / c2) + opt.eps) + wd * value.data)


@dataclass
class TrainResult:
    params: ModelParams          # best-validation checkpoint
    final_params: ModelParams    # parameters after the last epoch
    history: list[dict]
    best_epoch: int
    best_val_acc: float


def samples_from_panel(panel: md.IndicatorPanel, ts, config: ModelConfig) -> list[Sample]:
    """Window, label and graph every time step in ts (adjacency depends only
    on the inputs, so it is built once and reused across epochs)."""
    out = []
    for t in ts:
        ws = md.build_sample(panel, t, config.tau, config.phi, config.alpha)
        snap = eg.snapshot(t, ws.features, config.k, config.tau, config.s)
        out.append(Sample(snapshot=snap, labels=ws.labels))
    return out


def build_datasets(panel: md.IndicatorPanel, config: ModelConfig,
                   ratios: tuple[int, int, int] = (457, 63, 261)) -> dict[str, list[Sample]]:
    """Split chronologically, normalize with train-only statistics, and
    materialize samples for all three splits."""
    splits = md.split_periods(panel, ratios, config.tau, config.phi)
    normalized = md.normalize(panel, splits)
    return {
        "train": samples_from_panel(normalized, splits.train, config),
        "validation": samples_from_panel(normalized, splits.validation, config),
        "test": samples_from_panel(normalized, splits.test, config),
    }


def train(train_samples: list[Sample], val_samples: list[Sample], config: ModelConfig,
          stop_at_val_acc: float | None = None) -> TrainResult:
    """Train with one optimizer step per time step (all stocks at once),
    sweeping the training period chronologically each epoch; keeps the
    parameters of the best validation-accuracy epoch.

    ``stop_at_val_acc`` ends the run early once the best validation
    accuracy reaches the target (used by budgeted acceptance runs).
    """
    if not train_samples:
        raise ConfigError("train: need at least one training sample")
    params = init_model(config)
    opt = OptimizerState()
    history: list[dict] = []
    best = -1.0
    best_epoch = -1
    best_params = params.clone()
    scale = 1.0 / len(train_samples)

    named = params.named()
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for sample in train_samples:
            for _, value in named:
                value.zero_grad()
            with ad.Tape() as tape:
                out = forward(params, sample.snapshot)
                sample_loss = loss(out, sample.labels, config.alpha)
                tape.backward(sample_loss)
            total += sample_loss.data[0, 0]
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"training loss became non-finite at epoch {epoch}", history=history)
            if config.grad_clip is not None:
                for _, value in named:
                    np.clip(value.grad, -config.grad_clip, config.grad_clip, out=value.grad)
            adamw_step(params, opt, config.lr, config.wd, named=named)
        train_loss = total * scale

        record: dict = {"epoch": epoch, "train_loss": train_loss}
        if val_samples:
            val = mt.evaluate(params, val_samples)
            record.update(val_acc=val["acc"], val_mcc=val["mcc"], val_f1=val["f1"])
            if val["acc"] > best:
                best = val["acc"]
                best_epoch = epoch
                best_params = params.clone()
        history.append(record)
        if stop_at_val_acc is not None and best >= stop_at_val_acc:
            break

    if not val_samples:
        best_params, best_epoch, best = params.clone(), config.epochs, float("nan")
    return TrainResult(params=best_params, final_params=params, history=history,
                       best_epoch=best_epoch, best_val_acc=best)


def predict(params: ModelParams, snapshot: eg.GraphSnapshot) -> tuple[np.ndarray, np.ndarray]:
    """Class index per (stock, step) plus per-block probabilities.  Argmax
    ties resolve to class 0."""
    cfg = params.config
    logits = forward(params, snapshot).data
    n = logits.shape[0]
    classes = np.empty((n, cfg.phi), dtype=np.int64)
    probs = np.empty_like(logits)
    for j in range(cfg.phi):
        block = logits[:, j * cfg.alpha:(j + 1) * cfg.alpha]
        z = block - block.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs[:, j * cfg.alpha:(j + 1) * cfg.alpha] = e / e.sum(axis=1, keepdims=True)
        classes[:, j] = block.argmax(axis=1)  # first maximum, so ties go to class 0
    return classes, probs


# ---------------------------------------------------------------------------
# persistence: magic, version, config JSON, then (rows, cols, float64 LE) blocks
# ---------------------------------------------------------------------------

def save_model(params: ModelParams, path) -> None:
    cfg_blob = json.dumps(asdict(params.config), sort_keys=True).encode("utf-8")
    named = params.named()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<I", len(named)))
        for name, value in named:
            blob = name.encode("utf-8")
            rows, cols = value.data.shape
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<II", rows, cols))
            fh.write(value.data.astype("<f8").tobytes(order="C"))


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated model file reading {what} at offset {fh.tell() - len(data)}")
    return data


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version} at offset 4")
        cfg_len = struct.unpack("<I", _read_exact(fh, 4, "config length"))[0]
        cfg = ModelConfig(**json.loads(_read_exact(fh, cfg_len, "config")))
        count = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))[0]
        loaded: dict[str, np.ndarray] = {}
        for _ in range(count):
            name_len = struct.unpack("<I", _read_exact(fh, 4, "name length"))[0]
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            rows, cols = struct.unpack("<II", _read_exact(fh, 8, "shape"))
            raw = _read_exact(fh, rows * cols * 8, f"matrix {name}")
            loaded[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
        if fh.read(1):
            raise FormatError(f"trailing bytes at offset {fh.tell() - 1}")

    params = init_model(cfg)
    expected = dict(params.named())
    if set(expected) != set(loaded):
        raise FormatError("model file parameters do not match the stored configuration")
    for name, value in params.named():
        if value.data.shape != loaded[name].shape:
            raise FormatError(f"matrix {name} has shape {loaded[name].shape}, "
                              f"expected {value.data.shape}")
        value.data[...] = loaded[name]
    return params
