"""Adam/AMSGrad optimizer, training loop, and checkpoint persistence."""

import json
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .container import load_container, save_container
from .data import Normalizer
from .errors import ArtifactError, ConfigError, DataError, DivergenceError

log = logging.getLogger("gaitcast.optim")

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    seed: int = 0
    lr: float = 0.0008
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    amsgrad: bool = True
    lr_schedule: str = "constant"  # "constant" | "cosine"
    warmup_steps: int = 0
    lr_min: float = 0.0
    clip_global_norm: float | None = None
    target_train_mse: float | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be nonnegative")

    def lr_at(self, step, total_steps):
        """Step-indexed learning rate: linear warmup, then the schedule.

        `lr` is the rate reached after warmup; the cosine schedule anneals it
        to lr_min over the remaining step budget.
        """
        if step < self.warmup_steps:
            return self.lr * (step + 1) / self.warmup_steps
        if self.lr_schedule == "cosine":
            span = max(1, total_steps - self.warmup_steps)
            frac = min(1.0, (step - self.warmup_steps) / span)
            return self.lr_min + 0.5 * (self.lr - self.lr_min) * (
                1.0 + math.cos(math.pi * frac))
        return self.lr

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class OptimizerState:
    """First/second moments plus the AMSGrad running max, per parameter."""

    m: dict
    v: dict
    vmax: dict
    t: int = 0
    lr: float = 0.0008
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    amsgrad: bool = True


def init_optimizer(params, cfg=None):
    cfg = cfg or TrainConfig()
    zeros = lambda: {k: np.zeros_like(p) for k, p in params.items()}
    return OptimizerState(m=zeros(), v=zeros(), vmax=zeros(), t=0,
                          lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                          epsilon=cfg.epsilon, amsgrad=cfg.amsgrad)


def adam_step(state, params, grads):
    """One in-place update; returns (state, params).

    m and v are exponential moving averages of the gradient and its square;
    with AMSGrad the second-moment denominator uses the running elementwise
    max of v. Both moments are bias-corrected.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.amsgrad:
            np.maximum(state.vmax[name], v, out=state.vmax[name])
            vhat = state.vmax[name] / bc2
        else:
            vhat = v / bc2
        p -= state.lr * (m / bc1) / (np.sqrt(vhat) + state.epsilon)
    return state, params


def clip_gradients(grads, max_norm):
    """Global-norm gradient clipping; no-op when under the threshold."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return grads


@dataclass
class Checkpoint:
    params: dict
    opt_state: OptimizerState
    normalizer: Normalizer | None
    model_config: nn.ModelConfig
    train_config: TrainConfig
    config_hash: str
    seed: int
    family: str
    epoch: int
    best_val_mse: float


def save_checkpoint(cp, path):
    tensors = {}
    for name, p in cp.params.items():
        tensors[f"param/{name}"] = p.astype(np.float32, copy=False)
        tensors[f"opt_m/{name}"] = cp.opt_state.m[name].astype(np.float32, copy=False)
        tensors[f"opt_v/{name}"] = cp.opt_state.v[name].astype(np.float32, copy=False)
        tensors[f"opt_vmax/{name}"] = cp.opt_state.vmax[name].astype(
            np.float32, copy=False)
    if cp.normalizer is not None:
        tensors["norm/input_min"] = cp.normalizer.input_min.astype(np.float64)
        tensors["norm/input_max"] = cp.normalizer.input_max.astype(np.float64)
        tensors["norm/target_min"] = cp.normalizer.target_min.astype(np.float64)
        tensors["norm/target_max"] = cp.normalizer.target_max.astype(np.float64)
    meta = {
        "kind": "checkpoint",
        "version": CHECKPOINT_VERSION,
        "model_config": cp.model_config.to_dict(),
        "train_config": cp.train_config.to_dict(),
        "config_hash": cp.config_hash,
        "seed": cp.seed,
        "family": cp.family,
        "epoch": cp.epoch,
        "best_val_mse": cp.best_val_mse,
        "opt_t": cp.opt_state.t,
        "has_normalizer": cp.normalizer is not None,
    }
    save_container(path, meta, tensors)


def load_checkpoint(path):
    meta, tensors = load_container(path)
    if meta.get("kind") != "checkpoint":
        raise ArtifactError(f"{path}: not a checkpoint file")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ArtifactError(
            f"{path}: checkpoint version {meta.get('version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})")
    mcfg = nn.ModelConfig.from_dict(meta["model_config"])
    tcfg = TrainConfig.from_dict(meta["train_config"])
    params, m, v, vmax = {}, {}, {}, {}
    for name in nn.param_shapes(mcfg):
        try:
            params[name] = tensors[f"param/{name}"]
            m[name] = tensors[f"opt_m/{name}"]
            v[name] = tensors[f"opt_v/{name}"]
            vmax[name] = tensors[f"opt_vmax/{name}"]
        except KeyError as exc:
            raise ArtifactError(f"{path}: missing tensor for {name!r}") from exc
    state = OptimizerState(m=m, v=v, vmax=vmax, t=meta["opt_t"], lr=tcfg.lr,
                           beta1=tcfg.beta1, beta2=tcfg.beta2,
                           epsilon=tcfg.epsilon, amsgrad=tcfg.amsgrad)
    normalizer = None
    if meta.get("has_normalizer"):
        normalizer = Normalizer(tensors["norm/input_min"], tensors["norm/input_max"],
                                tensors["norm/target_min"], tensors["norm/target_max"])
    return Checkpoint(params=params, opt_state=state, normalizer=normalizer,
                      model_config=mcfg, train_config=tcfg,
                      config_hash=meta["config_hash"], seed=meta["seed"],
                      family=meta["family"], epoch=meta["epoch"],
                      best_val_mse=meta["best_val_mse"])


def _step_rng(seed, step):
    key = (int(seed) * (1 << 20) + int(step)) % (1 << 64)
    return np.random.Generator(np.random.Philox(key=key))


def evaluate_mse(params, mcfg, inputs, targets, batch_size=256):
    """Deterministic (eval-mode) MSE over a frame set."""
    total, n = 0.0, 0
    for lo in range(0, len(inputs), batch_size):
        xb = inputs[lo:lo + batch_size]
        yb = targets[lo:lo + batch_size]
        pred, _ = nn.model_forward(params, mcfg, xb, mode="eval")
        total += nn.mse_loss(pred, yb) * len(xb)
        n += len(xb)
    return total / max(n, 1)


def predict_blocks(params, mcfg, inputs, batch_size=256):
    """Eval-mode predictions for a stack of input windows."""
    outs = []
    for lo in range(0, len(inputs), batch_size):
        pred, _ = nn.model_forward(params, mcfg, inputs[lo:lo + batch_size],
                                   mode="eval")
        outs.append(pred)
    return np.concatenate(outs, axis=0)


def train_network(mcfg, tcfg, train_inputs, train_targets, val_inputs=None,
                  val_targets=None, normalizer=None, family="angles",
                  config_hash="", checkpoint_path=None, log_path=None):
    """Train one network; returns (best Checkpoint, per-epoch history).

    Frames are shuffled once with the run seed, then batched identically each
    epoch. Validation runs in eval mode after every epoch and never touches
    the optimizer; the checkpoint is rewritten whenever validation improves
    (train MSE stands in when no validation set is given). A non-finite loss
    aborts with the last good checkpoint retained on disk.
    """
    if len(train_inputs) == 0:
        raise DataError("empty training set")
    train_inputs = np.ascontiguousarray(train_inputs, dtype=np.float32)
    train_targets = np.ascontiguousarray(train_targets, dtype=np.float32)
    params = nn.init_params(mcfg, seed=tcfg.seed, dtype=np.float32)
    state = init_optimizer(params, tcfg)
    order = np.random.default_rng(tcfg.seed).permutation(len(train_inputs))
    xs = train_inputs[order]
    ys = train_targets[order]

    best = None
    best_metric = np.inf
    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    steps_per_epoch = int(np.ceil(len(xs) / tcfg.batch_size))
    total_steps = tcfg.epochs * steps_per_epoch
    global_step = 0
    try:
        for epoch in range(tcfg.epochs):
            t0 = time.perf_counter()
            sum_mse, sum_mae, seen = 0.0, 0.0, 0
            for lo in range(0, len(xs), tcfg.batch_size):
                xb = xs[lo:lo + tcfg.batch_size]
                yb = ys[lo:lo + tcfg.batch_size]
                state.lr = tcfg.lr_at(global_step, total_steps)
                rng = _step_rng(tcfg.seed, global_step)
                out, cache = nn.model_forward(params, mcfg, xb, mode="train", rng=rng)
                loss, dout = nn.mse_loss_grad(out, yb)
                if not np.isfinite(loss):
                    raise DivergenceError(
                        f"training loss became non-finite at epoch {epoch}, "
                        f"step {global_step}", last_checkpoint=checkpoint_path)
                _, grads = nn.model_backward(dout, cache)
                if tcfg.clip_global_norm is not None:
                    clip_gradients(grads, tcfg.clip_global_norm)
                adam_step(state, params, grads)
                sum_mse += loss * len(xb)
                sum_mae += nn.mae_metric(out, yb) * len(xb)
                seen += len(xb)
                global_step += 1
            train_mse = sum_mse / seen
            train_mae = sum_mae / seen
            record = {"epoch": epoch, "train_mse": train_mse, "train_mae": train_mae}

            if val_inputs is not None and len(val_inputs):
                val_mse = evaluate_mse(params, mcfg, val_inputs, val_targets,
                                       tcfg.batch_size)
                record["val_mse"] = val_mse
                metric = val_mse
            else:
                metric = train_mse
            if not np.isfinite(metric):
                raise DivergenceError(
                    f"validation loss became non-finite at epoch {epoch}",
                    last_checkpoint=checkpoint_path)

            stop = False
            if tcfg.target_train_mse is not None and (
                    epoch % 5 == 4 or train_mse < 2 * tcfg.target_train_mse):
                # dropout inflates the running loss; probe the deterministic fit
                fit_mse = evaluate_mse(params, mcfg, train_inputs, train_targets,
                                       tcfg.batch_size)
                record["train_mse_eval"] = fit_mse
                stop = fit_mse < tcfg.target_train_mse

            if metric < best_metric:
                best_metric = metric
                best = Checkpoint(
                    params={k: p.copy() for k, p in params.items()},
                    opt_state=OptimizerState(
                        m={k: a.copy() for k, a in state.m.items()},
                        v={k: a.copy() for k, a in state.v.items()},
                        vmax={k: a.copy() for k, a in state.vmax.items()},
                        t=state.t, lr=state.lr, beta1=state.beta1,
                        beta2=state.beta2, epsilon=state.epsilon,
                        amsgrad=state.amsgrad),
                    normalizer=normalizer, model_config=mcfg, train_config=tcfg,
                    config_hash=config_hash, seed=tcfg.seed, family=family,
                    epoch=epoch, best_val_mse=best_metric)
                if checkpoint_path:
                    save_checkpoint(best, checkpoint_path)

            record["wall_time_s"] = time.perf_counter() - t0
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
            log.info("family=%s epoch=%d train_mse=%.6g val_mse=%s", family, epoch,
                     train_mse, record.get("val_mse", "n/a"))
            if stop:
                log.info("target training MSE reached at epoch %d", epoch)
                break
    finally:
        if log_fh:
            log_fh.close()
    return best, history
