"""Losses, AdamW, class-balanced sampling and the training loop."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import augment
from .evalviz import ConfusionMatrix, compute_metrics
from .fusion import predict
from .rng import Rng

log = logging.getLogger(__name__)

_MASK_NEG = -1e9


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch index {batch}")
        self.epoch, self.batch = epoch, batch


# ---------------------------------------------------------------- losses

def contrastive_loss(z, tau=0.5):
    """InfoNCE over 2N rows where row i pairs with row i+N.

    For each anchor i < N: -log(exp(s(i, i+N)/tau) / sum_{j != i} exp(s(i, j)/tau))
    with cosine similarity s; averaged over the N anchors.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[0] % 2:
        raise ad.ShapeError(f"contrastive_loss: need [2N, d] features, got {list(z.shape)}")
    n2 = z.shape[0]
    n = n2 // 2
    zn = ad.normalize(z)
    sims = ad.scale(ad.matmul(zn, ad.transpose2d(zn)), 1.0 / tau)
    mask = np.zeros((n, n2), dtype=sims.data.dtype)
    mask[np.arange(n), np.arange(n)] = _MASK_NEG
    logits = ad.add(ad.index(sims, slice(0, n)), Tensor.wrap(mask))
    logp = ad.log_softmax(logits)
    picked = ad.index(logp, (np.arange(n), np.arange(n) + n))
    return ad.scale(ad.tsum(picked), -1.0 / n)


def cross_entropy(logits, labels):
    """Mean -log softmax(logits)[label]; accepts [2] with an int or [B, 2] with [B]."""
    if logits.ndim == 1:
        logits = ad.reshape(logits, (1,) + logits.shape)
        labels = [labels]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b = logits.shape[0]
    picked = ad.index(ad.log_softmax(logits), (np.arange(b), labels))
    return ad.scale(ad.tsum(picked), -1.0 / b)


# ---------------------------------------------------------------- optimizer

@dataclass
class OptState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_step(params, grads, state, cfg):
    """One AdamW update with decoupled weight decay, in place.

    ``grads`` maps parameter names to arrays; every parameter needs one.
    """
    for name in params:
        if name not in grads or grads[name] is None:
            raise KeyError(f"missing gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float32)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = (p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
                  - cfg.lr * cfg.weight_decay * p.data).astype(np.float32)
    return params, state


# ---------------------------------------------------------------- sampling

def sample_weights(labels):
    """Per-sample probabilities proportional to 1 / class count."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("no labels to sample from")
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    w = 1.0 / counts[inverse]
    return w / w.sum()


def weighted_sample(labels, rng, n_draws):
    """Draw ``n_draws`` indices with replacement, balanced by inverse class frequency."""
    return rng.choice(sample_weights(labels), n_draws)


def should_stop(val_losses, patience):
    """True once the last ``patience`` epochs have not beaten the best earlier loss."""
    if len(val_losses) <= patience:
        return False
    best = int(np.argmin(val_losses))
    return len(val_losses) - 1 - best >= patience


# ---------------------------------------------------------------- loop

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    metrics: dict
    parts: dict = field(default_factory=dict)  # mean train value per loss term


@dataclass
class History:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stopped_early: bool = False

    @property
    def train_losses(self):
        return [e.train_loss for e in self.epochs]

    @property
    def val_losses(self):
        return [e.val_loss for e in self.epochs]

    def to_csv(self):
        lines = ["epoch,train_loss,val_loss,val_acc,val_prec,val_rec,val_f1"]
        for e in self.epochs:
            m = e.metrics
            lines.append(
                f"{e.epoch},{e.train_loss:.6f},{e.val_loss:.6f},{m['accuracy']:.6f},"
                f"{m['precision']:.6f},{m['recall']:.6f},{m['f1']:.6f}")
        return "\n".join(lines) + "\n"


def _batch_loss(model, x, labels, cfg, rng, training):
    """Total loss for paired views ``x`` = [view1; view2].

    Returns (loss, parts) where parts holds the float value of each term.
    """
    n = len(labels)
    out = model(x, rng, training)
    loss, parts = None, {}
    if cfg.use_ce:
        loss = cross_entropy(ad.index(out.logits, slice(0, n)), labels)
        parts["ce"] = loss.item()
    if cfg.lambda_nce:
        nce = contrastive_loss(out.features, cfg.tau)
        parts["nce"] = nce.item()
        nce = ad.scale(nce, cfg.lambda_nce)
        loss = nce if loss is None else ad.add(loss, nce)
    if loss is None:
        raise ValueError("both loss terms are disabled")
    return loss, parts


def _two_views(images, rng, keys):
    v1 = [augment(images[i], rng.spawn(*k, 0)) for i, k in zip(range(len(images)), keys)]
    v2 = [augment(images[i], rng.spawn(*k, 1)) for i, k in zip(range(len(images)), keys)]
    return np.stack(v1 + v2)


def predict_split(model, images, batch_size=64):
    """Logits [N, 2] from clean (unaugmented) images in inference mode."""
    out = []
    for s in range(0, len(images), batch_size):
        out.append(model(images[s:s + batch_size], None, False).logits.data)
    return np.concatenate(out) if out else np.zeros((0, 2), dtype=np.float32)


def evaluate(model, split, batch_size=64):
    """Metrics dict (plus 'loss', mean cross-entropy) for an ImageSet."""
    logits = predict_split(model, split.images, batch_size)
    ce = cross_entropy(Tensor(logits), split.labels).item() if len(logits) else float("nan")
    m = compute_metrics(ConfusionMatrix.from_predictions(split.labels, predict(logits)))
    m["loss"] = ce
    return m


def validation_loss(model, split, cfg, seed, batch_size):
    """Training objective on the validation split, plus clean-image metrics.

    The view pairs come from a fixed stream, so the value is comparable
    across epochs.
    """
    rng = Rng(seed).spawn(0x7A1)
    total = 0.0
    for s in range(0, len(split), batch_size):
        idx = np.arange(s, min(s + batch_size, len(split)))
        x = _two_views(split.images[idx], rng, [(int(i),) for i in idx])
        loss, _ = _batch_loss(model, x, split.labels[idx], cfg, None, False)
        total += loss.item() * len(idx)
    m = evaluate(model, split, batch_size)
    m["ce"] = m["loss"]
    m["loss"] = total / len(split)
    return m


def train(model, train_set, val_set, cfg, on_epoch=None):
    """Train ``model`` in place; returns History and leaves the best weights loaded.

    Per batch: two augmented views of every sampled image feed the contrastive
    loss on the model's features, the first view also feeds cross-entropy.
    Randomness is derived from (seed, epoch, position) so runs are reproducible.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training needs non-empty train and validation splits")
    base = Rng(cfg.seed)
    state = OptState()
    history = History()
    best_state, best_loss = model.params.state_dict(), math.inf
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        order = weighted_sample(train_set.labels, base.spawn(1, epoch), n)
        total, seen = 0.0, 0
        part_sums = {}
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            keys = [(2, epoch, start + k) for k in range(len(idx))]
            x = _two_views(train_set.images[idx], base, keys)
            step_rng = base.spawn(3, epoch, b)
            with Tape() as tape:
                loss, parts = _batch_loss(model, x, train_set.labels[idx], cfg, step_rng, True)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, b, value)
            tape.backward(loss)
            grads = {name: p.grad for name, p in model.params.items()}
            adamw_step(model.params, grads, state, cfg)
            for p in model.params._params.values():
                p.grad = None
            total += value * len(idx)
            seen += len(idx)
            for k, v in parts.items():
                part_sums[k] = part_sums.get(k, 0.0) + v * len(idx)
        vm = validation_loss(model, val_set, cfg, cfg.seed, cfg.batch_size)
        rec = EpochRecord(epoch, total / seen, vm["loss"], vm,
                          {k: v / seen for k, v in part_sums.items()})
        history.epochs.append(rec)
        log.info("epoch %d train_loss %.4f %s val_loss %.4f val_acc %.3f", epoch, rec.train_loss,
                 " ".join(f"{k} {v:.4f}" for k, v in rec.parts.items()), rec.val_loss, vm["accuracy"])
        if on_epoch is not None:
            on_epoch(rec)
        if rec.val_loss < best_loss:
            best_loss = rec.val_loss
            best_state = model.params.state_dict()
            history.best_epoch = epoch
        if should_stop(history.val_losses, cfg.patience):
            history.stopped_early = epoch < cfg.epochs
            break
    model.params.load_state_dict(best_state)
    return history
