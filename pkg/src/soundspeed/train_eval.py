"""Training loop, error metrics, and evaluation reports.

Metrics follow the reporting scheme of the evaluation tables: RMSE, mean
absolute error with its standard deviation, median absolute error, and the
windowed-minimum variants where each pixel takes the minimum absolute error
against the truth values within a Chebyshev radius (default 5 pixels),
de-emphasizing edge-localization outliers.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .nn import Network, build_network, l2_loss, save_checkpoint
from .preprocess import PreprocConfig, inject_noise, label_to_units, to_input, units_to_label


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" or "sgd"
    momentum: float = 0.9
    seed: int = 0
    shuffle: bool = True
    eval_every: int = 1
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ConfigError("invalid training configuration")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        b1t = 1 - self.beta1 ** self.t
        b2t = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.value -= (self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)).astype(
                p.value.dtype)


class MomentumSGD:
    def __init__(self, params, lr, momentum=0.9):
        self.params = params
        self.lr, self.momentum = lr, momentum
        self.vel = [np.zeros_like(p.value) for p in params]

    def step(self):
        for p, v in zip(self.params, self.vel):
            v *= self.momentum
            v += p.grad
            p.value -= (self.lr * v).astype(p.value.dtype)


def make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate)
    return MomentumSGD(params, cfg.learning_rate, cfg.momentum)


# ---------------------------------------------------------------------------
# metrics

def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = _check_dims(pred, truth)
    return math.sqrt(float(np.mean((pred - truth) ** 2)))


def mean_abs(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """(mean, std) of the absolute error field."""
    pred, truth = _check_dims(pred, truth)
    e = np.abs(pred - truth)
    return float(e.mean()), float(e.std())


def median_abs(pred: np.ndarray, truth: np.ndarray) -> float:
    """Lower median: element (n-1)//2 of the sorted absolute errors."""
    pred, truth = _check_dims(pred, truth)
    e = np.sort(np.abs(pred - truth), axis=None)
    return float(e[(e.size - 1) // 2])


def _check_dims(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return pred, truth


def windowed_min_abs(pred: np.ndarray, truth: np.ndarray, radius: int = 5) -> np.ndarray:
    """Per-pixel min over |pred(q) - truth(r)| for r within Chebyshev radius.

    Windows are clipped at the image borders.
    """
    if radius < 0:
        raise ConfigError("radius must be >= 0")
    pred, truth = _check_dims(pred, truth)
    h, w = pred.shape
    best = np.full((h, w), np.inf)
    for di in range(-radius, radius + 1):
        i0, i1 = max(0, -di), min(h, h - di)
        if i0 >= i1:
            continue
        for dj in range(-radius, radius + 1):
            j0, j1 = max(0, -dj), min(w, w - dj)
            if j0 >= j1:
                continue
            e = np.abs(pred[i0:i1, j0:j1] - truth[i0 + di:i1 + di, j0 + dj:j1 + dj])
            np.minimum(best[i0:i1, j0:j1], e, out=best[i0:i1, j0:j1])
    return best


def _lower_median(values: np.ndarray) -> float:
    v = np.sort(values, axis=None)
    return float(v[(v.size - 1) // 2])


@dataclass
class MetricsReport:
    """Pooled error metrics in m/s over a set of (pred, truth) map pairs."""

    rmse: float
    mean_abs: float
    std_abs: float
    median_abs: float
    windowed_mean: float
    windowed_std: float
    windowed_median: float
    radius: int = 5
    per_sample: list = field(default_factory=list)  # per-sample mean abs error

    COLUMNS = ("RMSE", "mu", "sigma", "median", "mu_star", "sigma_star", "median_star")

    def row(self) -> list[float]:
        return [self.rmse, self.mean_abs, self.std_abs, self.median_abs,
                self.windowed_mean, self.windowed_std, self.windowed_median]

    def to_csv(self, label: str = "network") -> str:
        buf = io.StringIO()
        wr = csv.writer(buf)
        wr.writerow(("Network",) + self.COLUMNS)
        wr.writerow([label] + [f"{v:.6g}" for v in self.row()])
        return buf.getvalue()

    def to_text(self, label: str = "network") -> str:
        head = f"{'Network':<12}" + "".join(f"{c:>12}" for c in self.COLUMNS)
        row = f"{label:<12}" + "".join(f"{v:>12.2f}" for v in self.row())
        return head + "\n" + row + "\n"


def compute_metrics(preds: list, truths: list, radius: int = 5) -> MetricsReport:
    """Pooled metrics over pairs of speed maps (m/s)."""
    if len(preds) != len(truths) or not preds:
        raise ConfigError("need equal nonempty prediction/truth lists")
    abs_all = []
    sq_all = []
    win_all = []
    per_sample = []
    for p, t in zip(preds, truths):
        p, t = _check_dims(p, t)
        e = np.abs(p - t)
        abs_all.append(e.ravel())
        sq_all.append(((p - t) ** 2).ravel())
        win_all.append(windowed_min_abs(p, t, radius).ravel())
        per_sample.append(float(e.mean()))
    abs_all = np.concatenate(abs_all)
    sq_all = np.concatenate(sq_all)
    win_all = np.concatenate(win_all)
    return MetricsReport(
        rmse=math.sqrt(float(sq_all.mean())),
        mean_abs=float(abs_all.mean()),
        std_abs=float(abs_all.std()),
        median_abs=_lower_median(abs_all),
        windowed_mean=float(win_all.mean()),
        windowed_std=float(win_all.std()),
        windowed_median=_lower_median(win_all),
        radius=radius,
        per_sample=per_sample,
    )


# ---------------------------------------------------------------------------
# training

def _select_transmits(tensor: np.ndarray, variant: str) -> np.ndarray:
    """(n_transmits, t, e) input -> the transmit slices the variant consumes.

    Single-transmit networks use the center plane wave (index n//2).
    """
    if variant == "single":
        return tensor[tensor.shape[0] // 2][None]
    return tensor


def prepare_inputs(records: list, pcfg: PreprocConfig, variant: str) -> tuple:
    """Preprocess every record once: returns (inputs, targets_units)."""
    xs = [None] * len(records)
    ys = [None] * len(records)
    for i, rec in enumerate(records):
        xs[i] = _select_transmits(to_input(rec.channel, pcfg), variant).astype(np.float32)
        ys[i] = label_to_units(rec.label, pcfg).astype(np.float32)
    return np.stack(xs), np.stack(ys)


@dataclass
class TrainResult:
    train_losses: list
    test_losses: list
    best_test_loss: float
    best_epoch: int


def train(train_records: list, net: Network, cfg: TrainConfig, pcfg: PreprocConfig,
          test_records: list | None = None, log=None) -> TrainResult:
    """Mini-batch training with per-batch noise injection.

    Deterministic given cfg.seed (single-threaded). Saves the
    best-test-loss checkpoint to cfg.checkpoint_path when test records are
    given, otherwise the final state.
    """
    if not train_records:
        raise ConfigError("empty training set")
    x_train, y_train = prepare_inputs(train_records, pcfg, net.variant)
    have_test = bool(test_records)
    if have_test:
        x_test, y_test = prepare_inputs(test_records, pcfg, net.variant)

    opt = make_optimizer(cfg, net.parameters())
    order_rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n = len(train_records)
    train_losses = []
    test_losses = []
    best = (math.inf, -1)

    for epoch in range(cfg.epochs):
        idx = order_rng.permutation(n) if cfg.shuffle else np.arange(n)
        epoch_loss = 0.0
        n_batches = 0
        for b0 in range(0, n, cfg.batch_size):
            sel = idx[b0:b0 + cfg.batch_size]
            xb = x_train[sel]
            noise_seed = (cfg.seed * 1_000_003 + epoch * 1009 + b0) & 0xFFFFFFFF
            xb = inject_noise(xb, pcfg.noise_sigma, pcfg.quant_levels,
                              noise_seed).astype(np.float32)
            net.zero_grad()
            pred = net.forward(xb, train=True)
            loss, grad = l2_loss(pred, y_train[sel])
            if not math.isfinite(loss):
                raise DivergenceError(f"NaN loss at epoch {epoch} batch {b0 // cfg.batch_size}")
            net.backward(grad)
            opt.step()
            epoch_loss += loss
            n_batches += 1
        train_losses.append(epoch_loss / n_batches)
        if have_test and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            tl = evaluate_loss(net, x_test, y_test, cfg.batch_size)
            test_losses.append((epoch, tl))
            if tl < best[0]:
                best = (tl, epoch)
                if cfg.checkpoint_path:
                    save_checkpoint(net, cfg.checkpoint_path)
        if log:
            log(f"epoch {epoch}: train {train_losses[-1]:.6f}"
                + (f" test {test_losses[-1][1]:.6f}" if have_test and test_losses
                   and test_losses[-1][0] == epoch else ""))
    if not have_test and cfg.checkpoint_path:
        save_checkpoint(net, cfg.checkpoint_path)
        best = (train_losses[-1], cfg.epochs - 1)
    return TrainResult(train_losses=train_losses, test_losses=test_losses,
                       best_test_loss=best[0], best_epoch=best[1])


def evaluate_loss(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 8) -> float:
    total = 0.0
    count = 0
    for b0 in range(0, x.shape[0], batch_size):
        pred = net.forward(x[b0:b0 + batch_size], train=False)
        loss, _ = l2_loss(pred, y[b0:b0 + batch_size])
        total += loss * pred.shape[0]
        count += pred.shape[0]
    return total / count


def predict(net: Network, records: list, pcfg: PreprocConfig,
            batch_size: int = 8) -> list:
    """Eval-mode predictions in m/s for each record."""
    x, _ = prepare_inputs(records, pcfg, net.variant)
    preds = []
    for b0 in range(0, x.shape[0], batch_size):
        out = net.forward(x[b0:b0 + batch_size], train=False)
        for row in out:
            preds.append(units_to_label(row, pcfg))
    return preds


def evaluate(net: Network, records: list, pcfg: PreprocConfig,
             radius: int = 5, batch_size: int = 8) -> MetricsReport:
    preds = predict(net, records, pcfg, batch_size)
    truths = [np.asarray(r.label, dtype=np.float64) for r in records]
    return compute_metrics(preds, truths, radius)


def constant_baseline_metrics(records: list, radius: int = 5) -> MetricsReport:
    """Predicting the dataset-mean speed everywhere; the floor any trained
    network must beat."""
    truths = [np.asarray(r.label, dtype=np.float64) for r in records]
    mean_speed = float(np.mean([t.mean() for t in truths]))
    preds = [np.full_like(t, mean_speed) for t in truths]
    return compute_metrics(preds, truths, radius)
