"""Shared-weight per-surface MLP with manual backprop, composite loss and Adam training.

Every surface row ``z = [S_s, G~]`` goes through the same 2x256 ReLU network
with a linear 3-output head; outputs are normalized F/rho per surface.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import features as ft
from .dataset import NormStats, Sample, TensorSet, group_by_vehicle, sample_globals
from .defaults import load_defaults

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
WEIGHTS_MAGIC = b"HSMW"
WEIGHTS_VERSION = 1


class SchemaError(ValueError):
    pass


class ChecksumError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    val_batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 0.5
    eps_rel: float = 0.01
    lambda_net: float = 0.1
    lambda_phys: float = 0.5
    lambda_F: float = 0.0  # exposed for completeness; no loss term uses it
    epochs: int = 1000
    sched_factor: float = 0.5
    sched_patience: int = 20
    sched_threshold: float = 1e-8
    dry_threshold: float = 0.01
    hidden: int = 256
    split_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.eps_rel <= 0 or self.batch_size < 1 or self.val_batch_size < 1:
            raise ValueError("eps_rel and batch sizes must be positive")

    @classmethod
    def from_defaults(cls, **overrides) -> "TrainConfig":
        d = load_defaults()
        vals = {k: v for k, v in d["train"].items() if k in {f.name for f in fields(cls)}}
        vals["seed"] = d["seed"]
        vals.update(overrides)
        return cls(**vals)

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SurrogateModel:
    params: dict
    d_s: int
    d_g: int
    stats: NormStats | None = None
    global_features: tuple[str, ...] = ft.GLOBAL_FEATURES
    schema: str = ft.SCHEMA_VERSION
    variant: str = "full"
    config_fingerprint: str = ""
    seed: int = 0

    @property
    def hidden(self) -> int:
        return self.params["W1"].shape[0]

    @property
    def dtype(self):
        return self.params["W1"].dtype

    def copy(self) -> "SurrogateModel":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "SurrogateModel":
        return replace(self, params={k: v.astype(dtype) for k, v in self.params.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


def init_model(d_s: int = ft.D_S, d_g: int = ft.D_G, hidden: int = 256, seed: int = 0,
               stats: NormStats | None = None, global_features: Sequence[str] | None = None,
               variant: str = "full") -> SurrogateModel:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    d_in = d_s + d_g
    p = {}
    for name, (n_out, n_in) in (("1", (hidden, d_in)), ("2", (hidden, hidden)), ("3", (3, hidden))):
        bound = np.sqrt(6.0 / n_in)
        p["W" + name] = rng.uniform(-bound, bound, size=(n_out, n_in))
        p["b" + name] = np.zeros(n_out)
    if global_features is None:
        global_features = stats.global_features if stats is not None else ft.GLOBAL_FEATURES
    if len(global_features) != d_g:
        raise SchemaError(f"{len(global_features)} global feature names for d_g={d_g}")
    return SurrogateModel(p, d_s, d_g, stats, tuple(global_features), variant=variant, seed=seed)


# -- forward / backward -------------------------------------------------------

def _inputs(G: np.ndarray, S: np.ndarray) -> np.ndarray:
    """(B, K, D_s + D_g) rows of surface features with the tiled global vector."""
    B, K = S.shape[:2]
    return np.concatenate([S, np.broadcast_to(G[:, None, :], (B, K, G.shape[1]))], axis=2)


def _check_shapes(model: SurrogateModel, G, S):
    if G.shape[-1] != model.d_g:
        raise SchemaError(f"model expects {model.d_g} global features, got {G.shape[-1]}")
    if S.shape[-1] != model.d_s:
        raise SchemaError(f"model expects {model.d_s} surface features, got {S.shape[-1]}")


def _mlp(p: dict, X: np.ndarray):
    a1 = X @ p["W1"].T + p["b1"]
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ p["W2"].T + p["b2"]
    h2 = np.maximum(a2, 0.0)
    return h2 @ p["W3"].T + p["b3"], (h1, h2)


def forward(model: SurrogateModel, G: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Normalized per-surface outputs; accepts (D_g,), (K, D_s) or batched (B, D_g), (B, K, D_s)."""
    G = np.asarray(G)
    S = np.asarray(S)
    single = G.ndim == 1
    if single:
        G, S = G[None], S[None]
    _check_shapes(model, G, S)
    B, K = S.shape[:2]
    X = _inputs(G.astype(model.dtype, copy=False), S.astype(model.dtype, copy=False))
    out, _ = _mlp(model.params, X.reshape(B * K, -1))
    out = out.reshape(B, K, 3)
    return out[0] if single else out


def unnormalize_and_scale(Yn: np.ndarray, stats: NormStats, rho) -> np.ndarray:
    """Normalized outputs -> F/rho -> forces in newtons."""
    Y = stats.denormalize_Y(Yn)
    rho = np.asarray(rho, dtype=Y.dtype)
    return Y * rho.reshape(rho.shape + (1,) * (Y.ndim - rho.ndim))


@dataclass
class Batch:
    X: np.ndarray        # (B, K, D)
    Y: np.ndarray        # (B, K, 3) normalized targets
    sub_frac: np.ndarray  # (B, K)


def make_batch(ts: TensorSet, idx=None) -> Batch:
    idx = slice(None) if idx is None else idx
    return Batch(_inputs(ts.G[idx], ts.S[idx]), ts.Y[idx], ts.sub_frac[idx])


def composite_loss(pred: np.ndarray, true: np.ndarray, sub_frac: np.ndarray, stats: NormStats,
                   config: TrainConfig, with_grad: bool = False):
    """Total loss and its terms; optionally the gradient with respect to ``pred``.

    pred/true: (B, K, 3) normalized; sub_frac: (B, K).
    """
    B, K, _ = pred.shape
    e = pred - true
    inv_d2 = 1.0 / np.maximum(np.abs(true), config.eps_rel) ** 2
    n = e.size
    mse = float(np.sum(e * e)) / n
    rel = float(np.sum(e * e * inv_d2)) / n
    hybrid = (1.0 - config.alpha) * mse + config.alpha * rel
    sigma = stats.sigma_Y
    D = sigma * e.sum(axis=1)                      # net error in F/rho, (B, 3)
    net = float(np.sum(D * D)) / (3 * B)
    dry = sub_frac < config.dry_threshold
    n_dry = int(dry.sum())
    if n_dry:
        Yp = stats.denormalize_Y(pred)
        phys = float(np.sum(Yp[dry] ** 2)) / (3 * n_dry)
    else:
        phys = 0.0
    total = hybrid + config.lambda_net * net + config.lambda_phys * phys
    terms = {"loss": total, "hybrid": hybrid, "mse": mse, "rel": rel, "net": net, "phys": phys}
    if not with_grad:
        return total, terms
    g = (2.0 / n) * e * ((1.0 - config.alpha) + config.alpha * inv_d2)
    g += config.lambda_net * (2.0 / (3 * B)) * (D * sigma)[:, None, :]
    if n_dry:
        g[dry] += config.lambda_phys * (2.0 / (3 * n_dry)) * Yp[dry] * sigma
    return total, terms, g


def loss_gradients(model: SurrogateModel, batch: Batch, config: TrainConfig):
    """Composite loss, its terms, and exact gradients for all six parameter tensors."""
    p = model.params
    B, K, D = batch.X.shape
    X = batch.X.reshape(B * K, D)
    out, (h1, h2) = _mlp(p, X)
    loss, terms, g = composite_loss(out.reshape(B, K, 3), batch.Y, batch.sub_frac, model.stats,
                                    config, with_grad=True)
    g = g.reshape(B * K, 3)
    grads = {"W3": g.T @ h2, "b3": g.sum(axis=0)}
    d2 = (g @ p["W3"]) * (h2 > 0)
    grads["W2"] = d2.T @ h1
    grads["b2"] = d2.sum(axis=0)
    d1 = (d2 @ p["W2"]) * (h1 > 0)
    grads["W1"] = d1.T @ X
    grads["b1"] = d1.sum(axis=0)
    return loss, terms, grads


def batch_loss(model: SurrogateModel, batch: Batch, config: TrainConfig):
    B, K, D = batch.X.shape
    out, _ = _mlp(model.params, batch.X.reshape(B * K, D))
    return composite_loss(out.reshape(B, K, 3), batch.Y, batch.sub_frac, model.stats, config)


# -- optimisation -------------------------------------------------------------

class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in PARAM_NAMES:
            m, v, g = self.m[k], self.v[k], grads[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlateauScheduler:
    """Multiply the lr by ``factor`` after ``patience`` consecutive epochs without improvement."""

    def __init__(self, factor: float = 0.5, patience: int = 20, threshold: float = 1e-8):
        self.factor, self.patience, self.threshold = factor, patience, threshold
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, value: float, lr: float) -> tuple[float, bool]:
        """Returns ``(new_lr, improved)``."""
        if value < self.best - self.threshold:
            self.best = value
            self.bad_epochs = 0
            return lr, True
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.bad_epochs = 0
            return lr * self.factor, False
        return lr, False


def vehicle_batches(sets: Sequence[TensorSet], batch_size: int, rng=None):
    """(set index, sample indices) pairs; every batch holds a single vehicle."""
    out = []
    for j, ts in enumerate(sets):
        order = rng.permutation(len(ts)) if rng is not None else np.arange(len(ts))
        out += [(j, order[i:i + batch_size]) for i in range(0, len(ts), batch_size)]
    if rng is not None:
        out = [out[i] for i in rng.permutation(len(out))]
    return out


def evaluate_loss(model: SurrogateModel, sets: Sequence[TensorSet], config: TrainConfig) -> dict:
    """Sample-weighted mean of batch losses over fixed-size validation batches."""
    acc: dict = {}
    n = 0
    for j, idx in vehicle_batches(sets, config.val_batch_size):
        _, terms = batch_loss(model, make_batch(sets[j], idx), config)
        for k, v in terms.items():
            acc[k] = acc.get(k, 0.0) + v * len(idx)
        n += len(idx)
    return {k: v / n for k, v in acc.items()}


def predict_normalized(model: SurrogateModel, ts: TensorSet, chunk: int = 4096) -> np.ndarray:
    return np.concatenate([forward(model, ts.G[i:i + chunk], ts.S[i:i + chunk])
                           for i in range(0, len(ts), chunk)]) if len(ts) else np.zeros(
        (0, ts.K, 3))


def validation_mae(model: SurrogateModel, sets: Sequence[TensorSet]) -> float:
    """Mean absolute error of the summed F/rho over components and samples."""
    tot, n = 0.0, 0
    for ts in sets:
        Yp = model.stats.denormalize_Y(predict_normalized(model, ts)).sum(axis=1)
        Yt = model.stats.denormalize_Y(ts.Y).sum(axis=1)
        tot += float(np.abs(Yp - Yt).sum())
        n += Yp.size
    if n == 0:
        raise ValueError("validation set is empty")
    return tot / n


@dataclass
class TrainResult:
    model: SurrogateModel
    history: list
    best_epoch: int


def train(model: SurrogateModel, train_sets: Sequence[TensorSet], val_sets: Sequence[TensorSet],
          config: TrainConfig, epochs: int | None = None, log_path: str | Path | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam with plateau lr schedule on the val loss.

    The returned weights are those with the lowest validation net-force MAE
    (``validation_mae``), the per-epoch validation metric.
    """
    if model.stats is None:
        raise ValueError("attach NormStats to the model before training")
    epochs = config.epochs if epochs is None else epochs
    model = replace(model.copy(), config_fingerprint=config.fingerprint())
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config.lr, config.beta1, config.beta2, config.adam_eps)
    sched = PlateauScheduler(config.sched_factor, config.sched_patience, config.sched_threshold)
    best = model.copy()
    best_epoch, best_mae = 0, np.inf
    history = []
    X = [_inputs(ts.G, ts.S) for ts in train_sets]
    for epoch in range(1, epochs + 1):
        acc, n = {}, 0
        for b, (j, idx) in enumerate(vehicle_batches(train_sets, config.batch_size, rng)):
            ts = train_sets[j]
            batch = Batch(X[j][idx], ts.Y[idx], ts.sub_frac[idx])
            loss, terms, grads = loss_gradients(model, batch, config)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss {loss} at epoch {epoch}, batch {b} "
                                   f"(vehicle {ts.vehicle}, rows {idx[:8].tolist()}...)")
            opt.step(model.params, grads)
            for k, v in terms.items():
                acc[k] = acc.get(k, 0.0) + v * len(idx)
            n += len(idx)
        val = evaluate_loss(model, val_sets, config)
        rec = {"epoch": epoch, "lr": opt.lr}
        rec.update({f"train_{k}": v / n for k, v in acc.items()})
        rec.update({f"val_{k}": v for k, v in val.items()})
        rec["val_mae_net"] = validation_mae(model, val_sets)
        opt.lr, _ = sched.step(val["loss"], opt.lr)
        if rec["val_mae_net"] < best_mae:
            best, best_epoch, best_mae = model.copy(), epoch, rec["val_mae_net"]
        history.append(rec)
        if progress:
            progress(rec)
    if log_path is not None:
        write_log(log_path, history)
    return TrainResult(best, history, best_epoch)


def write_log(path: str | Path, history: Sequence[dict]) -> None:
    if not history:
        Path(path).write_text("epoch\n")
        return
    cols = list(history[0])
    lines = [",".join(cols)] + [",".join(repr(float(h[c])) if c != "epoch" else str(h[c])
                                         for c in cols) for h in history]
    Path(path).write_text("\n".join(lines) + "\n")


# -- metrics ------------------------------------------------------------------

def smape(pred: np.ndarray, true: np.ndarray, floor: float = 1.0, axis=0) -> np.ndarray:
    """Symmetric MAPE in percent with the symmetric denominator floored at ``floor``."""
    denom = np.maximum((np.abs(pred) + np.abs(true)) / 2.0, floor)
    return 100.0 * np.mean(np.abs(pred - true) / denom, axis=axis)


def force_metrics(pred: np.ndarray, true: np.ndarray, floor: float = 1.0) -> dict:
    """Per-component MAE, RMSE and sMAPE of (N, 3) force arrays."""
    e = pred - true
    out = {}
    for c, name in enumerate("xyz"):
        out[f"F{name}"] = {"mae": float(np.mean(np.abs(e[:, c]))),
                           "rmse": float(np.sqrt(np.mean(e[:, c] ** 2))),
                           "smape": float(smape(pred[:, c], true[:, c], floor))}
    return out


def predict_forces(model: SurrogateModel, ts: TensorSet) -> tuple[np.ndarray, np.ndarray]:
    """(predicted, true) per-surface forces in newtons, each (N, K, 3)."""
    Fp = unnormalize_and_scale(predict_normalized(model, ts), model.stats, ts.rho)
    Ft = unnormalize_and_scale(ts.Y, model.stats, ts.rho)
    return Fp, Ft


def evaluate_metrics(model: SurrogateModel, sets: Sequence[TensorSet],
                     surface_types: dict[str, Sequence[str]] | None = None) -> dict:
    """Net-force metrics per vehicle plus per-surface and per-type MAE."""
    report = {}
    for ts in sets:
        Fp, Ft = predict_forces(model, ts)
        entry = {"n": len(ts), "net": force_metrics(Fp.sum(axis=1), Ft.sum(axis=1))}
        surf_mae = np.abs(Fp - Ft).mean(axis=0)          # (K, 3)
        entry["surface_mae"] = surf_mae.tolist()
        types = (surface_types or {}).get(ts.vehicle)
        if types is not None:
            by_type = {}
            for t in dict.fromkeys(types):
                mask = np.array([x == t for x in types])
                by_type[t] = surf_mae[mask].mean(axis=0).tolist()
            entry["type_mae"] = by_type
        report[ts.vehicle] = entry
    return report


# -- ablations ----------------------------------------------------------------

DIMENSION_FEATURES = ("L_ref", "W_ref", "H_ref")
STRIPPED_FEATURES = tuple(f for f in ft.GLOBAL_FEATURES if f not in DIMENSION_FEATURES)


def global_only_tensors(samples: Sequence[Sample], specs: dict, stats: NormStats
                        ) -> list[TensorSet]:
    """Net F/rho targets on a single pseudo-surface with no surface features."""
    out = []
    for name, group in sorted(group_by_vehicle(samples).items()):
        G = sample_globals(group, specs[name], stats.global_features)
        Y = np.array([s.targets.sum(axis=0) for s in group])[:, None, :]
        out.append(TensorSet(name, stats.normalize_G(G), np.zeros((len(group), 1, 0)),
                             stats.normalize_Y(Y), np.ones((len(group), 1)),
                             np.array([s.rho for s in group]),
                             np.array([s.case_id for s in group], dtype=object)))
    return out


def global_only_stats(samples: Sequence[Sample], specs: dict) -> NormStats:
    G, Y = [], []
    for name, group in sorted(group_by_vehicle(samples).items()):
        G.append(sample_globals(group, specs[name]))
        Y.append(np.array([s.targets.sum(axis=0) for s in group])[:, None, :])
    return NormStats.from_arrays(np.concatenate(G), Y)


def ablation_variants(config: TrainConfig) -> dict:
    """Builders ``(stats) -> SurrogateModel`` for the full model and the three ablations.

    ``dims_stripped`` drops L/W/H from the global vector; ``patch_merged`` is the
    full architecture applied to a merged-patch vehicle (the merge itself
    happens in the data); ``global_only`` maps global features straight to net F/rho.
    """
    def full(stats):
        return init_model(ft.D_S, len(stats.global_features), config.hidden, config.seed, stats,
                          variant="full")

    def dims_stripped(stats):
        if stats.global_features != STRIPPED_FEATURES:
            raise SchemaError("dims-stripped variant needs statistics over the 9 stripped features")
        return init_model(ft.D_S, len(STRIPPED_FEATURES), config.hidden, config.seed, stats,
                          variant="dims_stripped")

    def patch_merged(stats):
        return init_model(ft.D_S, len(stats.global_features), config.hidden, config.seed, stats,
                          variant="patch_merged")

    def global_only(stats):
        return init_model(0, len(stats.global_features), config.hidden, config.seed, stats,
                          variant="global_only")

    return {"full": full, "dims_stripped": dims_stripped, "patch_merged": patch_merged,
            "global_only": global_only}


# -- weight files ---------------------------------------------------------------
# layout: magic(4) version(u16) header_len(u32) header(json) arrays(f64 LE, PARAM_NAMES order)
#         sha256(32) over everything before it

def save_weights(model: SurrogateModel, path: str | Path) -> None:
    header = {"schema": model.schema, "variant": model.variant, "d_s": model.d_s,
              "d_g": model.d_g, "hidden": model.hidden,
              "global_features": list(model.global_features),
              "surface_features": list(ft.SURFACE_FEATURES) if model.d_s else [],
              "shapes": {k: list(model.params[k].shape) for k in PARAM_NAMES},
              "stats": model.stats.to_dict() if model.stats is not None else None,
              "config_fingerprint": model.config_fingerprint, "seed": model.seed}
    hb = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(WEIGHTS_MAGIC + struct.pack("<HI", WEIGHTS_VERSION, len(hb)) + hb)
    for k in PARAM_NAMES:
        buf.write(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())
    body = buf.getvalue()
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_weights(path: str | Path, global_features: Sequence[str] | None = None
                 ) -> SurrogateModel:
    """Load a weight file; ``global_features`` pins the feature schema the caller expects."""
    data = Path(path).read_bytes()
    if len(data) < 42 or data[:4] != WEIGHTS_MAGIC:
        raise SchemaError(f"{path}: not a weight file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupted")
    version, hlen = struct.unpack_from("<HI", body, 4)
    if version != WEIGHTS_VERSION:
        raise SchemaError(f"{path}: weight format version {version}, expected {WEIGHTS_VERSION}")
    header = json.loads(body[10:10 + hlen])
    if header["schema"] != ft.SCHEMA_VERSION:
        raise SchemaError(f"{path}: feature schema {header['schema']!r}, "
                          f"expected {ft.SCHEMA_VERSION!r}")
    if global_features is not None and tuple(header["global_features"]) != tuple(global_features):
        raise SchemaError(f"{path}: model uses {len(header['global_features'])} global features "
                          f"{header['global_features']}, pipeline provides {len(global_features)}")
    off = 10 + hlen
    params = {}
    for k in PARAM_NAMES:
        shape = tuple(header["shapes"][k])
        n = int(np.prod(shape))
        params[k] = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    stats = NormStats.from_dict(header["stats"]) if header["stats"] else None
    return SurrogateModel(params, header["d_s"], header["d_g"], stats,
                          tuple(header["global_features"]), header["schema"], header["variant"],
                          header["config_fingerprint"], header["seed"])
