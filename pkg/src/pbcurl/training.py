"""Bound-minimising training loops, optimizers, and the hyperparameter grid.

Two certificate objectives are trainable, both over the posterior means, the
posterior log variances, and the scalar prior log variance:

  iid      lam * m * L_hat(Q) + KL(Q||P) + 2 log(grid_b * log(grid_c / sigma2_p))
  noniid   L_hat(Q) + pi * j * sqrt( B_l^2 (1 + 8T) (chi2 + 1) / (24 m delta) )

plus two deterministic baselines (plain empirical risk minimisation of the
contrastive loss, and a supervised head on labeled data). Gradients are
analytic throughout; one fresh weight sample per minibatch step.
"""

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import bounds, divergences, evaluation, losses, network
from .data import concat_contrastive

_REJECT_LIMIT = 40


class NumericAbort(RuntimeError):
    """Objective or gradient became NaN, or rejection retries ran out."""


OBJECTIVES = ("iid", "noniid", "erm", "supervised")
OPTIMIZERS = ("sgd", "rmsprop", "adam")
LOSS_KINDS = ("logistic", "hinge")
VALID_METRICS = ("mc", "map")


@dataclass
class TrainConfig:
    layer_sizes: tuple
    objective: str = "iid"
    loss_kind: str = "logistic"
    k: int = 4
    block_size: int = 2
    lam: float = 1.0
    grid_b: float = 100.0
    grid_c: float = 0.1
    delta: float = 0.05
    sigma2_p_init: float | None = None   # default: exp(-8) iid, exp(-5) noniid
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 500
    batch_size: int = 100
    lr_drop_frac: float = 0.75
    patience: int = 20
    early_stop: bool = True
    valid_metric: str = "mc"
    n_valid_samples: int = 10
    optimize_prior: bool = True
    loss_scale: float = 1.0
    n_classes: int | None = None         # supervised head width
    seed: int = 0

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output width")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.valid_metric not in VALID_METRICS:
            raise ValueError(f"valid_metric must be one of {VALID_METRICS}")
        if self.objective == "supervised" and not self.n_classes:
            raise ValueError("supervised objective needs n_classes")
        for name in ("lam", "grid_b", "lr", "loss_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.grid_c <= 0:
            raise ValueError("grid_c must be positive")
        for name in ("k", "block_size", "epochs", "batch_size", "patience", "n_valid_samples"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.sigma2_p_init is None:
            self.sigma2_p_init = math.exp(-8.0) if self.objective != "noniid" else math.exp(-5.0)
        if not 0.0 < self.sigma2_p_init < self.grid_c * math.exp(-1.0 / self.grid_b):
            raise ValueError("sigma2_p_init must lie in (0, grid_c * exp(-1/grid_b))")

    def to_dict(self):
        doc = dataclasses.asdict(self)
        doc["layer_sizes"] = list(self.layer_sizes)
        return doc

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "layer_sizes" not in doc:
            raise ValueError("config requires layer_sizes")
        return cls(**doc)


# ---------------------------------------------------------------------------
# optimizers (first-published update rules, state per parameter group)


class SGDMomentum:
    def __init__(self, beta=0.9):
        self.beta = beta
        self.v = {}

    def update(self, grads, lr):
        deltas = {}
        for key, g in grads.items():
            v = self.v.get(key, 0.0)
            v = self.beta * v + g
            self.v[key] = v
            deltas[key] = -lr * v
        return deltas


class RMSProp:
    def __init__(self, decay=0.99, eps=1e-8):
        self.decay = decay
        self.eps = eps
        self.s = {}

    def update(self, grads, lr):
        deltas = {}
        for key, g in grads.items():
            s = self.s.get(key, 0.0)
            s = self.decay * s + (1.0 - self.decay) * g * g
            self.s[key] = s
            deltas[key] = -lr * g / (np.sqrt(s) + self.eps)
        return deltas


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, {}

    def update(self, grads, lr):
        deltas = {}
        for key, g in grads.items():
            t = self.t.get(key, 0) + 1
            m = self.beta1 * self.m.get(key, 0.0) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(key, 0.0) + (1.0 - self.beta2) * g * g
            self.t[key], self.m[key], self.v[key] = t, m, v
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            deltas[key] = -lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return deltas


def make_optimizer(kind):
    if kind == "sgd":
        return SGDMomentum()
    if kind == "rmsprop":
        return RMSProp()
    if kind == "adam":
        return Adam()
    raise ValueError(f"unknown optimizer: {kind!r}")


# ---------------------------------------------------------------------------
# loss + gradient w.r.t. the flat weight vector, batched over tuples


def contrastive_loss_and_wgrad(layer_sizes, w, anchor, pos, neg, loss_kind, loss_scale=1.0):
    """Mean tuple loss over the batch and its gradient w.r.t. w.

    anchor (n, d0), pos (n, b, d0), neg (n, k, b, d0). All forward passes go
    through the network as one stacked matrix.
    """
    n, b, d0 = pos.shape[0], pos.shape[1], pos.shape[2]
    k = neg.shape[1]
    x = np.concatenate([anchor, pos.reshape(n * b, d0), neg.reshape(n * k * b, d0)])
    out, cache = network.forward_cached(layer_sizes, w, x)
    d = out.shape[1]
    a_out = out[:n]
    p_out = out[n : n + n * b].reshape(n, b, d)
    g_out = out[n + n * b :].reshape(n, k, b, d)

    margins = losses.contrastive_margins(a_out, p_out, g_out)
    loss = loss_scale * float(np.mean(losses.loss_value(margins, loss_kind)))

    dv = losses.loss_margin_grad(margins, loss_kind) * (loss_scale / n)   # (n, k)
    p_mean = np.mean(p_out, axis=1)
    g_mean = np.mean(g_out, axis=2)
    d_anchor = np.einsum("nk,nkd->nd", dv, p_mean[:, None, :] - g_mean)
    d_pos = (np.sum(dv, axis=1)[:, None] * a_out / b)[:, None, :].repeat(b, axis=1)
    d_neg = (-dv[:, :, None] * a_out[:, None, :] / b)[:, :, None, :].repeat(b, axis=2)
    d_out = np.concatenate(
        [d_anchor, d_pos.reshape(n * b, d), d_neg.reshape(n * k * b, d)]
    )
    return loss, network.backprop(layer_sizes, w, cache, d_out), margins


def supervised_loss_and_wgrad(layer_sizes, w, x, y, loss_kind, loss_scale=1.0):
    """Multiclass margin loss o_y - o_y' fed through the tuple loss family."""
    out, cache = network.forward_cached(layer_sizes, w, x)
    n, c = out.shape
    cols = np.arange(c)
    other = np.stack([cols[cols != yi] for yi in y])          # (n, c-1)
    rows = np.arange(n)[:, None]
    margins = out[rows, y[:, None]] - out[rows, other]        # (n, c-1)
    loss = loss_scale * float(np.mean(losses.loss_value(margins, loss_kind)))

    dv = losses.loss_margin_grad(margins, loss_kind) * (loss_scale / n)
    d_out = np.zeros_like(out)
    np.add.at(d_out, (rows.repeat(c - 1, axis=1), other), -dv)
    d_out[np.arange(n), y] = np.sum(dv, axis=1)
    return loss, network.backprop(layer_sizes, w, cache, d_out)


# ---------------------------------------------------------------------------
# objectives: value + grads for {mu_q, log_s2_q, log_s2_p}


def iid_objective(layer_sizes, post, prior, batch, eps, *, lam, m, grid_b, grid_c,
                  loss_kind, loss_scale=1.0, optimize_prior=True):
    """Catoni-style trainable bound; the batch mean estimates L_hat."""
    anchor, pos, neg = batch
    w = network.sample_weights(post, eps)
    loss, d_w, _ = contrastive_loss_and_wgrad(
        layer_sizes, w, anchor, pos, neg, loss_kind, loss_scale
    )
    kl = divergences.kl_gaussian(post.mu, post.log_sigma2, prior.mu, prior.log_sigma2)
    log_j = math.log(grid_b) + math.log(math.log(grid_c) - prior.log_sigma2)
    value = lam * m * loss + kl + 2.0 * log_j

    d_mu, d_ls_q = network.posterior_grads_from_weight_grad(post, eps, lam * m * d_w)
    kl_mu, kl_ls_q, kl_ls_p = divergences.kl_gaussian_grads(
        post.mu, post.log_sigma2, prior.mu, prior.log_sigma2
    )
    grads = {
        "mu_q": d_mu + kl_mu,
        "log_s2_q": d_ls_q + kl_ls_q,
    }
    if optimize_prior:
        pen_ls_p = -2.0 / (math.log(grid_c) - prior.log_sigma2)
        grads["log_s2_p"] = np.array([kl_ls_p + pen_ls_p])
    stats = {"loss": loss, "kl": kl}
    return value, grads, stats


def noniid_objective(layer_sizes, post, prior, batch, eps, *, m, delta, dependency_t,
                     loss_sup, grid_b, grid_c, loss_kind, loss_scale=1.0,
                     optimize_prior=True):
    """Chi-square trainable bound. loss_sup (B_l) is a per-epoch constant.

    Returns value = +inf (no grads) when the penalty overflows; the caller
    rejects the step.
    """
    anchor, pos, neg = batch
    w = network.sample_weights(post, eps)
    loss, d_w, _ = contrastive_loss_and_wgrad(
        layer_sizes, w, anchor, pos, neg, loss_kind, loss_scale
    )
    j = grid_b * (math.log(grid_c) - prior.log_sigma2)
    log1p, c_mu, c_ls_q, c_ls_p = divergences.chi2_log1p_grads(
        post.mu, post.log_sigma2, prior.mu, prior.log_sigma2
    )
    log_const = 0.5 * (
        2.0 * math.log(loss_sup)
        + math.log(1.0 + 8.0 * dependency_t)
        - math.log(24.0 * m * delta)
    )
    log_pen_over_j = 0.5 * log1p + log_const
    if not np.isfinite(log1p) or log_pen_over_j + math.log(math.pi * j) > 700.0:
        return math.inf, None, {"loss": loss, "chi2_log1p": float(log1p)}
    pen = math.pi * j * math.exp(log_pen_over_j)
    value = loss + pen

    d_mu, d_ls_q = network.posterior_grads_from_weight_grad(post, eps, d_w)
    grads = {
        "mu_q": d_mu + pen * 0.5 * c_mu,
        "log_s2_q": d_ls_q + pen * 0.5 * c_ls_q,
    }
    if optimize_prior:
        # j depends on log sigma2_p with dj/dt = -grid_b
        d_pen_ls_p = math.pi * (-grid_b) * math.exp(log_pen_over_j) + pen * 0.5 * c_ls_p
        grads["log_s2_p"] = np.array([d_pen_ls_p])
    stats = {"loss": loss, "chi2_log1p": log1p, "penalty": pen}
    return value, grads, stats


# ---------------------------------------------------------------------------
# dataset-level estimates used for validation metrics


def map_dataset_loss(layer_sizes, w, ds, loss_kind, n_layers=None):
    out = network.forward(layer_sizes, w, ds.features, n_layers=n_layers)
    margins = losses.contrastive_margins(
        out[ds.anchors], out[ds.positives], out[ds.negatives]
    )
    return float(np.mean(losses.loss_value(margins, loss_kind)))


def map_supervised_loss(layer_sizes, w, labeled, loss_kind):
    loss, _ = supervised_loss_and_wgrad(layer_sizes, w, labeled.x, labeled.y, loss_kind)
    return loss


@dataclass
class RunRecord:
    run_id: str
    mode: str                       # "valid-mc" | "valid-map" | "pb"
    config: dict
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    metric: float | None = None
    checkpoint_path: str | None = None
    aborted: bool = False
    abort_reason: str | None = None
    wall_time: float = 0.0
    selection: dict | None = None

    def to_dict(self):
        return dataclasses.asdict(self)


def _clamp_prior(params, grid_b, grid_c):
    """Keep the prior variance on the grid's interior, j >= 1."""
    cap = math.log(grid_c) - 1.0 / grid_b
    if params["log_s2_p"][0] > cap:
        params["log_s2_p"][0] = cap
        return 1
    return 0


def train(cfg, data, valid=None, run_dir=None, run_id="run", mode=None):
    """Minimise cfg.objective on data; early stop on valid when configured.

    data/valid are ContrastiveDataset for the contrastive objectives and
    LabeledDataset for the supervised baseline. Returns a RunRecord; the
    checkpoint is written under run_dir when given (best validation epoch if
    early stopping is active, else the final epoch).
    """
    t0 = time.perf_counter()
    root = np.random.SeedSequence(cfg.seed)
    init_rng, batch_rng, eps_rng, valid_rng = (
        np.random.default_rng(s) for s in root.spawn(4)
    )

    stochastic = cfg.objective in ("iid", "noniid")
    layer_sizes = cfg.layer_sizes
    feature_layers = None
    if cfg.objective == "supervised":
        layer_sizes = cfg.layer_sizes + (cfg.n_classes,)
        feature_layers = len(cfg.layer_sizes) - 1

    post, prior = network.init_network(layer_sizes, cfg.sigma2_p_init, init_rng)
    params = {"mu_q": post.mu}
    if stochastic:
        params["log_s2_q"] = post.log_sigma2
        if cfg.optimize_prior:
            params["log_s2_p"] = np.array([prior.log_sigma2])
    opt = make_optimizer(cfg.optimizer)

    m = len(data)
    n_steps = max(1, math.ceil(m / cfg.batch_size))
    drop_epoch = math.ceil(cfg.lr_drop_frac * cfg.epochs)
    early_stop = cfg.early_stop and valid is not None

    mode = mode or ("valid-" + cfg.valid_metric if early_stop else "pb")
    record = RunRecord(run_id=run_id, mode=mode, config=cfg.to_dict())
    best_metric, best_state, best_epoch = math.inf, None, 0
    since_best = 0
    epochs_done = 0

    def snapshot():
        return (post.copy(), prior.copy())

    def current_prior():
        if "log_s2_p" in params:
            prior.log_sigma2 = float(params["log_s2_p"][0])
        return prior

    last_deltas = None
    clamp_count = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            lr = cfg.lr / 10.0 if epoch >= drop_epoch else cfg.lr
            order = batch_rng.permutation(m)
            obj_sum, rejections = 0.0, 0
            loss_sup = None
            if cfg.objective == "noniid":
                b_feat = network.feature_bound(layer_sizes, post.mu, data.features)
                loss_sup = losses.loss_range(cfg.loss_kind, b_feat, cfg.k)

            for step in range(n_steps):
                idx = order[step * cfg.batch_size : (step + 1) * cfg.batch_size]
                if cfg.objective in ("iid", "noniid", "erm"):
                    batch = data.gather(idx)
                eps = network.sample_eps(post.n_params, eps_rng) if stochastic else None

                retries = 0
                while True:
                    if cfg.objective == "iid":
                        value, grads, _ = iid_objective(
                            layer_sizes, post, current_prior(), batch, eps,
                            lam=cfg.lam, m=m, grid_b=cfg.grid_b, grid_c=cfg.grid_c,
                            loss_kind=cfg.loss_kind, loss_scale=cfg.loss_scale,
                            optimize_prior=cfg.optimize_prior,
                        )
                    elif cfg.objective == "noniid":
                        value, grads, _ = noniid_objective(
                            layer_sizes, post, current_prior(), batch, eps,
                            m=m, delta=cfg.delta,
                            dependency_t=data.dependency_t,
                            loss_sup=loss_sup, grid_b=cfg.grid_b, grid_c=cfg.grid_c,
                            loss_kind=cfg.loss_kind, loss_scale=cfg.loss_scale,
                            optimize_prior=cfg.optimize_prior,
                        )
                    elif cfg.objective == "erm":
                        value, d_w, _ = contrastive_loss_and_wgrad(
                            layer_sizes, post.mu, *batch, cfg.loss_kind, cfg.loss_scale
                        )
                        grads = {"mu_q": d_w}
                    else:
                        xb, yb = data.x[idx], data.y[idx]
                        value, d_w = supervised_loss_and_wgrad(
                            layer_sizes, post.mu, xb, yb, cfg.loss_kind, cfg.loss_scale
                        )
                        grads = {"mu_q": d_w}

                    if math.isnan(value):
                        raise NumericAbort(
                            f"objective is NaN at epoch {epoch} step {step}"
                        )
                    if math.isinf(value):
                        # chi-square penalty overflowed: reject the previous
                        # update and retry it at half the step
                        if last_deltas is None:
                            raise NumericAbort(
                                f"objective overflowed at initialisation (epoch {epoch})"
                            )
                        if retries >= _REJECT_LIMIT:
                            raise NumericAbort(
                                f"step rejected {retries} times at epoch {epoch} step {step}"
                            )
                        for key, dlt in last_deltas.items():
                            params[key] -= dlt
                            dlt *= 0.5
                            params[key] += dlt
                        rejections += 1
                        retries += 1
                        continue
                    break

                if any(not np.all(np.isfinite(g)) for g in grads.values()):
                    raise NumericAbort(f"gradient not finite at epoch {epoch} step {step}")
                deltas = opt.update(grads, lr)
                for key, dlt in deltas.items():
                    params[key] += dlt
                if "log_s2_p" in params:
                    clamp_count += _clamp_prior(params, cfg.grid_b, cfg.grid_c)
                    prior.log_sigma2 = float(params["log_s2_p"][0])
                last_deltas = deltas
                obj_sum += value

            epochs_done = epoch
            entry = {
                "epoch": epoch,
                "lr": lr,
                "train_objective": obj_sum / n_steps,
                "rejections": rejections,
            }
            if loss_sup is not None:
                entry["loss_sup"] = loss_sup

            valid_mc = valid_map = None
            if valid is not None:
                if cfg.objective == "supervised":
                    valid_map = map_supervised_loss(layer_sizes, post.mu, valid, cfg.loss_kind)
                elif stochastic:
                    valid_mc, _ = evaluation.mc_posterior_risk(
                        layer_sizes, post, valid, cfg.n_valid_samples,
                        "loss", cfg.loss_kind, valid_rng,
                    )
                    valid_map = map_dataset_loss(layer_sizes, post.mu, valid, cfg.loss_kind)
                else:
                    valid_map = map_dataset_loss(layer_sizes, post.mu, valid, cfg.loss_kind)
                entry["valid_mc"] = valid_mc
                entry["valid_map"] = valid_map
            record.epochs.append(entry)

            if early_stop:
                metric = valid_mc if (cfg.valid_metric == "mc" and valid_mc is not None) else valid_map
                if metric < best_metric:
                    best_metric, best_state, best_epoch = metric, snapshot(), epoch
                    since_best = 0
                else:
                    since_best += 1
                    if since_best >= cfg.patience:
                        break
    except NumericAbort as exc:
        record.aborted = True
        record.abort_reason = str(exc)

    record.stopped_epoch = epochs_done
    if early_stop and best_state is not None:
        post, prior = best_state
        record.best_epoch = best_epoch
        record.metric = best_metric
    else:
        record.best_epoch = epochs_done

    record.wall_time = time.perf_counter() - t0
    if run_dir is not None and not record.aborted:
        os.makedirs(run_dir, exist_ok=True)
        path = os.path.join(run_dir, f"{run_id}.ckpt.json")
        network.save_checkpoint(
            path,
            network.Checkpoint(
                layer_sizes=list(layer_sizes),
                posterior=post,
                prior=prior,
                seed=cfg.seed,
                epoch=record.best_epoch,
                config=cfg.to_dict(),
                feature_layers=feature_layers,
            ),
        )
        record.checkpoint_path = path
    record.final_posterior = post
    record.final_prior = prior
    record.extras = {"clamp_count": clamp_count}
    return record


# ---------------------------------------------------------------------------
# certificates on trained posteriors


def selection_certificate(layer_sizes, post, prior, ds, *, grid_b, grid_c, delta,
                          loss_kind, objective, n_samples, rng):
    """Model-selection certificate (zero-one risk) for a trained posterior."""
    m = len(ds)
    j = bounds.j_index(grid_b, grid_c, prior.sigma2)
    r_hat, draws = evaluation.mc_posterior_risk(
        layer_sizes, post, ds, n_samples, "zero-one", loss_kind, rng
    )
    if objective == "noniid":
        chi2 = divergences.chi2_gaussian(
            post.mu, post.log_sigma2, prior.mu, prior.log_sigma2
        )
        value = bounds.selection_bound_noniid(
            r_hat, j, chi2.log1p, m, delta, ds.dependency_t
        )
        return bounds.BoundReport(
            bound_kind="noniid-selection",
            bound_value=value,
            empirical_risk=r_hat,
            risk_kind="zero-one",
            loss_kind=loss_kind,
            divergence_kind="chi2",
            divergence_value=chi2.value,
            j=j, m=m, delta=delta,
            n_risk_samples=n_samples,
            dependency_t=ds.dependency_t,
            extras={
                "chi2_log1p": chi2.log1p,
                "chi2_overflowed": chi2.overflowed,
                "chi2_n_guarded": chi2.n_guarded,
                "risk_per_draw": [float(v) for v in draws],
            },
        )
    kl = divergences.kl_gaussian(post.mu, post.log_sigma2, prior.mu, prior.log_sigma2)
    value, lam_star = bounds.selection_bound_iid(r_hat, kl, j, m, delta)
    return bounds.BoundReport(
        bound_kind="iid-selection",
        bound_value=value,
        empirical_risk=r_hat,
        risk_kind="zero-one",
        loss_kind=loss_kind,
        divergence_kind="kl",
        divergence_value=kl,
        j=j, m=m, delta=delta,
        n_risk_samples=n_samples,
        lam=lam_star,
        extras={"risk_per_draw": [float(v) for v in draws]},
    )


def loss_certificate(layer_sizes, post, prior, ds, *, grid_b, grid_c, delta, loss_kind,
                     objective, n_samples, rng, lam=None, tau=None):
    """Bounded-loss certificate: supervised transfer (iid) or chi-square form."""
    m = len(ds)
    j = bounds.j_index(grid_b, grid_c, prior.sigma2)
    l_hat, draws = evaluation.mc_posterior_risk(
        layer_sizes, post, ds, n_samples, "loss", loss_kind, rng
    )
    b_feat = network.feature_bound(layer_sizes, post.mu, ds.features)
    loss_sup = losses.loss_range(loss_kind, b_feat, ds.k)
    if objective == "noniid":
        chi2 = divergences.chi2_gaussian(
            post.mu, post.log_sigma2, prior.mu, prior.log_sigma2
        )
        value = bounds.noniid_bound(l_hat, j, chi2.log1p, m, delta, ds.dependency_t, loss_sup)
        return bounds.BoundReport(
            bound_kind="noniid-loss",
            bound_value=value,
            empirical_risk=l_hat,
            risk_kind="loss",
            loss_kind=loss_kind,
            divergence_kind="chi2",
            divergence_value=chi2.value,
            j=j, m=m, delta=delta,
            n_risk_samples=n_samples,
            loss_sup=loss_sup,
            feature_bound=b_feat,
            dependency_t=ds.dependency_t,
            extras={
                "chi2_log1p": chi2.log1p,
                "chi2_overflowed": chi2.overflowed,
                "chi2_n_guarded": chi2.n_guarded,
                "risk_per_draw": [float(v) for v in draws],
            },
        )
    if lam is None:
        raise ValueError("iid loss certificate needs lambda")
    if tau is None:
        tau = ds.provenance.get("tau")
        if tau is None:
            raise ValueError("iid loss certificate needs tau (class collision probability)")
    kl = divergences.kl_gaussian(post.mu, post.log_sigma2, prior.mu, prior.log_sigma2)
    value = bounds.iid_supervised_bound(l_hat, kl, m, lam, delta, tau, loss_sup)
    return bounds.BoundReport(
        bound_kind="iid-loss",
        bound_value=value,
        empirical_risk=l_hat,
        risk_kind="loss",
        loss_kind=loss_kind,
        divergence_kind="kl",
        divergence_value=kl,
        j=j, m=m, delta=delta,
        n_risk_samples=n_samples,
        lam=lam,
        tau=tau,
        loss_sup=loss_sup,
        feature_bound=b_feat,
        extras={"risk_per_draw": [float(v) for v in draws]},
    )


# ---------------------------------------------------------------------------
# grid search over configs and selection criteria


CRITERIA = ("s-valid", "det-valid", "pb")

_CRITERION_MODE = {"s-valid": "valid-mc", "det-valid": "valid-map", "pb": "pb"}


def grid_search(configs, criteria, data, valid, out_dir, cert_samples=10):
    """Run every (config, criterion) pair and rank runs per criterion.

    s-valid and det-valid train on data with early stopping on the matching
    validation metric; pb trains on data + valid with early stopping off and
    scores by the model-selection certificate. Appends one line per run to
    runs.jsonl and writes leaderboard.csv; returns {criterion: best RunRecord}.
    """
    for c in criteria:
        if c not in CRITERIA:
            raise ValueError(f"unknown criterion {c!r}, expected one of {CRITERIA}")
    os.makedirs(out_dir, exist_ok=True)
    runs_path = os.path.join(out_dir, "runs.jsonl")
    rows = []
    with open(runs_path, "a") as runs_fh:
        for criterion in criteria:
            mode = _CRITERION_MODE[criterion]
            for gi, cfg in enumerate(configs):
                run_id = f"c{gi:03d}-{criterion}"
                if criterion == "pb":
                    cfg_run = dataclasses.replace(cfg, early_stop=False)
                    train_ds = concat_contrastive(data, valid) if valid is not None else data
                    rec = train(cfg_run, train_ds, None, run_dir=out_dir,
                                run_id=run_id, mode=mode)
                    if not rec.aborted:
                        cert_rng = np.random.default_rng(
                            np.random.SeedSequence([cfg.seed, 0xCE27]).generate_state(1)[0]
                        )
                        layer_sizes = tuple(rec.config["layer_sizes"])
                        report = selection_certificate(
                            layer_sizes, rec.final_posterior, rec.final_prior, train_ds,
                            grid_b=cfg.grid_b, grid_c=cfg.grid_c, delta=cfg.delta,
                            loss_kind=cfg.loss_kind, objective=cfg.objective,
                            n_samples=cert_samples, rng=cert_rng,
                        )
                        rec.metric = report.bound_value
                        rec.selection = report.to_dict()
                else:
                    cfg_run = dataclasses.replace(
                        cfg, valid_metric="mc" if criterion == "s-valid" else "map",
                        early_stop=True,
                    )
                    rec = train(cfg_run, data, valid, run_dir=out_dir,
                                run_id=run_id, mode=mode)
                runs_fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
                if rec.aborted or rec.metric is None:
                    continue
                rows.append((criterion, rec.metric, gi, run_id, rec.checkpoint_path, rec))

    # earlier grid position wins ties, so rankings are reproducible
    best = {}
    lb_path = os.path.join(out_dir, "leaderboard.csv")
    with open(lb_path, "w") as fh:
        fh.write("criterion,rank,run_id,metric,checkpoint\n")
        for criterion in criteria:
            ranked = sorted(
                (r for r in rows if r[0] == criterion), key=lambda r: (r[1], r[2])
            )
            if ranked:
                best[criterion] = ranked[0][5]
            for rank, (_, metric, gi, run_id, ckpt, _) in enumerate(ranked, start=1):
                fh.write(f"{criterion},{rank},{run_id},{metric!r},{ckpt}\n")
    return best
