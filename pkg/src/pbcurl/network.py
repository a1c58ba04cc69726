"""Stochastic fully connected ReLU networks with diagonal Gaussian posteriors.

Weights are governed by a factorised Gaussian posterior Q = N(mu_q, diag
sigma2_q) and a Gaussian prior P = N(mu_p, sigma2_p I) with a scalar prior
variance. Posterior variances are kept in log space. Forward and backward
passes are hand written numpy on a flat parameter vector.
"""

import json
from dataclasses import dataclass, field

import numpy as np


def param_count(layer_sizes):
    """Total parameter count: sum over layers of (fan_in + 1) * fan_out."""
    return sum((i + 1) * o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


def _layer_slices(layer_sizes):
    """Offsets of each (W, b) pair inside the flat parameter vector."""
    slices = []
    off = 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        w_sz = fan_in * fan_out
        slices.append((slice(off, off + w_sz), slice(off + w_sz, off + w_sz + fan_out)))
        off += w_sz + fan_out
    return slices


@dataclass
class Posterior:
    """Flat posterior parameters. sigma2_q = exp(log_sigma2)."""

    mu: np.ndarray
    log_sigma2: np.ndarray

    def copy(self):
        return Posterior(self.mu.copy(), self.log_sigma2.copy())

    @property
    def n_params(self):
        return self.mu.size


@dataclass
class Prior:
    """Gaussian prior with isotropic variance exp(log_sigma2)."""

    mu: np.ndarray
    log_sigma2: float

    def copy(self):
        return Prior(self.mu.copy(), float(self.log_sigma2))

    @property
    def sigma2(self):
        return float(np.exp(self.log_sigma2))


def truncated_normal(shape, std, rng, n_std=2.0):
    """Normal(0, std^2) samples with |x| > n_std * std redrawn until inside."""
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > n_std * std
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > n_std * std
    return out


def init_network(layer_sizes, sigma2_p, rng):
    """Draw initial posterior means and centre the prior on them.

    Weight means are truncated normal with per layer std 2 / fan_in, biases
    start at zero. Posterior log variances start at log(sigma2_p) so that
    KL(Q||P) = 0 at initialisation.
    """
    n = param_count(layer_sizes)
    mu = np.zeros(n)
    for (w_sl, _), fan_in in zip(_layer_slices(layer_sizes), layer_sizes[:-1]):
        mu[w_sl] = truncated_normal(w_sl.stop - w_sl.start, 2.0 / fan_in, rng)
    post = Posterior(mu=mu, log_sigma2=np.full(n, np.log(sigma2_p)))
    prior = Prior(mu=mu.copy(), log_sigma2=float(np.log(sigma2_p)))
    return post, prior


def sample_eps(n_params, rng):
    return rng.standard_normal(n_params)


def sample_weights(post, eps):
    """Reparameterised draw w = mu + sigma * eps."""
    return post.mu + np.exp(0.5 * post.log_sigma2) * eps


def map_weights(post):
    """Posterior mean network f* (the MAP network under the Gaussian)."""
    return post.mu.copy()


def forward(layer_sizes, w, x, n_layers=None):
    """Apply the network to a batch of rows.

    Parameters
    ----------
    layer_sizes : sequence of ints, input dim first.
    w : flat parameter vector.
    x : (n, d_in) array.
    n_layers : apply only the first n_layers affine layers (used to strip a
        classification head); defaults to all. ReLU after every layer except
        the final applied one.

    Returns
    -------
    (n, d_out) array.
    """
    out, _ = forward_cached(layer_sizes, w, x, n_layers=n_layers)
    return out


def forward_cached(layer_sizes, w, x, n_layers=None):
    """Forward pass keeping per layer activations for backprop."""
    slices = _layer_slices(layer_sizes)
    if n_layers is None:
        n_layers = len(slices)
    a = np.asarray(x, dtype=np.float64)
    cache = [a]
    for li in range(n_layers):
        w_sl, b_sl = slices[li]
        fan_in, fan_out = layer_sizes[li], layer_sizes[li + 1]
        wm = w[w_sl].reshape(fan_out, fan_in)
        z = a @ wm.T + w[b_sl]
        a = np.maximum(z, 0.0) if li < n_layers - 1 else z
        cache.append(a)
    return a, cache


def backprop(layer_sizes, w, cache, d_out, n_layers=None):
    """Gradient of sum(output * d_out) with respect to the flat weights.

    cache is the activation list from forward_cached on the same inputs.
    ReLU subgradient at 0 is 0.
    """
    slices = _layer_slices(layer_sizes)
    if n_layers is None:
        n_layers = len(slices)
    grad = np.zeros_like(w)
    delta = np.asarray(d_out, dtype=np.float64)
    for li in range(n_layers - 1, -1, -1):
        w_sl, b_sl = slices[li]
        fan_in, fan_out = layer_sizes[li], layer_sizes[li + 1]
        a_prev = cache[li]
        if li < n_layers - 1:
            delta = delta * (cache[li + 1] > 0.0)
        grad[w_sl] = (delta.T @ a_prev).ravel()
        grad[b_sl] = delta.sum(axis=0)
        if li > 0:
            wm = w[w_sl].reshape(fan_out, fan_in)
            delta = delta @ wm
    return grad


def posterior_grads_from_weight_grad(post, eps, d_w):
    """Chain d loss / d w through w = mu + exp(log_sigma2 / 2) * eps.

    Returns (d_mu, d_log_sigma2).
    """
    sigma = np.exp(0.5 * post.log_sigma2)
    return d_w, d_w * eps * sigma * 0.5


def feature_bound(layer_sizes, w, features, n_layers=None):
    """B = max_x ||f(x)||_2 over the given input rows."""
    out = forward(layer_sizes, w, features, n_layers=n_layers)
    return float(np.sqrt(np.max(np.sum(out * out, axis=1))))


@dataclass
class Checkpoint:
    layer_sizes: list
    posterior: Posterior
    prior: Prior
    seed: int
    epoch: int
    config: dict = field(default_factory=dict)
    feature_layers: int | None = None   # layers making up the feature map


def save_checkpoint(path, ckpt):
    """Write a checkpoint as JSON. Decimal float arrays round trip exactly."""
    doc = {
        "format": "pbcurl-checkpoint-v1",
        "layer_sizes": list(ckpt.layer_sizes),
        "mu_q": ckpt.posterior.mu.tolist(),
        "log_sigma2_q": ckpt.posterior.log_sigma2.tolist(),
        "mu_p": ckpt.prior.mu.tolist(),
        "sigma2_p": ckpt.prior.sigma2,
        "log_sigma2_p": ckpt.prior.log_sigma2,
        "seed": ckpt.seed,
        "epoch": ckpt.epoch,
        "config": ckpt.config,
        "feature_layers": ckpt.feature_layers,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "pbcurl-checkpoint-v1":
        raise ValueError(f"{path}: not a checkpoint file")
    post = Posterior(
        mu=np.asarray(doc["mu_q"], dtype=np.float64),
        log_sigma2=np.asarray(doc["log_sigma2_q"], dtype=np.float64),
    )
    prior = Prior(
        mu=np.asarray(doc["mu_p"], dtype=np.float64),
        log_sigma2=float(doc["log_sigma2_p"]),
    )
    return Checkpoint(
        layer_sizes=list(doc["layer_sizes"]),
        posterior=post,
        prior=prior,
        seed=int(doc["seed"]),
        epoch=int(doc["epoch"]),
        config=doc.get("config", {}),
        feature_layers=doc.get("feature_layers"),
    )
