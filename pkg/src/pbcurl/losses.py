"""Contrastive losses over anchor/positive/negative tuples.

A tuple holds one anchor x, a block of block_size positives drawn from the
anchor's latent class, and k blocks of negatives. Losses act on the k margins

    v_i = f(x) . ( mean_b f(x+) - mean_b f(x-_i) )

and are normalised so that ell(0) = 1 for both families (base-2 logistic,
hinge).
"""

from math import exp, log2

import numpy as np

LN2 = np.log(2.0)


def contrastive_margins(anchor_out, pos_out, neg_out):
    """Margins of a batch of tuples under an already-applied feature map.

    Parameters
    ----------
    anchor_out : (n, d) array, f(x) per tuple.
    pos_out : (n, b, d) array, f of each positive in the block.
    neg_out : (n, k, b, d) array, f of each negative, per negative block.

    Returns
    -------
    (n, k) array of margins, one per negative block.
    """
    anchor_out = np.asarray(anchor_out, dtype=np.float64)
    pos_mean = np.mean(pos_out, axis=1)                    # (n, d)
    neg_mean = np.mean(neg_out, axis=2)                    # (n, k, d)
    diff = pos_mean[:, None, :] - neg_mean                 # (n, k, d)
    return np.einsum("nd,nkd->nk", anchor_out, diff)


def logistic_loss(margins):
    """log2(1 + sum_i exp(-v_i)) per tuple, overflow safe.

    margins: (..., k). Returns array of shape margins.shape[:-1].
    """
    v = np.asarray(margins, dtype=np.float64)
    # log(1 + sum exp(-v)) = logaddexp(0, logsumexp(-v))
    ls = np.logaddexp.reduce(-v, axis=-1)
    return np.logaddexp(0.0, ls) / LN2


def logistic_margin_grad(margins):
    """d loss / d v_i for the logistic loss. Shape preserved."""
    v = np.asarray(margins, dtype=np.float64)
    ls = np.logaddexp.reduce(-v, axis=-1)
    total = np.logaddexp(0.0, ls)                          # log(1 + sum exp(-v))
    return -np.exp(-v - total[..., None]) / LN2


def hinge_loss(margins):
    """max(0, 1 + max_i(-v_i)) per tuple."""
    v = np.asarray(margins, dtype=np.float64)
    return np.maximum(0.0, 1.0 - np.min(v, axis=-1))


def hinge_margin_grad(margins):
    """Subgradient of the hinge loss; ties resolved to the first minimum."""
    v = np.asarray(margins, dtype=np.float64)
    flat = v.reshape(-1, v.shape[-1])
    g = np.zeros_like(flat)
    rows = np.nonzero(1.0 - np.min(flat, axis=-1) > 0.0)[0]
    g[rows, np.argmin(flat, axis=-1)[rows]] = -1.0
    return g.reshape(v.shape)


def loss_value(margins, kind):
    if kind == "logistic":
        return logistic_loss(margins)
    if kind == "hinge":
        return hinge_loss(margins)
    raise ValueError(f"unknown loss kind: {kind!r}")


def loss_margin_grad(margins, kind):
    if kind == "logistic":
        return logistic_margin_grad(margins)
    if kind == "hinge":
        return hinge_margin_grad(margins)
    raise ValueError(f"unknown loss kind: {kind!r}")


def zero_one_risk(margins):
    """Fraction of negative blocks ranked above the positive, per tuple.

    A margin of exactly zero counts as correct.
    """
    v = np.asarray(margins, dtype=np.float64)
    return np.mean(v < 0.0, axis=-1)


def loss_range(kind, feature_bound, k):
    """Supremum of the loss over representations with ||f(x)|| <= B.

    Each margin lies in [-2B^2, 2B^2], hence logistic <= log2(1 + k e^{2B^2})
    and hinge <= 1 + 2B^2.
    """
    b2 = 2.0 * feature_bound * feature_bound
    if kind == "logistic":
        return log2(1.0 + k * exp(b2))
    if kind == "hinge":
        return 1.0 + b2
    raise ValueError(f"unknown loss kind: {kind!r}")


def loss_at_zero(kind, n_zero):
    """ell(0_j): value of the loss on a j-vector of zero margins."""
    if n_zero < 1:
        raise ValueError("n_zero must be >= 1")
    if kind == "logistic":
        return log2(1.0 + n_zero)
    if kind == "hinge":
        return 1.0
    raise ValueError(f"unknown loss kind: {kind!r}")
