"""Variational autoencoder used as the generative memory for pseudo-rehearsal.

Encoder: input -> hidden (ReLU) -> [mu, log_var]. Decoder: latent -> hidden
(ReLU) -> sigmoid. Both halves reuse ``ModelParams`` from :mod:`replaybench.nn`
and are trained with plain SGD on the negative ELBO, backpropagating by hand
through the reparameterised sample.
"""
from dataclasses import dataclass, replace
from pathlib import Path
import warnings

import numpy as np

from . import nn
from .errors import EmptyBatchWarning, NumericError, ShapeError
from .seeding import make_rng


@dataclass(frozen=True)
class VaeParams:
    encoder: nn.ModelParams
    decoder: nn.ModelParams
    latent_dim: int
    learning_rate: float

    def __post_init__(self):
        if self.encoder.out_dim != 2 * self.latent_dim:
            raise ShapeError("encoder must output 2 * latent_dim values")
        if self.decoder.in_dim != self.latent_dim:
            raise ShapeError("decoder input width must equal latent_dim")
        if self.decoder.out_dim != self.encoder.in_dim:
            raise ShapeError("decoder output width must equal the data width")

    @property
    def data_dim(self):
        return self.decoder.out_dim


@dataclass(frozen=True)
class PseudoBatch(nn.Batch):
    """Generated features with labels assigned by a frozen classifier."""


def init_vae(data_dim, seed, latent_dim=8, hidden=128, learning_rate=1e-3):
    rng = make_rng(seed)
    enc = nn.init_params([data_dim, hidden, 2 * latent_dim], rng)
    dec = nn.init_params([latent_dim, hidden, data_dim], rng)
    return VaeParams(enc, dec, latent_dim, learning_rate)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _mlp(params, x):
    (W1, b1), (W2, b2) = params.layers()
    z1 = x @ W1 + b1
    h = np.maximum(z1, 0.0)
    return z1, h, h @ W2 + b2


def _mlp_backward(params, x, z1, h, d_out):
    (W1, b1), (W2, b2) = params.layers()
    gW2, gb2 = h.T @ d_out, d_out.sum(axis=0)
    dh = (d_out @ W2.T) * (z1 > 0)
    gW1, gb1 = x.T @ dh, dh.sum(axis=0)
    dx = dh @ W1.T
    return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2]), dx


def draw_noise(vae, n, seed):
    return make_rng(seed).standard_normal((n, vae.latent_dim))


def elbo_terms(vae, x, noise):
    """Return ``(reconstruction, kl)`` batch means for explicit noise ``noise``."""
    L = vae.latent_dim
    _, _, enc_out = _mlp(vae.encoder, x)
    mu, log_var = enc_out[:, :L], enc_out[:, L:]
    z = mu + np.exp(0.5 * log_var) * noise
    _, _, logits = _mlp(vae.decoder, z)
    # binary cross-entropy on logits: softplus(z) - x * z
    recon = (_softplus(logits) - x * logits).sum(axis=1).mean()
    kl = (-0.5 * (1.0 + log_var - mu ** 2 - np.exp(log_var))).sum(axis=1).mean()
    return float(recon), float(kl)


def elbo_and_grads(vae, x, noise):
    """Negative ELBO and its gradients w.r.t. encoder and decoder vectors."""
    n, L = x.shape[0], vae.latent_dim
    z1e, he, enc_out = _mlp(vae.encoder, x)
    mu, log_var = enc_out[:, :L], enc_out[:, L:]
    std = np.exp(0.5 * log_var)
    z = mu + std * noise
    z1d, hd, logits = _mlp(vae.decoder, z)

    recon = (_softplus(logits) - x * logits).sum(axis=1).mean()
    kl = (-0.5 * (1.0 + log_var - mu ** 2 - np.exp(log_var))).sum(axis=1).mean()

    d_logits = (_sigmoid(logits) - x) / n
    g_dec, dz = _mlp_backward(vae.decoder, z, z1d, hd, d_logits)
    d_mu = dz + mu / n
    d_log_var = dz * 0.5 * std * noise + 0.5 * (np.exp(log_var) - 1.0) / n
    g_enc, _ = _mlp_backward(vae.encoder, x, z1e, he, np.hstack([d_mu, d_log_var]))
    return float(recon + kl), g_enc, g_dec


def _data(vae, batch):
    x = batch.features if isinstance(batch, nn.Batch) else np.asarray(batch, dtype=np.float64)
    if x.shape[0] and x.shape[1] != vae.data_dim:
        raise ShapeError(f"feature width {x.shape[1]} does not match VAE width {vae.data_dim}")
    return x


def elbo_loss(vae, batch, seed):
    """Negative ELBO (summed per-pixel BCE + KL, averaged over the batch)."""
    x = _data(vae, batch)
    if x.shape[0] == 0:
        warnings.warn("ELBO of an empty batch is defined as 0", EmptyBatchWarning, stacklevel=2)
        return 0.0
    recon, kl = elbo_terms(vae, x, draw_noise(vae, x.shape[0], seed))
    return recon + kl


def vae_train_step(vae, batch, seed):
    x = _data(vae, batch)
    if x.shape[0] == 0:
        raise ValueError("vae_train_step needs a non-empty batch")
    with np.errstate(over="ignore", invalid="ignore"):
        loss, g_enc, g_dec = elbo_and_grads(vae, x, draw_noise(vae, x.shape[0], seed))
    if not (np.isfinite(loss) and np.all(np.isfinite(g_enc)) and np.all(np.isfinite(g_dec))):
        raise NumericError("VAE training diverged (non-finite ELBO or gradient); lower vae_learning_rate")
    lr = vae.learning_rate
    return replace(
        vae,
        encoder=vae.encoder.with_flat(vae.encoder.flat - lr * g_enc),
        decoder=vae.decoder.with_flat(vae.decoder.flat - lr * g_dec),
    )


def decode(vae, z):
    _, _, logits = _mlp(vae.decoder, np.asarray(z, dtype=np.float64))
    return _sigmoid(logits)


def reconstruct(vae, x):
    """Decode the posterior means of ``x`` (no sampling)."""
    _, _, enc_out = _mlp(vae.encoder, _data(vae, x))
    return decode(vae, enc_out[:, :vae.latent_dim])


def vae_sample(vae, n, seed):
    """Decode ``n`` standard-normal latents; values are clipped to [0, 1]."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return np.zeros((0, vae.data_dim))
    z = make_rng(seed).standard_normal((n, vae.latent_dim))
    return np.clip(decode(vae, z), 0.0, 1.0)


def pseudo_label(classifier, features):
    """Hard labels from the classifier's eval-mode argmax (first index wins ties)."""
    x = np.clip(np.asarray(features, dtype=np.float64), 0.0, 1.0)
    if x.shape[0] == 0:
        return PseudoBatch(np.zeros((0, classifier.in_dim)), np.zeros(0, dtype=np.int64))
    probs = nn.predict(classifier, x)
    return PseudoBatch(x, np.argmax(probs, axis=1))


def write_pgm(path, image):
    """Write one grayscale image (values in [0, 1]) as binary P5 PGM."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    pixels = np.rint(img * 255).astype(np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def dump_samples(features, side, directory, prefix="sample"):
    """Write each row of ``features`` as a ``side`` x ``side`` PGM file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, row in enumerate(np.asarray(features)):
        p = directory / f"{prefix}_{i:04d}.pgm"
        write_pgm(p, row.reshape(side, side))
        paths.append(p)
    return paths
