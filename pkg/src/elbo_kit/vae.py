"""Minimal VAE: Gaussian encoder, Bernoulli decoder, negative-ELBO training.

The encoder maps a datum to the mean and log-variance of a diagonal
Gaussian over latents; the decoder maps a latent draw to Bernoulli logits
over the data dimensions.  The per-datum training loss is

    KL(q(z|x) || N(0, I))  -  (1/L) sum_l log p(x | z_l),

with z_l = mu + sigma * eps_l and the KL term in closed form (it is never
sampled).  The batch objective is the mean over the batch, so learning
rates do not depend on batch size.  Gradients are assembled by hand:
through the decoder via the stable logit-space Bernoulli derivative,
through the sampling via the reparameterization (eps held constant), and
through the closed-form KL directly.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, replace

import numpy as np

from elbo_kit.gaussian_core import DiagonalGaussian, RngState
from elbo_kit.neural import (
    AdamConfig,
    Gradients,
    Layer,
    MlpParams,
    adam_step,
    add_grads,
    backward,
    forward,
    init_adam_state,
    init_mlp,
)

# rng stream ids within one run (see RngState.split)
_INIT_STREAM = 1
_TRAIN_STREAM = 2

DEFAULT_LOGVAR_CLAMP = (-10.0, 10.0)


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on, seed included."""

    latent_dim: int = 2
    recon_samples: int = 1
    batch_size: int = 64
    epochs: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    logvar_clamp: tuple[float, float] = DEFAULT_LOGVAR_CLAMP
    hidden_units: int = 32

    def __post_init__(self):
        if self.latent_dim < 1 or self.recon_samples < 1:
            raise ValueError("latent_dim and recon_samples must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        lo, hi = self.logvar_clamp
        if not lo < hi:
            raise ValueError(f"clamp bounds must be ordered, got {self.logvar_clamp}")


@dataclass
class VaeModel:
    """Encoder (data_dim -> 2J: mean head then log-variance head) and
    decoder (J -> data_dim Bernoulli logits)."""

    encoder: MlpParams
    decoder: MlpParams
    latent_dim: int
    data_dim: int

    def __post_init__(self):
        if self.encoder.out_dim != 2 * self.latent_dim:
            raise ValueError(
                f"encoder must output 2 * latent_dim = {2 * self.latent_dim} values, "
                f"got {self.encoder.out_dim}"
            )
        if self.decoder.layers[0].weight.shape[1] != self.latent_dim:
            raise ValueError("decoder input width must equal latent_dim")
        if self.encoder.in_dim != self.data_dim or self.decoder.out_dim != self.data_dim:
            raise ValueError("encoder input and decoder output must equal data_dim")


@dataclass(frozen=True)
class LossReport:
    """One objective evaluation; total is always kl + recon (both minimized)."""

    total_loss: float
    kl_component: float
    recon_component: float
    epoch: int
    batch: int


class TrainingDivergedError(RuntimeError):
    """Non-finite loss during training; carries the last good state."""

    def __init__(self, message, last_model, history):
        super().__init__(message)
        self.last_model = last_model
        self.history = history


def init_vae(data_dim: int, config: TrainConfig) -> VaeModel:
    """Seeded model: one tanh hidden layer in each of encoder and decoder."""
    rng = RngState(config.seed).split(_INIT_STREAM)
    encoder = init_mlp([data_dim, config.hidden_units, 2 * config.latent_dim], rng)
    decoder = init_mlp([config.latent_dim, config.hidden_units, data_dim], rng)
    return VaeModel(
        encoder=encoder, decoder=decoder, latent_dim=config.latent_dim, data_dim=data_dim
    )


def _check_data(x: np.ndarray, data_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != data_dim:
        raise ValueError(f"data has shape {x.shape}, expected (batch, {data_dim})")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("data values must lie in [0, 1]")
    return x


def _encode_arrays(model: VaeModel, x: np.ndarray, clamp):
    """Forward the encoder; returns (mu, raw logvar, clamped logvar, tape)."""
    out, tape = forward(model.encoder, x)
    if not np.all(np.isfinite(out)):
        raise ValueError("encoder produced non-finite outputs")
    j = model.latent_dim
    mu = out[:, :j]
    logvar_raw = out[:, j:]
    logvar = np.clip(logvar_raw, clamp[0], clamp[1])
    return mu, logvar_raw, logvar, tape


def encode(
    model: VaeModel, x: np.ndarray, clamp: tuple[float, float] = DEFAULT_LOGVAR_CLAMP
) -> list[DiagonalGaussian]:
    """Per-datum approximate posteriors q(z|x).

    The log-variance head is clamped to ``clamp`` before exponentiation, so
    the returned variances are positive and bounded by construction.
    """
    x = _check_data(x, model.data_dim)
    mu, _, logvar, _ = _encode_arrays(model, x, clamp)
    var = np.exp(logvar)
    return [DiagonalGaussian(mean=mu[b], variance=var[b]) for b in range(x.shape[0])]


def _softplus(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _bernoulli_loglik(logits: np.ndarray, x: np.ndarray) -> np.ndarray:
    # per-dim x*log s + (1-x)*log(1-s) collapses to x*l - softplus(l); never
    # materializes log(1 - s), so it stays finite for any logit magnitude
    return np.sum(x * logits - _softplus(logits), axis=1)


def decode_log_likelihood(model: VaeModel, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-datum Bernoulli log-likelihood of x under the decoded logits.

    Args:
        z: latents, shape ``(batch, J)``.
        x: targets in [0, 1], shape ``(batch, data_dim)``.

    Returns:
        Log-likelihoods, shape ``(batch,)``.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.latent_dim:
        raise ValueError(f"z has shape {z.shape}, expected (batch, {model.latent_dim})")
    x = _check_data(x, model.data_dim)
    if z.shape[0] != x.shape[0]:
        raise ValueError("z and x batch sizes differ")
    logits, _ = forward(model.decoder, z)
    return _bernoulli_loglik(logits, x)


def decode_probabilities(model: VaeModel, z: np.ndarray) -> np.ndarray:
    """Per-dimension Bernoulli means sigmoid(logits) for a latent batch."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.latent_dim:
        raise ValueError(f"z has shape {z.shape}, expected (batch, {model.latent_dim})")
    logits, _ = forward(model.decoder, z)
    return _sigmoid(logits)


def _loss_core(model: VaeModel, x: np.ndarray, L: int, eps: np.ndarray, clamp):
    """Shared loss computation; eps has shape (L, batch, J)."""
    batch = x.shape[0]
    mu, logvar_raw, logvar, enc_tape = _encode_arrays(model, x, clamp)
    var = np.exp(logvar)
    sigma = np.exp(0.5 * logvar)

    # closed-form KL against N(0, I), per datum
    kl = -0.5 * np.sum(1.0 + logvar - var - mu**2, axis=1)

    recon_neg = np.zeros(batch)  # per-datum -(1/L) sum_l log p(x|z_l)
    dec_grads = None
    d_mu = mu / batch  # d total / d mu, KL part
    d_logvar = 0.5 * (var - 1.0) / batch
    scale = 1.0 / (batch * L)
    for l in range(L):
        z = mu + sigma * eps[l]
        logits, dec_tape = forward(model.decoder, z)
        ll = _bernoulli_loglik(logits, x)
        recon_neg -= ll / L
        up = scale * (_sigmoid(logits) - x)
        g, dz = backward(model.decoder, dec_tape, up)
        dec_grads = g if dec_grads is None else add_grads(dec_grads, g)
        d_mu += dz
        d_logvar += dz * eps[l] * (0.5 * sigma)

    # the clamp is flat outside its bounds, so no gradient passes there
    d_logvar *= (logvar_raw > clamp[0]) & (logvar_raw < clamp[1])
    enc_up = np.concatenate([d_mu, d_logvar], axis=1)
    enc_grads, _ = backward(model.encoder, enc_tape, enc_up)

    total = kl + recon_neg
    if not np.all(np.isfinite(total)):
        bad = int(np.flatnonzero(~np.isfinite(total))[0])
        raise ValueError(f"non-finite loss at datum {bad}: {total[bad]}")
    return total, kl, recon_neg, enc_grads, dec_grads


def _draw_eps(L: int, batch: int, j: int, rng: RngState) -> np.ndarray:
    return rng.normals(L * batch * j).reshape(L, batch, j)


def loss(
    model: VaeModel,
    x: np.ndarray,
    L: int = 1,
    rng: RngState | None = None,
    eps: np.ndarray | None = None,
    clamp: tuple[float, float] = DEFAULT_LOGVAR_CLAMP,
) -> tuple[LossReport, Gradients, Gradients]:
    """Batch-mean negative ELBO and its gradients for both networks.

    Args:
        x: batch in [0, 1], shape ``(batch, data_dim)``.
        L: reconstruction samples per datum.
        rng: noise source for the draws; not needed when eps is frozen.
        eps: optional frozen noise, shape ``(L, batch, J)``; makes the loss
            a deterministic function of the parameters (gradient checks).

    Returns:
        (LossReport with epoch/batch set to -1, encoder Gradients, decoder
        Gradients).  total == kl + recon in the report.
    """
    if L < 1:
        raise ValueError(f"need L >= 1, got {L}")
    x = _check_data(x, model.data_dim)
    if eps is None:
        if rng is None:
            raise ValueError("need an rng when eps is not frozen")
        eps = _draw_eps(L, x.shape[0], model.latent_dim, rng)
    else:
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != (L, x.shape[0], model.latent_dim):
            raise ValueError(
                f"eps has shape {eps.shape}, expected ({L}, {x.shape[0]}, {model.latent_dim})"
            )
    total, kl, recon_neg, enc_grads, dec_grads = _loss_core(model, x, L, eps, clamp)
    report = LossReport(
        total_loss=float(np.mean(total)),
        kl_component=float(np.mean(kl)),
        recon_component=float(np.mean(recon_neg)),
        epoch=-1,
        batch=-1,
    )
    return report, enc_grads, dec_grads


def loss_per_datum(
    model: VaeModel,
    x: np.ndarray,
    L: int = 1,
    rng: RngState | None = None,
    eps: np.ndarray | None = None,
    clamp: tuple[float, float] = DEFAULT_LOGVAR_CLAMP,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-datum (total, kl, recon) arrays; same arithmetic as :func:`loss`."""
    if L < 1:
        raise ValueError(f"need L >= 1, got {L}")
    x = _check_data(x, model.data_dim)
    if eps is None:
        if rng is None:
            raise ValueError("need an rng when eps is not frozen")
        eps = _draw_eps(L, x.shape[0], model.latent_dim, rng)
    total, kl, recon_neg, _, _ = _loss_core(model, x, L, np.asarray(eps, dtype=np.float64), clamp)
    return total, kl, recon_neg


def _fisher_yates(n: int, rng: RngState) -> np.ndarray:
    order = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = rng.integer_below(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def train(
    model: VaeModel, dataset: np.ndarray, config: TrainConfig
) -> tuple[VaeModel, list[LossReport]]:
    """Epochs of shuffled minibatch Adam on the negative ELBO.

    Fully deterministic given the config seed: the shuffle and the
    reconstruction noise come from one run-scoped stream.  A non-finite
    loss raises :class:`TrainingDivergedError` carrying the parameters from
    before the bad step and the history so far.

    Returns:
        (trained model, one LossReport per batch in execution order).
    """
    data = _check_data(dataset, model.data_dim)
    if data.shape[0] == 0:
        raise ValueError("dataset is empty")
    rng = RngState(config.seed).split(_TRAIN_STREAM)
    hyper = AdamConfig(
        lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.adam_epsilon
    )
    enc_state = init_adam_state(model.encoder)
    dec_state = init_adam_state(model.decoder)
    history: list[LossReport] = []
    last_good = model
    for epoch in range(config.epochs):
        order = _fisher_yates(data.shape[0], rng)
        shuffled = data[order]
        for bi, start in enumerate(range(0, data.shape[0], config.batch_size)):
            xb = shuffled[start : start + config.batch_size]
            try:
                report, enc_g, dec_g = loss(
                    model, xb, L=config.recon_samples, rng=rng, clamp=config.logvar_clamp
                )
            except ValueError as err:
                raise TrainingDivergedError(
                    f"training aborted at epoch {epoch}, batch {bi}: {err}",
                    last_good,
                    history,
                ) from err
            last_good = model
            history.append(replace(report, epoch=epoch, batch=bi))
            new_enc, enc_state = adam_step(model.encoder, enc_g, enc_state, hyper)
            new_dec, dec_state = adam_step(model.decoder, dec_g, dec_state, hyper)
            model = VaeModel(
                encoder=new_enc,
                decoder=new_dec,
                latent_dim=model.latent_dim,
                data_dim=model.data_dim,
            )
    return model, history


# ---------------------------------------------------------------------------
# checkpoint format: one JSON document, arrays row-major, full float precision
# (json round-trips Python floats exactly, so save/load is bit-exact)

_CHECKPOINT_FORMAT = "elbo-kit-checkpoint-v1"


def _params_to_json(params: MlpParams) -> list[dict]:
    return [
        {
            "shape": list(layer.weight.shape),
            "weight": [float(v) for v in layer.weight.reshape(-1)],
            "bias": [float(v) for v in layer.bias],
            "activation": layer.activation,
        }
        for layer in params.layers
    ]


def _params_from_json(obj: list[dict]) -> MlpParams:
    layers = []
    for entry in obj:
        shape = tuple(entry["shape"])
        layers.append(
            Layer(
                weight=np.array(entry["weight"], dtype=np.float64).reshape(shape),
                bias=np.array(entry["bias"], dtype=np.float64),
                activation=entry["activation"],
            )
        )
    return MlpParams(layers=layers)


def save_checkpoint(model: VaeModel, config: TrainConfig, path: str) -> None:
    """Write model + config as JSON (atomically: temp file then rename)."""
    doc = {
        "format": _CHECKPOINT_FORMAT,
        "latent_dim": model.latent_dim,
        "data_dim": model.data_dim,
        "config": asdict(config),
        "encoder": _params_to_json(model.encoder),
        "decoder": _params_to_json(model.decoder),
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> tuple[VaeModel, TrainConfig]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError(f"not an elbo-kit checkpoint: {path}")
    cfg = dict(doc["config"])
    cfg["logvar_clamp"] = tuple(cfg["logvar_clamp"])
    config = TrainConfig(**cfg)
    model = VaeModel(
        encoder=_params_from_json(doc["encoder"]),
        decoder=_params_from_json(doc["decoder"]),
        latent_dim=doc["latent_dim"],
        data_dim=doc["data_dim"],
    )
    return model, config
