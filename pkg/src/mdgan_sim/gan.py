"""Discriminator and generator training rules for one generator and many discriminators.

Discriminators only ever see samples. What a client hands back for generator
training is the gradient of the generator loss with respect to the fake samples;
the generator chains that through its own layers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import Gradients, Mlp, NonFiniteError, OptimizerState, forward, forward_backward
from .nn import forward_then_backward
from .nn import input_gradient_penalty, optimizer_step, sigmoid

log = logging.getLogger(__name__)

LOSS_KINDS = ("nsgan", "wgan_clip", "wgan_gp")


@dataclass(frozen=True)
class LossMode:
    kind: str = "nsgan"
    clip: float = 0.01
    gp_weight: float = 10.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if not self.clip > 0:
            raise ValueError("clip must be > 0")
        if self.gp_weight < 0:
            raise ValueError("gp_weight must be >= 0")

    @property
    def output_activation(self) -> str:
        """Discriminator output layer: probabilities for nsgan, raw critic scores otherwise."""
        return "sigmoid" if self.kind == "nsgan" else "identity"


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def discriminator_loss(d: Mlp, real: np.ndarray, fake: np.ndarray, mode: LossMode) -> float:
    """Discriminator loss without the gradient penalty."""
    lr = forward(d, real, logits=True)
    lf = forward(d, fake, logits=True)
    if mode.kind == "nsgan":
        return float(np.mean(_softplus(-lr)) + np.mean(_softplus(lf)))
    return float(np.mean(lf) - np.mean(lr))


def discriminator_step(
    d: Mlp,
    real: np.ndarray,
    fake: np.ndarray,
    mode: LossMode,
    opt: OptimizerState,
    rng: np.random.Generator | None = None,
) -> tuple[Mlp, OptimizerState, float]:
    """One optimizer step on the discriminator loss. Returns (d, opt, loss before the step).

    ``rng`` is only used by ``wgan_gp`` to draw interpolation weights.
    """
    real = np.asarray(real, dtype=float)
    fake = np.asarray(fake, dtype=float)
    if real.shape != fake.shape:
        raise ValueError(f"real batch {real.shape} and fake batch {fake.shape} differ in shape")
    bsz = real.shape[0]
    both = np.concatenate([real, fake])

    def upstream(out):
        lr, lf = out[:bsz], out[bsz:]
        if mode.kind == "nsgan":
            value = float(np.mean(_softplus(-lr)) + np.mean(_softplus(lf)))
            return value, np.concatenate([-(1.0 - sigmoid(lr)), sigmoid(lf)]) / bsz
        value = float(np.mean(lf) - np.mean(lr))
        return value, np.concatenate([np.full_like(lr, -1.0), np.ones_like(lf)]) / bsz

    loss, grads, _ = forward_then_backward(d, both, upstream, logits=True)
    if mode.kind == "wgan_gp" and mode.gp_weight > 0:
        if rng is None:
            raise ValueError("wgan_gp needs an rng for interpolation weights")
        eps = rng.uniform(size=(bsz, 1))
        mix = eps * real + (1 - eps) * fake
        pen, g_pen = input_gradient_penalty(d, mix)
        loss += mode.gp_weight * pen
        grads = grads + g_pen.scale(mode.gp_weight)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite discriminator loss")
    d, opt = optimizer_step(d, grads, opt)
    if mode.kind == "wgan_clip":
        d = Mlp(
            [np.clip(w, -mode.clip, mode.clip) for w in d.weights],
            [np.clip(b, -mode.clip, mode.clip) for b in d.biases],
            d.hidden_activation,
            d.output_activation,
            d.slope,
        )
    return d, opt, loss


def generator_loss(d: Mlp, fake: np.ndarray, mode: LossMode) -> float:
    lf = forward(d, fake, logits=True)
    if mode.kind == "nsgan":
        return float(np.mean(_softplus(-lf)))
    return float(-np.mean(lf))


def generator_feedback(d: Mlp, fake: np.ndarray) -> np.ndarray:
    """d(generator loss)/d(fake samples), computed through ``d`` only.

    nsgan uses the non-saturating loss ``-mean log D(fake)``; the wgan modes
    maximise the mean critic score. The mode is read off the discriminator's
    output activation.
    """
    fake = np.asarray(fake, dtype=float)
    bsz = fake.shape[0]
    if d.output_activation == "sigmoid":
        def upstream(lf):
            return None, -(1.0 - sigmoid(lf)) / bsz
    else:
        def upstream(lf):
            return None, np.full_like(lf, -1.0 / bsz)
    _, _, gx = forward_then_backward(d, fake, upstream, logits=True)
    return gx


def generator_gradients(g: Mlp, latent: np.ndarray, sample_grads: np.ndarray) -> Gradients:
    """Chain per-sample gradients back through the generator."""
    _, grads, _ = forward_backward(g, latent, sample_grads)
    return grads


def generator_update(
    g: Mlp,
    feedback: Sequence[tuple[int, np.ndarray, np.ndarray]],
    opt: OptimizerState,
    included: set[int] | None = None,
    aggregation: str = "mean",
) -> tuple[Mlp, OptimizerState]:
    """Accumulate feedback from the included clients and take one generator step.

    ``feedback`` holds ``(client_id, sample_grads, latent)`` where ``latent`` is
    the noise that produced the fake batch the client scored. Clients outside
    ``included`` contribute nothing. With nobody included the generator is
    returned unchanged.
    """
    if aggregation not in ("mean", "sum"):
        raise ValueError(f"aggregation must be 'mean' or 'sum', got {aggregation!r}")
    chosen = [f for f in feedback if included is None or f[0] in included]
    if not chosen:
        log.warning("no client included in generator update; skipping step")
        return g, opt
    total = None
    for _, sample_grads, latent in chosen:
        part = generator_gradients(g, latent, sample_grads)
        total = part if total is None else total + part
    if aggregation == "mean":
        total = total.scale(1.0 / len(chosen))
    return optimizer_step(g, total, opt)
