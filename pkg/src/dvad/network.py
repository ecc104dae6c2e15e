"""Per-hypothesis encoder-decoder networks with a diffusion-pinned bottleneck.

The encoder maps a 72-dimensional feature vector through two 200-unit layers
to a 3-unit bottleneck trained to coincide with the softmax-normalized
diffusion coordinates of the input; the mirrored decoder maps back to the
feature space. Every layer uses the positive saturating linear transfer
(identity on [0, 1], clamped outside), so all activations live in [0, 1].

Training runs in four stages: unsupervised layerwise pretraining, separate
encoder and decoder fine-tuning, then fine-tuning of the full stack, all
under an L2 weight penalty and a KL sparsity penalty on the wide hidden
layers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NetworkError, TrainingError

ENCODER_DIMS = (72, 200, 200, 3)
_RHO_CLAMP = 1e-6

STAGE_ENCODER = "encoder-only"
STAGE_DECODER = "decoder-only"
STAGE_STACKED = "stacked"


@dataclass
class LayerParams:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray   # (out,)


@dataclass
class EncoderDecoder:
    """One trained hypothesis model: encoder and mirrored decoder stacks."""

    encoder: list
    decoder: list
    hypothesis: int = 0

    @property
    def input_dim(self) -> int:
        return self.encoder[0].weights.shape[1]

    @property
    def bottleneck_dim(self) -> int:
        return self.encoder[-1].weights.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    pretrain_epochs: int = 1
    pretrain_lr: float = 0.1
    finetune_lr: float = 1e-5
    momentum: float = 0.9
    max_epochs: int = 1000
    min_gradient: float = 1e-6
    batch_size: int = 128
    l2_weight: float = 1e-7
    sparsity_weight: float = 4.0
    sparsity_target: float = 0.1
    init_std: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("pretrain_epochs", "pretrain_lr", "finetune_lr",
                     "max_epochs", "min_gradient", "batch_size", "init_std"):
            if getattr(self, name) <= 0:
                raise TrainingError(f"{name} must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise TrainingError("momentum must be in [0, 1)")
        if not 0.0 < self.sparsity_target < 1.0:
            raise TrainingError("sparsity_target must be in (0, 1)")


@dataclass
class TrainReport:
    stage_losses: dict = field(default_factory=dict)
    stop_reasons: dict = field(default_factory=dict)
    final_gradient_norm: float = float("nan")
    wall_time_s: float = 0.0


def pslt(z):
    """Positive saturating linear transfer: 0 below 0, identity on [0,1], 1 above."""
    return np.clip(z, 0.0, 1.0)


def _pslt_mask(pre):
    # Subgradient: 1 strictly inside (0, 1), 0 elsewhere (including kinks).
    return ((pre > 0.0) & (pre < 1.0)).astype(np.float64)


def forward(model: EncoderDecoder, x: np.ndarray):
    """Propagate one vector; returns (bottleneck, reconstruction)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != model.input_dim:
        raise NetworkError(f"expected a {model.input_dim}-vector input")
    a = x
    for layer in model.encoder:
        a = pslt(layer.weights @ a + layer.biases)
    bottleneck = a
    for layer in model.decoder:
        a = pslt(layer.weights @ a + layer.biases)
    if not (np.all(np.isfinite(bottleneck)) and np.all(np.isfinite(a))):
        raise NetworkError("non-finite activation: parameter corruption")
    return bottleneck, a


def _forward_stack(layers, x):
    """Batched forward pass; returns per-layer activations and pre-activations."""
    acts, pres = [x], []
    a = x
    for layer in layers:
        pre = a @ layer.weights.T + layer.biases
        a = pslt(pre)
        pres.append(pre)
        acts.append(a)
    return acts, pres


def _kl_terms(rho, rho_hat):
    clamped = np.clip(rho_hat, _RHO_CLAMP, 1.0 - _RHO_CLAMP)
    kl = (rho * np.log(rho / clamped)
          + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - clamped)))
    inside = (rho_hat > _RHO_CLAMP) & (rho_hat < 1.0 - _RHO_CLAMP)
    dkl = np.where(inside, -rho / clamped + (1.0 - rho) / (1.0 - clamped), 0.0)
    return float(np.sum(kl)), dkl


def _zero_grads(layers):
    return [LayerParams(np.zeros_like(l.weights), np.zeros_like(l.biases))
            for l in layers]


def _backprop_stack(layers, acts, pres, d_out, hidden_idx, config):
    """Reverse pass through one stack.

    ``d_out`` is dL/d(activation) at the stack output; sparsity gradients are
    injected at the activations listed in ``hidden_idx``. Returns gradients
    aligned with ``layers`` plus dL/d(input) and the sparsity penalty value.
    """
    batch = acts[0].shape[0]
    rho = config.sparsity_target
    sparsity_loss = 0.0
    extra = {}
    for idx in hidden_idx:
        rho_hat = np.mean(acts[idx + 1], axis=0)
        kl, dkl = _kl_terms(rho, rho_hat)
        sparsity_loss += kl
        extra[idx] = config.sparsity_weight * dkl / batch
    grads = _zero_grads(layers)
    upstream = d_out
    for idx in range(len(layers) - 1, -1, -1):
        if idx in extra:
            upstream = upstream + extra[idx][None, :]
        d_pre = upstream * _pslt_mask(pres[idx])
        grads[idx].weights[:] = (d_pre.T @ acts[idx]
                                 + 2.0 * config.l2_weight * layers[idx].weights)
        grads[idx].biases[:] = np.sum(d_pre, axis=0)
        upstream = d_pre @ layers[idx].weights
    return grads, upstream, config.sparsity_weight * sparsity_loss


def _l2_penalty(stacks, config):
    return config.l2_weight * sum(float(np.sum(l.weights ** 2))
                                  for layers in stacks for l in layers)


def _hidden_indices(layers):
    # Wide hidden layers only; the final layer of a stack carries a fit term.
    return [i for i in range(len(layers) - 1)]


def loss_and_gradients(batch: np.ndarray, dm_targets: np.ndarray,
                       model: EncoderDecoder, config: TrainConfig,
                       stage: str):
    """Stage loss and full parameter gradients for one mini-batch.

    Fit terms are per-entry mean squared errors: bottleneck vs. diffusion
    targets (encoder-only), reconstruction vs. input with targets fed to the
    decoder (decoder-only), or both with equal weights (stacked). L2 applies
    to the trained weights, KL sparsity to the wide hidden activations.
    Returns ``(loss, (encoder_grads, decoder_grads))``; stages that do not
    touch a stack return zero gradients for it.
    """
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    t = np.atleast_2d(np.asarray(dm_targets, dtype=np.float64))
    if stage == STAGE_ENCODER:
        acts, pres = _forward_stack(model.encoder, x)
        resid = acts[-1] - t
        fit = float(np.mean(resid ** 2))
        d_out = 2.0 * resid / resid.size
        grads, _, sparsity = _backprop_stack(
            model.encoder, acts, pres, d_out,
            _hidden_indices(model.encoder), config)
        loss = fit + _l2_penalty([model.encoder], config) + sparsity
        return loss, (grads, _zero_grads(model.decoder))
    if stage == STAGE_DECODER:
        acts, pres = _forward_stack(model.decoder, t)
        resid = acts[-1] - x
        fit = float(np.mean(resid ** 2))
        d_out = 2.0 * resid / resid.size
        grads, _, sparsity = _backprop_stack(
            model.decoder, acts, pres, d_out,
            _hidden_indices(model.decoder), config)
        loss = fit + _l2_penalty([model.decoder], config) + sparsity
        return loss, (_zero_grads(model.encoder), grads)
    if stage == STAGE_STACKED:
        n_enc = len(model.encoder)
        layers = model.encoder + model.decoder
        acts, pres = _forward_stack(layers, x)
        resid_b = acts[n_enc] - t
        resid_r = acts[-1] - x
        fit = float(np.mean(resid_b ** 2)) + float(np.mean(resid_r ** 2))
        d_out = 2.0 * resid_r / resid_r.size
        hidden = [i for i in range(len(layers) - 1) if i != n_enc - 1]
        # Backprop in two segments so the bottleneck fit term joins mid-stack.
        batch_n = x.shape[0]
        rho = config.sparsity_target
        grads = _zero_grads(layers)
        sparsity_total = 0.0
        upstream = d_out
        for idx in range(len(layers) - 1, -1, -1):
            if idx in hidden:
                rho_hat = np.mean(acts[idx + 1], axis=0)
                kl, dkl = _kl_terms(rho, rho_hat)
                sparsity_total += kl
                upstream = upstream + (config.sparsity_weight * dkl / batch_n)[None, :]
            if idx == n_enc - 1:
                upstream = upstream + 2.0 * resid_b / resid_b.size
            d_pre = upstream * _pslt_mask(pres[idx])
            grads[idx].weights[:] = (d_pre.T @ acts[idx]
                                     + 2.0 * config.l2_weight * layers[idx].weights)
            grads[idx].biases[:] = np.sum(d_pre, axis=0)
            upstream = d_pre @ layers[idx].weights
        loss = (fit + _l2_penalty([model.encoder, model.decoder], config)
                + config.sparsity_weight * sparsity_total)
        return loss, (grads[:n_enc], grads[n_enc:])
    raise TrainingError(f"unknown stage {stage!r}")


def _grad_inf_norm(grad_stacks):
    worst = 0.0
    for stack in grad_stacks:
        for g in stack:
            worst = max(worst, float(np.max(np.abs(g.weights))),
                        float(np.max(np.abs(g.biases))))
    return worst


def _init_layer(rng, out_dim, in_dim, std):
    return LayerParams(rng.normal(0.0, std, size=(out_dim, in_dim)),
                       np.zeros(out_dim))


def reconstruction_loss(layers, data, config):
    """Plain-autoencoder loss of a small stack: MSE + L2 + hidden sparsity."""
    acts, _ = _forward_stack(layers, data)
    fit = float(np.mean((acts[-1] - data) ** 2))
    sparsity = 0.0
    for idx in range(len(layers) - 1):
        kl, _ = _kl_terms(config.sparsity_target, np.mean(acts[idx + 1], axis=0))
        sparsity += kl
    return fit + _l2_penalty([layers], config) + config.sparsity_weight * sparsity


def _pretrain_single_layer(data, out_dim, config, rng):
    """One mini-autoencoder (in->out->in) trained for the pretrain epochs."""
    in_dim = data.shape[1]
    enc = _init_layer(rng, out_dim, in_dim, config.init_std)
    dec = _init_layer(rng, in_dim, out_dim, config.init_std)
    layers = [enc, dec]
    n = data.shape[0]
    for _ in range(config.pretrain_epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            rows = data[perm[lo:lo + config.batch_size]]
            acts, pres = _forward_stack(layers, rows)
            resid = acts[-1] - rows
            d_out = 2.0 * resid / resid.size
            grads, _, _ = _backprop_stack(layers, acts, pres, d_out, [0], config)
            for layer, g in zip(layers, grads):
                layer.weights -= config.pretrain_lr * g.weights
                layer.biases -= config.pretrain_lr * g.biases
    return enc


def pretrain_layerwise(data: np.ndarray, config: TrainConfig,
                       encoder_dims=ENCODER_DIMS):
    """Greedy unsupervised initialization of every layer in the chain.

    Each layer is trained as the encoding half of a one-hidden-layer
    autoencoder reconstructing the previous layer's activations; the decoder
    chain mirrors the encoder dims.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] < config.batch_size:
        raise TrainingError("need at least one full batch for pretraining")
    rng = np.random.default_rng(config.rng_seed)
    dims = list(encoder_dims) + list(encoder_dims[-2::-1])
    n_enc = len(encoder_dims) - 1
    layers = []
    current = data
    for i in range(len(dims) - 1):
        layer = _pretrain_single_layer(current, dims[i + 1], config, rng)
        layers.append(layer)
        current = pslt(current @ layer.weights.T + layer.biases)
    return layers[:n_enc], layers[n_enc:]


_STAGE_SEED_OFFSET = {STAGE_ENCODER: 101, STAGE_DECODER: 202, STAGE_STACKED: 303}


def _run_stage(model, x, targets, config, stage, report):
    rng = np.random.default_rng(config.rng_seed + _STAGE_SEED_OFFSET[stage])
    if stage == STAGE_ENCODER:
        trained = [model.encoder]
    elif stage == STAGE_DECODER:
        trained = [model.decoder]
    else:
        trained = [model.encoder, model.decoder]
    velocity = [_zero_grads(stack) for stack in trained]
    losses = []
    stop = "max-epochs"
    grad_norm = float("nan")
    n = x.shape[0]
    for _ in range(config.max_epochs):
        perm = rng.permutation(n)
        epoch_losses = []
        stop_now = False
        for lo in range(0, n, config.batch_size):
            rows = perm[lo:lo + config.batch_size]
            loss, grads = loss_and_gradients(x[rows], targets[rows], model,
                                             config, stage)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss in stage {stage}")
            epoch_losses.append(loss)
            if stage == STAGE_ENCODER:
                picked = [grads[0]]
            elif stage == STAGE_DECODER:
                picked = [grads[1]]
            else:
                picked = list(grads)
            grad_norm = _grad_inf_norm(picked)
            for stack, vel, gstack in zip(trained, velocity, picked):
                for layer, v, g in zip(stack, vel, gstack):
                    v.weights *= config.momentum
                    v.weights -= config.finetune_lr * g.weights
                    v.biases *= config.momentum
                    v.biases -= config.finetune_lr * g.biases
                    layer.weights += v.weights
                    layer.biases += v.biases
            if grad_norm < config.min_gradient:
                stop = "min-gradient"
                stop_now = True
                break
        losses.append(float(np.mean(epoch_losses)))
        if stop_now:
            break
    report.stage_losses[stage] = losses
    report.stop_reasons[stage] = stop
    report.final_gradient_norm = grad_norm


def train_encoder_decoder(features: np.ndarray, dm_targets: np.ndarray,
                          config: TrainConfig, hypothesis: int = 0,
                          encoder_dims=ENCODER_DIMS):
    """Full training run: pretrain, encoder/decoder fine-tune, stacked fine-tune."""
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(dm_targets, dtype=np.float64)
    if x.shape[0] != t.shape[0]:
        raise TrainingError("features and targets disagree on row count")
    started = time.perf_counter()
    report = TrainReport()
    encoder, decoder = pretrain_layerwise(x, config, encoder_dims)
    model = EncoderDecoder(encoder, decoder, hypothesis=hypothesis)
    for stage in (STAGE_ENCODER, STAGE_DECODER, STAGE_STACKED):
        _run_stage(model, x, t, config, stage, report)
    report.wall_time_s = time.perf_counter() - started
    return model, report
