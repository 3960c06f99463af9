"""Training loop: warm-up + milestone learning rate, temperature decay,
per-epoch checkpointing, and deterministic resume.

Shuffling draws a fresh generator from (seed, epoch), so a resumed run
replays exactly the batches the uninterrupted run would have seen. The
temperature schedule is a function of the global step with the total step
count fixed by the config, which keeps resumed and uninterrupted runs on
identical trajectories.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .blocks import load_dictionary
from .config import CONFIG_KEYS
from .errors import ConfigError
from .metrics import compute_metrics
from .model import (
    ModelHyper,
    TauSchedule,
    Variant,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .nn import AdamState, adam_step
from .tape import cross_entropy
from .taskgen import load_records, stack_records


@dataclass
class TrainResult:
    checkpoint_path: str
    metrics: object
    log_lines: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)


def lr_at(config, epoch):
    """Learning rate for a zero-based epoch: linear warm-up over the first
    warmup_epochs, then multiplied by lr_decay_factor at each one-based
    milestone in lr_decay_epochs."""
    lr = config.learning_rate
    if config.warmup_epochs > 0 and epoch < config.warmup_epochs:
        lr = config.learning_rate * (epoch + 1) / config.warmup_epochs
    for milestone in config.lr_decay_epochs:
        if epoch + 1 >= milestone:
            lr *= config.lr_decay_factor
    return lr


def _config_dict(config):
    return {name: getattr(config, name) for name in CONFIG_KEYS}

_PATH_KEYS = ("train_path", "test_path", "dictionary_path", "checkpoint_path")


def _check_resume_config(stored, current):
    for key in CONFIG_KEYS:
        if key in _PATH_KEYS:
            continue
        if stored.get(key) != current[key]:
            raise ConfigError(
                f"resume config mismatch on {key!r}: "
                f"checkpoint has {stored.get(key)!r}, run has {current[key]!r}"
            )


def _validate_data(config, records, name):
    x, z, labels = stack_records(records)
    if x.shape[1] != config.n_x or z.shape[1] != config.n_z:
        raise ConfigError(
            f"{name} data has {x.shape[1]}/{z.shape[1]} tokens per example, "
            f"config says {config.n_x}/{config.n_z}"
        )
    if x.shape[2] != z.shape[2]:
        raise ConfigError(f"{name} data: x and z token widths differ")
    if labels.min() < 0 or labels.max() >= config.classes:
        raise ConfigError(f"{name} data has labels outside [0, {config.classes})")
    return x, z, labels


def _batches(n, batch_size):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def evaluate_model(model, records, dictionary, batch_size=64):
    """Predictions for a record list; batching cannot change the results."""
    x, z, labels = stack_records(records)
    preds = []
    for sl in _batches(len(records), batch_size):
        result = model.forward(x[sl], z[sl], dictionary)
        preds.append(result.predictions())
    return labels, np.concatenate(preds)


def run_training(config, resume_from=None, stop_after_epochs=None):
    """Train per config; returns TrainResult with the test-set metrics.

    resume_from: checkpoint path to continue from (its stored config must
    agree with the current one on everything but file paths).
    stop_after_epochs: cut the run off after this many epochs while keeping
    the full-length learning-rate and temperature schedules, so a later
    resume lands exactly where an uninterrupted run would be.
    """
    variant = Variant.parse(config.variant)
    train_records = load_records(config.train_path)
    test_records = load_records(config.test_path)
    x_all, z_all, y_all = _validate_data(config, train_records, "train")
    _validate_data(config, test_records, "test")
    d_in = x_all.shape[2]

    dictionary = None
    if 2 in variant.blocks:
        dictionary = load_dictionary(config.dictionary_path)
        if dictionary.width != d_in:
            raise ConfigError(
                f"dictionary width {dictionary.width} does not match data width {d_in}"
            )
        if dictionary.k != config.dict_size:
            raise ConfigError(
                f"dictionary holds {dictionary.k} centroids, config says {config.dict_size}"
            )

    n_train = len(train_records)
    steps_per_epoch = math.ceil(n_train / config.batch_size)
    schedule = TauSchedule(
        total_steps=config.epochs * steps_per_epoch,
        tau_min=config.tau_min,
        floor_fraction=config.tau_floor_fraction,
    )

    if resume_from is not None:
        model, adam, meta = load_checkpoint(resume_from)
        if adam is None:
            raise ConfigError("checkpoint carries no optimizer state; cannot resume")
        _check_resume_config(meta.get("config", {}), _config_dict(config))
        start_epoch = int(meta["epoch"]) + 1
        global_step = int(meta["global_step"])
    else:
        hyper = ModelHyper(
            input_width=d_in,
            width=config.width,
            block_width=config.block_width,
            hidden_width=config.hidden_width,
            n_layers=config.layers,
            n_classes=config.classes,
        )
        model = build_model(hyper, config.seed, variant)
        adam = AdamState()
        start_epoch = 0
        global_step = 0

    end_epoch = config.epochs
    if stop_after_epochs is not None:
        end_epoch = min(end_epoch, stop_after_epochs)

    result = TrainResult(checkpoint_path=config.checkpoint_path, metrics=None)
    params = model.parameters()
    for epoch in range(start_epoch, end_epoch):
        lr = lr_at(config, epoch)
        order = np.random.default_rng([config.seed, epoch]).permutation(n_train)
        epoch_losses = []
        tau = model.temperature
        for sl in _batches(n_train, config.batch_size):
            idx = order[sl]
            tau = schedule.value(global_step)
            model.temperature = tau
            out = model.forward(x_all[idx], z_all[idx], dictionary, tau)
            loss = cross_entropy(out.logits, y_all[idx])
            model.zero_grads()
            out.tape.backward(loss)
            adam_step(params, adam, lr)
            global_step += 1
            epoch_losses.append(float(loss.data))
        epoch_mean = float(np.mean(epoch_losses))
        result.step_losses.extend(epoch_losses)
        result.epoch_losses.append(epoch_mean)
        result.log_lines.append(
            f"epoch={epoch + 1} lr={lr!r} tau={tau!r} train_loss={epoch_mean!r}"
        )
        save_checkpoint(
            config.checkpoint_path,
            model,
            adam,
            meta={
                "epoch": epoch,
                "global_step": global_step,
                "seed": config.seed,
                "config": _config_dict(config),
            },
        )

    labels, preds = evaluate_model(model, test_records, dictionary)
    result.metrics = compute_metrics(
        labels, preds, config.classes, loss_curve=result.epoch_losses
    )
    result.log_lines.append(f"test_accuracy={result.metrics.accuracy!r}")
    return result
