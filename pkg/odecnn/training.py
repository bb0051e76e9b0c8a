#  MIT License
#
#  Copyright (c) 2021 ben
#
#  Permission is hereby granted, free of charge, to any person obtaining a copy
#  of this software and associated documentation files (the "Software"), to deal
#  in the Software without restriction, including without limitation the rights
#  to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
#  copies of the Software, and to permit persons to whom the Software is
#  furnished to do so, subject to the following conditions:
#
#  The above copyright notice and this permission notice shall be included in all
#  copies or substantial portions of the Software.
#
#  THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
#  IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
#  FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
#  AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
#  LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
#  OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
#  SOFTWARE.
"""Adam, the learning-rate schedule, batch loading and the training loop."""
from __future__ import annotations
import concurrent.futures
import logging
import math
import pathlib
import typing as t

import numpy as np

from odecnn.checkpoint import CheckpointState, capture_state, read_checkpoint, restore_network, save_checkpoint
from odecnn.cspn import SensorDepth
from odecnn.errors import ConfigError, DataError, NumericalError
from odecnn.hooks import HookManager, HookTypes
from odecnn.metrics import DepthMetrics, MetricAccumulator
from odecnn.network import OdeNet, l1_loss
from odecnn.parsing import Option, OptionType, ParserManager
from odecnn.synth import DatasetManifest, ManifestEntry, load_sample
from odecnn.tensor import Parameter, Precision, get_dtype, make_rng
from odecnn.utils import chunked

__all__: list[str] = [
    "MIN_PREDICTION",
    "TRAIN_OPTIONS",
    "TrainConfig",
    "lr_at",
    "Adam",
    "Batch",
    "load_batch",
    "iterate_batches",
    "evaluate_split",
    "EpochRecord",
    "Trainer",
    "last_checkpoint_path",
    "log_path_for",
]

_LOGGER = logging.getLogger("odecnn.training")

MIN_PREDICTION: t.Final[float] = 1e-3
"""Predictions are clamped to this depth before metrics are computed."""

TRAIN_OPTIONS: t.Final[ParserManager] = ParserManager(
    "train",
    Option("batch_size", "Samples per optimizer step", OptionType.INTEGER, default=8),
    Option("epochs", "Training epochs", OptionType.INTEGER, default=10),
    Option("lr", "Initial learning rate", OptionType.FLOAT, default=2e-4),
    Option("lr_decay", "Learning rate factor applied every lr_step epochs", OptionType.FLOAT, default=0.5),
    Option("lr_step", "Epochs between learning rate decays", OptionType.INTEGER, default=3),
    Option("beta1", "Adam first moment decay", OptionType.FLOAT, default=0.9),
    Option("beta2", "Adam second moment decay", OptionType.FLOAT, default=0.999),
    Option("eps", "Adam denominator epsilon", OptionType.FLOAT, default=1e-8),
    Option("seed", "Seed of the weight initialisation and the shuffling", OptionType.INTEGER, default=0),
    Option("precision", "Floating point precision", default="float32", choices=[p.value for p in Precision]),
)
"""Keys of the ``[train]`` configuration section."""


class TrainConfig(t.NamedTuple):
    batch_size: int = 8
    epochs: int = 10
    lr: float = 2e-4
    lr_decay: float = 0.5
    lr_step: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    precision: Precision = Precision.FLOAT32

    def validate(self) -> TrainConfig:
        if not self.lr > 0:
            raise ConfigError(f"Learning rate must be positive, got {self.lr}.")
        if self.batch_size < 1:
            raise ConfigError(f"Batch size must be at least 1, got {self.batch_size}.")
        if self.epochs < 1 or self.lr_step < 1:
            raise ConfigError("Epochs and the learning rate step must be at least 1.")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigError("Adam needs betas in [0, 1) and a positive epsilon.")
        return self._replace(precision=Precision(self.precision))

    @classmethod
    def from_mapping(cls, mapping: t.Mapping[str, t.Any]) -> TrainConfig:
        values = TRAIN_OPTIONS.convert_from_mapping(mapping)
        return cls(**values).validate()

    def to_text(self) -> str:
        lines = ["[train]"]
        for name, value in self._asdict().items():
            lines.append(f"{name} = {Precision(value).value if name == 'precision' else value}")
        return "\n".join(lines) + "\n"


def lr_at(epoch: int, config: TrainConfig = TrainConfig()) -> float:
    """The scheduled learning rate of a zero-based epoch: ``lr * lr_decay ** (epoch // lr_step)``."""
    return config.lr * config.lr_decay ** (epoch // config.lr_step)


class Adam:
    """
    Bias-corrected Adam. The moments live on the parameters so they are checkpointed with them.

    Parameters
    ----------
    params : Sequence[:obj:`~.tensor.Parameter`]
        The parameters to update.
    """

    __slots__ = ("params", "beta1", "beta2", "eps", "step_count")

    def __init__(
        self, params: t.Sequence[Parameter], *, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ) -> None:
        self.params: list[Parameter] = list(params)
        self.beta1: float = beta1
        self.beta2: float = beta2
        self.eps: float = eps
        self.step_count: int = 0

    def step(self, lr: float) -> None:
        """
        Apply one update with the gradients accumulated on the parameters.

        Raises
        ------
        :obj:`~.errors.NumericalError`
            Naming the first parameter whose gradient is not finite. No parameter is updated.
        """
        for param in self.params:
            if param.grad is None or not np.all(np.isfinite(param.grad)):
                raise NumericalError(f"gradient of {param.name}")
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        for param in self.params:
            grad = t.cast(np.ndarray, param.grad)
            param.adam_m *= self.beta1
            param.adam_m += (1.0 - self.beta1) * grad
            param.adam_v *= self.beta2
            param.adam_v += (1.0 - self.beta2) * grad * grad
            m_hat = param.adam_m / correction1
            v_hat = param.adam_v / correction2
            param.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(param.dtype, copy=False)


class Batch(t.NamedTuple):
    image: np.ndarray
    depth: np.ndarray
    sensor: SensorDepth


def load_batch(manifest: DatasetManifest, entries: t.Sequence[ManifestEntry]) -> Batch:
    samples = [load_sample(manifest, entry) for entry in entries]
    dtype = get_dtype()
    return Batch(
        np.stack([s.image for s in samples]).astype(dtype),
        np.stack([s.depth_gt for s in samples]).astype(dtype),
        SensorDepth(np.concatenate([s.sensor.dp for s in samples]).astype(dtype)),
    )


def iterate_batches(
    manifest: DatasetManifest,
    entries: t.Sequence[ManifestEntry],
    batch_size: int,
    order: t.Optional[t.Sequence[int]] = None,
) -> t.Iterator[Batch]:
    """Yield batches in order while the next one is decoded in a background thread."""
    indices = list(range(len(entries))) if order is None else list(order)
    groups = [[entries[i] for i in group] for group in chunked(indices, batch_size)]
    if not groups:
        return
    with concurrent.futures.ThreadPoolExecutor(max_workers=1) as pool:
        pending = pool.submit(load_batch, manifest, groups[0])
        for index in range(len(groups)):
            batch = pending.result()
            if index + 1 < len(groups):
                pending = pool.submit(load_batch, manifest, groups[index + 1])
            yield batch


def evaluate_split(
    net: OdeNet, manifest: DatasetManifest, entries: t.Sequence[ManifestEntry], batch_size: int = 8
) -> DepthMetrics:
    """Per-image mean metrics of the refined depth, in eval mode, with predictions clamped to ``MIN_PREDICTION``."""
    was_training = net.training
    net.eval()
    accumulator = MetricAccumulator()
    try:
        for batch in iterate_batches(manifest, entries, batch_size):
            sensor = batch.sensor if net.config.use_partial_depth else None
            output = net.forward(batch.image, sensor)
            accumulator.add(np.maximum(output.depth_refined, MIN_PREDICTION), batch.depth)
    finally:
        net.train(was_training)
    return accumulator.mean()


class EpochRecord(t.NamedTuple):
    epoch: int
    train_l1: float
    abs_rel: float
    sq_rel: float
    rmse: float
    rms_log: float
    d1: float
    d2: float
    d3: float
    lr: float

    @staticmethod
    def csv_header() -> str:
        return "epoch,train_l1,abs_rel,sq_rel,rmse,rms_log,d1,d2,d3,lr"

    def as_csv(self) -> str:
        return f"{self.epoch}," + ",".join(f"{value:.6g}" if i == 8 else f"{value:.6f}" for i, value in enumerate(self[1:]))

    @property
    def metrics(self) -> DepthMetrics:
        return DepthMetrics(self.abs_rel, self.sq_rel, self.rmse, self.rms_log, self.d1, self.d2, self.d3)


def last_checkpoint_path(out: t.Union[str, pathlib.Path]) -> pathlib.Path:
    out = pathlib.Path(out)
    return out.with_name(out.name + ".last")


def log_path_for(out: t.Union[str, pathlib.Path]) -> pathlib.Path:
    out = pathlib.Path(out)
    return out.with_name(out.name + ".csv")


class Trainer:
    """
    Trains an :obj:`~.network.OdeNet` on a dataset manifest.

    Every epoch shuffles the training split with the trainer's own generator, takes one Adam step per batch,
    validates and appends a row to the CSV metric log. The best checkpoint by validation Abs Rel is kept at the
    output path and the latest beside it with a ``.last`` suffix.

    Parameters
    ----------
    net : :obj:`~.network.OdeNet`
        The network, trained in place.
    config : :obj:`TrainConfig`
        Optimizer and schedule.
    hooks : Optional[:obj:`~.hooks.HookManager`]
        Receives ``STEP_END``, ``EPOCH_END`` and ``CHECKPOINT_SAVED``.
    """

    __slots__ = ("net", "config", "optimizer", "hooks", "rng", "epoch", "best_abs_rel")

    def __init__(self, net: OdeNet, config: TrainConfig = TrainConfig(), *, hooks: t.Optional[HookManager] = None):
        self.net: OdeNet = net
        self.config: TrainConfig = config.validate()
        self.optimizer: Adam = Adam(net.parameters(), beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        self.hooks: HookManager = hooks if hooks is not None else HookManager("trainer")
        self.rng: np.random.Generator = make_rng(config.seed)
        self.epoch: int = 0
        self.best_abs_rel: float = math.inf

    @property
    def config_text(self) -> str:
        return self.net.config.to_text() + self.config.to_text()

    def state(self) -> CheckpointState:
        return capture_state(
            self.net,
            config_text=self.config_text,
            epoch=self.epoch,
            step=self.optimizer.step_count,
            best_abs_rel=self.best_abs_rel,
            rng=self.rng,
        )

    def restore(self, state: CheckpointState, path: t.Union[str, pathlib.Path] = "<checkpoint>") -> Trainer:
        if state.network_config != self.net.config:
            raise ConfigError(f"Checkpoint {path} was written for a different network configuration.")
        restore_network(self.net, state, path)
        self.optimizer.step_count = state.step
        self.rng.bit_generator.state = state.rng_state
        self.epoch = state.epoch
        self.best_abs_rel = state.best_abs_rel
        _LOGGER.info(f"Resuming from {path} at epoch {state.epoch}, step {state.step}.")
        return self

    def train_step(self, batch: Batch, lr: float, *, epoch: int = 0) -> float:
        self.net.train()
        self.net.zero_grad()
        sensor = batch.sensor if self.net.config.use_partial_depth else None
        output = self.net.forward(batch.image, sensor)
        loss, grad = l1_loss(output.depth_refined, batch.depth)
        if not math.isfinite(loss):
            raise NumericalError("training loss", epoch=epoch, step=self.optimizer.step_count + 1)
        self.net.backward(grad)
        try:
            self.optimizer.step(lr)
        except NumericalError as ex:
            raise NumericalError(ex.what, epoch=epoch, step=self.optimizer.step_count + 1) from None
        return loss

    def train_epoch(self, manifest: DatasetManifest, entries: t.Sequence[ManifestEntry], epoch: int) -> float:
        lr = lr_at(epoch, self.config)
        order = self.rng.permutation(len(entries))
        losses = []
        for batch in iterate_batches(manifest, entries, self.config.batch_size, order):
            loss = self.train_step(batch, lr, epoch=epoch)
            losses.append(loss)
            self.hooks.dispatch(HookTypes.STEP_END, epoch=epoch, step=self.optimizer.step_count, loss=loss)
            _LOGGER.debug(f"Epoch {epoch} step {self.optimizer.step_count}: loss {loss:.6f}.")
        return float(np.mean(losses))

    def _save(self, path: pathlib.Path, best: bool) -> None:
        save_checkpoint(path, self.state())
        self.hooks.dispatch(HookTypes.CHECKPOINT_SAVED, path=path, best=best)

    def fit(
        self,
        manifest: DatasetManifest,
        out: t.Union[str, pathlib.Path],
        *,
        resume_from: t.Optional[t.Union[str, pathlib.Path]] = None,
        log_path: t.Optional[t.Union[str, pathlib.Path]] = None,
    ) -> list[EpochRecord]:
        """
        Train until ``config.epochs``, resuming from a checkpoint when one is given.

        Returns
        -------
        List[:obj:`EpochRecord`]
            The rows appended to the metric log by this call.
        """
        out = pathlib.Path(out)
        log = pathlib.Path(log_path) if log_path is not None else log_path_for(out)
        if resume_from is not None:
            self.restore(read_checkpoint(resume_from), resume_from)

        train_entries = manifest.split("train")
        if not train_entries:
            raise DataError(manifest.root, "the manifest lists no training samples")
        val_entries = manifest.split("val")
        if not val_entries:
            _LOGGER.warning("The manifest lists no validation samples, validating on the training split.")
            val_entries = train_entries

        fresh_log = resume_from is None or not log.exists()
        records: list[EpochRecord] = []
        try:
            log.parent.mkdir(parents=True, exist_ok=True)
            out.parent.mkdir(parents=True, exist_ok=True)
            with log.open("w" if fresh_log else "a", encoding="utf-8") as handle:
                if fresh_log:
                    handle.write(EpochRecord.csv_header() + "\n")
                for epoch in range(self.epoch, self.config.epochs):
                    train_l1 = self.train_epoch(manifest, train_entries, epoch)
                    metrics = evaluate_split(self.net, manifest, val_entries, self.config.batch_size)
                    record = EpochRecord(epoch, train_l1, *metrics, lr_at(epoch, self.config))
                    handle.write(record.as_csv() + "\n")
                    handle.flush()
                    records.append(record)
                    _LOGGER.info(
                        f"Epoch {epoch}: train L1 {train_l1:.4f}, val Abs Rel {metrics.abs_rel:.4f}, "
                        f"d1 {metrics.delta1:.2f}%."
                    )

                    self.epoch = epoch + 1
                    improved = metrics.abs_rel < self.best_abs_rel
                    if improved:
                        self.best_abs_rel = metrics.abs_rel
                        self._save(out, True)
                    self._save(last_checkpoint_path(out), False)
                    self.hooks.dispatch(HookTypes.EPOCH_END, record=record)
        except OSError as ex:
            raise DataError(log, f"cannot write the metric log: {ex.strerror or ex}") from ex
        return records
