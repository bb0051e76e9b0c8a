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
"""The desk-scale depth extension network and its loss."""
from __future__ import annotations
import configparser
import logging
import typing as t

import numpy as np

from odecnn.cspn import Cspn, CspnGradients, CspnVariant, PropagationConfig, SensorDepth, replacement_step
from odecnn.errors import ConfigError, MaskError, SensorError, ShapeError
from odecnn.layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Layer,
    ReLU,
    ResidualBlock,
    Sequential,
    Sftl,
    SftlConfig,
    SftlMode,
    Softplus,
    conv_bn_relu,
)
from odecnn.parsing import Option, OptionType, ParserManager
from odecnn.tensor import Tensor, check_finite, concat_channels, make_rng

__all__: list[str] = [
    "CSPN_CHOICES",
    "NET_OPTIONS",
    "NetworkConfig",
    "OdeOutput",
    "DecoderStage",
    "OdeNet",
    "l1_loss",
]

_LOGGER = logging.getLogger("odecnn.network")

CSPN_CHOICES: t.Final[dict[str, t.Optional[CspnVariant]]] = {
    "off": None,
    "cspn": CspnVariant.CSPN,
    "ig": CspnVariant.IG_CSPN,
    "d": CspnVariant.D_CSPN,
}
"""Command-line spellings of the refinement variants."""

NET_OPTIONS: t.Final[ParserManager] = ParserManager(
    "net",
    Option("h", "Panorama height in pixels", OptionType.INTEGER, default=128),
    Option("w", "Panorama width in pixels, twice the height", OptionType.INTEGER, default=256),
    Option("channels", "Channels of the four encoder stages", OptionType.INT_LIST, default=(32, 64, 128, 256)),
    Option("stem", "Channels of each input stem", OptionType.INTEGER, default=16),
    Option("k", "Kernel size of the feature transform and the propagation", OptionType.INTEGER, default=3),
    Option("sftl", "Spherical feature transform mode", default="digt", choices=[m.value for m in SftlMode]),
    Option("cspn", "Propagation refinement variant", default="d", choices=list(CSPN_CHOICES)),
    Option("iterations", "Propagation iterations", OptionType.INTEGER, default=12),
    Option("pd", "Partial depth input", default="front", choices=["front", "none"]),
)
"""Keys of the ``[net]`` configuration section."""


class NetworkConfig(t.NamedTuple):
    """Architecture of an :obj:`OdeNet`. The defaults build the full model."""

    h: int = 128
    w: int = 256
    channels: tuple[int, ...] = (32, 64, 128, 256)
    stem: int = 16
    k: int = 3
    sftl: SftlMode = SftlMode.DIGT
    cspn: t.Optional[CspnVariant] = CspnVariant.D_CSPN
    iterations: int = 12
    use_partial_depth: bool = True

    def validate(self) -> NetworkConfig:
        if self.w != 2 * self.h:
            raise ConfigError(f"Panoramas must be twice as wide as high, got {self.h}x{self.w}.")
        if self.h % 16 or self.w % 16:
            raise ConfigError(f"Panorama dimensions must be divisible by 16, got {self.h}x{self.w}.")
        if len(self.channels) != 4 or min(self.channels) < 1 or self.stem < 1:
            raise ConfigError(f"Expected four positive stage channel counts, got {self.channels}.")
        if self.k < 3 or self.k % 2 == 0:
            raise ConfigError(f"Kernel size must be odd and at least 3, got {self.k}.")
        if self.iterations < 1:
            raise ConfigError(f"Propagation needs at least one iteration, got {self.iterations}.")
        cspn = None if self.cspn is None else CspnVariant(self.cspn)
        return self._replace(sftl=SftlMode(self.sftl), cspn=cspn, channels=tuple(self.channels))

    @classmethod
    def from_mapping(cls, mapping: t.Mapping[str, t.Any]) -> NetworkConfig:
        """Build a validated configuration from raw ``[net]`` values, unknown keys are rejected."""
        values = NET_OPTIONS.convert_from_mapping(mapping)
        return cls(
            h=values["h"],
            w=values["w"],
            channels=tuple(values["channels"]),
            stem=values["stem"],
            k=values["k"],
            sftl=SftlMode(values["sftl"]),
            cspn=CSPN_CHOICES[values["cspn"]],
            iterations=values["iterations"],
            use_partial_depth=values["pd"] == "front",
        ).validate()

    @classmethod
    def from_text(cls, text: str) -> NetworkConfig:
        """Parse the ``[net]`` section of a configuration text, other sections are ignored."""
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as ex:
            raise ConfigError(f"Malformed configuration text: {ex}") from None
        if not parser.has_section("net"):
            raise ConfigError("The configuration text has no [net] section.")
        return cls.from_mapping(dict(parser.items("net")))

    @property
    def cspn_name(self) -> str:
        return next(name for name, variant in CSPN_CHOICES.items() if variant == self.cspn)

    def to_text(self) -> str:
        """The ``[net]`` section that rebuilds this configuration."""
        lines = [
            "[net]",
            f"h = {self.h}",
            f"w = {self.w}",
            f"channels = {','.join(str(c) for c in self.channels)}",
            f"stem = {self.stem}",
            f"k = {self.k}",
            f"sftl = {SftlMode(self.sftl).value}",
            f"cspn = {self.cspn_name}",
            f"iterations = {self.iterations}",
            f"pd = {'front' if self.use_partial_depth else 'none'}",
        ]
        return "\n".join(lines) + "\n"


class OdeOutput(t.NamedTuple):
    depth_coarse: np.ndarray
    depth_refined: np.ndarray
    sftl_offsets: t.Optional[np.ndarray]
    cspn_offsets: t.Optional[np.ndarray]
    affinity: t.Optional[np.ndarray]


class DecoderStage(Layer):
    """Upsample by two, concatenate the mirrored encoder features and fuse them with a 1x1 convolution."""

    __slots__ = ("up", "up_bn", "up_relu", "fuse", "_operands", "_joined")

    def __init__(self, name: str, c_in: int, c_skip: int, c_out: int, *, rng: np.random.Generator) -> None:
        super().__init__(name)
        self.up = ConvTranspose2d(f"{name}.up", c_in, c_out, 3, stride=2, bias=False, rng=rng)
        self.up_bn = BatchNorm2d(f"{name}.up_bn", c_out)
        self.up_relu = ReLU(f"{name}.up_relu")
        self.fuse = conv_bn_relu(f"{name}.fuse", c_out + c_skip, c_out, 1, rng=rng)
        self._operands: t.Optional[tuple[Tensor, Tensor]] = None
        self._joined: t.Optional[Tensor] = None

    def children(self) -> list[Layer]:
        return [self.up, self.up_bn, self.up_relu, self.fuse]

    def forward(self, x: np.ndarray, skip: t.Optional[np.ndarray] = None) -> np.ndarray:  # type: ignore[override]
        up = self.up_relu(self.up_bn(self.up(x)))
        if skip is None or skip.shape[0] != up.shape[0] or skip.shape[2:] != up.shape[2:]:
            raise ShapeError(f"{self.name}: skip features do not match the upsampled shape {up.shape}.")
        self._operands = (Tensor(up), Tensor(skip))
        self._joined = concat_channels(*self._operands)
        return self.fuse(self._joined.data)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return self.backward_pair(grad_out)[0]

    def backward_pair(self, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradients for the decoder input and for the skip features."""
        assert self._operands is not None and self._joined is not None, "backward called before forward"
        up, skip = (operand.zero_grad() for operand in self._operands)
        self._joined.backward(self.fuse.backward(grad_out))
        grad_up = self.up.backward(self.up_bn.backward(self.up_relu.backward(t.cast(np.ndarray, up.grad))))
        return grad_up, t.cast(np.ndarray, skip.grad)


class OdeNet(Layer):
    """
    Encoder-decoder depth network with a spherical feature transform at the bottleneck and spatial
    propagation refinement.

    Layout: an RGB stem and, with partial depth, a depth stem (sensor depth plus its mask), concatenated;
    four stride-2 residual stages; the spherical feature transform; four upsampling stages with mirrored
    skip connections; a softplus depth head; affinity and offset heads feeding the propagation.

    Parameters
    ----------
    config : :obj:`NetworkConfig`
        Architecture.
    seed : Optional[:obj:`int`]
        Seed of the weight initialisation.
    """

    __slots__ = (
        "config",
        "stem_rgb",
        "stem_depth",
        "encoder",
        "sftl",
        "sftl_post",
        "decoder",
        "depth_head",
        "depth_act",
        "affinity_head",
        "offset_head",
        "cspn",
        "_mask",
        "_skips",
        "_stems",
        "_stem_joined",
    )

    def __init__(self, config: NetworkConfig = NetworkConfig(), seed: t.Optional[int] = 0) -> None:
        super().__init__("net")
        config = config.validate()
        rng = make_rng(seed)
        self.config: NetworkConfig = config
        stem = config.stem
        c1, c2, c3, c4 = config.channels

        self.stem_rgb = conv_bn_relu("stem_rgb", 3, stem, rng=rng)
        self.stem_depth: t.Optional[Sequential] = None
        stem_out = stem
        if config.use_partial_depth:
            self.stem_depth = conv_bn_relu("stem_depth", 2, stem, rng=rng)
            stem_out = 2 * stem

        self.encoder: list[ResidualBlock] = []
        previous = stem_out
        for index, channels in enumerate(config.channels, start=1):
            self.encoder.append(ResidualBlock(f"enc{index}", previous, channels, stride=2, rng=rng))
            previous = channels

        self.sftl = Sftl("sftl", c4, c4, SftlConfig(mode=config.sftl, k=config.k), bias=False, rng=rng)
        self.sftl_post = Sequential("sftl_post", BatchNorm2d("sftl_post.bn", c4), ReLU("sftl_post.relu"))

        self.decoder: list[DecoderStage] = [
            DecoderStage("dec4", c4, c3, c3, rng=rng),
            DecoderStage("dec3", c3, c2, c2, rng=rng),
            DecoderStage("dec2", c2, c1, c1, rng=rng),
            DecoderStage("dec1", c1, stem_out, stem, rng=rng),
        ]

        self.depth_head = Conv2d("depth_head", stem, 1, 3, rng=rng)
        self.depth_act = Softplus("depth_head.softplus")
        self.affinity_head: t.Optional[Conv2d] = None
        self.offset_head: t.Optional[Conv2d] = None
        self.cspn: t.Optional[Cspn] = None
        if config.cspn is not None:
            neighbours = config.k * config.k - 1
            self.cspn = Cspn(PropagationConfig(k=config.k, iterations=config.iterations, variant=config.cspn))
            self.affinity_head = Conv2d("affinity_head", stem, neighbours, 3, rng=rng)
            if config.cspn is CspnVariant.D_CSPN:
                self.offset_head = Conv2d("cspn_offset_head", stem, 2 * neighbours, 3, rng=rng)
                self.offset_head.weight.value = np.zeros(self.offset_head.weight.shape)

        self._mask: t.Optional[np.ndarray] = None
        self._skips: list[int] = []
        self._stems: t.Optional[tuple[Tensor, Tensor]] = None
        self._stem_joined: t.Optional[Tensor] = None
        _LOGGER.debug(f"Built {config} with {sum(p.size for p in self.parameters())} parameters.")

    def children(self) -> list[Layer]:
        layers: list[Layer] = [self.stem_rgb]
        if self.stem_depth is not None:
            layers.append(self.stem_depth)
        layers.extend(self.encoder)
        layers.extend([self.sftl, self.sftl_post])
        layers.extend(self.decoder)
        layers.extend([self.depth_head, self.depth_act])
        for head in (self.affinity_head, self.offset_head):
            if head is not None:
                layers.append(head)
        return layers

    def _check_inputs(self, image: np.ndarray, sensor: t.Optional[SensorDepth]) -> None:
        expected = (3, self.config.h, self.config.w)
        if image.ndim != 4 or image.shape[1:] != expected:
            raise ShapeError(f"Expected images of shape (n, {expected[0]}, {expected[1]}, {expected[2]}), got {image.shape}.")
        if self.config.use_partial_depth and sensor is None:
            raise SensorError("This network was configured with partial depth and needs a sensor depth map.")
        if not self.config.use_partial_depth and sensor is not None:
            raise SensorError("This network was configured without partial depth but was given a sensor depth map.")
        if sensor is not None and sensor.dp.shape != (image.shape[0], 1) + expected[1:]:
            raise ShapeError(f"Sensor depth of shape {sensor.dp.shape} does not match images of shape {image.shape}.")

    def forward(self, image: np.ndarray, sensor: t.Optional[SensorDepth] = None) -> OdeOutput:  # type: ignore[override]
        """
        Parameters
        ----------
        image : :obj:`numpy.ndarray`
            ``(n, 3, h, w)`` panoramas in ``[0, 1]``.
        sensor : Optional[:obj:`~.cspn.SensorDepth`]
            Partial depth, required exactly when the network uses partial depth.

        Returns
        -------
        :obj:`OdeOutput`
            ``(n, 1, h, w)`` coarse and refined depth plus the learned offsets and affinities.
        """
        self._check_inputs(image, sensor)
        x0 = self.stem_rgb(image)
        if self.stem_depth is not None and sensor is not None:
            dp = Tensor(sensor.dp, requires_grad=False, dtype=x0.dtype)
            mask = Tensor(sensor.mask_channel(), requires_grad=False, dtype=x0.dtype)
            depth_in = concat_channels(dp, mask)
            self._stems = (Tensor(x0), Tensor(self.stem_depth(depth_in.data)))
            self._stem_joined = concat_channels(*self._stems)
            x0 = self._stem_joined.data

        features = [x0]
        for stage in self.encoder:
            features.append(stage(features[-1]))
        x = self.sftl_post(self.sftl(features[-1]))

        for stage, skip in zip(self.decoder, reversed(features[:-1])):
            x = stage.forward(x, skip)

        coarse = check_finite(self.depth_act(self.depth_head(x)), "coarse depth")
        affinity = cspn_offsets = None
        if self.cspn is not None and self.affinity_head is not None:
            affinity = self.affinity_head(x)
            if self.offset_head is not None:
                cspn_offsets = self.offset_head(x)
            if sensor is None:
                sensor = SensorDepth(np.zeros_like(coarse))
            refined = self.cspn.forward(coarse, affinity, sensor, cspn_offsets)
            self._mask = None
        elif sensor is not None:
            refined = replacement_step(coarse, sensor)
            self._mask = sensor.mask
        else:
            refined = coarse
            self._mask = None
        return OdeOutput(coarse, check_finite(refined, "refined depth"), self.sftl.last_offsets, cspn_offsets, affinity)

    def backward(self, grad_refined: np.ndarray) -> np.ndarray:
        """
        Accumulate gradients for every parameter from the gradient of the loss with respect to the refined
        depth.

        Returns
        -------
        :obj:`numpy.ndarray`
            The gradient with respect to the input image.
        """
        grad_x = None
        if self.cspn is not None and self.affinity_head is not None:
            grads: CspnGradients = self.cspn.backward(grad_refined)
            grad_coarse = grads.h0
            grad_x = self.affinity_head.backward(grads.raw_affinity)
            if self.offset_head is not None and grads.offsets is not None:
                grad_x = grad_x + self.offset_head.backward(grads.offsets)
        elif self._mask is not None:
            grad_coarse = np.where(self._mask, 0, grad_refined).astype(grad_refined.dtype, copy=False)
        else:
            grad_coarse = grad_refined

        grad_head = self.depth_head.backward(self.depth_act.backward(grad_coarse))
        grad_x = grad_head if grad_x is None else grad_x + grad_head

        skip_grads: list[np.ndarray] = []
        for stage in reversed(self.decoder):
            grad_x, grad_skip = stage.backward_pair(grad_x)
            skip_grads.append(grad_skip)
        # skip_grads runs from the stem features to the deepest skip
        grad = self.sftl.backward(self.sftl_post.backward(grad_x))
        for stage, grad_skip in zip(reversed(self.encoder), reversed(skip_grads)):
            grad = stage.backward(grad) + grad_skip
        if self.stem_depth is not None and self._stems is not None and self._stem_joined is not None:
            rgb, depth = (stem.zero_grad() for stem in self._stems)
            self._stem_joined.backward(grad)
            self.stem_depth.backward(t.cast(np.ndarray, depth.grad))
            grad = t.cast(np.ndarray, rgb.grad)
        return self.stem_rgb.backward(grad)


def l1_loss(pred: np.ndarray, gt: np.ndarray, valid: t.Optional[np.ndarray] = None) -> tuple[float, np.ndarray]:
    """
    Mean absolute error over valid pixels.

    Pixels where ``gt`` is zero are never valid.

    Returns
    -------
    Tuple[:obj:`float`, :obj:`numpy.ndarray`]
        The loss and its gradient with respect to ``pred``: ``sign(pred - gt) / count`` on valid pixels.

    Raises
    ------
    :obj:`~.errors.MaskError`
        If no pixel is valid.
    """
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} disagree.")
    mask = gt > 0
    if valid is not None:
        mask &= np.asarray(valid).reshape(gt.shape) > 0
    count = int(mask.sum())
    if count == 0:
        raise MaskError("The valid mask selects no pixels.")
    diff = pred - gt
    loss = float(np.sum(np.abs(diff[mask]), dtype=np.float64) / count)
    grad = np.where(mask, np.sign(diff), 0) / count
    return loss, grad.astype(pred.dtype, copy=False)
