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
"""
The layer zoo: convolution, transposed convolution, batch normalization, activations, residual blocks
and the spherical feature transform layer.

Activations flow between layers as plain :obj:`numpy.ndarray`. Weights live in :obj:`~.tensor.Parameter`
objects whose gradient buffers ``backward`` accumulates into.
"""
from __future__ import annotations
import abc
import enum
import logging
import math
import typing as t

import numpy as np

from odecnn.errors import ShapeError
from odecnn.sampling import (
    DeformIm2col,
    OffsetMode,
    PadMode,
    SamplingGrid,
    col2im,
    conv_output_size,
    im2col,
)
from odecnn.sphere import EquirectGrid, ig_sampling_grid
from odecnn.tensor import Parameter, Tensor, check_finite, ew_add, get_dtype, make_rng

__all__: list[str] = [
    "Layer",
    "Conv2d",
    "ConvTranspose2d",
    "BatchNorm2d",
    "ReLU",
    "Softplus",
    "ResidualBlock",
    "SftlMode",
    "SftlConfig",
    "Sftl",
    "Sequential",
    "conv_bn_relu",
]

_LOGGER = logging.getLogger("odecnn.layers")


class Layer(abc.ABC):
    """
    The base class for all layers.

    Parameters
    ----------
    name : :obj:`str`
        Dotted name of the layer inside its network. Parameter and buffer names are prefixed with it.
    """

    __slots__ = ("name", "training")

    def __init__(self, name: str) -> None:
        self.name: str = name
        self.training: bool = True

    def own_parameters(self) -> list[Parameter]:
        return []

    def own_buffers(self) -> dict[str, np.ndarray]:
        return {}

    def children(self) -> list[Layer]:
        return []

    def parameters(self) -> list[Parameter]:
        params = list(self.own_parameters())
        for child in self.children():
            params.extend(child.parameters())
        return params

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state, by name. The arrays are live, assigning into them updates the layer."""
        found = dict(self.own_buffers())
        for child in self.children():
            found.update(child.buffers())
        return found

    def train(self, mode: bool = True) -> Layer:
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self) -> Layer:
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    @abc.abstractmethod
    def forward(self, x: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients and return the gradient with respect to the forward input."""
        ...

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(name={self.name!r})"


def _kaiming(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


def _check_channels(x: np.ndarray, expected: int, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} expects a (batch, channels, h, w) input, got shape {x.shape}.")
    if x.shape[1] != expected:
        raise ShapeError(f"{name} expects {expected} input channels, got {x.shape[1]}.")


class Conv2d(Layer):
    """
    A 2-D convolution computed as ``im2col`` followed by a matrix multiply.

    Parameters
    ----------
    name : :obj:`str`
        Layer name.
    c_in, c_out : :obj:`int`
        Channel counts.
    k : :obj:`int`
        Odd kernel size.
    stride : :obj:`int`
        Defaults to 1.
    pad : Optional[:obj:`int`]
        Defaults to ``(k - 1) // 2``.
    bias : :obj:`bool`
        Whether to learn a bias. Defaults to `True`.
    mode : :obj:`~.sampling.PadMode`
        Border handling, wrapped columns by default since every feature map here is a panorama.
    rng : Optional[:obj:`numpy.random.Generator`]
        Generator for the Kaiming initialisation.
    """

    __slots__ = ("c_in", "c_out", "k", "stride", "pad", "mode", "weight", "bias", "_x_shape", "_cols")

    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        k: int,
        *,
        stride: int = 1,
        pad: t.Optional[int] = None,
        bias: bool = True,
        mode: PadMode = PadMode.WRAP_HORIZONTAL,
        rng: t.Optional[np.random.Generator] = None,
    ) -> None:
        super().__init__(name)
        if k < 1 or k % 2 == 0:
            raise ShapeError(f"Kernel size must be odd and positive, got {k}.")
        if stride < 1:
            raise ShapeError(f"Stride must be at least 1, got {stride}.")
        rng = rng if rng is not None else make_rng(None)
        self.c_in: int = c_in
        self.c_out: int = c_out
        self.k: int = k
        self.stride: int = stride
        self.pad: int = (k - 1) // 2 if pad is None else pad
        self.mode: PadMode = mode
        self.weight: Parameter = Parameter(f"{name}.weight", _kaiming(rng, (c_out, c_in, k, k), c_in * k * k))
        self.bias: t.Optional[Parameter] = Parameter(f"{name}.bias", np.zeros(c_out)) if bias else None
        self._x_shape: tuple[int, ...] = ()
        self._cols: t.Optional[np.ndarray] = None

    def own_parameters(self) -> list[Parameter]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        return conv_output_size(h, self.k, self.stride, self.pad), conv_output_size(w, self.k, self.stride, self.pad)

    def forward(self, x: np.ndarray) -> np.ndarray:
        _check_channels(x, self.c_in, self.name)
        n, _, h, w = x.shape
        h_out, w_out = self.output_size(h, w)
        cols = im2col(x, self.k, self.stride, self.pad, self.mode)
        out = np.matmul(self.weight.data.reshape(self.c_out, -1), cols)
        if self.bias is not None:
            out += self.bias.data[:, None]
        self._x_shape, self._cols = x.shape, cols
        return out.reshape(n, self.c_out, h_out, w_out)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        assert self._cols is not None, "backward called before forward"
        n = grad_out.shape[0]
        grad = grad_out.reshape(n, self.c_out, -1)
        self.weight.accumulate_grad(np.tensordot(grad, self._cols, axes=([0, 2], [0, 2])).reshape(self.weight.shape))
        if self.bias is not None:
            self.bias.accumulate_grad(grad.sum(axis=(0, 2)))
        grad_cols = np.matmul(self.weight.data.reshape(self.c_out, -1).T, grad)
        return col2im(grad_cols, self._x_shape, self.k, self.stride, self.pad, self.mode)  # type: ignore[arg-type]


class ConvTranspose2d(Layer):
    """
    A transposed convolution, the adjoint of :obj:`Conv2d` with the same kernel.

    The weight has shape ``(c_in, c_out, k, k)``, the layout of the strided convolution it undoes, and the
    output is ``stride`` times larger than the input in both spatial dimensions.
    """

    __slots__ = ("c_in", "c_out", "k", "stride", "pad", "mode", "weight", "bias", "_x", "_out_shape")

    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        k: int,
        *,
        stride: int = 2,
        bias: bool = True,
        mode: PadMode = PadMode.WRAP_HORIZONTAL,
        rng: t.Optional[np.random.Generator] = None,
    ) -> None:
        super().__init__(name)
        if k < 1 or k % 2 == 0:
            raise ShapeError(f"Kernel size must be odd and positive, got {k}.")
        if stride < 1:
            raise ShapeError(f"Stride must be at least 1, got {stride}.")
        rng = rng if rng is not None else make_rng(None)
        self.c_in: int = c_in
        self.c_out: int = c_out
        self.k: int = k
        self.stride: int = stride
        self.pad: int = (k - 1) // 2
        self.mode: PadMode = mode
        self.weight: Parameter = Parameter(f"{name}.weight", _kaiming(rng, (c_in, c_out, k, k), c_in * k * k))
        self.bias: t.Optional[Parameter] = Parameter(f"{name}.bias", np.zeros(c_out)) if bias else None
        self._x: t.Optional[np.ndarray] = None
        self._out_shape: tuple[int, int, int, int] = (0, 0, 0, 0)

    def own_parameters(self) -> list[Parameter]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        _check_channels(x, self.c_in, self.name)
        n, _, h, w = x.shape
        out_shape = (n, self.c_out, h * self.stride, w * self.stride)
        cols = np.matmul(self.weight.data.reshape(self.c_in, -1).T, x.reshape(n, self.c_in, h * w))
        out = col2im(cols, out_shape, self.k, self.stride, self.pad, self.mode)
        if self.bias is not None:
            out += self.bias.data[None, :, None, None]
        self._x, self._out_shape = x, out_shape
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        assert self._x is not None, "backward called before forward"
        n, _, h, w = self._x.shape
        if grad_out.shape != self._out_shape:
            raise ShapeError(f"Gradient of shape {grad_out.shape} does not match output {self._out_shape}.")
        grad_cols = im2col(grad_out, self.k, self.stride, self.pad, self.mode)
        x2 = self._x.reshape(n, self.c_in, h * w)
        self.weight.accumulate_grad(np.tensordot(x2, grad_cols, axes=([0, 2], [0, 2])).reshape(self.weight.shape))
        if self.bias is not None:
            self.bias.accumulate_grad(grad_out.sum(axis=(0, 2, 3)))
        return np.matmul(self.weight.data.reshape(self.c_in, -1), grad_cols).reshape(self._x.shape)


class BatchNorm2d(Layer):
    """
    Per-channel batch normalization with a learned affine transform.

    Running statistics are updated with ``momentum`` in training mode, the running variance with the
    unbiased batch variance.
    """

    __slots__ = ("channels", "momentum", "eps", "gamma", "beta", "running_mean", "running_var", "_cache")

    def __init__(self, name: str, channels: int, *, momentum: float = 0.1, eps: float = 1e-5) -> None:
        super().__init__(name)
        self.channels: int = channels
        self.momentum: float = momentum
        self.eps: float = eps
        self.gamma: Parameter = Parameter(f"{name}.gamma", np.ones(channels))
        self.beta: Parameter = Parameter(f"{name}.beta", np.zeros(channels))
        self.running_mean: np.ndarray = np.zeros(channels, dtype=get_dtype())
        self.running_var: np.ndarray = np.ones(channels, dtype=get_dtype())
        self._cache: t.Optional[tuple[np.ndarray, np.ndarray, bool]] = None

    def own_parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def own_buffers(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def forward(self, x: np.ndarray) -> np.ndarray:
        _check_channels(x, self.channels, self.name)
        n, _, h, w = x.shape
        if self.training:
            count = n * h * w
            if count < 2:
                raise ShapeError(f"{self.name} needs at least two values per channel in training, got {count}.")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mean
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * var * count / (count - 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (x_hat, inv_std, self.training)
        return self.gamma.data[None, :, None, None] * x_hat + self.beta.data[None, :, None, None]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        assert self._cache is not None, "backward called before forward"
        x_hat, inv_std, training = self._cache
        self.gamma.accumulate_grad(np.sum(grad_out * x_hat, axis=(0, 2, 3)))
        self.beta.accumulate_grad(np.sum(grad_out, axis=(0, 2, 3)))
        grad_hat = grad_out * self.gamma.data[None, :, None, None]
        scale = inv_std[None, :, None, None]
        if not training:
            return grad_hat * scale
        mean_grad = grad_hat.mean(axis=(0, 2, 3), keepdims=True)
        mean_grad_hat = (grad_hat * x_hat).mean(axis=(0, 2, 3), keepdims=True)
        return scale * (grad_hat - mean_grad - x_hat * mean_grad_hat)


class ReLU(Layer):
    __slots__ = ("_mask",)

    def __init__(self, name: str = "relu") -> None:
        super().__init__(name)
        self._mask: t.Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        assert self._mask is not None, "backward called before forward"
        return np.where(self._mask, grad_out, 0).astype(grad_out.dtype, copy=False)


class Softplus(Layer):
    """``log(1 + exp(x))``, keeps the depth head strictly positive."""

    __slots__ = ("_x",)

    def __init__(self, name: str = "softplus") -> None:
        super().__init__(name)
        self._x: t.Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return np.logaddexp(0, x).astype(x.dtype, copy=False)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        assert self._x is not None, "backward called before forward"
        sigmoid = np.exp(-np.logaddexp(0, -self._x))
        return grad_out * sigmoid


class ResidualBlock(Layer):
    """
    ``relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))``.

    The shortcut is a strided 1x1 convolution with batch normalization whenever the block changes the
    stride or the channel count, and the identity otherwise.
    """

    __slots__ = ("conv1", "bn1", "relu1", "conv2", "bn2", "proj", "proj_bn", "relu_out", "_operands", "_sum")

    def __init__(
        self, name: str, c_in: int, c_out: int, *, stride: int = 1, rng: t.Optional[np.random.Generator] = None
    ) -> None:
        super().__init__(name)
        rng = rng if rng is not None else make_rng(None)
        self.conv1 = Conv2d(f"{name}.conv1", c_in, c_out, 3, stride=stride, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(f"{name}.bn1", c_out)
        self.relu1 = ReLU(f"{name}.relu1")
        self.conv2 = Conv2d(f"{name}.conv2", c_out, c_out, 3, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(f"{name}.bn2", c_out)
        self.proj: t.Optional[Conv2d] = None
        self.proj_bn: t.Optional[BatchNorm2d] = None
        if stride > 1 or c_in != c_out:
            self.proj = Conv2d(f"{name}.proj", c_in, c_out, 1, stride=stride, pad=0, bias=False, rng=rng)
            self.proj_bn = BatchNorm2d(f"{name}.proj_bn", c_out)
        self.relu_out = ReLU(f"{name}.relu")
        self._operands: t.Optional[tuple[Tensor, Tensor]] = None
        self._sum: t.Optional[Tensor] = None

    def children(self) -> list[Layer]:
        layers: list[Layer] = [self.conv1, self.bn1, self.relu1, self.conv2, self.bn2]
        if self.proj is not None and self.proj_bn is not None:
            layers.extend([self.proj, self.proj_bn])
        return layers + [self.relu_out]

    def forward(self, x: np.ndarray) -> np.ndarray:
        branch = self.bn2(self.conv2(self.relu1(self.bn1(self.conv1(x)))))
        if self.proj is not None and self.proj_bn is not None:
            shortcut = self.proj_bn(self.proj(x))
        else:
            shortcut = x
        if shortcut.shape != branch.shape:
            raise ShapeError(f"{self.name}: shortcut {shortcut.shape} and branch {branch.shape} disagree.")
        self._operands = (Tensor(branch), Tensor(shortcut))
        self._sum = ew_add(*self._operands)
        return self.relu_out(self._sum.data)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        assert self._operands is not None and self._sum is not None, "backward called before forward"
        branch, shortcut = (operand.zero_grad() for operand in self._operands)
        self._sum.backward(self.relu_out.backward(grad_out))
        grad = t.cast(np.ndarray, branch.grad)
        grad_x = self.conv1.backward(self.bn1.backward(self.relu1.backward(self.conv2.backward(self.bn2.backward(grad)))))
        grad_short = t.cast(np.ndarray, shortcut.grad)
        if self.proj is not None and self.proj_bn is not None:
            return grad_x + self.proj.backward(self.proj_bn.backward(grad_short))
        return grad_x + grad_short


class SftlMode(str, enum.Enum):
    PLANAR = "planar"
    """An ordinary convolution on the integer stencil."""

    IGT = "igt"
    """Inverse-gnomonic sampling grid, no offsets."""

    DIGT = "digt"
    """Inverse-gnomonic grid deformed by offsets predicted from the input."""


class SftlConfig(t.NamedTuple):
    mode: SftlMode = SftlMode.DIGT
    k: int = 3
    step: t.Optional[float] = None
    """Tangent spacing of the taps, defaults to the angular pixel pitch of the input."""
    cap_pixels: float = 4.0
    """Offsets are clipped to this many pixel pitches in tangent units."""


class Sftl(Layer):
    """
    The spherical feature transform layer: a convolution whose taps are sampled on a transformed
    neighbourhood.

    In ``digt`` mode a zero-initialised 3x3 offset head predicts ``2 * k * k`` tangent offsets, one
    ``(dx, dy)`` pair per tap including the centre, so a fresh layer behaves exactly like ``igt``.

    Parameters
    ----------
    name : :obj:`str`
        Layer name.
    c_in, c_out : :obj:`int`
        Channel counts.
    config : :obj:`SftlConfig`
        Mode, kernel size, tangent step and offset cap.
    grid : Optional[:obj:`~.sampling.SamplingGrid`]
        A fixed sampling grid. When omitted the inverse-gnomonic grid is built for each input resolution
        on first use.
    bias : :obj:`bool`
        Whether to learn a bias. Defaults to `True`.
    rng : Optional[:obj:`numpy.random.Generator`]
        Generator for the kernel initialisation.
    """

    __slots__ = (
        "config",
        "c_in",
        "c_out",
        "weight",
        "bias",
        "offset_head",
        "_fixed_grid",
        "_grids",
        "_unfold",
        "_cols",
        "_planar_conv",
        "last_offsets",
    )

    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        config: SftlConfig = SftlConfig(),
        *,
        grid: t.Optional[SamplingGrid] = None,
        bias: bool = True,
        rng: t.Optional[np.random.Generator] = None,
    ) -> None:
        super().__init__(name)
        mode = SftlMode(config.mode)
        if config.k < 1 or config.k % 2 == 0:
            raise ShapeError(f"Kernel size must be odd and positive, got {config.k}.")
        rng = rng if rng is not None else make_rng(None)
        self.config: SftlConfig = config._replace(mode=mode)
        self.c_in: int = c_in
        self.c_out: int = c_out
        k = config.k
        # the planar path shares the kernel with an ordinary convolution
        self._planar_conv: Conv2d = Conv2d(f"{name}", c_in, c_out, k, bias=bias, rng=rng)
        self.weight: Parameter = self._planar_conv.weight
        self.bias: t.Optional[Parameter] = self._planar_conv.bias
        self.offset_head: t.Optional[Conv2d] = None
        if mode is SftlMode.DIGT:
            self.offset_head = Conv2d(f"{name}.offset_head", c_in, 2 * k * k, 3, rng=rng)
            self.offset_head.weight.value = np.zeros(self.offset_head.weight.shape)
        self._fixed_grid: t.Optional[SamplingGrid] = grid
        self._grids: dict[tuple[int, int], SamplingGrid] = {}
        self._unfold: t.Optional[DeformIm2col] = None
        self._cols: t.Optional[np.ndarray] = None
        self.last_offsets: t.Optional[np.ndarray] = None

    @property
    def mode(self) -> SftlMode:
        return self.config.mode

    def own_parameters(self) -> list[Parameter]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def children(self) -> list[Layer]:
        return [] if self.offset_head is None else [self.offset_head]

    def grid_for(self, h: int, w: int) -> SamplingGrid:
        """The sampling grid used at an ``h x w`` input."""
        if self._fixed_grid is not None:
            if (self._fixed_grid.height, self._fixed_grid.width) != (h, w):
                raise ShapeError(
                    f"{self.name} was given a {self._fixed_grid.height}x{self._fixed_grid.width} grid "
                    f"but received a {h}x{w} input."
                )
            return self._fixed_grid
        grid = self._grids.get((h, w))
        if grid is None:
            grid = ig_sampling_grid(EquirectGrid(h, w), self.config.k, self.config.step)
            self._grids[(h, w)] = grid
            _LOGGER.debug(f"Built {h}x{w} inverse-gnomonic grid for {self.name}.")
        return grid

    def offset_cap(self, h: int) -> float:
        step = self.config.step if self.config.step is not None else math.pi / h
        return self.config.cap_pixels * step

    def forward(self, x: np.ndarray) -> np.ndarray:
        _check_channels(x, self.c_in, self.name)
        if self.mode is SftlMode.PLANAR:
            return self._planar_conv.forward(x)

        n, _, h, w = x.shape
        grid = self.grid_for(h, w)
        offsets = None
        if self.offset_head is not None:
            offsets = check_finite(self.offset_head.forward(x), f"{self.name} offsets")
        self.last_offsets = offsets
        self._unfold = DeformIm2col(grid, OffsetMode.TANGENT, self.offset_cap(h))
        cols = self._unfold.forward(x, offsets)
        self._cols = cols
        out = np.matmul(self.weight.data.reshape(self.c_out, -1), cols)
        if self.bias is not None:
            out += self.bias.data[:, None]
        return out.reshape(n, self.c_out, h, w)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self.mode is SftlMode.PLANAR:
            return self._planar_conv.backward(grad_out)
        assert self._unfold is not None and self._cols is not None, "backward called before forward"
        n = grad_out.shape[0]
        grad = grad_out.reshape(n, self.c_out, -1)
        self.weight.accumulate_grad(np.tensordot(grad, self._cols, axes=([0, 2], [0, 2])).reshape(self.weight.shape))
        if self.bias is not None:
            self.bias.accumulate_grad(grad.sum(axis=(0, 2)))
        grad_cols = np.matmul(self.weight.data.reshape(self.c_out, -1).T, grad)
        grad_x, grad_offsets = self._unfold.backward(grad_cols)
        if self.offset_head is not None and grad_offsets is not None:
            grad_x = grad_x + self.offset_head.backward(grad_offsets)
        return grad_x


class Sequential(Layer):
    """Layers applied one after the other, differentiated in reverse."""

    __slots__ = ("layers",)

    def __init__(self, name: str, *layers: Layer) -> None:
        super().__init__(name)
        self.layers: tuple[Layer, ...] = layers

    def children(self) -> list[Layer]:
        return list(self.layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out


def conv_bn_relu(
    name: str, c_in: int, c_out: int, k: int = 3, *, rng: t.Optional[np.random.Generator] = None
) -> Sequential:
    return Sequential(
        name,
        Conv2d(f"{name}.conv", c_in, c_out, k, bias=False, rng=rng),
        BatchNorm2d(f"{name}.bn", c_out),
        ReLU(f"{name}.relu"),
    )
