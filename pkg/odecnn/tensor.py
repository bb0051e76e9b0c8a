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
"""Dense tensors, the precision switch and the gradient-buffer convention.

Every differentiable object in odecnn follows the same contract: ``forward`` caches what it needs and
returns a fresh array, ``backward`` takes the gradient of the loss with respect to that output and
*accumulates* (``+=``) into the gradient buffers of its inputs and parameters. Buffers are cleared
explicitly with ``zero_grad``.
"""
from __future__ import annotations
import abc
import contextlib
import enum
import typing as t

import numpy as np

from odecnn.errors import NumericalError, ShapeError

__all__: list[str] = [
    "Precision",
    "get_dtype",
    "set_precision",
    "precision",
    "make_rng",
    "check_finite",
    "Tensor",
    "Parameter",
    "zeros",
    "ones",
    "randn",
    "Add",
    "Mul",
    "Map",
    "ConcatChannels",
    "ew_add",
    "ew_mul",
    "ew_map",
    "concat_channels",
    "slice_channels",
]

Operand = t.Union["Tensor", float, int]


class Precision(str, enum.Enum):
    """Floating point precision used for new tensors and parameters."""

    FLOAT32 = "float32"
    """Training precision."""

    FLOAT64 = "float64"
    """Gradient-check precision, finite differences are unreliable in 32-bit."""

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)


_PRECISION: Precision = Precision.FLOAT32


def get_dtype() -> np.dtype:
    return _PRECISION.dtype


def set_precision(value: t.Union[Precision, str]) -> Precision:
    """
    Set the process-wide precision.

    Returns
    -------
    :obj:`Precision`
        The previous precision, so it can be restored.
    """
    global _PRECISION
    previous = _PRECISION
    _PRECISION = Precision(value)
    return previous


@contextlib.contextmanager
def precision(value: t.Union[Precision, str]) -> t.Iterator[Precision]:
    previous = set_precision(value)
    try:
        yield _PRECISION
    finally:
        set_precision(previous)


def make_rng(seed: t.Optional[int]) -> np.random.Generator:
    """
    Create an instance-owned generator. The bit generator is PCG64 (O'Neill's permuted congruential
    generator, 128-bit state) and normal deviates come from numpy's ziggurat sampler, so a seed
    reproduces the same stream bit for bit.
    """
    return np.random.Generator(np.random.PCG64(seed))


def check_finite(array: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(array)):
        raise NumericalError(what)
    return array


def _validate_shape(shape: t.Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if not dims:
        raise ShapeError("Tensor shape must have at least one dimension.")
    if any(d < 1 for d in dims):
        raise ShapeError(f"Tensor dimensions must all be at least 1, got {dims}.")
    return dims


class Tensor:
    """
    A dense row-major array with an optional same-shape gradient buffer.

    Tensors returned by an operation keep it in ``source``, so :meth:`backward` reaches the operands.

    Parameters
    ----------
    data : array_like
        The values, copied. Floating point arrays keep their dtype, anything else is cast to the
        current precision unless ``dtype`` is given.
    requires_grad : :obj:`bool`
        Whether to allocate the gradient buffer up front. Defaults to `True`.
    """

    __slots__ = ("data", "grad", "source")

    def __init__(self, data: t.Any, *, requires_grad: bool = True, dtype: t.Optional[np.dtype] = None) -> None:
        if dtype is None:
            floating = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if floating else get_dtype()
        array = np.array(data, dtype=dtype)
        _validate_shape(array.shape)
        self.data: np.ndarray = array
        self.grad: t.Optional[np.ndarray] = np.zeros_like(array) if requires_grad else None
        self.source: t.Optional[_Op] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def zero_grad(self) -> Tensor:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0)
        return self

    def accumulate_grad(self, grad: np.ndarray) -> Tensor:
        if grad.shape != self.data.shape:
            raise ShapeError(f"Gradient of shape {grad.shape} does not match tensor of shape {self.data.shape}.")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad
        return self

    def backward(self, grad: np.ndarray) -> None:
        """Send ``grad`` back to the inputs of the operation that produced this tensor."""
        if self.source is None:
            raise TypeError("This tensor was not produced by an operation and has nothing to differentiate.")
        self.source.backward(grad)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(shape={self.shape}, dtype={self.dtype})"


class Parameter(Tensor):
    """
    A named, trainable tensor with its Adam moment buffers.

    Names are unique within a network, they key the checkpoint entries.
    """

    __slots__ = ("name", "adam_m", "adam_v")

    def __init__(self, name: str, data: t.Any) -> None:
        super().__init__(data, requires_grad=True, dtype=get_dtype())
        self.name: str = name
        self.adam_m: np.ndarray = np.zeros_like(self.data)
        self.adam_v: np.ndarray = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    @value.setter
    def value(self, new_value: t.Any) -> None:
        new = np.asarray(new_value)
        if new.shape != self.data.shape:
            raise ShapeError(f"Cannot assign shape {new.shape} to parameter '{self.name}' of shape {self.shape}.")
        self.data[...] = new

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


def zeros(shape: t.Sequence[int]) -> Tensor:
    return Tensor(np.zeros(_validate_shape(shape)), dtype=get_dtype())


def ones(shape: t.Sequence[int]) -> Tensor:
    return Tensor(np.ones(_validate_shape(shape)), dtype=get_dtype())


def randn(
    shape: t.Sequence[int], seed: t.Optional[int] = None, *, rng: t.Optional[np.random.Generator] = None
) -> Tensor:
    dims = _validate_shape(shape)
    generator = rng if rng is not None else make_rng(seed)
    return Tensor(generator.standard_normal(dims), dtype=get_dtype())


def _operand_data(a: Tensor, b: Operand) -> t.Union[np.ndarray, float]:
    if isinstance(b, Tensor):
        if b.shape != a.shape:
            raise ShapeError(f"Elementwise operands must have equal shapes, got {a.shape} and {b.shape}.")
        return b.data
    return float(b)


class _Op(abc.ABC):
    __slots__ = ()

    @abc.abstractmethod
    def backward(self, grad_out: np.ndarray) -> None:
        ...


def _produced(data: np.ndarray, op: _Op) -> Tensor:
    out = Tensor(data, requires_grad=False)
    out.source = op
    return out


class Add(_Op):
    """Elementwise ``a + b`` where ``b`` is a same-shape tensor or a scalar."""

    __slots__ = ("_a", "_b")

    def __init__(self) -> None:
        self._a: t.Optional[Tensor] = None
        self._b: t.Optional[Operand] = None

    def forward(self, a: Tensor, b: Operand) -> Tensor:
        self._a, self._b = a, b
        out = a.data + _operand_data(a, b)
        return _produced(check_finite(out, "ew_add output"), self)

    def backward(self, grad_out: np.ndarray) -> None:
        assert self._a is not None
        self._a.accumulate_grad(grad_out)
        if isinstance(self._b, Tensor):
            self._b.accumulate_grad(grad_out)


class Mul(_Op):
    """Elementwise ``a * b`` where ``b`` is a same-shape tensor or a scalar."""

    __slots__ = ("_a", "_b")

    def __init__(self) -> None:
        self._a: t.Optional[Tensor] = None
        self._b: t.Optional[Operand] = None

    def forward(self, a: Tensor, b: Operand) -> Tensor:
        self._a, self._b = a, b
        out = a.data * _operand_data(a, b)
        return _produced(check_finite(out, "ew_mul output"), self)

    def backward(self, grad_out: np.ndarray) -> None:
        assert self._a is not None
        if isinstance(self._b, Tensor):
            self._a.accumulate_grad(grad_out * self._b.data)
            self._b.accumulate_grad(grad_out * self._a.data)
        else:
            self._a.accumulate_grad(grad_out * float(self._b))


class Map(_Op):
    """
    Elementwise ``fn(a)``.

    Parameters
    ----------
    fn : Callable[[:obj:`numpy.ndarray`], :obj:`numpy.ndarray`]
        The vectorised function.
    derivative : Callable[[:obj:`numpy.ndarray`], :obj:`numpy.ndarray`]
        Its elementwise derivative, evaluated at the forward input.
    """

    __slots__ = ("_fn", "_derivative", "_a")

    def __init__(
        self,
        fn: t.Callable[[np.ndarray], np.ndarray],
        derivative: t.Optional[t.Callable[[np.ndarray], np.ndarray]] = None,
    ) -> None:
        self._fn = fn
        self._derivative = derivative
        self._a: t.Optional[Tensor] = None

    def forward(self, a: Tensor) -> Tensor:
        self._a = a
        return _produced(check_finite(self._fn(a.data), "ew_map output"), self)

    def backward(self, grad_out: np.ndarray) -> None:
        assert self._a is not None
        if self._derivative is None:
            raise TypeError("This map was built without a derivative and cannot be differentiated.")
        self._a.accumulate_grad(grad_out * self._derivative(self._a.data))


class ConcatChannels(_Op):
    """Concatenate two ``(batch, c, h, w)`` tensors along the channel axis."""

    __slots__ = ("_a", "_b")

    def __init__(self) -> None:
        self._a: t.Optional[Tensor] = None
        self._b: t.Optional[Tensor] = None

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        if a.ndim != b.ndim or a.ndim < 2:
            raise ShapeError(f"Cannot concatenate tensors of rank {a.ndim} and {b.ndim} along channels.")
        if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
            raise ShapeError(f"Batch and spatial dimensions disagree: {a.shape} and {b.shape}.")
        self._a, self._b = a, b
        return _produced(np.concatenate([a.data, b.data], axis=1), self)

    def backward(self, grad_out: np.ndarray) -> None:
        assert self._a is not None and self._b is not None
        split = self._a.shape[1]
        self._a.accumulate_grad(grad_out[:, :split])
        self._b.accumulate_grad(grad_out[:, split:])


def ew_add(a: Tensor, b: Operand) -> Tensor:
    return Add().forward(a, b)


def ew_mul(a: Tensor, b: Operand) -> Tensor:
    return Mul().forward(a, b)


def ew_map(
    a: Tensor,
    fn: t.Callable[[np.ndarray], np.ndarray],
    derivative: t.Optional[t.Callable[[np.ndarray], np.ndarray]] = None,
) -> Tensor:
    return Map(fn, derivative).forward(a)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    return ConcatChannels().forward(a, b)


def slice_channels(tensor: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= tensor.shape[1]:
        raise ShapeError(f"Channel slice [{start}:{stop}] is out of range for {tensor.shape[1]} channels.")
    return Tensor(tensor.data[:, start:stop], requires_grad=False)
