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
"""Finite-difference verification of every analytic backward pass."""
from __future__ import annotations
import logging
import typing as t

import numpy as np

from odecnn.cspn import (
    Cspn,
    CspnVariant,
    PropagationConfig,
    PropagationStep,
    SensorDepth,
    neighbor_grid,
    normalize_affinity,
    normalize_affinity_backward,
)
from odecnn.errors import GradcheckError, ShapeError
from odecnn.layers import BatchNorm2d, Conv2d, ConvTranspose2d, Layer, ReLU, ResidualBlock, Sftl, SftlConfig, SftlMode
from odecnn.network import NetworkConfig, OdeNet
from odecnn.sampling import BilinearSampler, WrapPolicy
from odecnn.tensor import ConcatChannels, Mul, Parameter, Precision, Tensor, make_rng, precision

__all__: list[str] = [
    "DEFAULT_TOLERANCE",
    "FD_STEP",
    "MAX_ENTRIES",
    "Problem",
    "GradcheckResult",
    "gradcheck_target",
    "target_names",
    "check_problem",
    "run_gradcheck",
    "check_all",
]

_LOGGER = logging.getLogger("odecnn.gradcheck")

DEFAULT_TOLERANCE: t.Final[float] = 1e-4
FD_STEP: t.Final[float] = 1e-5
MAX_ENTRIES: t.Final[int] = 24
"""Entries of each tensor sampled for finite differences."""


class Problem(t.NamedTuple):
    """
    A differentiable computation under test.

    ``arrays`` are the live inputs, perturbed in place. ``backward`` receives the gradient of the output and
    returns the gradient of every array, by the same name.
    """

    arrays: dict[str, np.ndarray]
    forward: t.Callable[[], np.ndarray]
    backward: t.Callable[[np.ndarray], dict[str, np.ndarray]]


class GradcheckResult(t.NamedTuple):
    target: str
    tensor: str
    entries: int
    max_abs_error: float
    error: float
    """``max|analytic - numeric|`` over the sampled entries, normalized by the largest magnitude of either."""
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{self.target:<12} {self.tensor:<26} {self.entries:>3} entries  error {self.error:.2e}  {status}"


_BuilderT = t.Callable[[np.random.Generator], Problem]
_TARGETS: dict[str, tuple[_BuilderT, float]] = {}


def gradcheck_target(name: str, *, tolerance: float = DEFAULT_TOLERANCE) -> t.Callable[[_BuilderT], _BuilderT]:
    """Register a problem builder under a target name."""

    def decorate(builder: _BuilderT) -> _BuilderT:
        if name in _TARGETS:
            raise ValueError(f"A gradcheck target named {name!r} already exists.")
        _TARGETS[name] = (builder, tolerance)
        return builder

    return decorate


def target_names() -> list[str]:
    return list(_TARGETS)


def _signed(rng: np.random.Generator, shape: tuple[int, ...], low: float = 0.1, high: float = 1.0) -> np.ndarray:
    """Random values bounded away from zero."""
    return rng.uniform(low, high, shape) * rng.choice([-1.0, 1.0], shape)


def _fractional(rng: np.random.Generator, shape: tuple[int, ...], low: int, high: int) -> np.ndarray:
    """Random coordinates whose fractional part stays clear of the integers."""
    return rng.integers(low, high, shape) + rng.uniform(0.1, 0.9, shape)


def _sparse_sensor(rng: np.random.Generator, shape: tuple[int, ...], coverage: float = 0.2) -> SensorDepth:
    depth = rng.uniform(1.0, 5.0, shape) * (rng.random(shape) < coverage)
    return SensorDepth(depth)


def _layer_problem(layer: Layer, x: np.ndarray) -> Problem:
    arrays = {"x": x}
    params = layer.named_parameters()
    arrays.update({name: p.data for name, p in params.items()})

    def backward(grad: np.ndarray) -> dict[str, np.ndarray]:
        layer.zero_grad()
        grads = {"x": layer.backward(grad)}
        grads.update({name: t.cast(np.ndarray, p.grad) for name, p in params.items()})
        return grads

    return Problem(arrays, lambda: layer.forward(x), backward)


def _binary_problem(op: t.Union[Mul, ConcatChannels], a: Tensor, b: Tensor) -> Problem:
    def backward(grad: np.ndarray) -> dict[str, np.ndarray]:
        a.zero_grad()
        b.zero_grad()
        op.backward(grad)
        return {"a": t.cast(np.ndarray, a.grad), "b": t.cast(np.ndarray, b.grad)}

    return Problem({"a": a.data, "b": b.data}, lambda: op.forward(a, b).data, backward)


@gradcheck_target("ew-mul")
def _ew_mul(rng: np.random.Generator) -> Problem:
    return _binary_problem(Mul(), Tensor(rng.standard_normal((2, 3, 4, 5))), Tensor(rng.standard_normal((2, 3, 4, 5))))


@gradcheck_target("concat")
def _concat(rng: np.random.Generator) -> Problem:
    a, b = Tensor(rng.standard_normal((2, 2, 3, 4))), Tensor(rng.standard_normal((2, 3, 3, 4)))
    return _binary_problem(ConcatChannels(), a, b)


@gradcheck_target("relu")
def _relu(rng: np.random.Generator) -> Problem:
    return _layer_problem(ReLU(), _signed(rng, (2, 3, 4, 5)))


@gradcheck_target("conv")
def _conv(rng: np.random.Generator) -> Problem:
    return _layer_problem(Conv2d("conv", 2, 3, 3, stride=2, rng=rng), rng.standard_normal((2, 2, 6, 8)))


@gradcheck_target("tconv")
def _tconv(rng: np.random.Generator) -> Problem:
    return _layer_problem(ConvTranspose2d("tconv", 3, 2, 3, rng=rng), rng.standard_normal((2, 3, 3, 4)))


@gradcheck_target("batchnorm")
def _batchnorm(rng: np.random.Generator) -> Problem:
    layer = BatchNorm2d("bn", 3)
    layer.gamma.value = rng.uniform(0.5, 1.5, layer.gamma.shape)
    return _layer_problem(layer, rng.standard_normal((2, 3, 4, 5)))


@gradcheck_target("residual")
def _residual(rng: np.random.Generator) -> Problem:
    return _layer_problem(ResidualBlock("res", 2, 3, stride=2, rng=rng), rng.standard_normal((2, 2, 4, 8)))


def _sftl_problem(rng: np.random.Generator, mode: SftlMode) -> Problem:
    layer = Sftl("sftl", 2, 3, SftlConfig(mode=mode), rng=rng)
    if layer.offset_head is not None:
        layer.offset_head.weight.value = rng.normal(scale=0.02, size=layer.offset_head.weight.shape)
    return _layer_problem(layer, rng.standard_normal((2, 2, 8, 16)))


@gradcheck_target("sftl-planar")
def _sftl_planar(rng: np.random.Generator) -> Problem:
    return _sftl_problem(rng, SftlMode.PLANAR)


@gradcheck_target("sftl-igt")
def _sftl_igt(rng: np.random.Generator) -> Problem:
    return _sftl_problem(rng, SftlMode.IGT)


@gradcheck_target("sftl-digt")
def _sftl_digt(rng: np.random.Generator) -> Problem:
    return _sftl_problem(rng, SftlMode.DIGT)


@gradcheck_target("bilinear")
def _bilinear(rng: np.random.Generator) -> Problem:
    features = rng.standard_normal((2, 2, 6, 8))
    rows = _fractional(rng, (2, 4, 3, 5), -2, 7)
    cols = _fractional(rng, (2, 4, 3, 5), -2, 9)
    sampler = BilinearSampler(WrapPolicy.SPHERE)

    def backward(grad: np.ndarray) -> dict[str, np.ndarray]:
        g_features, g_rows, g_cols = sampler.backward(grad)
        return {"features": g_features, "rows": g_rows, "cols": g_cols}

    return Problem(
        {"features": features, "rows": rows, "cols": cols}, lambda: sampler.forward(features, rows, cols), backward
    )


@gradcheck_target("affinity")
def _affinity(rng: np.random.Generator) -> Problem:
    raw = _signed(rng, (2, 8, 3, 4))

    def forward() -> np.ndarray:
        field = normalize_affinity(raw)
        return np.concatenate([field.kappa, field.kappa0], axis=1)

    def backward(grad: np.ndarray) -> dict[str, np.ndarray]:
        field = normalize_affinity(raw)
        return {"raw": normalize_affinity_backward(field, grad[:, :-1], grad[:, -1:])}

    return Problem({"raw": raw}, forward, backward)


@gradcheck_target("propagation")
def _propagation(rng: np.random.Generator) -> Problem:
    grid = neighbor_grid(CspnVariant.IG_CSPN, 6, 12)
    h_tau = rng.uniform(0.5, 3.0, (2, 1, 6, 12))
    h0 = rng.uniform(0.5, 3.0, (2, 1, 6, 12))
    raw = _signed(rng, (2, 8, 6, 12))
    step = PropagationStep(grid.policy)
    fields = []

    def forward() -> np.ndarray:
        fields[:] = [normalize_affinity(raw)]
        return step.forward(h_tau, h0, fields[0], grid.rows, grid.cols)

    def backward(grad: np.ndarray) -> dict[str, np.ndarray]:
        g_h_tau, g_h0, g_kappa, g_kappa0, _, _ = step.backward(grad)
        return {"h_tau": g_h_tau, "h0": g_h0, "raw": normalize_affinity_backward(fields[0], g_kappa, g_kappa0)}

    return Problem({"h_tau": h_tau, "h0": h0, "raw": raw}, forward, backward)


def _cspn_problem(rng: np.random.Generator, variant: CspnVariant) -> Problem:
    h, w = 6, 12
    cspn = Cspn(PropagationConfig(iterations=3, variant=variant))
    h0 = rng.uniform(0.5, 3.0, (2, 1, h, w))
    raw = _signed(rng, (2, 8, h, w))
    sensor = _sparse_sensor(rng, (2, 1, h, w))
    arrays = {"h0": h0, "raw": raw}
    offsets = None
    if variant is CspnVariant.D_CSPN:
        offsets = rng.uniform(-1.5, 1.5, (2, 16, h, w))
        arrays["offsets"] = offsets

    def backward(grad: np.ndarray) -> dict[str, np.ndarray]:
        grads = cspn.backward(grad)
        found = {"h0": grads.h0, "raw": grads.raw_affinity}
        if grads.offsets is not None:
            found["offsets"] = grads.offsets
        return found

    return Problem(arrays, lambda: cspn.forward(h0, raw, sensor, offsets), backward)


@gradcheck_target("cspn")
def _cspn(rng: np.random.Generator) -> Problem:
    return _cspn_problem(rng, CspnVariant.CSPN)


@gradcheck_target("ig-cspn")
def _ig_cspn(rng: np.random.Generator) -> Problem:
    return _cspn_problem(rng, CspnVariant.IG_CSPN)


@gradcheck_target("d-cspn")
def _d_cspn(rng: np.random.Generator) -> Problem:
    return _cspn_problem(rng, CspnVariant.D_CSPN)


def _shift_clear_of_integers(coords: np.ndarray) -> float:
    """The shift that moves ``coords`` as far from the integers as a single shift can."""
    fractions = np.sort(np.mod(coords.ravel(), 1.0))
    gaps = np.diff(fractions, append=fractions[0] + 1.0)
    widest = int(np.argmax(gaps))
    middle = fractions[widest] + gaps[widest] / 2
    return float(np.round(middle) - middle)


@gradcheck_target("network")
def _network(rng: np.random.Generator) -> Problem:
    config = NetworkConfig(h=16, w=32, channels=(2, 2, 2, 2), stem=2, iterations=2)
    net = OdeNet(config, seed=int(rng.integers(2**31)))
    sftl_head = t.cast(Conv2d, net.sftl.offset_head)
    sftl_head.weight.value = rng.normal(scale=0.02, size=sftl_head.weight.shape)
    # bilinear sampling has kinks at integer coordinates: keep every D-CSPN neighbour well inside a cell
    offset_head = t.cast(Conv2d, net.offset_head)
    offset_head.weight.value = rng.normal(scale=1e-4, size=offset_head.weight.shape)
    grid = t.cast(Cspn, net.cspn).grid_for(config.h, config.w)
    shifts = [
        _shift_clear_of_integers(coords[tap]) for tap in range(len(grid.rows)) for coords in (grid.rows, grid.cols)
    ]
    t.cast(Parameter, offset_head.bias).value = np.asarray(shifts)

    image = rng.uniform(0.0, 1.0, (2, 3, config.h, config.w))
    sensor = _sparse_sensor(rng, (2, 1, config.h, config.w))
    params = net.named_parameters()
    arrays = {"image": image}
    arrays.update({name: param.data for name, param in params.items()})

    def backward(grad: np.ndarray) -> dict[str, np.ndarray]:
        net.zero_grad()
        grads = {"image": net.backward(grad)}
        grads.update({name: t.cast(np.ndarray, param.grad) for name, param in params.items()})
        return grads

    return Problem(arrays, lambda: net.forward(image, sensor).depth_refined, backward)


def check_problem(
    name: str, problem: Problem, rng: np.random.Generator, *, tolerance: float = DEFAULT_TOLERANCE
) -> list[GradcheckResult]:
    """Compare the analytic gradient of a random linear functional of the output against central differences."""
    output = problem.forward()
    weights = rng.standard_normal(output.shape)
    analytic = problem.backward(weights)
    if set(analytic) != set(problem.arrays):
        raise ShapeError(f"{name} returned gradients for {sorted(analytic)}, expected {sorted(problem.arrays)}.")

    def objective() -> float:
        return float(np.sum(problem.forward() * weights))

    results = []
    for tensor, array in problem.arrays.items():
        if not array.flags.c_contiguous:
            raise ShapeError(f"{name}: input {tensor} must be contiguous to be perturbed in place.")
        flat = array.reshape(-1)
        exact = np.asarray(analytic[tensor]).reshape(-1)
        picks = rng.choice(flat.size, size=min(MAX_ENTRIES, flat.size), replace=False)
        numeric = np.empty(len(picks))
        for slot, index in enumerate(picks):
            original = flat[index]
            flat[index] = original + FD_STEP
            plus = objective()
            flat[index] = original - FD_STEP
            minus = objective()
            flat[index] = original
            numeric[slot] = (plus - minus) / (2 * FD_STEP)
        max_abs = float(np.max(np.abs(exact[picks] - numeric)))
        scale = max(float(np.max(np.abs(exact[picks]))), float(np.max(np.abs(numeric))), 1e-8)
        results.append(GradcheckResult(name, tensor, len(picks), max_abs, max_abs / scale, tolerance))
    return results


def run_gradcheck(name: str, *, seed: int = 0, tolerance: t.Optional[float] = None) -> list[GradcheckResult]:
    """Build and check one registered target in float64."""
    if name not in _TARGETS:
        raise KeyError(f"Unknown gradcheck target {name!r}, expected one of {', '.join(_TARGETS)}.")
    builder, default = _TARGETS[name]
    with precision(Precision.FLOAT64):
        rng = make_rng(seed)
        problem = builder(rng)
        results = check_problem(name, problem, rng, tolerance=default if tolerance is None else tolerance)
    for result in results:
        log = _LOGGER.debug if result.passed else _LOGGER.warning
        log(f"Gradient check {result.target}/{result.tensor}: error {result.error:.3e}.")
    return results


def check_all(targets: t.Optional[t.Iterable[str]] = None, *, seed: int = 0) -> list[GradcheckResult]:
    """
    Run several targets, all of them by default.

    Raises
    ------
    :obj:`~.errors.GradcheckError`
        Naming every ``target/tensor`` over its tolerance, after all targets ran.
    """
    results: list[GradcheckResult] = []
    for name in targets if targets is not None else target_names():
        results.extend(run_gradcheck(name, seed=seed))
    offenders = [f"{r.target}/{r.tensor}" for r in results if not r.passed]
    if offenders:
        raise GradcheckError(offenders)
    return results
