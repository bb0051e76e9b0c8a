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
Procedural equirectangular RGB-D scenes: rooms with a few boxes and spheres, ray cast from a camera
inside the room, and the dataset files and manifest built from them.
"""
from __future__ import annotations
import concurrent.futures
import enum
import logging
import math
import pathlib
import typing as t

import numpy as np

from odecnn.colours import Colour
from odecnn.cspn import SensorDepth
from odecnn.errors import DataError, FormatError, NumericalError, ShapeError
from odecnn.imageio import read_pfm, read_ppm, write_pfm, write_ppm
from odecnn.sphere import EquirectGrid, PinholeFov, fov_mask, pixel_to_sphere, unit_vectors
from odecnn.tensor import make_rng
from odecnn.utils import worker_count

__all__: list[str] = [
    "MIN_DEPTH",
    "MAX_DEPTH",
    "CLEARANCE",
    "SPLITS",
    "MANIFEST_NAME",
    "RoomShape",
    "PrimitiveKind",
    "Primitive",
    "SceneSpec",
    "OmniSample",
    "ManifestEntry",
    "DatasetManifest",
    "trace",
    "ray_directions",
    "render_scene",
    "render_sample",
    "make_dataset",
    "read_manifest",
    "write_manifest",
    "load_sample",
]

_LOGGER = logging.getLogger("odecnn.synth")

MIN_DEPTH: t.Final[float] = 0.3
MAX_DEPTH: t.Final[float] = 20.0
CLEARANCE: t.Final[float] = 0.3
"""No primitive comes closer than this to the camera, in meters."""
SPLITS: t.Final[tuple[str, ...]] = ("train", "val", "test")
MANIFEST_NAME: t.Final[str] = "manifest.txt"
MANIFEST_MAGIC: t.Final[str] = "ODED1"
SEED_STRIDE: t.Final[int] = 1_000_003
_MAX_ATTEMPTS: t.Final[int] = 64
_AMBIENT: t.Final[float] = 0.25


class RoomShape(str, enum.Enum):
    BOX = "box"
    SPHERE = "sphere"


class PrimitiveKind(str, enum.Enum):
    BOX = "box"
    SPHERE = "sphere"


class Primitive(t.NamedTuple):
    kind: PrimitiveKind
    center: tuple[float, float, float]
    size: float
    """Radius of a sphere, half side of an axis-aligned cube."""
    colour: Colour


class SceneSpec(t.NamedTuple):
    """
    A closed room, the camera inside it and the objects around the camera.

    Attributes
    ----------
    room : :obj:`RoomShape`
        Box rooms are centred on the origin with ``half_extents``, sphere rooms have radius ``half_extents[0]``.
    """

    seed: int
    room: RoomShape
    half_extents: tuple[float, float, float]
    camera: tuple[float, float, float]
    primitives: tuple[Primitive, ...]
    light: tuple[float, float, float]
    wall_colours: tuple[Colour, ...]

    @classmethod
    def empty_box(cls, half: float, camera: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> SceneSpec:
        """A cubic room of side ``2 * half`` with nothing in it."""
        return cls(0, RoomShape.BOX, (half, half, half), camera, (), (0.0, 0.0, 1.0), (Colour.LIGHT_GREY,) * 6)

    @classmethod
    def empty_sphere(cls, radius: float, camera: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> SceneSpec:
        return cls(0, RoomShape.SPHERE, (radius, radius, radius), camera, (), (0.0, 0.0, 1.0), (Colour.LIGHT_GREY,))

    @classmethod
    def random(cls, seed: int, max_primitives: int = 4) -> SceneSpec:
        """
        Sample a scene. Rooms are 4 to 10 meters across, the camera is jittered around the centre and
        every primitive keeps :obj:`CLEARANCE` from the camera.
        """
        rng = make_rng(seed)
        palette = Colour.palette()
        room = RoomShape.SPHERE if rng.random() < 0.2 else RoomShape.BOX
        if room is RoomShape.SPHERE:
            radius = float(rng.uniform(2.0, 5.0))
            half = (radius, radius, radius)
        else:
            half = (float(rng.uniform(2.0, 5.0)), float(rng.uniform(2.0, 5.0)), float(rng.uniform(1.25, 2.0)))
        camera = tuple(float(rng.uniform(-0.25, 0.25) * h) for h in half)

        primitives: list[Primitive] = []
        count = int(rng.integers(0, max_primitives + 1))
        for _ in range(count * 8):
            if len(primitives) == count:
                break
            kind = PrimitiveKind.SPHERE if rng.random() < 0.5 else PrimitiveKind.BOX
            size = float(rng.uniform(0.2, 0.6))
            reach = [h / math.sqrt(3.0) if room is RoomShape.SPHERE else h for h in half]
            center = tuple(float(rng.uniform(-r + size, r - size)) for r in reach)
            if _distance_to_primitive(np.asarray(camera), kind, np.asarray(center), size) < CLEARANCE:
                continue
            primitives.append(Primitive(kind, t.cast(tuple, center), size, palette[int(rng.integers(len(palette)))]))

        light = rng.normal(size=3)
        light[2] = abs(light[2]) + 0.5
        light /= np.linalg.norm(light)
        walls = tuple(palette[int(i)] for i in rng.integers(len(palette), size=6))
        return cls(seed, room, half, t.cast(tuple, camera), tuple(primitives), t.cast(tuple, tuple(light.tolist())), walls)


def _distance_to_primitive(point: np.ndarray, kind: PrimitiveKind, center: np.ndarray, size: float) -> float:
    if kind is PrimitiveKind.SPHERE:
        return float(np.linalg.norm(point - center) - size)
    outside = np.maximum(np.abs(point - center) - size, 0.0)
    return float(np.linalg.norm(outside))


class OmniSample(t.NamedTuple):
    image: np.ndarray
    """``(3, h, w)`` colours in ``[0, 1]``."""
    depth_gt: np.ndarray
    """``(1, h, w)`` float32 depth in meters."""
    sensor: SensorDepth


def ray_directions(grid: EquirectGrid) -> np.ndarray:
    """Unit rays through every pixel centre, ``(h, w, 3)``."""
    ii, jj = np.meshgrid(np.arange(grid.h), np.arange(grid.w), indexing="ij")
    return unit_vectors(pixel_to_sphere(grid, ii, jj))


def _room_hit(spec: SceneSpec, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if spec.room is RoomShape.SPHERE:
        radius = spec.half_extents[0]
        b = dirs @ origin
        dist = -b + np.sqrt(b * b - (origin @ origin - radius * radius))
        normals = -(origin + dist[:, None] * dirs) / radius
        albedo = np.broadcast_to(np.asarray(spec.wall_colours[0].rgb), dirs.shape)
        return dist, normals, albedo

    half = np.asarray(spec.half_extents)
    with np.errstate(divide="ignore", invalid="ignore"):
        walls = np.where(dirs > 0, (half - origin) / dirs, np.where(dirs < 0, (-half - origin) / dirs, np.inf))
    axis = np.argmin(walls, axis=1)
    dist = walls[np.arange(len(dirs)), axis]
    positive = dirs[np.arange(len(dirs)), axis] > 0
    normals = np.zeros_like(dirs)
    normals[np.arange(len(dirs)), axis] = np.where(positive, -1.0, 1.0)
    palette = np.asarray([c.rgb for c in spec.wall_colours])
    albedo = palette[(2 * axis + positive) % len(palette)]
    return dist, normals, albedo


def _primitive_hit(primitive: Primitive, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = np.asarray(primitive.center)
    if primitive.kind is PrimitiveKind.SPHERE:
        oc = origin - center
        b = dirs @ oc
        disc = b * b - (oc @ oc - primitive.size**2)
        with np.errstate(invalid="ignore"):
            dist = np.where(disc >= 0, -b - np.sqrt(disc), np.inf)
        dist = np.where(dist > 0, dist, np.inf)
        normals = (origin + np.where(np.isfinite(dist), dist, 0.0)[:, None] * dirs - center) / primitive.size
        return dist, normals

    lo, hi = center - primitive.size, center + primitive.size
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origin) / dirs
        t2 = (hi - origin) / dirs
    near = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    far = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
    t_near = near.max(axis=1)
    t_far = far.min(axis=1)
    dist = np.where((t_far >= t_near) & (t_near > 0), t_near, np.inf)
    axis = np.argmax(near, axis=1)
    normals = np.zeros_like(dirs)
    normals[np.arange(len(dirs)), axis] = -np.sign(dirs[np.arange(len(dirs)), axis])
    return dist, normals


def trace(spec: SceneSpec, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Cast rays from the camera.

    Parameters
    ----------
    dirs : :obj:`numpy.ndarray`
        ``(..., 3)`` unit directions.

    Returns
    -------
    Tuple[:obj:`numpy.ndarray`, :obj:`numpy.ndarray`, :obj:`numpy.ndarray`]
        Distance to the nearest surface, its normal and its albedo.
    """
    shape = dirs.shape[:-1]
    flat = dirs.reshape(-1, 3).astype(np.float64)
    origin = np.asarray(spec.camera, dtype=np.float64)
    dist, normals, albedo = _room_hit(spec, origin, flat)
    normals, albedo = normals.copy(), np.array(albedo)
    for primitive in spec.primitives:
        hit, hit_normals = _primitive_hit(primitive, origin, flat)
        closer = hit < dist
        dist = np.where(closer, hit, dist)
        normals[closer] = hit_normals[closer]
        albedo[closer] = primitive.colour.rgb
    if not np.all(np.isfinite(dist)):
        raise NumericalError(f"ray depth of scene {spec.seed}")
    return dist.reshape(shape), normals.reshape(shape + (3,)), albedo.reshape(shape + (3,))


def render_scene(spec: SceneSpec, grid: EquirectGrid, fov: t.Optional[PinholeFov] = None) -> OmniSample:
    """Render the panorama, its depth and the front-view sensor depth of a scene."""
    fov = fov if fov is not None else PinholeFov.from_degrees()
    dist, normals, albedo = trace(spec, ray_directions(grid))
    shade = _AMBIENT + (1.0 - _AMBIENT) * np.clip(normals @ np.asarray(spec.light), 0.0, 1.0)
    image = np.clip(albedo * shade[..., None], 0.0, 1.0)
    depth = dist.astype(np.float32)[None]
    mask = fov_mask(grid, fov)[0].astype(np.float32)
    return OmniSample(np.moveaxis(image, -1, 0).astype(np.float32), depth, SensorDepth(depth * mask))


def render_sample(seed: int, grid: EquirectGrid, fov: t.Optional[PinholeFov] = None) -> OmniSample:
    """Render the scene of a seed, resampling scenes whose depth leaves ``[MIN_DEPTH, MAX_DEPTH]``."""
    rng = make_rng(seed)
    scene_seed = seed
    for attempt in range(_MAX_ATTEMPTS):
        sample = render_scene(SceneSpec.random(scene_seed), grid, fov)
        if MIN_DEPTH <= float(sample.depth_gt.min()) and float(sample.depth_gt.max()) <= MAX_DEPTH:
            return sample
        _LOGGER.debug(f"Scene {scene_seed} left the depth range on attempt {attempt}, resampling.")
        scene_seed = int(rng.integers(2**62))
    raise NumericalError(f"scene depth range for seed {seed}")


class ManifestEntry(t.NamedTuple):
    split: str
    image: str
    depth: str
    sensor: str


class DatasetManifest:
    """
    The index of a generated dataset.

    Paths are stored relative to the manifest's directory, ``root``.
    """

    __slots__ = ("version", "h", "w", "entries", "root")

    def __init__(self, h: int, w: int, entries: t.Sequence[ManifestEntry], root: t.Union[str, pathlib.Path] = ".") -> None:
        self.version: str = MANIFEST_MAGIC
        self.h: int = h
        self.w: int = w
        self.entries: list[ManifestEntry] = list(entries)
        self.root: pathlib.Path = pathlib.Path(root)

    @property
    def grid(self) -> EquirectGrid:
        return EquirectGrid(self.h, self.w)

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, name: str) -> list[ManifestEntry]:
        return [entry for entry in self.entries if entry.split == name]

    def resolve(self, relative: str) -> pathlib.Path:
        return self.root / relative

    def to_text(self) -> str:
        lines = [self.version, f"{self.h} {self.w} {len(self.entries)}"]
        lines.extend("\t".join(entry) for entry in self.entries)
        return "\n".join(lines) + "\n"


def write_manifest(path: t.Union[str, pathlib.Path], manifest: DatasetManifest) -> None:
    try:
        pathlib.Path(path).write_text(manifest.to_text(), encoding="utf-8")
    except OSError as ex:
        raise DataError(path, f"cannot write manifest: {ex.strerror or ex}") from ex


def read_manifest(path: t.Union[str, pathlib.Path]) -> DatasetManifest:
    """
    Raises
    ------
    :obj:`~.errors.FormatError`
        On a bad header, a malformed line, an unknown split, a repeated path or a wrong sample count.
    :obj:`~.errors.DataError`
        If the file cannot be read.
    """
    path = pathlib.Path(path)
    try:
        raw = path.read_bytes()
    except OSError as ex:
        raise DataError(path, f"cannot read manifest: {ex.strerror or ex}") from ex
    lines = raw.split(b"\n")
    offsets = [0]
    for line in lines[:-1]:
        offsets.append(offsets[-1] + len(line) + 1)
    if not lines or lines[0].strip() != MANIFEST_MAGIC.encode():
        raise FormatError(path, 0, f"bad magic, expected {MANIFEST_MAGIC}")
    dims = lines[1].split() if len(lines) > 1 else []
    if len(dims) != 3 or not all(d.isdigit() for d in dims):
        raise FormatError(path, offsets[1] if len(offsets) > 1 else len(raw), "expected '<h> <w> <n>'")
    h, w, n = (int(d) for d in dims)

    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for line, offset in zip(lines[2:], offsets[2:]):
        if not line.strip():
            continue
        fields = line.decode("utf-8").rstrip("\r").split("\t")
        if len(fields) != 4:
            raise FormatError(path, offset, f"expected 4 tab-separated fields, found {len(fields)}")
        if fields[0] not in SPLITS:
            raise FormatError(path, offset, f"unknown split {fields[0]!r}")
        for name in fields[1:]:
            if name in seen:
                raise FormatError(path, offset, f"path {name!r} is listed twice")
            seen.add(name)
        entries.append(ManifestEntry(*fields))
    if len(entries) != n:
        raise FormatError(path, len(raw), f"header announces {n} samples but {len(entries)} are listed")
    return DatasetManifest(h, w, entries, path.parent)


def load_sample(manifest: DatasetManifest, entry: ManifestEntry) -> OmniSample:
    """Read the three files of a manifest entry back into a sample."""
    image = read_ppm(manifest.resolve(entry.image))
    depth = read_pfm(manifest.resolve(entry.depth))
    dp = read_pfm(manifest.resolve(entry.sensor))
    for name, array, channels in ((entry.image, image, 3), (entry.depth, depth, 1), (entry.sensor, dp, 1)):
        if array.shape != (channels, manifest.h, manifest.w):
            raise DataError(
                manifest.resolve(name), f"expected shape {(channels, manifest.h, manifest.w)}, found {array.shape}"
            )
    return OmniSample(image, depth, SensorDepth(dp))


def _sample_names(split: str, index: int) -> ManifestEntry:
    stem = f"{split}_{index:05d}"
    return ManifestEntry(split, f"{stem}_image.ppm", f"{stem}_depth.pfm", f"{stem}_sensor.pfm")


def make_dataset(
    n: int,
    grid: EquirectGrid,
    fov: PinholeFov,
    out_dir: t.Union[str, pathlib.Path],
    seed: int = 0,
    *,
    val: int = 0,
    test: int = 0,
) -> DatasetManifest:
    """
    Render ``n`` samples and write them with their manifest to ``out_dir``.

    The first ``n - val - test`` samples form the training split, then validation, then test. Sample ``i``
    renders the scene seeded ``seed * SEED_STRIDE + i``, so splits never share a seed.

    Returns
    -------
    :obj:`DatasetManifest`
        The manifest, also written to ``out_dir / MANIFEST_NAME``.
    """
    if n < 0 or val < 0 or test < 0 or val + test > n:
        raise ShapeError(f"Cannot split {n} samples into {val} validation and {test} test samples.")
    out = pathlib.Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as ex:
        raise DataError(out, f"cannot create directory: {ex.strerror or ex}") from ex

    train = n - val - test
    splits = ["train"] * train + ["val"] * val + ["test"] * test
    entries = [_sample_names(split, index) for index, split in enumerate(splits)]

    def job(index: int) -> None:
        sample = render_sample(seed * SEED_STRIDE + index, grid, fov)
        entry = entries[index]
        write_ppm(out / entry.image, sample.image)
        write_pfm(out / entry.depth, sample.depth_gt)
        write_pfm(out / entry.sensor, sample.sensor.dp[0])

    with concurrent.futures.ThreadPoolExecutor(max_workers=worker_count()) as pool:
        for _ in pool.map(job, range(n)):
            pass

    manifest = DatasetManifest(grid.h, grid.w, entries, out)
    write_manifest(out / MANIFEST_NAME, manifest)
    _LOGGER.info(f"Wrote {n} samples ({train} train, {val} val, {test} test) to {out}.")
    return manifest
