"""
Synthetic Head Scans - procedural labeled scans with attached clutter, a fixed camera rig and renders

The clean reference surface is a bumped ellipsoid standing in for a head
model. The scan densifies it, perturbs it with bounded vertex noise and
attaches non-skin clutter: hair tubes rooted on the scalp, accessory blobs near
the sides, floating fragments and a displaced reconstruction-artifact patch.
Labels follow from the point-to-surface distance to the reference.
"""
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from scipy.spatial import cKDTree

from src.config import settings
from src.exceptions import ArgumentError, FormatError, MissingInputError, ScanSegRuntimeError
from src.models import Camera, DatasetSplit, Image, Split, SynthProfile, SynthSample, TriMesh
from src.parsers import load_cameras, load_mesh, read_image, save_cameras, save_mesh, write_image
from src.services.lifting import resolve_threads
from src.services.mesh_ops import face_normals, grid_mesh, icosphere, subdivide_midpoint, validate_mesh
from src.services.projection import look_at, rotation
from src.services.rasterizer import rasterize, render_colors
from src.services.surface_distance import TriangleBVH
from src.storage import LabelDAO

logger = logging.getLogger(__name__)

# Head stand-in (mm): half width x, half depth y, half height z
HEAD_RADII = np.array([78.0, 100.0, 115.0])
HEAD_MEAN_RADIUS = float(HEAD_RADII.mean())
BUMP_COUNT = 6
BUMP_AMPLITUDE = 0.04
BUMP_WIDTH_RANGE = (0.25, 0.5)  # radians
FRAME_STEP = 1e-4

# Clutter
CLUTTER_FRACTION = 0.3
HAIR_RINGS = 10
HAIR_SIDES = 6
HAIR_ROOT_RINGS = 2
HAIR_OFFSET_RANGE = (6.0, 12.0)
HAIR_RADIUS_RANGE = (1.5, 2.5)
HAIR_LENGTH_RANGE = (60.0, 120.0)
ACCESSORY_GAP = 3.0
FRAGMENT_COUNT = 4
FRAGMENT_OFFSET_RANGE = (15.0, 40.0)
FRAGMENT_RADIUS_RANGE = (3.0, 6.0)
PATCH_SIZE = 40.0
PATCH_OFFSET = 3.5
PATCH_RELIEF = 1.0

# Camera rig
CAMERA_DISTANCE = 450.0
ELEVATED_VIEWS = 3
ELEVATION_DEG = 40.0
FOCAL_FACTOR = 1.5
BACKGROUND = (0.5, 0.5, 0.5)
AMBIENT = 0.3

SKIN_TONES = np.array([
    [0.98, 0.84, 0.72],
    [0.92, 0.74, 0.60],
    [0.80, 0.60, 0.46],
    [0.63, 0.45, 0.33],
    [0.45, 0.31, 0.22],
])
HAIR_TONES = np.array([
    [0.08, 0.06, 0.05],
    [0.23, 0.15, 0.09],
    [0.45, 0.30, 0.16],
    [0.70, 0.55, 0.30],
])

SAMPLE_DIR_FORMAT = "sample_{seed}"
SPLIT_FILE = "split.json"


def _normalize(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return vectors / np.where(norms > 0, norms, 1.0)


def _random_direction(rng: np.random.Generator, z_range: Tuple[float, float] = (-1.0, 1.0)) -> np.ndarray:
    z = rng.uniform(*z_range)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    r = np.sqrt(max(0.0, 1.0 - z * z))
    return np.array([r * np.cos(phi), r * np.sin(phi), z])


def _perpendicular(direction: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    v -= v.dot(direction) * direction
    return _normalize(v)


@dataclass(frozen=True)
class HeadShape:
    """Star-shaped surface r(d) = ellipsoid radius along d x (1 + sum of Gaussian bumps)"""
    radii: np.ndarray
    bump_centers: np.ndarray     # (K, 3) unit directions
    bump_amplitudes: np.ndarray  # (K,) relative radius change
    bump_widths: np.ndarray      # (K,) radians

    @classmethod
    def random(cls, rng: np.random.Generator) -> "HeadShape":
        centers = np.stack([_random_direction(rng) for _ in range(BUMP_COUNT)])
        amplitudes = rng.uniform(-BUMP_AMPLITUDE, BUMP_AMPLITUDE, BUMP_COUNT)
        widths = rng.uniform(*BUMP_WIDTH_RANGE, BUMP_COUNT)
        return cls(radii=HEAD_RADII, bump_centers=centers, bump_amplitudes=amplitudes, bump_widths=widths)

    def surface(self, directions: np.ndarray) -> np.ndarray:
        d = _normalize(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
        ellipsoid = 1.0 / np.sqrt(np.sum((d / self.radii) ** 2, axis=1))
        bumps = np.exp(-(1.0 - d @ self.bump_centers.T) / self.bump_widths ** 2) @ self.bump_amplitudes
        return (ellipsoid * (1.0 + bumps))[:, None] * d

    def frame(self, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Surface points and outward unit normals (central differences over the direction sphere)"""
        d = _normalize(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
        helper = np.where(np.abs(d[:, :1]) > 0.9, [[0.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]])
        t1 = _normalize(np.cross(d, helper))
        t2 = np.cross(d, t1)
        du = self.surface(d + FRAME_STEP * t1) - self.surface(d - FRAME_STEP * t1)
        dv = self.surface(d + FRAME_STEP * t2) - self.surface(d - FRAME_STEP * t2)
        normals = _normalize(np.cross(du, dv))
        normals *= np.sign(np.einsum("ij,ij->i", normals, d))[:, None]
        return self.surface(d), normals


def head_subdivision_level(vertices: int) -> int:
    """Largest icosphere level whose midpoint-subdivided copy stays within 85% of the target size"""
    level = 2
    while 4 * (10 * 4 ** (level + 1) + 2) <= 0.85 * vertices:
        level += 1
    return level


def _icosphere_level(budget: float) -> int:
    level = 0
    while 10 * 4 ** (level + 1) + 2 <= budget:
        level += 1
    return level


def _tinted(rng: np.random.Generator, tone: np.ndarray, count: int, jitter: float = 0.03) -> np.ndarray:
    return np.clip(tone + rng.uniform(-jitter, jitter, (count, 3)), 0.0, 1.0)


def _hair_tube(shape: HeadShape, rng: np.random.Generator, tone: np.ndarray) -> TriMesh:
    """Open tube along the scalp; vertex 0 is the root on the reference surface"""
    start = _random_direction(rng, z_range=(0.35, 1.0))
    heading = _perpendicular(start, rng)
    arc = np.linspace(0.0, rng.uniform(*HAIR_LENGTH_RANGE) / HEAD_MEAN_RADIUS, HAIR_RINGS)
    base, normals = shape.frame(np.cos(arc)[:, None] * start + np.sin(arc)[:, None] * heading)
    # offset and radius grow from zero at the root over the first rings
    ramp = np.minimum(1.0, np.arange(HAIR_RINGS) / HAIR_ROOT_RINGS)[:, None]
    centers = base + ramp * rng.uniform(*HAIR_OFFSET_RANGE) * normals
    radius = ramp * rng.uniform(*HAIR_RADIUS_RANGE)

    tangent = _normalize(np.gradient(centers, axis=0))
    side = _normalize(np.cross(tangent, normals))
    up = np.cross(side, tangent)
    phi = 2.0 * np.pi * np.arange(HAIR_SIDES) / HAIR_SIDES
    rings = centers[1:, None, :] + radius[1:, None] * (
        np.cos(phi)[None, :, None] * up[1:, None, :] + np.sin(phi)[None, :, None] * side[1:, None, :]
    )

    j = np.arange(HAIR_SIDES)
    fan = np.stack([np.zeros(HAIR_SIDES, dtype=np.int64), 1 + (j + 1) % HAIR_SIDES, 1 + j], axis=1)
    i, j = np.meshgrid(np.arange(HAIR_RINGS - 2), np.arange(HAIR_SIDES), indexing="ij")
    a = (1 + i * HAIR_SIDES + j).ravel()
    b = (1 + i * HAIR_SIDES + (j + 1) % HAIR_SIDES).ravel()
    faces = np.concatenate([
        fan,
        np.stack([a, b, b + HAIR_SIDES], axis=1),
        np.stack([a, b + HAIR_SIDES, a + HAIR_SIDES], axis=1),
    ])
    positions = np.vstack([base[:1], rings.reshape(-1, 3)])
    return TriMesh(positions=positions, faces=faces, colors=_tinted(rng, tone, len(positions)))


def _graft_hair(head: TriMesh, tubes: Sequence[TriMesh]) -> TriMesh:
    """Head plus hair tubes whose root vertex is welded onto the nearest head vertex"""
    tree = cKDTree(head.positions)
    positions, faces, colors = [head.positions], [head.faces], [head.colors]
    offset = head.num_vertices
    for tube in tubes:
        _, root = tree.query(tube.positions[0])
        remap = np.concatenate([[root], offset + np.arange(tube.num_vertices - 1)])
        positions.append(tube.positions[1:])
        colors.append(tube.colors[1:])
        faces.append(remap[tube.faces])
        offset += tube.num_vertices - 1
    return TriMesh(positions=np.concatenate(positions), faces=np.concatenate(faces), colors=np.concatenate(colors))


def _accessory(shape: HeadShape, rng: np.random.Generator, side: float, level: int) -> TriMesh:
    direction = _normalize(np.array([side, rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.3)]))
    base, normal = shape.frame(direction)
    radii = np.array([rng.uniform(8.0, 14.0), rng.uniform(6.0, 10.0), rng.uniform(12.0, 20.0)])
    support = np.sqrt(np.sum((radii * normal[0]) ** 2))
    center = base[0] + normal[0] * (ACCESSORY_GAP + support)
    blob = icosphere(level)
    positions = blob.positions * radii + center
    return TriMesh(positions=positions, faces=blob.faces, colors=_tinted(rng, rng.uniform(0.0, 1.0, 3), len(positions)))


def _fragment(shape: HeadShape, rng: np.random.Generator, level: int) -> TriMesh:
    base, normal = shape.frame(_random_direction(rng))
    radius = rng.uniform(*FRAGMENT_RADIUS_RANGE)
    center = base[0] + normal[0] * (rng.uniform(*FRAGMENT_OFFSET_RANGE) + radius)
    blob = icosphere(level, radius)
    gray = np.full(3, rng.uniform(0.3, 0.7))
    return TriMesh(positions=blob.positions + center, faces=blob.faces, colors=_tinted(rng, gray, blob.num_vertices))


def _artifact_patch(shape: HeadShape, rng: np.random.Generator, n: int, tone: np.ndarray) -> TriMesh:
    """Surface-hugging grid displaced 3.5 +- 1 mm along the normal"""
    center = _random_direction(rng, z_range=(-0.6, 0.2))
    u = _perpendicular(center, rng)
    w = np.cross(center, u)
    grid = grid_mesh(n, n, spacing=PATCH_SIZE / (n - 1))
    xy = grid.positions[:, :2] - PATCH_SIZE / 2.0
    base, normals = shape.frame(center + (xy[:, :1] * u + xy[:, 1:] * w) / HEAD_MEAN_RADIUS)
    relief = PATCH_OFFSET + rng.uniform(-PATCH_RELIEF, PATCH_RELIEF, n * n)
    positions = base + relief[:, None] * normals
    return TriMesh(positions=positions, faces=grid.faces, colors=_tinted(rng, 0.8 * tone, n * n, jitter=0.08))


def _clutter(
    shape: HeadShape, rng: np.random.Generator, budget: int, skin_tone: np.ndarray
) -> Tuple[List[TriMesh], List[TriMesh]]:
    """(hair tubes, detached pieces) for a vertex budget; an empty budget yields no clutter"""
    if budget <= 0:
        return [], []
    hair_tone = HAIR_TONES[rng.integers(len(HAIR_TONES))]
    hair_count = max(1, int(round(0.5 * budget / (HAIR_RINGS * HAIR_SIDES))))
    hair = [_hair_tube(shape, rng, hair_tone) for _ in range(hair_count)]

    pieces: List[TriMesh] = []
    accessory_level = _icosphere_level(0.1 * budget)
    pieces.extend(_accessory(shape, rng, side, accessory_level) for side in (-1.0, 1.0))

    fragment_level = _icosphere_level(0.15 * budget / FRAGMENT_COUNT)
    pieces.extend(_fragment(shape, rng, fragment_level) for _ in range(FRAGMENT_COUNT))

    patch_side = max(4, int(np.sqrt(0.15 * budget)))
    pieces.append(_artifact_patch(shape, rng, patch_side, skin_tone))
    return hair, pieces


def _concatenate(meshes: Sequence[TriMesh]) -> TriMesh:
    offsets = np.cumsum([0] + [m.num_vertices for m in meshes[:-1]])
    return TriMesh(
        positions=np.concatenate([m.positions for m in meshes]),
        faces=np.concatenate([m.faces + o for m, o in zip(meshes, offsets)]),
        colors=np.concatenate([m.colors for m in meshes]),
    )


def label_by_distance(
    scan: TriMesh,
    reference: TriMesh,
    threshold: Optional[float] = None,
    bvh: Optional[TriangleBVH] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Skin (1) where the distance to the reference surface is below the threshold, else non-skin (0)

    Returns:
        (labels (V,) uint8, distances (V,) mm)

    Raises:
        ArgumentError: reference has no faces
    """
    threshold = settings.label_threshold_mm if threshold is None else threshold
    bvh = bvh or TriangleBVH(reference)
    distances, _, _ = bvh.query(scan.positions)
    return (distances < threshold).astype(np.uint8), distances


def camera_rig(num_views: Optional[int] = None, image_size: int = 128) -> List[Camera]:
    """
    Cameras 450 mm from the head center looking at it, z up

    With more than three views, three sit at 40 degrees elevation and the
    rest on an equatorial ring.
    """
    num_views = num_views or settings.num_views
    elevated = ELEVATED_VIEWS if num_views > ELEVATED_VIEWS else 0
    ring = num_views - elevated
    focal = FOCAL_FACTOR * image_size

    eyes = []
    for i in range(ring):
        azimuth = 2.0 * np.pi * i / ring
        eyes.append([np.cos(azimuth), np.sin(azimuth), 0.0])
    elevation = np.deg2rad(ELEVATION_DEG)
    for i in range(elevated):
        azimuth = 2.0 * np.pi * (i + 0.5) / elevated
        eyes.append([np.cos(elevation) * np.cos(azimuth), np.cos(elevation) * np.sin(azimuth), np.sin(elevation)])

    return [
        look_at(CAMERA_DISTANCE * np.asarray(eye), np.zeros(3), np.array([0.0, 0.0, 1.0]), focal, focal, image_size, image_size)
        for eye in eyes
    ]


def render_views(scan: TriMesh, cameras: Sequence[Camera]) -> List[Image]:
    """
    Flat-shaded renders: per-face mean vertex color x (0.3 + 0.7 |n . view axis|)

    Meshes without colors render light gray; empty pixels take the background.
    """
    normals = face_normals(scan)
    if scan.colors is not None:
        base = scan.colors[scan.faces].mean(axis=1)
    else:
        base = np.full((scan.num_faces, 3), 0.7)

    images = []
    for camera in cameras:
        _, face_index = rasterize(scan, camera)
        shade = AMBIENT + (1.0 - AMBIENT) * np.abs(normals @ rotation(camera)[2])
        images.append(render_colors(scan, camera, base * shade[:, None], BACKGROUND, face_index=face_index))
    return images


def generate_sample(seed: int, profile: Optional[SynthProfile] = None, label_threshold: Optional[float] = None) -> SynthSample:
    """
    Build one labeled scan, deterministic per seed

    Positions are rounded to float32 and colors to 8 bits before labeling, so
    labels recomputed from the written files match the stored ones.

    Raises:
        ScanSegRuntimeError: clutter ended up no farther from the reference than the skin
    """
    profile = profile or SynthProfile.named("test")
    rng = np.random.default_rng(seed)
    shape = HeadShape.random(rng)

    sphere = icosphere(head_subdivision_level(profile.vertices))
    reference = TriMesh(positions=shape.surface(sphere.positions), faces=sphere.faces)
    head = subdivide_midpoint(reference)

    noise = _normalize(rng.normal(size=(head.num_vertices, 3))) * rng.uniform(0.0, profile.noise_amplitude, (head.num_vertices, 1))
    skin_tone = SKIN_TONES[rng.integers(len(SKIN_TONES))]
    head = TriMesh(
        positions=head.positions + noise,
        faces=head.faces,
        colors=_tinted(rng, skin_tone, head.num_vertices),
    )

    budget = int(round(CLUTTER_FRACTION * head.num_vertices * profile.clutter_density))
    hair, pieces = _clutter(shape, rng, budget, skin_tone)
    scan = _concatenate([_graft_hair(head, hair)] + pieces)

    scan = validate_mesh(TriMesh(
        positions=scan.positions.astype(np.float32).astype(np.float64),
        faces=scan.faces,
        colors=np.rint(scan.colors * 255.0) / 255.0,
    ))
    reference = TriMesh(positions=reference.positions.astype(np.float32).astype(np.float64), faces=reference.faces)
    clutter_mask = np.arange(scan.num_vertices) >= head.num_vertices

    labels, distances = label_by_distance(scan, reference, label_threshold)
    if clutter_mask.any() and not distances[clutter_mask].mean() > distances[~clutter_mask].mean():
        raise ScanSegRuntimeError(f"seed {seed}: clutter is not farther from the reference than the skin")

    cameras = camera_rig(profile.num_views, profile.image_size)
    images = render_views(scan, cameras)
    logger.debug(
        f"Sample {seed}: {scan.num_vertices} vertices, {int(clutter_mask.sum())} clutter, "
        f"non-skin fraction {1.0 - labels.mean():.3f}"
    )
    return SynthSample(
        seed=seed,
        scan=scan,
        reference=reference,
        cameras=cameras,
        images=images,
        labels=labels,
        clutter_mask=clutter_mask,
    )


# ============================================================================
# Dataset layout
# ============================================================================

def view_file(index: int, suffix: str = "ppm") -> str:
    return f"view_{index:02d}.{suffix}"


def write_sample(sample: SynthSample, directory: str | Path) -> Path:
    """scan.ply, reference.ply, cameras.json, view_XX.ppm and labels.bin"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_mesh(sample.scan, directory / "scan.ply")
    save_mesh(sample.reference, directory / "reference.ply")
    save_cameras(sample.cameras, directory / "cameras.json")
    for i, image in enumerate(sample.images):
        write_image(image, directory / view_file(i))
    LabelDAO.write(sample.labels, directory / "labels.bin")
    return directory


def sample_seed(directory: str | Path) -> int:
    """Seed encoded in a sample_<seed> directory name, -1 when absent"""
    name = Path(directory).name
    prefix = SAMPLE_DIR_FORMAT.split("{")[0]
    suffix = name[len(prefix):] if name.startswith(prefix) else ""
    return int(suffix) if suffix.isdigit() else -1


def load_sample(directory: str | Path) -> SynthSample:
    """
    Read a sample directory back

    Raises:
        MissingInputError: a required file is absent
        FormatError: a file does not parse
    """
    directory = Path(directory)
    scan = load_mesh(directory / "scan.ply")
    cameras = load_cameras(directory / "cameras.json")
    return SynthSample(
        seed=sample_seed(directory),
        scan=scan,
        reference=load_mesh(directory / "reference.ply"),
        cameras=cameras,
        images=[read_image(directory / view_file(i)) for i in range(len(cameras))],
        labels=LabelDAO.read(directory / "labels.bin"),
    )


def generate_dataset(
    out: str | Path,
    count: int,
    seed: int = 0,
    test_fraction: float = 0.25,
    profile: Optional[SynthProfile] = None,
    threads: Optional[int] = None,
    force: bool = False,
) -> DatasetSplit:
    """
    Generate `count` samples for consecutive seeds and write split.json

    The last round(count * test_fraction) seeds form the test split; at least
    one sample stays in train.

    Raises:
        ArgumentError: bad count / fraction, or a sample directory exists without force
    """
    if count < 1:
        raise ArgumentError(f"count must be positive, got {count}")
    if not 0.0 <= test_fraction < 1.0:
        raise ArgumentError(f"test fraction must lie in [0, 1), got {test_fraction}")
    out = Path(out)
    profile = profile or SynthProfile.named("test")
    names = [SAMPLE_DIR_FORMAT.format(seed=s) for s in range(seed, seed + count)]
    existing = [name for name in names if (out / name).exists()]
    if existing and not force:
        raise ArgumentError(f"{out / existing[0]} already exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)

    def build(value: int, name: str) -> str:
        target = out / name
        if target.exists():
            shutil.rmtree(target)
        write_sample(generate_sample(value, profile), target)
        return name

    logger.info(f"Generating {count} '{profile.name}' samples into {out}")
    workers = min(resolve_threads(threads), count)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(build, seed + i, name): name for i, name in enumerate(names)}
        for done, future in enumerate(as_completed(futures), start=1):
            future.result()
            logger.info(f"  [{done}/{count}] {futures[future]}")

    test_count = min(int(round(count * test_fraction)), count - 1)
    split = DatasetSplit(
        train=names[:count - test_count],
        test=names[count - test_count:],
        profile=profile.model_dump(),
    )
    (out / SPLIT_FILE).write_text(split.model_dump_json(indent=2))
    logger.info(f"Wrote {len(split.train)} train / {len(split.test)} test samples")
    return split


def load_split(dataset_dir: str | Path) -> DatasetSplit:
    """
    Read split.json of a generated dataset

    Raises:
        MissingInputError: no split.json in the directory
        FormatError: split.json does not validate
    """
    path = Path(dataset_dir) / SPLIT_FILE
    if not path.exists():
        raise MissingInputError(path, "dataset split file (run gen-data first)")
    try:
        return DatasetSplit.model_validate_json(path.read_text())
    except ValidationError as e:
        raise FormatError(f"invalid split file: {e.errors()[0]['msg']}", path) from e


def sample_dirs(dataset_dir: str | Path, split: Optional[Split] = None) -> List[Path]:
    """Sample directories of one split, or of both (train first) when split is None"""
    dataset_dir = Path(dataset_dir)
    listing = load_split(dataset_dir)
    if split is None:
        names = listing.train + listing.test
    else:
        names = listing.train if Split(split) is Split.TRAIN else listing.test
    return [dataset_dir / name for name in names]
