"""SemShapes: deterministic synthetic street scenes with ground truth.

Each scene is a layered 2-D composition over eight semantic classes.  The
decision label is a pure function of two regions: ``go`` iff the signal
light is present and green AND no blocking obstacle is in the scene.  All
other regions are distractors; the building's brightness is deliberately
sampled correlated with the label so that models with restricted visibility
have a spurious cue available.

Scenes carry an integer identity factor that adds a small color fingerprint
to sky, road, building and tree regions; it is independent of the label and
is what the identity-preservation proxy is trained on.

Rendering is fully deterministic from a SceneSpec: same spec, same pixels.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import DatasetError, InvalidMaskError
from .imaging import read_image_png, read_mask_png, write_image_png, write_mask_png
from .profiles import SEMSHAPES_64, DatasetProfile, pattern_fields
from .types import ImageTensor, SemanticMask

CLASS_SKY = 1
CLASS_ROAD = 2
CLASS_LIGHT = 3
CLASS_OBSTACLE = 4
CLASS_BUILDING = 5
CLASS_TREE = 6
CLASS_MARKING = 7
CLASS_SIGN = 8

LABEL_STOP = 1
LABEL_GO = 2

ATTR_LIGHT_GREEN = 0
ATTR_OBSTACLE_BLOCKING = 1
ATTR_OBSTACLE_PRESENT = 2
ATTR_BUILDING_BRIGHT = 3
ATTR_TREE_DARK = 4
ATTR_MARKING_BRIGHT = 5
ATTR_SIGN_WARM = 6
ATTR_SKY_LIGHT = 7

NUM_ATTRIBUTES = 8

_BASE_COLORS = {
    CLASS_SKY: (-0.15, 0.22, 0.52),
    CLASS_ROAD: (-0.38, -0.38, -0.34),
    CLASS_BUILDING: (0.22, 0.10, -0.06),
    CLASS_TREE: (-0.34, 0.12, -0.30),
    CLASS_MARKING: (0.42, 0.42, 0.36),
}
_LIGHT_GREEN = (-0.62, 0.74, -0.42)
_LIGHT_RED = (0.78, -0.58, -0.52)
_OBSTACLE_BLOCKING = (0.74, -0.46, -0.48)
_OBSTACLE_INERT = (-0.06, -0.08, -0.04)
_SIGN_WARM = (0.62, 0.30, -0.22)
_SIGN_COOL = (-0.55, 0.35, 0.42)
_SIGN_FRAME = (-0.78, -0.78, -0.78)

_COLOR_LIMIT = 0.95
_IDENTITY_TINT_SCALE = 0.18


@dataclass(frozen=True)
class SceneSpec:
    """Complete ground-truth description of one scene.

    The decision label derives from ``light_present``/``light_green`` and
    ``obstacle_present``/``obstacle_blocking`` alone; everything else only
    shapes appearance.
    """

    layout_seed: int
    style_seed: int
    identity: int
    empty: bool = False
    light_present: bool = True
    light_green: bool = True
    obstacle_present: bool = False
    obstacle_blocking: bool = False
    building_present: bool = True
    tree_present: bool = True
    marking_present: bool = True
    sign_present: bool = False
    building_bright: bool = False
    tree_dark: bool = False
    marking_bright: bool = False
    sign_warm: bool = False
    sky_light: bool = False

    @property
    def label(self) -> int:
        go = (
            not self.empty
            and self.light_present
            and self.light_green
            and not (self.obstacle_present and self.obstacle_blocking)
        )
        return LABEL_GO if go else LABEL_STOP

    def to_jsonable(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_jsonable(data: dict) -> "SceneSpec":
        return SceneSpec(**data)


def identity_tints(identity: int) -> dict[int, np.ndarray]:
    """Per-region chroma fingerprint of an identity factor.

    Tints are zero-mean across channels so they stay orthogonal to the
    luminance shifts that binary attributes apply.
    """
    rng = np.random.Generator(np.random.PCG64(np.uint64(0xA5A5_0000 + identity)))
    out = {}
    for cls in (CLASS_SKY, CLASS_ROAD, CLASS_BUILDING, CLASS_TREE):
        raw = rng.uniform(-_IDENTITY_TINT_SCALE, _IDENTITY_TINT_SCALE, size=3)
        out[cls] = (raw - raw.mean()).astype(np.float32)
    return out


def _layout(spec: SceneSpec, profile: DatasetProfile) -> dict:
    """Seeded geometry for every region that is present."""
    h, w = profile.height, profile.width
    rng = np.random.Generator(np.random.PCG64(np.uint64(spec.layout_seed)))
    out: dict = {}
    out["road_top"] = int(rng.integers(int(0.72 * h), int(0.82 * h)))
    # the light lives entirely inside the top visibility band
    cy = int(rng.integers(int(0.06 * h), int(0.16 * h) + 1))
    r = int(rng.integers(3, 5))
    cx = int(rng.integers(6, w - 6))
    out["light"] = (cy, cx, r)
    # the obstacle sits low on the road, entirely below the middle band
    top = int(rng.integers(int(0.72 * h), int(0.79 * h)))
    bottom = int(rng.integers(int(0.88 * h), int(0.97 * h)))
    half = int(rng.integers(4, 7))
    cx_o = int(rng.integers(int(0.32 * w), int(0.68 * w)))
    out["obstacle"] = (top, bottom, cx_o - half, cx_o + half)
    b_w = int(rng.integers(int(0.19 * w), int(0.28 * w)))
    b_x0 = int(rng.integers(int(0.12 * w), w - b_w - int(0.12 * w)))
    out["building"] = (int(0.25 * h), int(0.70 * h), b_x0, b_x0 + b_w)
    t_cy = int(rng.integers(int(0.40 * h), int(0.62 * h)))
    t_cx = int(rng.integers(10, w - 10))
    t_r = int(rng.integers(5, 8))
    out["tree"] = (t_cy, t_cx, t_r)
    out["marking"] = (int(0.88 * h), int(rng.integers(0, 8)))
    # the sign hangs in the middle band
    s_y = int(rng.integers(int(0.27 * h), int(0.40 * h)))
    s_x = int(rng.integers(4, w - 8))
    s_sz = int(rng.integers(4, 7))
    out["sign"] = (s_y, s_x, s_sz)
    return out


def _style(spec: SceneSpec) -> dict:
    rng = np.random.Generator(np.random.PCG64(np.uint64(spec.style_seed)))
    jitter = {
        cls: rng.uniform(-0.03, 0.03, size=3).astype(np.float32)
        for cls in range(1, 9)
    }
    amps = {
        CLASS_SKY: (float(rng.uniform(0.0, 0.05)), 0.0),
        CLASS_ROAD: (0.0, float(rng.uniform(0.01, 0.06))),
        CLASS_BUILDING: (float(rng.uniform(0.01, 0.07)), 0.0),
        CLASS_TREE: (0.0, float(rng.uniform(0.01, 0.07))),
    }
    if spec.empty and rng.uniform() < 0.5:
        amps[CLASS_SKY] = (0.0, 0.0)
    return {"jitter": jitter, "amps": amps}


def _disk(h: int, w: int, cy: int, cx: int, r: int) -> np.ndarray:
    yy, xx = np.ogrid[:h, :w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def render_scene(
    spec: SceneSpec, profile: DatasetProfile = SEMSHAPES_64
) -> tuple[ImageTensor, SemanticMask, int, np.ndarray]:
    """Deterministically render a spec into (image, mask, label, attributes).

    Attribute bits refer to *visible* regions: a styled region fully painted
    over by a later layer contributes a zero bit.
    """
    h, w = profile.height, profile.width
    mask = np.full((h, w), CLASS_SKY, dtype=np.uint8)
    image = np.zeros((h, w, 3), dtype=np.float32)
    layout = _layout(spec, profile)
    style = _style(spec)
    tints = identity_tints(spec.identity)

    def color_of(cls: int, base) -> np.ndarray:
        col = np.asarray(base, dtype=np.float32).copy()
        col += tints.get(cls, 0.0)
        col += style["jitter"][cls]
        return col

    sky = color_of(CLASS_SKY, _BASE_COLORS[CLASS_SKY])
    sky += 0.22 if spec.sky_light else -0.12
    image[:, :] = sky

    if not spec.empty:
        road_top = layout["road_top"]
        road = color_of(CLASS_ROAD, _BASE_COLORS[CLASS_ROAD])
        image[road_top:, :] = road
        mask[road_top:, :] = CLASS_ROAD

        if spec.marking_present:
            y, phase = layout["marking"]
            col = color_of(CLASS_MARKING, _BASE_COLORS[CLASS_MARKING])
            col += 0.32 if spec.marking_bright else -0.12
            for x0 in range(phase, w, 10):
                image[y : y + 2, x0 : x0 + 5] = col
                mask[y : y + 2, x0 : x0 + 5] = CLASS_MARKING

        if spec.building_present:
            y0, y1, x0, x1 = layout["building"]
            col = color_of(CLASS_BUILDING, _BASE_COLORS[CLASS_BUILDING])
            col += 0.30 if spec.building_bright else -0.22
            image[y0:y1, x0:x1] = col
            mask[y0:y1, x0:x1] = CLASS_BUILDING

        if spec.tree_present:
            cy, cx, r = layout["tree"]
            blob = _disk(h, w, cy, cx, r)
            col = color_of(CLASS_TREE, _BASE_COLORS[CLASS_TREE])
            col += -0.28 if spec.tree_dark else 0.06
            image[blob] = col
            mask[blob] = CLASS_TREE

        if spec.obstacle_present:
            y0, y1, x0, x1 = layout["obstacle"]
            base = _OBSTACLE_BLOCKING if spec.obstacle_blocking else _OBSTACLE_INERT
            col = color_of(CLASS_OBSTACLE, base)
            image[y0:y1, x0:x1] = col
            mask[y0:y1, x0:x1] = CLASS_OBSTACLE

        if spec.sign_present:
            y, x, sz = layout["sign"]
            frame = color_of(CLASS_SIGN, _SIGN_FRAME)
            col = color_of(CLASS_SIGN, _SIGN_WARM if spec.sign_warm else _SIGN_COOL)
            image[y : y + sz, x : x + sz] = frame
            image[y + 1 : y + sz - 1, x + 1 : x + sz - 1] = col
            mask[y : y + sz, x : x + sz] = CLASS_SIGN

        if spec.light_present:
            cy, cx, r = layout["light"]
            blob = _disk(h, w, cy, cx, r)
            col = color_of(CLASS_LIGHT, _LIGHT_GREEN if spec.light_green else _LIGHT_RED)
            image[blob] = col
            mask[blob] = CLASS_LIGHT

    fields = pattern_fields(h, w)
    for cls, (a1, a2) in style["amps"].items():
        region = mask == cls
        if not region.any():
            continue
        texture = a1 * fields[0] + a2 * fields[1]
        image[region] += texture[region, None]

    image = np.clip(image, -_COLOR_LIMIT, _COLOR_LIMIT)

    visible = set(int(c) for c in np.unique(mask))
    attrs = np.zeros(NUM_ATTRIBUTES, dtype=np.uint8)
    attrs[ATTR_LIGHT_GREEN] = int(CLASS_LIGHT in visible and spec.light_green)
    attrs[ATTR_OBSTACLE_BLOCKING] = int(CLASS_OBSTACLE in visible and spec.obstacle_blocking)
    attrs[ATTR_OBSTACLE_PRESENT] = int(CLASS_OBSTACLE in visible)
    attrs[ATTR_BUILDING_BRIGHT] = int(CLASS_BUILDING in visible and spec.building_bright)
    attrs[ATTR_TREE_DARK] = int(CLASS_TREE in visible and spec.tree_dark)
    attrs[ATTR_MARKING_BRIGHT] = int(CLASS_MARKING in visible and spec.marking_bright)
    attrs[ATTR_SIGN_WARM] = int(CLASS_SIGN in visible and spec.sign_warm)
    attrs[ATTR_SKY_LIGHT] = int(spec.sky_light)

    return (
        ImageTensor(pixels=image),
        SemanticMask(labels=mask, num_classes=profile.num_classes),
        spec.label,
        attrs,
    )


def sample_scene(
    rng: np.random.Generator, identity: int, desired_label: Optional[int] = None
) -> SceneSpec:
    """Draw one SceneSpec; optionally force the derived label.

    Every sampled scene contains the signal light, so a decision flip is
    always reachable under the fixed layout (empty scenes exist only as
    hand-built specs and as segmenter training augmentation).  Forcing the
    label adjusts the light/obstacle state minimally so labelled datasets
    stay balanced without skewing the distractor distributions.
    """
    light_green = bool(rng.uniform() < 0.55)
    obstacle_present = bool(rng.uniform() < 0.9)
    obstacle_blocking = bool(rng.uniform() < 0.15) and obstacle_present

    if desired_label == LABEL_GO:
        light_green, obstacle_blocking = True, False
    elif desired_label == LABEL_STOP:
        if light_green and not obstacle_blocking:
            if obstacle_present and rng.uniform() < 0.3:
                obstacle_blocking = True
            else:
                light_green = False

    label_now = LABEL_GO if (light_green and not obstacle_blocking) else LABEL_STOP
    p_bright = 0.8 if label_now == LABEL_GO else 0.2

    return SceneSpec(
        layout_seed=int(rng.integers(0, 2**31 - 1)),
        style_seed=int(rng.integers(0, 2**31 - 1)),
        identity=identity,
        empty=False,
        light_present=True,
        light_green=light_green,
        obstacle_present=obstacle_present,
        obstacle_blocking=obstacle_blocking,
        building_present=bool(rng.uniform() < 0.8),
        tree_present=bool(rng.uniform() < 0.7),
        marking_present=bool(rng.uniform() < 0.85),
        sign_present=bool(rng.uniform() < 0.6),
        building_bright=bool(rng.uniform() < p_bright),
        tree_dark=bool(rng.uniform() < 0.5),
        marking_bright=bool(rng.uniform() < 0.5),
        sign_warm=bool(rng.uniform() < 0.5),
        sky_light=bool(rng.uniform() < 0.5),
    )


# --------------------------------------------------------------------------
# On-disk dataset layout: images/NNNNNN.png, masks/NNNNNN.png (indexed),
# meta/NNNNNN.json, manifest.json.
# --------------------------------------------------------------------------

MANIFEST_FORMAT = "steexlab.dataset/1"
_VAL_MODULUS = 7
_VAL_RESIDUE = 3


def _item_name(i: int) -> str:
    return f"{i:06d}"


def _split_indices(count: int) -> tuple[list[int], list[int]]:
    val = [i for i in range(count) if i % _VAL_MODULUS == _VAL_RESIDUE]
    train = [i for i in range(count) if i % _VAL_MODULUS != _VAL_RESIDUE]
    return train, val


def _content_fingerprint(root: Path, count: int) -> str:
    digest = hashlib.sha256()
    for i in range(count):
        name = _item_name(i)
        digest.update((root / "images" / f"{name}.png").read_bytes())
        digest.update((root / "masks" / f"{name}.png").read_bytes())
        meta_path = root / "meta" / f"{name}.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            digest.update(json.dumps(meta, sort_keys=True).encode())
    return digest.hexdigest()


def _write_manifest(root: Path, profile: DatasetProfile, count: int, items_meta: list[dict],
                    attributes_available: bool, identity_available: bool, provenance: dict) -> dict:
    labels = [m.get("label") for m in items_meta]
    label_counts: dict[str, int] = {}
    for lab in labels:
        key = "unlabeled" if lab is None else profile.decision_class_names[lab - 1]
        label_counts[key] = label_counts.get(key, 0) + 1
    presence = {name: 0 for name in profile.class_names}
    for m in items_meta:
        for c in m["present_classes"]:
            presence[profile.class_names[c - 1]] += 1
    train, val = _split_indices(count)
    manifest = {
        "format": MANIFEST_FORMAT,
        "profile": profile.to_jsonable(),
        "count": count,
        "label_counts": label_counts,
        "class_presence": presence,
        "attributes_available": attributes_available,
        "identity_available": identity_available,
        "split": {"train": train, "val": val},
        "content_fingerprint": _content_fingerprint(root, count),
        "provenance": provenance,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def build_dataset(
    count: int,
    seed: int,
    out_dir: str | Path,
    profile: DatasetProfile = SEMSHAPES_64,
) -> "SceneDataset":
    """Generate a balanced labelled dataset of ``count`` scenes."""
    if count <= 0:
        raise DatasetError("count must be positive")
    root = Path(out_dir)
    for sub in ("images", "masks", "meta"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    rng = np.random.Generator(np.random.PCG64(np.uint64(seed)))
    n_ids = max(1, count // 10)
    identity_seq = np.array([i % n_ids for i in range(count)])
    rng.shuffle(identity_seq)

    items_meta = []
    for i in range(count):
        desired = LABEL_GO if i % 2 == 0 else LABEL_STOP
        spec = sample_scene(rng, identity=int(identity_seq[i]), desired_label=desired)
        image, mask, label, attrs = render_scene(spec, profile)
        name = _item_name(i)
        write_image_png(root / "images" / f"{name}.png", image)
        write_mask_png(root / "masks" / f"{name}.png", mask)
        meta = {
            "scene": spec.to_jsonable(),
            "label": label,
            "attributes": [int(a) for a in attrs],
            "identity": int(spec.identity),
            "present_classes": sorted(mask.present_classes()),
        }
        (root / "meta" / f"{name}.json").write_text(json.dumps(meta, sort_keys=True))
        items_meta.append(meta)

    _write_manifest(
        root, profile, count, items_meta,
        attributes_available=True, identity_available=True,
        provenance={"kind": "synthetic", "seed": seed, "count": count},
    )
    return SceneDataset.load(root)


def ingest_external(
    image_dir: str | Path,
    mask_dir: str | Path,
    metadata_file: Optional[str | Path],
    out_dir: str | Path,
    profile: DatasetProfile = SEMSHAPES_64,
) -> "SceneDataset":
    """Normalize externally supplied image/mask pairs into the dataset layout.

    Pairs are matched by filename stem.  Masks must only use labels in
    1..num_classes.  A missing metadata file leaves the dataset unlabeled
    with attributes marked unavailable (attribute metrics are then disabled
    downstream).
    """
    image_dir, mask_dir = Path(image_dir), Path(mask_dir)
    images = {p.stem: p for p in sorted(image_dir.glob("*.png"))}
    masks = {p.stem: p for p in sorted(mask_dir.glob("*.png"))}
    unpaired = sorted(set(images) ^ set(masks))
    if unpaired:
        raise DatasetError(f"unpaired image/mask stems: {unpaired[:10]}")
    if not images:
        raise DatasetError("no image/mask pairs found")

    # Metadata either as one JSON file with an "items" mapping keyed by stem,
    # or as a directory of per-item <stem>.json files (a dataset's meta/ dir).
    metadata = {}
    if metadata_file is not None and Path(metadata_file).exists():
        meta_path = Path(metadata_file)
        if meta_path.is_dir():
            metadata = {
                p.stem: json.loads(p.read_text()) for p in sorted(meta_path.glob("*.json"))
            }
        else:
            metadata = json.loads(meta_path.read_text()).get("items", {})
    attributes_available = bool(metadata) and all(
        "attributes" in m for m in metadata.values()
    )
    identity_available = bool(metadata) and all("identity" in m for m in metadata.values())

    root = Path(out_dir)
    for sub in ("images", "masks", "meta"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    items_meta = []
    for i, stem in enumerate(sorted(images)):
        image = read_image_png(images[stem])
        if image.height != profile.height or image.width != profile.width:
            raise DatasetError(f"{images[stem]}: size {image.height}x{image.width} "
                               f"does not match profile {profile.height}x{profile.width}")
        try:
            mask = read_mask_png(masks[stem], profile.num_classes)
        except InvalidMaskError as exc:
            raise DatasetError(f"{masks[stem]}: {exc}") from exc
        name = _item_name(i)
        write_image_png(root / "images" / f"{name}.png", image)
        write_mask_png(root / "masks" / f"{name}.png", mask)
        entry = metadata.get(stem, {})
        label = entry.get("label")
        if label is not None and not (1 <= int(label) <= len(profile.decision_class_names)):
            raise DatasetError(f"{stem}: label {label} out of range")
        meta = {
            "label": None if label is None else int(label),
            "attributes": entry.get("attributes"),
            "identity": entry.get("identity"),
            "present_classes": sorted(mask.present_classes()),
        }
        (root / "meta" / f"{name}.json").write_text(json.dumps(meta, sort_keys=True))
        items_meta.append(meta)

    _write_manifest(
        root, profile, len(items_meta), items_meta,
        attributes_available=attributes_available,
        identity_available=identity_available,
        provenance={"kind": "ingested"},
    )
    return SceneDataset.load(root)


class SceneDataset:
    """Read access to a persisted dataset directory."""

    def __init__(self, root: Path, manifest: dict):
        self.root = Path(root)
        self.manifest = manifest
        self.profile = DatasetProfile.from_jsonable(manifest["profile"])

    @staticmethod
    def load(root: str | Path) -> "SceneDataset":
        root = Path(root)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise DatasetError(f"{root} has no manifest.json")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("format") != MANIFEST_FORMAT:
            raise DatasetError(f"unsupported dataset format {manifest.get('format')!r}")
        return SceneDataset(root, manifest)

    def __len__(self) -> int:
        return int(self.manifest["count"])

    @property
    def train_indices(self) -> list[int]:
        return list(self.manifest["split"]["train"])

    @property
    def val_indices(self) -> list[int]:
        return list(self.manifest["split"]["val"])

    @property
    def attributes_available(self) -> bool:
        return bool(self.manifest["attributes_available"])

    @property
    def identity_available(self) -> bool:
        return bool(self.manifest["identity_available"])

    def _meta(self, i: int) -> dict:
        return json.loads((self.root / "meta" / f"{_item_name(i)}.json").read_text())

    def image(self, i: int) -> ImageTensor:
        return read_image_png(self.root / "images" / f"{_item_name(i)}.png")

    def mask(self, i: int) -> SemanticMask:
        return read_mask_png(self.root / "masks" / f"{_item_name(i)}.png", self.profile.num_classes)

    def label(self, i: int) -> Optional[int]:
        return self._meta(i).get("label")

    def attributes(self, i: int) -> Optional[np.ndarray]:
        attrs = self._meta(i).get("attributes")
        return None if attrs is None else np.asarray(attrs, dtype=np.uint8)

    def identity(self, i: int) -> Optional[int]:
        ident = self._meta(i).get("identity")
        return None if ident is None else int(ident)

    def scene(self, i: int) -> Optional[SceneSpec]:
        meta = self._meta(i)
        return SceneSpec.from_jsonable(meta["scene"]) if "scene" in meta else None

    def load_arrays(self, indices: Iterable[int]) -> dict:
        """Stack items into dense arrays for training loops."""
        indices = list(indices)
        images = np.stack([self.image(i).pixels for i in indices])
        masks = np.stack([self.mask(i).labels for i in indices])
        labels = np.array(
            [self.label(i) if self.label(i) is not None else -1 for i in indices], dtype=np.int64
        )
        attrs = None
        if self.attributes_available:
            attrs = np.stack([self.attributes(i) for i in indices]).astype(np.float32)
        idents = None
        if self.identity_available:
            idents = np.array([self.identity(i) for i in indices], dtype=np.int64)
        return {"indices": indices, "images": images, "masks": masks,
                "labels": labels, "attributes": attrs, "identities": idents}
