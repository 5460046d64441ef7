#!/usr/bin/python3
"""Toy shapes: renderer, domain splits, dataset manifests, attribute oracle."""
import functools
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import storage
from config import ConfigError, load_json, resource_path

ROLES = ("shared", "specific_A", "specific_B")
DOMAINS = ("A", "B")
SHAPES = ("square", "circle", "triangle")

# Canonical attribute set: name -> arity, in rendering order
CANONICAL_ARITY = {
    "background": 8,
    "object_color": 8,
    "shape": 3,
    "size": 4,
    "orientation": 5,
}

# Corners of two nested cubes: a background colour and an object colour
# always differ by 0.5 in every channel
BACKGROUND_PALETTE = np.array(
    list(itertools.product((-0.9, 0.9), repeat=3)), dtype=np.float32
)
OBJECT_PALETTE = np.array(
    list(itertools.product((-0.4, 0.4), repeat=3)), dtype=np.float32
)

# Object half-extent, as a fraction of the image height
SIZE_FRACTIONS = (0.09, 0.125, 0.16, 0.19)
# Viewpoint, rendered as a horizontal object offset (fraction of width)
ORIENTATION_OFFSETS = (-0.2, -0.1, 0.0, 0.1, 0.2)

# Real-valued colour views measured from pixels, keyed to the
# categorical attribute whose role they inherit
REAL_VIEWS = {
    "background_rgb": "background",
    "object_rgb": "object_color",
}

DEFAULT_RESOLUTION = (32, 32)

# Images decoded per chunk by the oracle (bounds peak memory)
_ORACLE_CHUNK = 256


@dataclass(frozen=True)
class AttributeSpec:
    """
    Declaration of one attribute and its role within a split.

    size is the arity of a categorical attribute or the dimension of a
    real-valued one.
    """
    name: str
    kind: str = "categorical"
    size: int = 2
    role: str = "shared"

    def __post_init__(self):
        if self.kind not in ("categorical", "real"):
            raise ConfigError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and self.size < 2:
            raise ConfigError(f"{self.name}: categorical arity must be >= 2")
        if self.kind == "real" and self.size < 1:
            raise ConfigError(f"{self.name}: real dimension must be >= 1")
        if self.role not in ROLES:
            raise ConfigError(f"{self.name}: unknown role {self.role!r}")

    def varies_in(self, domain: str) -> bool:
        return self.role in ("shared", f"specific_{domain}")

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind,
                "size": self.size, "role": self.role}

    @classmethod
    def from_dict(cls, data: dict) -> "AttributeSpec":
        return cls(name=data["name"], kind=data.get("kind", "categorical"),
                   size=int(data["size"]), role=data["role"])


@dataclass
class SplitConfig:
    """One translation problem: which attributes vary in which domain."""
    split_id: str
    attributes: list
    fixed_values: dict
    domain_sizes: tuple = (1, 1)
    resolution: tuple = DEFAULT_RESOLUTION
    seed: int = 0

    def __post_init__(self):
        self.domain_sizes = tuple(int(n) for n in self.domain_sizes)
        self.resolution = tuple(int(n) for n in self.resolution)
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ConfigError(f"split {self.split_id}: duplicate attributes")
        for attr in self.attributes:
            if attr.role == "shared":
                if attr.name in self.fixed_values:
                    raise ConfigError(
                        f"{attr.name}: shared attributes take no fixed value"
                    )
                continue
            if attr.name not in self.fixed_values:
                raise ConfigError(
                    f"{attr.name}: {attr.role} needs a fixed value for "
                    f"the other domain"
                )
            value = self.fixed_values[attr.name]
            if not 0 <= int(value) < attr.size:
                raise ConfigError(
                    f"{attr.name}: fixed value {value} out of range "
                    f"[0, {attr.size})"
                )
        for key in self.fixed_values:
            if key not in names:
                raise ConfigError(f"fixed value for unknown attribute {key}")
        if min(self.domain_sizes) < 1:
            raise ConfigError("domain sizes must be >= 1")
        if min(self.resolution) < 8:
            raise ConfigError("resolution must be at least 8x8")

    @property
    def roles(self) -> dict:
        return {a.name: a.role for a in self.attributes}

    def varying(self, domain: str) -> list:
        """Attributes that vary in the given domain, in declared order."""
        return [a for a in self.attributes if a.varies_in(domain)]

    def allowed_count(self, domain: str) -> int:
        """Number of distinct attribute combinations allowed in a domain."""
        return int(np.prod([a.size for a in self.varying(domain)]))

    def with_overrides(self, seed=None, n_a=None, n_b=None,
                       resolution=None) -> "SplitConfig":
        """Return a copy with command-line overrides applied."""
        sizes = (n_a or self.domain_sizes[0], n_b or self.domain_sizes[1])
        res = (resolution, resolution) if resolution else self.resolution
        return SplitConfig(
            split_id=self.split_id,
            attributes=list(self.attributes),
            fixed_values=dict(self.fixed_values),
            domain_sizes=sizes,
            resolution=res,
            seed=self.seed if seed is None else int(seed),
        )

    def to_dict(self) -> dict:
        return {
            "split_id": self.split_id,
            "attributes": [a.to_dict() for a in self.attributes],
            "fixed_values": {k: int(v) for k, v in self.fixed_values.items()},
            "domain_sizes": list(self.domain_sizes),
            "resolution": list(self.resolution),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitConfig":
        try:
            return cls(
                split_id=data["split_id"],
                attributes=[AttributeSpec.from_dict(a)
                            for a in data["attributes"]],
                fixed_values={k: int(v)
                              for k, v in data.get("fixed_values", {}).items()},
                domain_sizes=tuple(data["domain_sizes"]),
                resolution=tuple(data.get("resolution", DEFAULT_RESOLUTION)),
                seed=int(data.get("seed", 0)),
            )
        except KeyError as e:
            raise ConfigError(f"split config is missing key {e}")


def load_split(spec: str) -> SplitConfig:
    """
    Resolve a split argument: a stock letter (A, B, C) or a JSON path.
    """
    if spec.upper() in ("A", "B", "C"):
        path = resource_path(f"splits/toy_{spec.lower()}.json")
    else:
        path = Path(spec)
    return SplitConfig.from_dict(load_json(path))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def validate_attrs(attrs: dict):
    """Reject attribute vectors that do not fit the canonical toy set."""
    for name in attrs:
        if name not in CANONICAL_ARITY:
            raise ValueError(f"unknown attribute: {name}")
    for name, arity in CANONICAL_ARITY.items():
        if name not in attrs:
            raise ValueError(f"missing attribute: {name}")
        value = attrs[name]
        if int(value) != value or not 0 <= int(value) < arity:
            raise ValueError(
                f"attribute {name}: index {value} outside [0, {arity})"
            )


@functools.lru_cache(maxsize=512)
def _mask(shape: int, size: int, orientation: int, height: int,
          width: int) -> np.ndarray:
    r = max(SIZE_FRACTIONS[size] * height, 1.0)
    cy = height / 2.0
    cx = width / 2.0 + ORIENTATION_OFFSETS[orientation] * width
    # Pixel centres
    y, x = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    dy, dx = y - cy, x - cx
    if SHAPES[shape] == "square":
        mask = (np.abs(dx) <= r) & (np.abs(dy) <= r)
    elif SHAPES[shape] == "circle":
        mask = dx ** 2 + dy ** 2 <= r ** 2
    else:
        # Apex up, base of half-width r at the bottom
        mask = (np.abs(dy) <= r) & (np.abs(dx) <= (dy + r) / 2.0)
    mask.setflags(write=False)
    return mask


def object_mask(attrs: dict, resolution=DEFAULT_RESOLUTION) -> np.ndarray:
    """Boolean HxW mask of the object pixels for an attribute vector."""
    validate_attrs(attrs)
    height, width = resolution
    return _mask(int(attrs["shape"]), int(attrs["size"]),
                 int(attrs["orientation"]), height, width)


def render(attrs: dict, resolution=DEFAULT_RESOLUTION) -> np.ndarray:
    """
    Render an attribute vector to an HxWx3 float32 image in [-1, 1].

    Pure function of (attrs, resolution): flat background colour plus a
    single flat-coloured object.
    """
    mask = object_mask(attrs, resolution)
    height, width = resolution
    img = np.empty((height, width, 3), dtype=np.float32)
    img[...] = BACKGROUND_PALETTE[int(attrs["background"])]
    img[mask] = OBJECT_PALETTE[int(attrs["object_color"])]
    return img


def canonical_grid() -> list[dict]:
    """Every canonical attribute vector (8*8*3*4*5 of them)."""
    names = list(CANONICAL_ARITY)
    return [
        dict(zip(names, values))
        for values in itertools.product(
            *(range(n) for n in CANONICAL_ARITY.values())
        )
    ]


# ---------------------------------------------------------------------------
# Splits and manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestRecord:
    path: str
    domain: str
    attrs: dict

    def to_dict(self) -> dict:
        return {"path": self.path, "domain": self.domain,
                "attrs": {k: int(v) for k, v in self.attrs.items()}}

    @classmethod
    def from_dict(cls, data: dict) -> "ManifestRecord":
        return cls(path=data["path"], domain=data["domain"],
                   attrs={k: int(v) for k, v in data["attrs"].items()})


@dataclass
class DatasetManifest:
    """A split plus its records; root is set once written to disk."""
    split: SplitConfig
    records: list
    root: Path | None = None
    _images: dict = field(default_factory=dict, repr=False, compare=False)

    def records_for(self, domain: str) -> list:
        return [r for r in self.records if r.domain == domain]

    def attrs(self, domain: str) -> list[dict]:
        return [r.attrs for r in self.records_for(domain)]

    def images(self, domain: str) -> np.ndarray:
        """
        Return an NxHxWx3 array of the domain's images.

        Images are read from disk when the manifest has a root, otherwise
        rendered from the records. The result is cached.
        """
        if domain not in self._images:
            height, width = self.split.resolution
            records = self.records_for(domain)
            if self.root is None:
                arrays = [render(r.attrs, (height, width)) for r in records]
            else:
                arrays = [storage.load_png(self.root / r.path)
                          for r in records]
            for r, a in zip(records, arrays):
                if a.shape != (height, width, 3):
                    raise ValueError(
                        f"{r.path}: expected {height}x{width}x3 image, "
                        f"got {a.shape}"
                    )
            self._images[domain] = np.stack(arrays).astype(np.float32)
        return self._images[domain]


def _sample_domain(cfg: SplitConfig, domain: str, n: int) -> list[dict]:
    varying = cfg.varying(domain)
    count = cfg.allowed_count(domain)
    if n > count:
        raise ValueError(
            f"domain {domain} of split {cfg.split_id}: requested {n} "
            f"images but only {count} attribute combinations are allowed"
        )
    rng = np.random.default_rng([cfg.seed, DOMAINS.index(domain)])
    chosen = rng.choice(count, size=n, replace=False)
    arities = [a.size for a in varying]
    samples = []
    for index in chosen:
        values = np.unravel_index(int(index), arities)
        attrs = {a.name: int(cfg.fixed_values[a.name])
                 for a in cfg.attributes if not a.varies_in(domain)}
        attrs.update({a.name: int(v) for a, v in zip(varying, values)})
        samples.append(attrs)
    return samples


def build_split(cfg: SplitConfig) -> DatasetManifest:
    """
    Sample both domains of a split without rendering anything.

    Domain A varies its shared and specific_A attributes with specific_B
    attributes frozen at their fixed values (and symmetrically for B).
    Combinations are drawn uniformly without replacement from cfg.seed.
    """
    names = sorted(a.name for a in cfg.attributes)
    if names != sorted(CANONICAL_ARITY):
        raise ConfigError(
            f"split {cfg.split_id}: attributes must be the canonical set "
            f"{sorted(CANONICAL_ARITY)}"
        )
    for a in cfg.attributes:
        if a.kind != "categorical" or a.size != CANONICAL_ARITY[a.name]:
            raise ConfigError(
                f"{a.name}: must be categorical with arity "
                f"{CANONICAL_ARITY[a.name]}"
            )
    records = []
    for domain, n in zip(DOMAINS, cfg.domain_sizes):
        for i, attrs in enumerate(_sample_domain(cfg, domain, n)):
            records.append(ManifestRecord(
                path=f"images/{domain}_{i:05d}.png",
                domain=domain,
                attrs=attrs,
            ))
    return DatasetManifest(split=cfg, records=records)


def write_dataset(manifest: DatasetManifest, out_dir) -> DatasetManifest:
    """
    Render every record and write images, manifest.jsonl and
    split_config.json under out_dir. Returns the manifest rooted there.
    """
    out_dir = Path(out_dir)
    resolution = manifest.split.resolution
    for record in manifest.records:
        storage.save_png(out_dir / record.path,
                         render(record.attrs, resolution))
    storage.write_jsonl(out_dir / "manifest.jsonl",
                        (r.to_dict() for r in manifest.records))
    (out_dir / "split_config.json").write_text(
        storage.dumps(manifest.split.to_dict()), encoding="utf-8"
    )
    return DatasetManifest(split=manifest.split,
                           records=list(manifest.records), root=out_dir)


def read_dataset(directory) -> DatasetManifest:
    """Load a dataset directory written by write_dataset."""
    directory = Path(directory)
    if not (directory / "manifest.jsonl").exists():
        raise ConfigError(f"no manifest.jsonl in {directory}")
    split = SplitConfig.from_dict(load_json(directory / "split_config.json"))
    records = [ManifestRecord.from_dict(d)
               for d in storage.read_jsonl(directory / "manifest.jsonl")]
    return DatasetManifest(split=split, records=records, root=directory)


# ---------------------------------------------------------------------------
# Attribute oracle
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=8)
def _prototypes(height: int, width: int):
    geometries = list(itertools.product(
        range(CANONICAL_ARITY["shape"]),
        range(CANONICAL_ARITY["size"]),
        range(CANONICAL_ARITY["orientation"]),
    ))
    masks = np.stack([
        _mask(s, z, o, height, width).reshape(-1) for s, z, o in geometries
    ]).astype(np.float32)
    return geometries, masks


def _band_rows(height: int) -> int:
    # Objects never reach the top or bottom eighth of the frame
    return max(1, height // 8)


def _decode_chunk(images: np.ndarray):
    n, height, width, _ = images.shape
    b = _band_rows(height)
    band = np.concatenate(
        [images[:, :b], images[:, height - b:]], axis=1
    ).reshape(n, -1, 3)
    bg_cost = np.abs(
        band[:, :, None, :] - BACKGROUND_PALETTE[None, None]
    ).sum(-1).mean(1)
    bg = bg_cost.argmin(1)

    pixels = images.reshape(n, -1, 3)
    d_bg = np.abs(pixels - BACKGROUND_PALETTE[bg][:, None, :]).sum(-1)
    d_obj = np.abs(
        pixels[:, :, None, :] - OBJECT_PALETTE[None, None]
    ).sum(-1)
    mask = d_obj.min(-1) < d_bg

    # Empty object mask: score the object colour over the whole frame
    weights = np.where(mask.any(1, keepdims=True), mask, True)
    weights = weights.astype(np.float32)
    obj_cost = (d_obj * weights[..., None]).sum(1) / weights.sum(
        1, keepdims=True)
    obj = obj_cost.argmin(1)

    geometries, protos = _prototypes(height, width)
    m = mask.astype(np.float32)
    hamming = (m.sum(1)[:, None] + protos.sum(1)[None, :]
               - 2.0 * m @ protos.T)
    geometry = hamming.argmin(1)

    # float64 so that equal flat colours give bit-identical views
    band64 = band.astype(np.float64)
    pixels64 = pixels.astype(np.float64)
    bg_rgb = band64.mean(1)
    count = mask.sum(1, keepdims=True)
    obj_rgb = np.where(
        count > 0,
        (pixels64 * mask[..., None]).sum(1) / np.maximum(count, 1),
        pixels64.mean(1),
    )
    results = []
    for i in range(n):
        shape, size, orientation = geometries[geometry[i]]
        results.append({
            "background": int(bg[i]),
            "object_color": int(obj[i]),
            "shape": int(shape),
            "size": int(size),
            "orientation": int(orientation),
            "background_rgb": tuple(float(v) for v in bg_rgb[i]),
            "object_rgb": tuple(float(v) for v in obj_rgb[i]),
        })
    return results


def decode_batch(images, real_views: bool = False) -> list[dict]:
    """
    Decode attributes of an NxHxWx3 batch (see attribute_oracle).

    With real_views the result also carries the measured colour vectors
    named in REAL_VIEWS.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"expected NxHxWx3 images, got {images.shape}")
    results = []
    for start in range(0, len(images), _ORACLE_CHUNK):
        results.extend(_decode_chunk(images[start:start + _ORACLE_CHUNK]))
    if not real_views:
        for r in results:
            for name in REAL_VIEWS:
                del r[name]
    return results


def attribute_oracle(img) -> dict:
    """
    Recover the canonical attributes of one HxWx3 image.

    The background colour is the palette entry nearest (mean L1) to the
    top and bottom bands; the object mask is every pixel nearer to some
    object colour than to that background; the object colour is scored
    over the mask and the geometry is the prototype mask with the
    smallest Hamming distance. Exact on clean renders and total on any
    image of valid shape.
    """
    return decode_batch(np.asarray(img)[None])[0]


def measure_colors(images) -> dict:
    """Mean background and object RGB vectors for a batch of images."""
    decoded = decode_batch(images, real_views=True)
    return {
        name: np.array([d[name] for d in decoded], dtype=np.float32)
        for name in REAL_VIEWS
    }
