"""Dataset pools, directory ingestion, and the synthetic benchmark generator.

The three pools follow the screening setup: a normal pool, an unlabeled
pool with a controllable anomaly rate, and a labeled test set.  Training
code only ever receives raw pixel arrays; the unlabeled pool's true flags
are kept for provenance and never flow into training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError

IMAGE_SIZE = 64
PATCH_MIN, PATCH_MAX = 8, 16


@dataclass
class DatasetSpec:
    normal: np.ndarray                 # [N,1,64,64] float32 in [0,1]
    unlabeled: np.ndarray              # [M,1,64,64]
    test_images: np.ndarray            # [T,1,64,64]
    test_labels: np.ndarray            # [T] in {0,1}
    anomaly_rate: float = 0.0
    normal_ids: list[str] = field(default_factory=list)
    unlabeled_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)
    # synthetic provenance only; never read by training code
    _unlabeled_flags: np.ndarray | None = None


@dataclass
class ImageBatch:
    pixels: np.ndarray   # [n,1,64,64]
    ids: list[int]


# -- synthetic generation -------------------------------------------------


def _base_field(rng: np.random.Generator) -> np.ndarray:
    """Smooth blob field scaled into [0.05, 0.55]."""
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    n_bumps = int(rng.integers(3, 8))
    img = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    for _ in range(n_bumps):
        cy, cx = rng.uniform(0, IMAGE_SIZE, size=2)
        s = rng.uniform(5.0, 18.0)
        amp = rng.uniform(0.3, 1.0)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    lo, hi = img.min(), img.max()
    span = hi - lo if hi > lo else 1.0
    return 0.05 + 0.5 * (img - lo) / span


def _add_patch(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Insert one high-contrast rectangular or elliptic patch."""
    out = img.copy()
    size = int(rng.integers(PATCH_MIN, PATCH_MAX + 1))
    y0 = int(rng.integers(0, IMAGE_SIZE - size + 1))
    x0 = int(rng.integers(0, IMAGE_SIZE - size + 1))
    amp = rng.uniform(0.3, 0.45)
    if rng.uniform() < 0.5:
        out[y0:y0 + size, x0:x0 + size] += amp
    else:
        yy, xx = np.mgrid[0:size, 0:size]
        r = size / 2.0
        mask = ((yy - r + 0.5) ** 2 + (xx - r + 0.5) ** 2) <= r * r
        region = out[y0:y0 + size, x0:x0 + size]
        region[mask] += amp
    return np.clip(out, 0.0, 1.0)


def synthetic_image(rng: np.random.Generator, abnormal: bool):
    """One synthetic image; returns (image, base_field) both [64,64] float32."""
    base = _base_field(rng)
    img = _add_patch(base, rng) if abnormal else base
    noise = rng.normal(0.0, 0.01, size=img.shape)
    img = np.clip(img + noise, 0.0, 1.0)
    return img.astype(np.float32), base.astype(np.float32)


def generate_synthetic(n_normal: int, m_unlabeled: int, ar: float,
                       t_normal: int, t_abnormal: int, seed: int) -> DatasetSpec:
    """Deterministic synthetic pools with round(ar * m_unlabeled) anomalies in D_u."""
    if not 0.0 <= ar <= 1.0:
        raise ConfigError(f"anomaly rate {ar} outside [0,1]")
    if min(n_normal, m_unlabeled, t_normal, t_abnormal) < 0:
        raise ConfigError("pool sizes must be >= 0")
    rng = np.random.default_rng(seed)

    def make(count: int, flags: np.ndarray) -> np.ndarray:
        imgs = np.empty((count, 1, IMAGE_SIZE, IMAGE_SIZE), np.float32)
        for i in range(count):
            imgs[i, 0] = synthetic_image(rng, bool(flags[i]))[0]
        return imgs

    normal = make(n_normal, np.zeros(n_normal, bool))
    n_abnormal = int(round(ar * m_unlabeled))
    flags = np.zeros(m_unlabeled, bool)
    flags[:n_abnormal] = True
    rng.shuffle(flags)
    unlabeled = make(m_unlabeled, flags)
    test_labels = np.concatenate([np.zeros(t_normal, np.int64), np.ones(t_abnormal, np.int64)])
    test_images = make(t_normal + t_abnormal, test_labels.astype(bool))
    return DatasetSpec(
        normal=normal, unlabeled=unlabeled,
        test_images=test_images, test_labels=test_labels,
        anomaly_rate=ar,
        normal_ids=[f"normal_{i:05d}" for i in range(n_normal)],
        unlabeled_ids=[f"unlabeled_{i:05d}" for i in range(m_unlabeled)],
        test_ids=[f"test_{'abnormal' if l else 'normal'}_{i:05d}"
                  for i, l in enumerate(test_labels)],
        _unlabeled_flags=flags,
    )


# -- batching -------------------------------------------------------------


def batches(pool: np.ndarray, batch_size: int, shuffle_seed: int):
    """Seeded permutation of a pool split into batches (last one may be short)."""
    n = pool.shape[0]
    if n == 0:
        raise ConfigError("cannot batch an empty pool")
    perm = np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        yield ImageBatch(pixels=pool[idx], ids=[int(i) for i in idx])


# -- file IO --------------------------------------------------------------


def _read_pgm(path: Path) -> np.ndarray:
    """Decode a binary (P5) PGM, 8- or 16-bit, scaled to [0,1]."""
    blob = path.read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestionError(f"{path}: malformed PGM header")
        fields.append(blob[start:pos])
    if fields[0] != b"P5":
        raise IngestionError(f"{path}: not a binary PGM (P5)")
    try:
        width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError:
        raise IngestionError(f"{path}: malformed PGM header") from None
    pos += 1  # single whitespace after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    count = width * height
    itemsize = np.dtype(dtype).itemsize
    if len(blob) - pos < count * itemsize:
        raise IngestionError(f"{path}: truncated pixel data")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
    return (data.reshape(height, width).astype(np.float64) / maxval).astype(np.float32)


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.mode in ("I", "I;16", "I;16B"):
                arr = np.asarray(im.convert("I"), dtype=np.float64)
                maxval = 65535.0
            else:
                arr = np.asarray(im.convert("L"), dtype=np.float64)
                maxval = 255.0
    except Exception as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    return (arr / maxval).astype(np.float32)


def resize_bilinear(img: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Corner-aligned bilinear resize to size x size (identity when already there)."""
    h, w = img.shape
    if (h, w) == (size, size):
        return img.astype(np.float32)

    def axis_coords(n_src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if n_src == 1:
            z = np.zeros(size, np.intp)
            return z, z, np.zeros(size)
        c = np.linspace(0.0, n_src - 1.0, size)
        lo = np.clip(np.floor(c).astype(np.intp), 0, n_src - 2)
        return lo, lo + 1, c - lo

    y0, y1, fy = axis_coords(h)
    x0, x1, fx = axis_coords(w)
    img = img.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return (top * (1 - fy[:, None]) + bot * fy[:, None]).astype(np.float32)


def load_image(path: Path) -> np.ndarray:
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        img = _read_pgm(path)
    elif suffix == ".png":
        img = _read_png(path)
    else:
        raise IngestionError(f"{path}: unsupported format {suffix!r}")
    return resize_bilinear(img)


def _load_dir(root: Path) -> tuple[np.ndarray, list[str]]:
    files = sorted(p for p in root.iterdir()
                   if p.is_file() and p.suffix.lower() in (".pgm", ".png"))
    if not files:
        return np.empty((0, 1, IMAGE_SIZE, IMAGE_SIZE), np.float32), []
    imgs = np.stack([load_image(p)[None] for p in files])
    return imgs, [p.name for p in files]


def ingest_training_pools(root) -> tuple[np.ndarray, np.ndarray]:
    """Load only the label-free training pools (normal/, unlabeled/).

    Used by the train path so it never opens test/ or any label source.
    """
    root = Path(root)
    if not (root / "normal").is_dir():
        raise ConfigError(f"missing directory {root / 'normal'}")
    normal, _ = _load_dir(root / "normal")
    if normal.shape[0] == 0:
        raise ConfigError(f"{root / 'normal'}: normal pool is empty")
    if (root / "unlabeled").is_dir():
        unlabeled, _ = _load_dir(root / "unlabeled")
    else:
        unlabeled = np.empty((0, 1, IMAGE_SIZE, IMAGE_SIZE), np.float32)
    return normal, unlabeled


def ingest_directory(root) -> DatasetSpec:
    """Load a dataset from root/{normal,unlabeled,test/normal,test/abnormal}."""
    root = Path(root)
    for sub in ("normal", "test/normal", "test/abnormal"):
        if not (root / sub).is_dir():
            raise ConfigError(f"missing directory {root / sub}")
    normal, normal_ids = _load_dir(root / "normal")
    if normal.shape[0] == 0:
        raise ConfigError(f"{root / 'normal'}: normal pool is empty")
    if (root / "unlabeled").is_dir():
        unlabeled, unlabeled_ids = _load_dir(root / "unlabeled")
    else:
        unlabeled, unlabeled_ids = np.empty((0, 1, IMAGE_SIZE, IMAGE_SIZE), np.float32), []
    tn, tn_ids = _load_dir(root / "test" / "normal")
    ta, ta_ids = _load_dir(root / "test" / "abnormal")
    return DatasetSpec(
        normal=normal, unlabeled=unlabeled,
        test_images=np.concatenate([tn, ta]) if tn.size + ta.size else tn,
        test_labels=np.concatenate([np.zeros(tn.shape[0], np.int64),
                                    np.ones(ta.shape[0], np.int64)]),
        normal_ids=normal_ids, unlabeled_ids=unlabeled_ids,
        test_ids=[f"normal/{n}" for n in tn_ids] + [f"abnormal/{n}" for n in ta_ids],
    )


def _write_pgm(path: Path, img: np.ndarray) -> None:
    pixels = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())


def export_dataset(spec: DatasetSpec, outdir) -> None:
    """Write a DatasetSpec to the ingestion directory layout as 8-bit PGM."""
    outdir = Path(outdir)
    groups = [
        ("normal", spec.normal, spec.normal_ids),
        ("unlabeled", spec.unlabeled, spec.unlabeled_ids),
    ]
    for sub, imgs, ids in groups:
        d = outdir / sub
        d.mkdir(parents=True, exist_ok=True)
        for i in range(imgs.shape[0]):
            name = ids[i] if i < len(ids) else f"img_{i:05d}"
            _write_pgm(d / f"{name}.pgm", imgs[i, 0])
    for label, sub in ((0, "normal"), (1, "abnormal")):
        d = outdir / "test" / sub
        d.mkdir(parents=True, exist_ok=True)
        for i in np.flatnonzero(spec.test_labels == label):
            _write_pgm(d / f"img_{i:05d}.pgm", spec.test_images[i, 0])
