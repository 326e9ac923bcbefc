"""Auxiliary-view synthesis: keypoint filtering, fractional crops, strip composition.

Images are plain ``uint8`` numpy arrays of shape ``(H, W)`` or ``(H, W, C)``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path

import numpy as np

from fusionfer._io import atomic_write_text

log = logging.getLogger(__name__)

N_LANDMARKS = 68
TARGET_SIZE = (224, 224)

# 68-point landmark layout, end-exclusive ranges.
EYEBROW_IDX = range(17, 27)
NOSE_IDX = range(27, 36)
EYE_IDX = range(36, 48)
MOUTH_IDX = range(48, 68)
REQUIRED_IDX = tuple(i for r in (EYEBROW_IDX, NOSE_IDX, EYE_IDX, MOUTH_IDX) for i in r)


class EmptyCrop(ValueError):
    pass


class RegionName(str, Enum):
    EYE = "Eye"
    MOUTH = "Mouth"
    NOSE = "Nose"


def _floor_frac(frac: float, n: int) -> int:
    return math.floor(Fraction(repr(frac)) * n)


@dataclass(frozen=True)
class RegionSpec:
    name: RegionName
    w_lo: float
    w_hi: float
    h_lo: float
    h_hi: float

    def __post_init__(self):
        object.__setattr__(self, "name", RegionName(self.name))
        if not (0.0 <= self.w_lo < self.w_hi <= 1.0 and 0.0 <= self.h_lo < self.h_hi <= 1.0):
            raise ValueError(f"invalid fractional rectangle for {self.name.value}: {self}")

    def bounds(self, height: int, width: int) -> tuple[int, int, int, int]:
        """Pixel bounds ``(row0, row1, col0, col1)``, floor on both ends, end-exclusive.

        Fractions are taken at their decimal value, so ``0.35 * 100`` floors to 35
        rather than to whatever the binary product rounds to.
        """
        return (
            _floor_frac(self.h_lo, height),
            _floor_frac(self.h_hi, height),
            _floor_frac(self.w_lo, width),
            _floor_frac(self.w_hi, width),
        )


EYE = RegionSpec(RegionName.EYE, 0.2, 0.8, 0.35, 0.55)
MOUTH = RegionSpec(RegionName.MOUTH, 0.2, 0.8, 0.7, 0.9)
NOSE = RegionSpec(RegionName.NOSE, 0.4, 0.6, 0.2, 0.8)
REGIONS = {r.name.value: r for r in (EYE, MOUTH, NOSE)}


@dataclass(frozen=True)
class ViewComposition:
    regions: tuple[RegionSpec, ...]
    target_size: tuple[int, int] = TARGET_SIZE

    def __post_init__(self):
        regions = tuple(self.regions)
        object.__setattr__(self, "regions", regions)
        if not regions:
            raise ValueError("composition needs at least one region")
        names = [r.name for r in regions]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate region names in composition: {[n.value for n in names]}")

    @classmethod
    def from_names(cls, names, target_size=TARGET_SIZE) -> "ViewComposition":
        unknown = [n for n in names if n not in REGIONS]
        if unknown:
            raise ValueError(f"unknown region(s) {unknown}; expected some of {sorted(REGIONS)}")
        return cls(tuple(REGIONS[n] for n in names), target_size)


EYE_MOUTH = ViewComposition((EYE, MOUTH))


@dataclass
class KeypointSet:
    """68 landmark positions for an image of size ``height`` x ``width``."""

    points: np.ndarray
    present: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.present = np.asarray(self.present, dtype=bool).reshape(-1)
        if self.points.shape[0] != N_LANDMARKS or self.present.shape[0] != N_LANDMARKS:
            raise ValueError(f"expected {N_LANDMARKS} landmarks, got {self.points.shape[0]}")

    def in_bounds(self) -> np.ndarray:
        x, y = self.points[:, 0], self.points[:, 1]
        return (x >= 0) & (x < self.width) & (y >= 0) & (y < self.height)


def has_sufficient_keypoints(kps: KeypointSet) -> bool:
    """True iff every eyebrow, nose, eye and mouth landmark is present and inside the image.

    Jaw points (0-16) are not consulted.
    """
    ok = kps.present & kps.in_bounds()
    return bool(ok[list(REQUIRED_IDX)].all())


def crop_region(img: np.ndarray, spec: RegionSpec) -> np.ndarray:
    h, w = img.shape[:2]
    r0, r1, c0, c1 = spec.bounds(h, w)
    if r1 <= r0 or c1 <= c0:
        raise EmptyCrop(f"{spec.name.value} crop of a {h}x{w} image is empty")
    return img[r0:r1, c0:c1].copy()


def _round_u8(x: np.ndarray) -> np.ndarray:
    # half away from zero; values are non-negative
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def _axis_coords(n_in: int, n_out: int):
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling (first/last pixels map onto each other)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    src = img.astype(np.float64)
    y0, y1, ty = _axis_coords(h, out_h)
    x0, x1, tx = _axis_coords(w, out_w)
    extra = (1,) * (img.ndim - 2)
    ty = ty.reshape((-1, 1) + extra)
    tx = tx.reshape((1, -1) + extra)
    top = src[y0][:, x0] * (1 - tx) + src[y0][:, x1] * tx
    bot = src[y1][:, x0] * (1 - tx) + src[y1][:, x1] * tx
    return _round_u8(top * (1 - ty) + bot * ty)


def _strip_heights(natural: list[float], total: int) -> list[int]:
    # largest-remainder split of `total` rows, proportional to natural heights, each >= 1
    s = sum(natural)
    exact = [total * n / s for n in natural]
    out = [max(1, math.floor(e)) for e in exact]
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - math.floor(exact[i])), i))
    i = 0
    while sum(out) < total:
        out[order[i % len(order)]] += 1
        i += 1
    while sum(out) > total:
        j = max(range(len(out)), key=lambda k: (out[k], -k))
        out[j] -= 1
    return out


def compose_views(img: np.ndarray, comp: ViewComposition = EYE_MOUTH) -> np.ndarray:
    """Crop every region of ``comp`` and stack the strips top to bottom at the target size.

    Each crop is scaled to the target width with its aspect ratio kept; the strip
    heights are then rescaled together so they fill the target height exactly.
    Each strip is resampled once, straight from its crop.
    """
    out_h, out_w = comp.target_size
    crops = [crop_region(img, r) for r in comp.regions]
    natural = [c.shape[0] * out_w / c.shape[1] for c in crops]
    heights = _strip_heights(natural, out_h)
    strips = [resize_bilinear(c, sh, out_w) for c, sh in zip(crops, heights)]
    return np.concatenate(strips, axis=0)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class KeypointRecord:
    sample_id: str
    image: Path
    label: int
    keypoints: list = field(repr=False)
    present: list = field(repr=False)


def read_keypoint_manifest(path) -> list[KeypointRecord]:
    """Read a JSON-lines keypoint manifest.

    One object per line with keys ``sample_id``, ``image`` (relative paths resolve
    against the manifest directory), ``label``, ``points`` (68 ``[x, y]`` pairs)
    and optionally ``present`` (68 booleans, all true when omitted).
    """
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                image = Path(obj["image"])
                if not image.is_absolute():
                    image = path.parent / image
                points = obj["points"]
                present = obj.get("present", [True] * len(points))
                if len(points) != N_LANDMARKS or len(present) != N_LANDMARKS:
                    raise ValueError(f"expected {N_LANDMARKS} points")
                records.append(
                    KeypointRecord(str(obj["sample_id"]), image, int(obj["label"]), points, present)
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
    return records


def load_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im.load()
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.uint8).copy()


def save_image(path, img: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(img).save(path)


@dataclass
class SynthesisReport:
    written: list = field(default_factory=list)
    filtered: list = field(default_factory=list)  # (sample_id, reason)


def synthesize_manifest(manifest, out_dir, comp: ViewComposition = EYE_MOUTH) -> SynthesisReport:
    """Build auxiliary views for every usable image listed in ``manifest``.

    Writes ``<sample_id>_aux.png`` files plus ``pairs.csv`` into ``out_dir``.
    Undecodable images and faces failing the keypoint filter are skipped and
    reported rather than raised.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = SynthesisReport()
    for rec in read_keypoint_manifest(manifest):
        try:
            img = load_image(rec.image)
        except Exception as exc:  # PIL raises a zoo of types for bad files
            reason = f"decode failure: {exc}"
            log.info("dropping %s: %s", rec.sample_id, reason)
            report.filtered.append((rec.sample_id, reason))
            continue
        kps = KeypointSet(rec.keypoints, rec.present, img.shape[0], img.shape[1])
        if not has_sufficient_keypoints(kps):
            reason = "insufficient keypoints"
            log.info("dropping %s: %s", rec.sample_id, reason)
            report.filtered.append((rec.sample_id, reason))
            continue
        try:
            aux = compose_views(img, comp)
        except EmptyCrop as exc:
            report.filtered.append((rec.sample_id, str(exc)))
            continue
        aux_path = out_dir / f"{rec.sample_id}_aux.png"
        save_image(aux_path, aux)
        report.written.append((rec.sample_id, rec.image, aux_path, rec.label))

    lines = ["sample_id,main_path,aux_path,label"]
    lines += [f"{sid},{main},{aux},{label}" for sid, main, aux, label in report.written]
    atomic_write_text(out_dir / "pairs.csv", "\n".join(lines) + "\n")
    return report
