"""Gray-code pattern generation and decoding.

Sequence layout (part of the on-disk contract)::

    white, black                      (if include_references)
    col bit 0 (MSB), col bit 0 inv,   (inverse only if include_inverses)
    ...
    col bit col_bits-1 (LSB), inv,
    row bit 0 (MSB), inv, ...

Projector column ``x`` is lit in column plane ``k`` iff bit ``k`` counted
from the MSB of ``binary_to_gray(x)`` is set.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _accel
from .pgm import read_pgm, to_luma, write_pgm

DEFAULT_CONTRAST_THRESHOLD = 0.05
# white - black below this (8-bit levels) means the projector does not reach the pixel
DEFAULT_MIN_DYNAMIC_RANGE = 16.0
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

COLUMN = "column"
ROW = "row"
REFERENCE = "reference"
_AXIS_TOKEN = {COLUMN: "col", ROW: "row", REFERENCE: "ref"}


def binary_to_gray(b):
    """Reflected binary code of ``b``. Works on ints and integer arrays."""
    return b ^ (b >> 1)


def gray_to_binary(g):
    """Inverse of :func:`binary_to_gray`."""
    if isinstance(g, np.ndarray):
        b = g.copy()
        shift = 1
        while shift < 64:
            b ^= b >> shift
            shift <<= 1
        return b
    g = int(g)
    if g < 0:
        raise ValueError("gray code must be nonnegative")
    b = g
    shift = 1
    while shift < 64:
        b ^= b >> shift
        shift <<= 1
    return b


def bits_for(n):
    """ceil(log2(n)) for n >= 2."""
    return (int(n) - 1).bit_length()


@dataclass(frozen=True)
class PatternSpec:
    projector_width: int = 1024
    projector_height: int = 768
    include_inverses: bool = True
    include_references: bool = True

    def __post_init__(self):
        if int(self.projector_width) < 2 or int(self.projector_height) < 2:
            raise ValueError(
                f"projector resolution must be at least 2x2, got "
                f"{self.projector_width}x{self.projector_height}")

    @property
    def col_bits(self):
        return bits_for(self.projector_width)

    @property
    def row_bits(self):
        return bits_for(self.projector_height)

    @property
    def pattern_count(self):
        per_plane = 2 if self.include_inverses else 1
        return (self.col_bits + self.row_bits) * per_plane + (2 if self.include_references else 0)

    def to_dict(self):
        return {
            "projector_width": int(self.projector_width),
            "projector_height": int(self.projector_height),
            "col_bits": self.col_bits,
            "row_bits": self.row_bits,
            "include_inverses": bool(self.include_inverses),
            "include_references": bool(self.include_references),
        }

    @classmethod
    def from_dict(cls, d):
        spec = cls(int(d["projector_width"]), int(d["projector_height"]),
                   bool(d.get("include_inverses", True)), bool(d.get("include_references", True)))
        for key in ("col_bits", "row_bits"):
            if key in d and int(d[key]) != getattr(spec, key):
                raise ValueError(f"manifest {key}={d[key]} inconsistent with resolution")
        return spec


@dataclass(frozen=True)
class PatternImage:
    """One projector frame. ``bit_plane`` counts from the MSB; None for references."""
    index: int
    axis: str
    bit_plane: object
    inverted: bool
    width: int
    height: int

    @property
    def filename(self):
        tag = "ref" if self.axis == REFERENCE else f"{_AXIS_TOKEN[self.axis]}{self.bit_plane}"
        return f"pat_{self.index:03d}_{tag}{'_inv' if self.inverted else ''}.pgm"

    def column_profile(self):
        """Lit mask (bool) along the varying axis: width for column, height for row."""
        if self.axis == REFERENCE:
            return None
        n = self.width if self.axis == COLUMN else self.height
        nbits = bits_for(n)
        codes = binary_to_gray(np.arange(n, dtype=np.int64))
        lit = ((codes >> (nbits - 1 - self.bit_plane)) & 1).astype(bool)
        return ~lit if self.inverted else lit

    def lit(self, proj_x, proj_y):
        """Whether projector pixel(s) (proj_x, proj_y) are lit in this frame."""
        if self.axis == REFERENCE:
            out = np.ones(np.broadcast(proj_x, proj_y).shape, dtype=bool)
            return ~out if self.inverted else out
        coord, n = (proj_x, self.width) if self.axis == COLUMN else (proj_y, self.height)
        nbits = bits_for(n)
        bit = (binary_to_gray(np.asarray(coord, dtype=np.int64)) >> (nbits - 1 - self.bit_plane)) & 1
        bit = bit.astype(bool)
        return ~bit if self.inverted else bit

    @property
    def pixels(self):
        """Binary intensity grid (0/255 uint8, height x width)."""
        if self.axis == REFERENCE:
            return np.full((self.height, self.width), 0 if self.inverted else 255, dtype=np.uint8)
        prof = self.column_profile().astype(np.uint8) * 255
        if self.axis == COLUMN:
            return np.broadcast_to(prof[None, :], (self.height, self.width)).copy()
        return np.broadcast_to(prof[:, None], (self.height, self.width)).copy()

    def to_dict(self):
        return {"index": self.index, "axis": self.axis, "bit_plane": self.bit_plane,
                "inverted": self.inverted, "file": self.filename}


@dataclass
class PatternSequence:
    spec: PatternSpec
    images: list = field(default_factory=list)

    def __len__(self):
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def __getitem__(self, i):
        return self.images[i]

    def manifest(self):
        return {"version": MANIFEST_VERSION, **self.spec.to_dict(),
                "patterns": [im.to_dict() for im in self.images]}

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for im in self.images:
            write_pgm(out / im.filename, im.pixels)
        write_manifest(out / MANIFEST_NAME, self.manifest())
        return out / MANIFEST_NAME


def generate_patterns(spec):
    """Build the ordered pattern sequence for ``spec``."""
    if not isinstance(spec, PatternSpec):
        spec = PatternSpec(**spec)
    w, h = spec.projector_width, spec.projector_height
    images = []

    def add(axis, plane, inverted):
        images.append(PatternImage(len(images), axis, plane, inverted, w, h))

    if spec.include_references:
        add(REFERENCE, None, False)
        add(REFERENCE, None, True)
    for axis, nbits in ((COLUMN, spec.col_bits), (ROW, spec.row_bits)):
        for k in range(nbits):
            add(axis, k, False)
            if spec.include_inverses:
                add(axis, k, True)
    return PatternSequence(spec, images)


def write_manifest(path, manifest):
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path):
    """Load a manifest and check it against the canonical ordering."""
    data = json.loads(Path(path).read_text())
    if int(data.get("version", 0)) != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {data.get('version')!r}")
    spec = PatternSpec.from_dict(data)
    expected = generate_patterns(spec).manifest()["patterns"]
    got = data.get("patterns", [])
    if [(p["axis"], p["bit_plane"], p["inverted"]) for p in got] != \
            [(p["axis"], p["bit_plane"], p["inverted"]) for p in expected]:
        raise ValueError("manifest pattern order does not match the canonical sequence")
    return spec, data


def load_stack(capture_dir):
    """Read ``manifest.json`` plus the PGM frames it lists. Returns (spec, stack)."""
    capture_dir = Path(capture_dir)
    spec, data = read_manifest(capture_dir / MANIFEST_NAME)
    frames = [read_pgm(capture_dir / p["file"]) for p in data["patterns"]]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"captured frames differ in size: {sorted(shapes)}")
    return spec, np.stack(frames)


@dataclass
class CorrespondenceMap:
    """Per camera pixel: decoded projector (column, row), -1 if undecoded, and confidence."""
    camera_id: str
    proj_x: np.ndarray
    proj_y: np.ndarray
    confidence: np.ndarray
    projector_id: str = None

    @property
    def shape(self):
        return self.proj_x.shape

    @property
    def decoded(self):
        return self.proj_x >= 0

    def coverage(self):
        return float(self.decoded.mean()) if self.proj_x.size else 0.0

    def to_dict(self):
        h, w = self.shape
        return {
            "camera_id": self.camera_id,
            "projector_id": self.projector_id,
            "width": int(w),
            "height": int(h),
            "proj_x": self.proj_x.ravel().astype(int).tolist(),
            "proj_y": self.proj_y.ravel().astype(int).tolist(),
            "confidence": [round(float(c), 6) for c in self.confidence.ravel()],
        }

    @classmethod
    def from_dict(cls, d):
        shape = (int(d["height"]), int(d["width"]))
        arrs = [np.asarray(d[k]) for k in ("proj_x", "proj_y", "confidence")]
        for a in arrs:
            if a.size != shape[0] * shape[1]:
                raise ValueError("correspondence array length does not match width*height")
        return cls(d["camera_id"], arrs[0].astype(np.int32).reshape(shape),
                   arrs[1].astype(np.int32).reshape(shape),
                   arrs[2].astype(np.float64).reshape(shape), d.get("projector_id"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@_accel.njit
def _gray_decode_numba(stack, col_bits, row_bits, has_inv, has_ref, width, height, threshold,
                       min_dyn, px, py, conf):
    n, h, w = stack.shape
    first = 2 if has_ref else 0
    step = 2 if has_inv else 1
    dyn = np.empty(w)
    mid = np.empty(w)
    codes = np.empty((2, w), np.int64)
    # row-blocked: sweep each plane along a row so memory is read in streams
    for i in range(h):
        for j in range(w):
            if has_ref:
                white = np.float64(stack[0, i, j])
                black = np.float64(stack[1, i, j])
                dyn[j] = white - black
                mid[j] = 0.5 * (white + black)
            else:
                dyn[j] = 255.0
                mid[j] = 127.5
            conf[i, j] = 1.0
        k = first
        for axis in range(2):
            nbits = col_bits if axis == 0 else row_bits
            for j in range(w):
                codes[axis, j] = 0
            for b in range(nbits):
                for j in range(w):
                    a = np.float64(stack[k, i, j])
                    ref = np.float64(stack[k + 1, i, j]) if has_inv else mid[j]
                    if dyn[j] > 0.0:
                        c = abs(a - ref) / dyn[j]
                        if c > 1.0:
                            c = 1.0
                    else:
                        c = 0.0
                    if c < conf[i, j]:
                        conf[i, j] = c
                    codes[axis, j] = (codes[axis, j] << 1) | (1 if a > ref else 0)
                k += step
        for j in range(w):
            for axis in range(2):
                g = codes[axis, j]
                s = 1
                while s < 64:
                    g ^= g >> s
                    s <<= 1
                codes[axis, j] = g
            d = dyn[j]
            if d <= 0.0 or d < min_dyn or conf[i, j] < threshold or codes[0, j] >= width \
                    or codes[1, j] >= height:
                px[i, j] = -1
                py[i, j] = -1
            else:
                px[i, j] = codes[0, j]
                py[i, j] = codes[1, j]


def _decode_numba(stack, spec, threshold, min_dyn):
    _, h, w = stack.shape
    px = np.empty((h, w), np.int32)
    py = np.empty((h, w), np.int32)
    conf = np.empty((h, w), np.float64)
    _gray_decode_numba(stack, spec.col_bits, spec.row_bits, spec.include_inverses,
                       spec.include_references, spec.projector_width, spec.projector_height,
                       float(threshold), float(min_dyn), px, py, conf)
    return px, py, conf


def _decode_numpy(stack, spec, threshold, min_dyn):
    _, h, w = stack.shape
    if spec.include_references:
        white = stack[0].astype(np.float64)
        black = stack[1].astype(np.float64)
        dyn = white - black
        mid = 0.5 * (white + black)
    else:
        dyn = np.full((h, w), 255.0)
        mid = np.full((h, w), 127.5)
    safe = np.where(dyn > 0, dyn, 1.0)
    conf = np.ones((h, w))
    k = 2 if spec.include_references else 0
    step = 2 if spec.include_inverses else 1
    codes = []
    for nbits in (spec.col_bits, spec.row_bits):
        g = np.zeros((h, w), np.int64)
        for _ in range(nbits):
            a = stack[k].astype(np.float64)
            ref = stack[k + 1].astype(np.float64) if spec.include_inverses else mid
            c = np.where(dyn > 0, np.minimum(np.abs(a - ref) / safe, 1.0), 0.0)
            np.minimum(conf, c, out=conf)
            g = (g << 1) | (a > ref)
            k += step
        codes.append(gray_to_binary(g))
    bad = (dyn <= 0) | (dyn < min_dyn) | (conf < threshold) | (codes[0] >= spec.projector_width) \
        | (codes[1] >= spec.projector_height)
    px = np.where(bad, -1, codes[0]).astype(np.int32)
    py = np.where(bad, -1, codes[1]).astype(np.int32)
    return px, py, conf


def decode_stack(images, spec, contrast_threshold=DEFAULT_CONTRAST_THRESHOLD, camera_id="cam0",
                 projector_id=None, min_dynamic_range=DEFAULT_MIN_DYNAMIC_RANGE, use_numba=None):
    """Decode a captured stack (ordered as ``generate_patterns(spec)``).

    A bit is 1 where the pattern frame is brighter than its inverse. Bit
    confidence is ``|I_p - I_inv| / (I_white - I_black)`` clamped to [0, 1];
    a pixel keeps the minimum over its bits and is undecoded (-1) when that
    falls below ``contrast_threshold``, when white - black is under
    ``min_dynamic_range`` levels (or not positive), or when the code lands
    outside the projector. ``min_dynamic_range`` only applies with references.
    """
    if not isinstance(spec, PatternSpec):
        spec = PatternSpec(**spec)
    if isinstance(images, np.ndarray):
        stack = images
    else:
        frames = [np.asarray(im) for im in images]
        if len({f.shape for f in frames}) > 1:
            raise ValueError("captured images have differing dimensions")
        stack = np.stack(frames) if frames else np.empty((0, 0, 0), np.uint8)
    if stack.ndim == 4 and stack.shape[-1] == 3:
        stack = to_luma(stack)
    if stack.ndim != 3:
        raise ValueError(f"expected an (N, H, W) stack, got shape {stack.shape}")
    if stack.shape[0] != spec.pattern_count:
        raise ValueError(f"stack has {stack.shape[0]} frames, pattern spec needs {spec.pattern_count}")
    stack = np.ascontiguousarray(stack, dtype=np.uint8)
    impl = _accel.pick(_decode_numba, _decode_numpy, use_numba)
    min_dyn = min_dynamic_range if spec.include_references else 0.0
    px, py, conf = impl(stack, spec, contrast_threshold, min_dyn)
    return CorrespondenceMap(camera_id, px, py, conf, projector_id)
