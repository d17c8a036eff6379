"""Synthetic face-clip generation, image files and dataset layout.

Clips are rendered procedurally: an anti-aliased ellipse face with
eyes, nose and mouth, high-frequency skin texture, and a per-frame
similarity-transform jitter so the snapshots are unaligned. Landmark
ground truth (eye centers, nose tip, mouth corners) is transformed
with each frame and stored in normalized [0, 1] coordinates. All
frames are quantized to 8-bit values so disk round-trips are exact.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError, ShapeError, UsageError
from .vision import bicubic_resize

LANDMARK_NAMES = ("left_eye", "right_eye", "nose_tip", "left_mouth", "right_mouth")


@dataclass
class Clip:
    """One video sample: N HR frames, their LR degradations, per-frame
    normalized landmarks, and the index of the reference frame."""

    clip_id: str
    hr: np.ndarray          # (N, H, W, 3) float32, integer-valued 0..255
    lr: np.ndarray          # (N, H/8, W/8, 3) float32, integer-valued
    landmarks: np.ndarray   # (N, 5, 2) float64, normalized (x, y)
    ref_index: int
    seed: int | None = None

    @property
    def n_frames(self) -> int:
        return self.hr.shape[0]

    def validate(self):
        n = self.n_frames
        if self.hr.ndim != 4 or self.hr.shape[3] != 3:
            raise ShapeError(f"hr frames must be (N, H, W, 3), got {self.hr.shape}")
        h, w = self.hr.shape[1:3]
        if self.lr.shape != (n, h // 8, w // 8, 3):
            raise ShapeError(f"lr frames {self.lr.shape} do not match hr {self.hr.shape} at 8x")
        if self.landmarks.shape != (n, 5, 2):
            raise ShapeError(f"landmarks must be (N, 5, 2), got {self.landmarks.shape}")
        if not (0 <= self.ref_index < n):
            raise ConfigError(f"ref_index {self.ref_index} outside [0, {n})")
        if self.landmarks.min() < 0.0 or self.landmarks.max() > 1.0:
            raise ConfigError("landmarks leave the [0, 1] frame")
        if self.hr.min() < 0 or self.hr.max() > 255 or not np.array_equal(self.hr, np.round(self.hr)):
            raise ConfigError("hr frames must hold integer values in 0..255")
        regen = np.stack([degrade_quantized(f) for f in self.hr])
        if not np.array_equal(self.lr, regen):
            raise ConfigError("lr frames are not the bicubic degradation of the hr frames")


@dataclass(frozen=True)
class SynthParams:
    """Controls one procedural clip: RNG seed, pose jitter ranges and
    appearance randomization. Jitter ranges must leave room for the
    face to stay fully inside the frame (enforced by rejection)."""

    seed: int
    n_frames: int = 7
    hr_h: int = 128
    hr_w: int = 96
    translation_frac: float = 0.2
    rotation_deg: float = 20.0
    scale_min: float = 0.8
    scale_max: float = 1.2
    texture_amp: float = 0.10
    skin_rgb: tuple | None = None
    iris_rgb: tuple | None = None
    mouth_rgb: tuple | None = None

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if self.hr_h % 8 or self.hr_w % 8:
            raise ConfigError("hr extents must be divisible by 8")
        if not 0.0 <= self.translation_frac <= 0.35:
            raise ConfigError("translation_frac outside sane range [0, 0.35]")
        if not 0.0 <= self.rotation_deg <= 45.0:
            raise ConfigError("rotation_deg outside sane range [0, 45]")
        if not 0.5 <= self.scale_min <= self.scale_max <= 1.5:
            raise ConfigError("scale range must satisfy 0.5 <= min <= max <= 1.5")


def degrade(hr: np.ndarray) -> np.ndarray:
    """8x bicubic downsample with antialiasing, clamped to 0..255."""
    arr = np.asarray(hr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"degrade expects (H, W, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    if h % 8 or w % 8:
        raise UsageError(f"hr extents {h}x{w} not divisible by 8")
    return bicubic_resize(arr, h // 8, w // 8, value_range=(0.0, 255.0))


def degrade_quantized(hr: np.ndarray) -> np.ndarray:
    """degrade() rounded to the 8-bit values that reach disk; this is
    what clip LR frames store so file round-trips are exact."""
    return np.round(degrade(hr)).astype(np.float32)


# --- procedural rendering ---

def apply_similarity(points: np.ndarray, theta: float, scale: float,
                     t: np.ndarray, center: np.ndarray) -> np.ndarray:
    """p -> center + scale * R(theta) (p - center) + t, on (..., 2) xy points."""
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return center + scale * (points - center) @ rot.T + t


def _ellipse_alpha(x, y, cx, cy, rx, ry, sharp=1.0):
    rho = np.sqrt(((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2)
    d = (rho - 1.0) * min(rx, ry) * sharp
    return np.clip(0.5 - d, 0.0, 1.0)


def _draw_appearance(rng: np.random.Generator, params: SynthParams) -> dict:
    w, h = params.hr_w, params.hr_h
    skin = params.skin_rgb or tuple(rng.uniform((170, 120, 90), (235, 195, 170)))
    iris = params.iris_rgb or tuple(rng.uniform((30, 40, 60), (110, 140, 190)))
    mouth = params.mouth_rgb or tuple(rng.uniform((140, 40, 40), (205, 95, 95)))
    face_cx = w * 0.5
    face_cy = h * 0.48
    rx = w * rng.uniform(0.28, 0.33)
    ry = h * rng.uniform(0.30, 0.35)
    eye_dx = rx * rng.uniform(0.40, 0.52)
    eye_dy = ry * rng.uniform(0.18, 0.30)
    nose_len = ry * rng.uniform(0.28, 0.38)
    mouth_dy = ry * rng.uniform(0.48, 0.60)
    mouth_rx = rx * rng.uniform(0.34, 0.46)
    return {
        "bg_top": rng.uniform(20, 90, size=3),
        "bg_bot": rng.uniform(90, 170, size=3),
        "skin": np.array(skin, dtype=np.float64),
        "iris": np.array(iris, dtype=np.float64),
        "mouth": np.array(mouth, dtype=np.float64),
        "brow": rng.uniform((40, 25, 15), (90, 60, 45)),
        "face_c": np.array([face_cx, face_cy]),
        "face_r": np.array([rx, ry]),
        "eye_dx": eye_dx,
        "eye_dy": eye_dy,
        "eye_r": np.array([rx * rng.uniform(0.16, 0.20), ry * rng.uniform(0.075, 0.095)]),
        "iris_r": rx * rng.uniform(0.085, 0.105),
        "pupil_r": rx * rng.uniform(0.042, 0.055),
        "nose_len": nose_len,
        "nose_rx": rx * rng.uniform(0.09, 0.12),
        "mouth_dy": mouth_dy,
        "mouth_r": np.array([mouth_rx, ry * rng.uniform(0.075, 0.105)]),
        "tex_freq": rng.uniform(0.12, 0.20, size=2),
        "tex_phase": rng.uniform(0.0, 2.0 * np.pi, size=2),
        "freckles": rng.uniform((-0.5, 0.1), (0.5, 0.6), size=(8, 2)),
    }


def _canonical_landmarks(a: dict) -> np.ndarray:
    cx, cy = a["face_c"]
    return np.array([
        [cx - a["eye_dx"], cy - a["eye_dy"]],                 # left eye center
        [cx + a["eye_dx"], cy - a["eye_dy"]],                 # right eye center
        [cx, cy + a["nose_len"]],                             # nose tip
        [cx - a["mouth_r"][0], cy + a["mouth_dy"]],           # left mouth corner
        [cx + a["mouth_r"][0], cy + a["mouth_dy"]],           # right mouth corner
    ])


def _render_frame(a: dict, params: SynthParams, theta: float, scale: float,
                  t: np.ndarray) -> np.ndarray:
    h, w = params.hr_h, params.hr_w
    center = np.array([w / 2.0, h / 2.0])
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    # Inverse-map pixel centers into the canonical face frame.
    px = xx - center[0] - t[0]
    py = yy - center[1] - t[1]
    c, s = np.cos(-theta), np.sin(-theta)
    x = (c * px - s * py) / scale + center[0]
    y = (s * px + c * py) / scale + center[1]

    grad = (yy / h)[:, :, None]
    img = a["bg_top"] * (1 - grad) + a["bg_bot"] * grad

    def paint(alpha, color):
        nonlocal img
        img = img * (1.0 - alpha[:, :, None]) + np.asarray(color) * alpha[:, :, None]

    cx, cy = a["face_c"]
    rx, ry = a["face_r"]
    # Head with radial shading and high-frequency texture (detail an 8x
    # bicubic downsample cannot preserve, so reconstruction has signal).
    rho2 = ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2
    shade = 1.0 - 0.28 * np.clip(rho2, 0.0, 1.0)
    tex = 1.0 + params.texture_amp * np.sin(2 * np.pi * a["tex_freq"][0] * x + a["tex_phase"][0]) \
        * np.sin(2 * np.pi * a["tex_freq"][1] * y + a["tex_phase"][1])
    skin_map = a["skin"][None, None, :] * (shade * tex)[:, :, None]
    alpha_head = _ellipse_alpha(x, y, cx, cy, rx, ry)
    img = img * (1.0 - alpha_head[:, :, None]) + skin_map * alpha_head[:, :, None]

    for fx, fy in a["freckles"]:
        paint(_ellipse_alpha(x, y, cx + fx * rx, cy + fy * ry, 1.3, 1.3), a["skin"] * 0.72)

    ex, ey = a["eye_dx"], a["eye_dy"]
    for side in (-1, 1):
        ecx, ecy = cx + side * ex, cy - ey
        paint(_ellipse_alpha(x, y, ecx, ecy - a["eye_r"][1] * 2.6,
                             a["eye_r"][0] * 1.15, a["eye_r"][1] * 0.55), a["brow"])
        paint(_ellipse_alpha(x, y, ecx, ecy, a["eye_r"][0], a["eye_r"][1]), (245, 245, 245))
        paint(_ellipse_alpha(x, y, ecx, ecy, a["iris_r"], a["iris_r"]), a["iris"])
        paint(_ellipse_alpha(x, y, ecx, ecy, a["pupil_r"], a["pupil_r"]), (12, 12, 14))

    nose_cy = cy + a["nose_len"] * 0.55
    paint(_ellipse_alpha(x, y, cx, nose_cy, a["nose_rx"], a["nose_len"] * 0.5),
          a["skin"] * 0.84)
    paint(_ellipse_alpha(x, y, cx, cy + a["nose_len"], a["nose_rx"] * 0.85,
                         a["nose_rx"] * 0.5), a["skin"] * 0.55)

    mcy = cy + a["mouth_dy"]
    paint(_ellipse_alpha(x, y, cx, mcy, a["mouth_r"][0], a["mouth_r"][1]), a["mouth"])
    paint(_ellipse_alpha(x, y, cx, mcy, a["mouth_r"][0] * 0.96, a["mouth_r"][1] * 0.22),
          a["mouth"] * 0.55)

    return np.clip(img, 0.0, 255.0)


def _face_fits(a: dict, params: SynthParams, theta: float, scale: float,
               t: np.ndarray) -> bool:
    h, w = params.hr_h, params.hr_w
    center = np.array([w / 2.0, h / 2.0])
    fc = apply_similarity(a["face_c"], theta, scale, t, center)
    rx, ry = a["face_r"] * scale
    hx = abs(np.cos(theta)) * rx + abs(np.sin(theta)) * ry
    hy = abs(np.sin(theta)) * rx + abs(np.cos(theta)) * ry
    if not (fc[0] - hx >= 1 and fc[0] + hx <= w - 1 and fc[1] - hy >= 1 and fc[1] + hy <= h - 1):
        return False
    lms = apply_similarity(_canonical_landmarks(a), theta, scale, t, center)
    norm = lms / np.array([w, h])
    return bool(np.all(norm > 0.03) and np.all(norm < 0.97))


def render_clip(params: SynthParams) -> tuple[np.ndarray, np.ndarray, list[tuple]]:
    """Render all frames; returns (hr uint8-valued float32 stack,
    normalized landmarks (N, 5, 2), per-frame (theta, scale, t))."""
    rng = np.random.default_rng(params.seed)
    a = _draw_appearance(rng, params)
    h, w = params.hr_h, params.hr_w
    center = np.array([w / 2.0, h / 2.0])
    frames, lms, transforms = [], [], []
    max_t = np.array([params.translation_frac * w, params.translation_frac * h])
    for _ in range(params.n_frames):
        for _attempt in range(100):
            theta = np.deg2rad(rng.uniform(-params.rotation_deg, params.rotation_deg))
            scale = rng.uniform(params.scale_min, params.scale_max)
            t = rng.uniform(-max_t, max_t)
            if _face_fits(a, params, theta, scale, t):
                break
        else:
            raise ConfigError(
                f"jitter ranges of clip seed {params.seed} keep pushing the face out of frame"
            )
        frames.append(np.round(_render_frame(a, params, theta, scale, t)).astype(np.float32))
        pts = apply_similarity(_canonical_landmarks(a), theta, scale, t, center)
        lms.append(pts / np.array([w, h]))
        transforms.append((theta, scale, t))
    return np.stack(frames), np.stack(lms), transforms


def synth_clip(params: SynthParams, clip_id: str | None = None) -> Clip:
    """Deterministically synthesize one clip from its parameters."""
    hr, lms, _ = render_clip(params)
    lr = np.stack([degrade_quantized(f) for f in hr])
    clip = Clip(
        clip_id=clip_id or f"clip_{params.seed:012d}",
        hr=hr, lr=lr, landmarks=lms,
        ref_index=params.n_frames // 2,
        seed=params.seed,
    )
    clip.validate()
    return clip


# --- image files ---

def _to_uint8(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.uint8:
        return arr
    return np.clip(np.round(np.asarray(arr, dtype=np.float64)), 0, 255).astype(np.uint8)


def save_image(path: str, arr: np.ndarray):
    """Write an RGB image as binary PPM (P6) or PNG, by extension."""
    a = _to_uint8(arr)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got {a.shape}")
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        h, w = a.shape[:2]
        with open(path, "wb") as f:
            f.write(f"P6\n{w} {h}\n255\n".encode())
            f.write(a.tobytes())
    elif ext == ".png":
        Image.fromarray(a, mode="RGB").save(path)
    else:
        raise UsageError(f"unsupported image extension {ext!r} (use .ppm or .png)")


def _parse_ppm(data: bytes, path: str) -> np.ndarray:
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            if data[pos:pos + 1].isspace():
                pos += 1
            elif data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos] != 0x0A:
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: unexpected end of header", offset=start)
        return data[start:pos]

    if token() != b"P6":
        raise FormatError(f"{path}: not a binary P6 PPM", offset=0)
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as e:
        raise FormatError(f"{path}: bad header field: {e}", offset=pos) from e
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}", offset=pos)
    pos += 1  # single whitespace byte after maxval
    need = w * h * 3
    raw = data[pos:pos + need]
    if len(raw) != need:
        raise FormatError(f"{path}: truncated pixel data, expected {need} bytes "
                          f"got {len(raw)}", offset=pos + len(raw))
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy()


def load_image(path: str) -> np.ndarray:
    """Read a PPM or PNG image as (H, W, 3) uint8."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        with open(path, "rb") as f:
            return _parse_ppm(f.read(), path)
    if ext == ".png":
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    raise UsageError(f"unsupported image extension {ext!r} (use .ppm or .png)")


# --- dataset directory layout ---

def save_clip(clip: Clip, clip_dir: str):
    os.makedirs(clip_dir, exist_ok=True)
    for n in range(clip.n_frames):
        save_image(os.path.join(clip_dir, f"hr_{n}.ppm"), clip.hr[n])
        save_image(os.path.join(clip_dir, f"lr_{n}.ppm"), clip.lr[n])
    with open(os.path.join(clip_dir, "landmarks.txt"), "w") as f:
        for j in range(5):
            cols = [f"{clip.landmarks[n, j, 0]!r},{clip.landmarks[n, j, 1]!r}"
                    for n in range(clip.n_frames)]
            f.write(" ".join(cols) + "\n")


def load_clip(clip_dir: str, clip_id: str, seed: int | None, ref_index: int) -> Clip:
    hr, lr = [], []
    n = 0
    while os.path.exists(os.path.join(clip_dir, f"hr_{n}.ppm")):
        hr.append(load_image(os.path.join(clip_dir, f"hr_{n}.ppm")).astype(np.float32))
        lr.append(load_image(os.path.join(clip_dir, f"lr_{n}.ppm")).astype(np.float32))
        n += 1
    if n == 0:
        raise FormatError(f"{clip_dir}: no hr_*.ppm frames found")
    lm_path = os.path.join(clip_dir, "landmarks.txt")
    with open(lm_path) as f:
        rows = [line.split() for line in f.read().strip().splitlines()]
    if len(rows) != 5 or any(len(r) != n for r in rows):
        raise FormatError(f"{lm_path}: expected 5 lines x {n} columns")
    lms = np.zeros((n, 5, 2))
    for j, row in enumerate(rows):
        for i, cell in enumerate(row):
            xs, ys = cell.split(",")
            lms[i, j] = (float(xs), float(ys))
    return Clip(clip_id=clip_id, hr=np.stack(hr), lr=np.stack(lr),
                landmarks=lms, ref_index=ref_index, seed=seed)


def save_dataset(clips: list[Clip], root: str):
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "manifest.txt"), "w") as f:
        for clip in clips:
            f.write(f"{clip.clip_id},{clip.seed if clip.seed is not None else ''},"
                    f"{clip.ref_index}\n")
    for clip in clips:
        save_clip(clip, os.path.join(root, "clips", clip.clip_id))


def load_dataset(root: str) -> list[Clip]:
    manifest = os.path.join(root, "manifest.txt")
    if not os.path.exists(manifest):
        raise FormatError(f"{manifest}: manifest not found")
    clips = []
    with open(manifest) as f:
        for line in f.read().strip().splitlines():
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise FormatError(f"{manifest}: bad manifest line {line!r}")
            clip_id, seed_s, ref_s = parts
            seed = int(seed_s) if seed_s else None
            clips.append(load_clip(os.path.join(root, "clips", clip_id),
                                   clip_id, seed, int(ref_s)))
    return clips
