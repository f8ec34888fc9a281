"""Deterministic procedural face-sprite renderer.

Renders a 64x64 RGB sprite from an attribute vector. Each attribute
controls one localized feature; the style seed only perturbs nuisance
factors (whole-sprite jitter of at most 2 px and background tint). Pixels
are produced on the uint8 grid and mapped to [-1, 1] so that PNG round
trips are lossless.
"""

import numpy as np

from .attributes import AttributeVector, check_constraints

IMAGE_SIZE = 64
JITTER = 2  # max |offset| in pixels from the style seed

# Base geometry (before jitter), center of the face.
CX, CY = 32, 33

SKIN_LIGHT = (231, 180, 143)
SKIN_DARK = (124, 82, 54)
HAIR_BLACK = (25, 20, 20)
HAIR_BLOND = (222, 188, 102)
HAIR_BROWN = (110, 72, 40)
EYE_WHITE = (245, 245, 245)
PUPIL = (30, 25, 25)
BROW = (40, 30, 25)
GLASSES = (50, 50, 60)
MOUTH_PLAIN = (150, 90, 80)
MOUTH_LIPSTICK = (202, 30, 60)
NOSE_SHADE = 0.82  # multiplier on skin color
BEARD_SHADE = 0.72


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def attribute_regions():
    """Bounding boxes (y0, y1, x0, x1), exclusive upper bounds, containing
    every pixel an attribute toggle can change, for any style seed."""
    j = JITTER

    def box(y0, y1, x0, x1):
        return (max(0, y0 - j), min(IMAGE_SIZE, y1 + j),
                max(0, x0 - j), min(IMAGE_SIZE, x1 + j))

    face = box(CY - 22, CY + 22, CX - 18, CX + 18)
    hair = box(CY - 26, CY - 2, CX - 20, CX + 20)
    brows = box(CY - 12, CY - 6, CX - 13, CX + 13)
    eyes_glasses = box(CY - 12, CY + 1, CX - 14, CX + 14)
    nose = box(CY - 1, CY + 8, CX - 6, CX + 6)
    mouth = box(CY + 8, CY + 16, CX - 9, CX + 9)
    lower_face = box(CY + 2, CY + 22, CX - 18, CX + 18)
    return {
        "face_oval": face,
        "skin_dark": face,
        "hair_black": hair,
        "hair_blond": hair,
        "hair_wavy": hair,
        "bald": hair,
        "smiling": mouth,
        "big_nose": nose,
        "arched_eyebrows": brows,
        "eyeglasses": eyes_glasses,
        "beard_shadow": lower_face,
        "lipstick": mouth,
    }


def _paint(canvas, mask, color):
    canvas[mask] = np.array(color, dtype=np.uint8)


def render_face(attrs: AttributeVector, style_seed: int) -> np.ndarray:
    """Render to a float32 (64, 64, 3) array with values in [-1, 1]."""
    check_constraints(attrs)
    rng = np.random.default_rng(np.uint64(style_seed))
    jy = int(rng.integers(-JITTER, JITTER + 1))
    jx = int(rng.integers(-JITTER, JITTER + 1))
    bg = rng.integers(150, 220, size=3)

    cy, cx = CY + jy, CX + jx
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    canvas = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
    canvas[:] = bg.astype(np.uint8)

    skin = SKIN_DARK if attrs.get("skin_dark") else SKIN_LIGHT
    if attrs.get("face_oval"):
        face_mask = _ellipse(yy, xx, cy, cx, 19, 13)
    else:
        face_mask = _ellipse(yy, xx, cy, cx, 17, 16)
    _paint(canvas, face_mask, skin)

    # Hair cap: drawn over the top of the head unless bald. Geometry is
    # independent of face shape so the face_oval region stays local.
    if not attrs.get("bald"):
        if attrs.get("hair_black"):
            hair_color = HAIR_BLACK
        elif attrs.get("hair_blond"):
            hair_color = HAIR_BLOND
        else:
            hair_color = HAIR_BROWN
        hair_top = _ellipse(yy, xx, cy - 2, cx, 20, 17)
        if attrs.get("hair_wavy"):
            edge = cy - 7 + np.round(2.5 * np.sin((xx[0] - cx) * 0.9)).astype(int)
        else:
            edge = np.full(IMAGE_SIZE, cy - 9)
        hair_mask = hair_top & (yy < edge[np.newaxis, :].repeat(IMAGE_SIZE, 0))
        _paint(canvas, hair_mask, hair_color)

    # Eyebrows
    for sx in (-6, 6):
        bx = cx + sx
        if attrs.get("arched_eyebrows"):
            arc = (np.abs(xx - bx) <= 3) & (
                yy == cy - 9 - np.maximum(0, 2 - np.abs(xx - bx))
            )
        else:
            arc = (np.abs(xx - bx) <= 3) & (yy == cy - 9)
        _paint(canvas, arc & face_mask, BROW)

    # Eyes
    for sx in (-6, 6):
        ex = cx + sx
        _paint(canvas, _ellipse(yy, xx, cy - 5, ex, 2, 3), EYE_WHITE)
        _paint(canvas, _ellipse(yy, xx, cy - 5, ex, 1.2, 1.2), PUPIL)

    # Eyeglasses: rims around both eyes plus a bridge.
    if attrs.get("eyeglasses"):
        for sx in (-6, 6):
            ex = cx + sx
            outer = _ellipse(yy, xx, cy - 5, ex, 4.5, 5.5)
            inner = _ellipse(yy, xx, cy - 5, ex, 3.0, 4.0)
            _paint(canvas, outer & ~inner, GLASSES)
        bridge = (yy == cy - 6) & (np.abs(xx - cx) <= 2)
        _paint(canvas, bridge, GLASSES)

    # Nose
    nose_w = 4 if attrs.get("big_nose") else 2
    nose_h = 6 if attrs.get("big_nose") else 4
    nose = (
        (yy >= cy) & (yy <= cy + nose_h)
        & (np.abs(xx - cx) <= nose_w * (yy - cy + 1) / (nose_h + 1))
    )
    nose_color = tuple(int(c * NOSE_SHADE) for c in skin)
    _paint(canvas, nose & face_mask, nose_color)

    # Beard shadow on the lower face (before the mouth so lips stay clean).
    if attrs.get("beard_shadow"):
        beard = face_mask & (yy >= cy + 6) & ~nose
        shade = (canvas[beard].astype(np.float32) * BEARD_SHADE).astype(np.uint8)
        canvas[beard] = shade

    # Mouth: straight band, curved upward when smiling.
    mouth_color = MOUTH_LIPSTICK if attrs.get("lipstick") else MOUTH_PLAIN
    thickness = 2 if attrs.get("lipstick") else 1
    my = cy + 11
    if attrs.get("smiling"):
        curve = my - np.round(((xx - cx) / 7.0) ** 2 * 2).astype(int)
        mouth = (np.abs(xx - cx) <= 7) & (yy >= curve) & (yy <= curve + thickness - 1)
    else:
        mouth = (np.abs(xx - cx) <= 6) & (yy >= my - thickness + 1) & (yy <= my)
    _paint(canvas, mouth & face_mask, mouth_color)

    return canvas.astype(np.float32) / 127.5 - 1.0


def encode_u8(image: np.ndarray) -> np.ndarray:
    """[-1, 1] float image -> uint8, the PNG wire encoding."""
    return np.clip(np.round((image + 1.0) * 127.5), 0, 255).astype(np.uint8)


def decode_u8(raw: np.ndarray) -> np.ndarray:
    """uint8 -> [-1, 1] float image."""
    return raw.astype(np.float32) / 127.5 - 1.0
