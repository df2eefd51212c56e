"""Deterministic sketch rendering and augmentation.

Sketches render to 224x224x3 float images in [0,1] on a white background.
The token grid [1,64]^2 maps affinely onto the pixel box [16,208]^2, with
larger qy drawn higher in the image. Strokes are hard-assigned (no
anti-aliasing) so renders are bit-exact, which golden-image tests rely on.
Colors by kind: lines blue, arcs green, circles red.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import (
    COORD_MAX,
    COORD_MIN,
    Entity,
    EntityKind,
    GeometryError,
    InvalidSketch,
    Point,
    QPoint,
    Sketch,
)

WIDTH = 224
HEIGHT = 224
MARGIN = 16.0
SPAN = WIDTH - 2 * MARGIN  # 192 px across the 63 token intervals
STROKE_RADIUS = 1.0  # half the 2px stroke width
PATCH = 32
PATCHES_PER_SIDE = WIDTH // PATCH  # 7, so 49 patches per image

COLOR = {
    EntityKind.LINE: (0.0, 0.0, 1.0),
    EntityKind.ARC: (0.0, 0.5, 0.0),
    EntityKind.CIRCLE: (1.0, 0.0, 0.0),
}


class CollinearPoints(GeometryError):
    pass


class RenderMode(Enum):
    PRECISE = "precise"
    HAND_DRAWN = "hand"
    NOISY_HAND_DRAWN = "noisy"


@dataclass(frozen=True)
class AugmentSpec:
    mode: RenderMode = RenderMode.PRECISE
    seed: int = 0


def _to_pixel(q: QPoint) -> tuple[float, float]:
    # y flips: token row 1 is the bottom of the image.
    px = MARGIN + (q.qx - COORD_MIN) / (COORD_MAX - COORD_MIN) * SPAN
    py = (HEIGHT - MARGIN) - (q.qy - COORD_MIN) / (COORD_MAX - COORD_MIN) * SPAN
    return px, py


@dataclass(frozen=True)
class ArcGeometry:
    center: Point
    radius: float
    theta_start: float
    theta_mid: float
    theta_end: float
    ccw: bool


def arc_geometry(p_start: Point, p_mid: Point, p_end: Point) -> ArcGeometry:
    """Circumcenter-based arc through three points, swept start->mid->end.

    Raises CollinearPoints when no circle passes through the triple.
    """
    ax, ay = p_start.x, p_start.y
    bx, by = p_mid.x, p_mid.y
    cx, cy = p_end.x, p_end.y
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if d == 0.0:
        raise CollinearPoints("arc points are collinear")
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    radius = math.hypot(ax - ux, ay - uy)
    # Orientation of the start->mid->end traversal.
    ccw = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) > 0
    return ArcGeometry(
        Point(ux, uy),
        radius,
        math.atan2(ay - uy, ax - ux),
        math.atan2(by - uy, bx - ux),
        math.atan2(cy - uy, cx - ux),
        ccw,
    )


def _paint(img: np.ndarray, mask: np.ndarray, x0: int, y0: int, color) -> None:
    h, w = mask.shape
    region = img[y0 : y0 + h, x0 : x0 + w]
    region[mask] = color


def _bbox_grid(xs, ys, pad: float):
    x0 = max(int(math.floor(min(xs) - pad)), 0)
    x1 = min(int(math.ceil(max(xs) + pad)), WIDTH - 1)
    y0 = max(int(math.floor(min(ys) - pad)), 0)
    y1 = min(int(math.ceil(max(ys) + pad)), HEIGHT - 1)
    if x0 > x1 or y0 > y1:
        return None
    gy, gx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    return gx.astype(np.float64), gy.astype(np.float64), x0, y0


def _draw_segment(img, a, b, color) -> None:
    grid = _bbox_grid([a[0], b[0]], [a[1], b[1]], STROKE_RADIUS + 1)
    if grid is None:
        return
    gx, gy, x0, y0 = grid
    vx, vy = b[0] - a[0], b[1] - a[1]
    L2 = vx * vx + vy * vy
    if L2 == 0.0:
        dist = np.hypot(gx - a[0], gy - a[1])
    else:
        t = np.clip(((gx - a[0]) * vx + (gy - a[1]) * vy) / L2, 0.0, 1.0)
        dist = np.hypot(gx - (a[0] + t * vx), gy - (a[1] + t * vy))
    _paint(img, dist <= STROKE_RADIUS, x0, y0, color)


def _sweep_mask(theta, geo: ArcGeometry) -> np.ndarray:
    two_pi = 2.0 * math.pi
    if geo.ccw:
        total = (geo.theta_end - geo.theta_start) % two_pi
        offset = (theta - geo.theta_start) % two_pi
    else:
        total = (geo.theta_start - geo.theta_end) % two_pi
        offset = (geo.theta_start - theta) % two_pi
    return offset <= total


def _draw_arc(img, e: Entity, color) -> None:
    pts = [_to_pixel(p) for p in e.points]
    try:
        geo = arc_geometry(*(Point(x, y) for x, y in pts))
    except CollinearPoints:
        # Degenerate arc: draw the polyline start->mid->end instead.
        _draw_segment(img, pts[0], pts[1], color)
        _draw_segment(img, pts[1], pts[2], color)
        return
    c, r = geo.center, geo.radius
    grid = _bbox_grid([c.x - r, c.x + r], [c.y - r, c.y + r], STROKE_RADIUS + 1)
    if grid is None:
        return
    gx, gy, x0, y0 = grid
    dist = np.abs(np.hypot(gx - c.x, gy - c.y) - r)
    theta = np.arctan2(gy - c.y, gx - c.x)
    _paint(img, (dist <= STROKE_RADIUS) & _sweep_mask(theta, geo), x0, y0, color)


def _draw_circle(img, e: Entity, color) -> None:
    pts = [_to_pixel(p) for p in e.points]
    # Centroid fit: for four points evenly spaced on a circle this recovers
    # center and radius exactly (up to quantization), and it degrades
    # gracefully on degenerate input instead of failing.
    cx = sum(p[0] for p in pts) / len(pts)
    cy = sum(p[1] for p in pts) / len(pts)
    r = sum(math.hypot(p[0] - cx, p[1] - cy) for p in pts) / len(pts)
    grid = _bbox_grid([cx - r, cx + r], [cy - r, cy + r], STROKE_RADIUS + 1)
    if grid is None:
        return
    gx, gy, x0, y0 = grid
    dist = np.abs(np.hypot(gx - cx, gy - cy) - r)
    _paint(img, dist <= STROKE_RADIUS, x0, y0, color)


def blank_image() -> np.ndarray:
    return np.ones((HEIGHT, WIDTH, 3), dtype=np.float64)


def render(s: Sketch) -> np.ndarray:
    """Render a sketch precisely (no augmentation). Entities paint in order."""
    for e in s.entities:
        for p in e.points:
            if not (
                COORD_MIN <= p.qx <= COORD_MAX and COORD_MIN <= p.qy <= COORD_MAX
            ):
                raise InvalidSketch(f"coordinate {p.as_tuple()} off the token grid")
    img = blank_image()
    for e in s.entities:
        color = COLOR[e.kind]
        if e.kind is EntityKind.LINE:
            a, b = (_to_pixel(p) for p in e.points)
            _draw_segment(img, a, b, color)
        elif e.kind is EntityKind.ARC:
            _draw_arc(img, e, color)
        else:
            _draw_circle(img, e, color)
    return img


def hand_drawn(s: Sketch, seed: int, sigma: float = 1.0) -> Sketch:
    """Jitter every point by Gaussian noise in token units, clamped to the grid.

    Entity kinds, counts, and constraints are unchanged. sigma=0 is the
    identity.
    """
    rng = np.random.default_rng(seed)
    ents = []
    for e in s.entities:
        noise = rng.normal(0.0, 1.0, size=(len(e.points), 2)) * sigma
        pts = tuple(
            QPoint(
                int(min(max(math.floor(p.qx + n[0] + 0.5), COORD_MIN), COORD_MAX)),
                int(min(max(math.floor(p.qy + n[1] + 0.5), COORD_MIN), COORD_MAX)),
            )
            for p, n in zip(e.points, noise)
        )
        ents.append(Entity(e.kind, pts))
    return Sketch(tuple(ents), s.constraints)


@dataclass(frozen=True)
class AffineParams:
    rotation_deg: float
    shift_x: float  # fraction of width
    shift_y: float
    scale: float


def sample_affine(seed: int) -> AffineParams:
    rng = np.random.default_rng(seed)
    return AffineParams(
        rotation_deg=float(rng.uniform(-5.0, 5.0)),
        shift_x=float(rng.uniform(-0.05, 0.05)),
        shift_y=float(rng.uniform(-0.05, 0.05)),
        scale=float(rng.uniform(0.9, 1.1)),
    )


def noisy_affine(
    img: np.ndarray, seed: int, params: AffineParams | None = None
) -> np.ndarray:
    """Random rotate/translate/scale about the image center, bilinear, white fill."""
    if params is None:
        params = sample_affine(seed)
    theta = math.radians(params.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cx = (WIDTH - 1) / 2.0
    cy = (HEIGHT - 1) / 2.0
    tx = params.shift_x * WIDTH
    ty = params.shift_y * HEIGHT

    gy, gx = np.mgrid[0:HEIGHT, 0:WIDTH].astype(np.float64)
    # Invert out = R·S·(in − c) + c + t to find the source of each pixel.
    ox = gx - cx - tx
    oy = gy - cy - ty
    sx = (cos_t * ox + sin_t * oy) / params.scale + cx
    sy = (-sin_t * ox + cos_t * oy) / params.scale + cy

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]

    def sample(xi, yi):
        inside = (xi >= 0) & (xi < WIDTH) & (yi >= 0) & (yi < HEIGHT)
        out = np.ones((HEIGHT, WIDTH, 3), dtype=np.float64)
        out[inside] = img[yi[inside], xi[inside]]
        return out

    v00 = sample(x0, y0)
    v01 = sample(x0 + 1, y0)
    v10 = sample(x0, y0 + 1)
    v11 = sample(x0 + 1, y0 + 1)
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


def rasterize(s: Sketch, spec: AugmentSpec = AugmentSpec()) -> np.ndarray:
    """Render under an augmentation mode. Pure in (sketch, spec)."""
    if spec.mode is RenderMode.PRECISE:
        return render(s)
    jittered = hand_drawn(s, spec.seed)
    img = render(jittered)
    if spec.mode is RenderMode.NOISY_HAND_DRAWN:
        img = noisy_affine(img, spec.seed)
    return img


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    body = tag + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(
        ">I", zlib.crc32(body) & 0xFFFFFFFF
    )


def to_png_bytes(img: np.ndarray) -> bytes:
    """Encode as 8-bit RGB PNG. Deterministic: fixed filter and zlib level."""
    if img.shape != (HEIGHT, WIDTH, 3):
        raise ValueError(f"expected {HEIGHT}x{WIDTH}x3 image, got {img.shape}")
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    raw = b"".join(b"\x00" + u8[row].tobytes() for row in range(HEIGHT))
    ihdr = struct.pack(">IIBBBBB", WIDTH, HEIGHT, 8, 2, 0, 0, 0)
    return b"".join(
        (
            b"\x89PNG\r\n\x1a\n",
            _png_chunk(b"IHDR", ihdr),
            _png_chunk(b"IDAT", zlib.compress(raw, 6)),
            _png_chunk(b"IEND", b""),
        )
    )


def write_png(img: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_png_bytes(img))


def _svg_color(rgb) -> str:
    return "rgb({},{},{})".format(*(int(round(255 * v)) for v in rgb))


def to_svg(s: Sketch) -> str:
    """Vector export for figures; mirrors the raster color convention."""
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    for e in s.entities:
        color = _svg_color(COLOR[e.kind])
        pts = [_to_pixel(p) for p in e.points]
        if e.kind is EntityKind.LINE:
            (x1, y1), (x2, y2) = pts
            parts.append(
                f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
        elif e.kind is EntityKind.ARC:
            try:
                geo = arc_geometry(*(Point(x, y) for x, y in pts))
            except CollinearPoints:
                d = "M {:.2f} {:.2f} L {:.2f} {:.2f} L {:.2f} {:.2f}".format(
                    *pts[0], *pts[1], *pts[2]
                )
                parts.append(
                    f'<path d="{d}" fill="none" stroke="{color}" stroke-width="2"/>'
                )
                continue
            two_pi = 2.0 * math.pi
            sweep = (
                (geo.theta_end - geo.theta_start) % two_pi
                if geo.ccw
                else (geo.theta_start - geo.theta_end) % two_pi
            )
            large = 1 if sweep > math.pi else 0
            # SVG sweep flag 1 means clockwise in screen coords, which is
            # ccw-increasing theta here because y points down.
            flag = 1 if geo.ccw else 0
            parts.append(
                f'<path d="M {pts[0][0]:.2f} {pts[0][1]:.2f} '
                f'A {geo.radius:.2f} {geo.radius:.2f} 0 {large} {flag} '
                f'{pts[2][0]:.2f} {pts[2][1]:.2f}" fill="none" '
                f'stroke="{color}" stroke-width="2"/>'
            )
        else:
            cx = sum(p[0] for p in pts) / len(pts)
            cy = sum(p[1] for p in pts) / len(pts)
            r = sum(math.hypot(p[0] - cx, p[1] - cy) for p in pts) / len(pts)
            parts.append(
                f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:.2f}" fill="none" '
                f'stroke="{color}" stroke-width="2"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts)
