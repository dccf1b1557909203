"""Brute-force reference rasterizer.

Tests every pixel centre with exact integer arithmetic (coordinates doubled
so centres land on integers). Ties on an edge are broken by nudging the
sample point by (eps, eps**2) for an infinitesimal eps, which is exactly the
top-left convention: a point on a left edge moves inside, as does a point on
a horizontal top edge.
"""


def _lex_sign(*terms) -> int:
    for t in terms:
        if t:
            return 1 if t > 0 else -1
    return 0


def covered_pixels(v0, v1, v2, clip) -> set[tuple[int, int]]:
    """Pixels ``(x, y)`` inside ``clip = (x0, y0, x1, y1)`` covered by the triangle."""
    (ax, ay), (bx, by), (cx, cy) = v0, v1, v2
    area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if area == 0:
        return set()
    s = 1 if area > 0 else -1
    edges = [((ax, ay), (bx, by)), ((bx, by), (cx, cy)), ((cx, cy), (ax, ay))]
    out = set()
    for y in range(clip[1], clip[3]):
        for x in range(clip[0], clip[2]):
            px, py = 2 * x + 1, 2 * y + 1
            inside = True
            for (sx, sy), (ex, ey) in edges:
                dx, dy = ex - sx, ey - sy
                e0 = dx * (py - 2 * sy) - dy * (px - 2 * sx)
                if _lex_sign(s * e0, -s * dy, s * dx) <= 0:
                    inside = False
                    break
            if inside:
                out.add((x, y))
    return out


def drawn_pixels(before: bytes, after: bytes, width: int) -> set[tuple[int, int]]:
    """Pixels whose RGBA bytes differ between two framebuffers."""
    out = set()
    for i in range(0, len(before), 4):
        if before[i:i + 4] != after[i:i + 4]:
            p = i // 4
            out.add((p % width, p // width))
    return out
