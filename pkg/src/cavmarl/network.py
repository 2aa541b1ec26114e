"""Road geometry of the four-way unsignalized intersection.

The intersection centre sits at the origin. Traffic keeps right; approaches
are named by the side they arrive from (W, S, E, N). Every route is a chain of
straight and circular segments with an analytic arc-length parameterization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
import shapely
from shapely.geometry import LineString, Polygon, box

from .dynamics import VEHICLE_WIDTH, wrap_angle

LANE_WIDTH = 4.0
APPROACH_LENGTH = 60.0
MIN_TURN_RADIUS = 8.0
ZONE_MARGIN = 8.0  # conflict zones are clipped to the junction box grown by this much

# Heading of traffic entering from each side.
ENTRY_HEADINGS = {"W": 0.0, "S": math.pi / 2, "E": math.pi, "N": -math.pi / 2}
MOVEMENTS = ("left", "straight", "right")


@dataclass(frozen=True)
class LineSegment:
    x0: float
    y0: float
    heading: float
    length: float

    def point(self, s: float) -> tuple[float, float, float]:
        return (self.x0 + s * math.cos(self.heading),
                self.y0 + s * math.sin(self.heading), self.heading)

    def local(self, x: float, y: float) -> tuple[float, float]:
        """Unclamped (along, left-offset) coordinates of a point."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        dx, dy = x - self.x0, y - self.y0
        return dx * c + dy * s, -dx * s + dy * c


@dataclass(frozen=True)
class ArcSegment:
    cx: float
    cy: float
    radius: float
    start_angle: float  # polar angle of the start point about the centre
    turn: int  # +1 counter-clockwise (left), -1 clockwise (right)
    length: float

    def point(self, s: float) -> tuple[float, float, float]:
        ang = self.start_angle + self.turn * s / self.radius
        heading = ang + self.turn * math.pi / 2
        return (self.cx + self.radius * math.cos(ang),
                self.cy + self.radius * math.sin(ang), wrap_angle(heading))

    def local(self, x: float, y: float) -> tuple[float, float]:
        dx, dy = x - self.cx, y - self.cy
        sweep = self.turn * wrap_angle(math.atan2(dy, dx) - self.start_angle)
        # a left turn keeps the centre on the left, so being outside the arc is a right offset
        offset = self.turn * (self.radius - math.hypot(dx, dy))
        return sweep * self.radius, offset


@dataclass(frozen=True)
class Route:
    entry: str
    lane: int
    movement: str
    exit_lane: int
    segments: tuple
    key: str = ""

    @cached_property
    def starts(self) -> tuple[float, ...]:
        out, acc = [], 0.0
        for seg in self.segments:
            out.append(acc)
            acc += seg.length
        return tuple(out)

    @cached_property
    def length(self) -> float:
        return sum(seg.length for seg in self.segments)

    @cached_property
    def stop_line_s(self) -> float:
        return APPROACH_LENGTH

    def _segment_for(self, s: float) -> int:
        idx = 0
        for i, start in enumerate(self.starts):
            if s >= start:
                idx = i
        return idx

    def point_at(self, s: float) -> tuple[float, float, float]:
        """Pose (x, y, heading) at arc length s; extrapolates straight past both ends."""
        i = self._segment_for(s)
        return self.segments[i].point(s - self.starts[i])

    def points_at(self, s: np.ndarray) -> np.ndarray:
        """Vectorized ``point_at`` returning an (n, 3) array."""
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape + (3,))
        idx = np.zeros(s.shape, dtype=int)
        for i, start in enumerate(self.starts):
            idx[s >= start] = i
        for i, seg in enumerate(self.segments):
            sel = idx == i
            if not np.any(sel):
                continue
            loc = s[sel] - self.starts[i]
            if isinstance(seg, LineSegment):
                out[sel, 0] = seg.x0 + loc * math.cos(seg.heading)
                out[sel, 1] = seg.y0 + loc * math.sin(seg.heading)
                out[sel, 2] = seg.heading
            else:
                ang = seg.start_angle + seg.turn * loc / seg.radius
                out[sel, 0] = seg.cx + seg.radius * np.cos(ang)
                out[sel, 1] = seg.cy + seg.radius * np.sin(ang)
                out[sel, 2] = np.remainder(ang + seg.turn * math.pi / 2 + math.pi, 2 * math.pi) - math.pi
        return out

    def project(self, x: float, y: float) -> tuple[float, float, float]:
        """Closest route point: (arc length, signed left offset, lane heading there)."""
        best = None
        last = len(self.segments) - 1
        for i, seg in enumerate(self.segments):
            along, offset = seg.local(x, y)
            lo = -math.inf if i == 0 else 0.0
            hi = math.inf if i == last else seg.length
            if along < lo or along > hi:
                along_c = min(max(along, lo), hi)
                px, py, _ = seg.point(along_c)
                dist = math.hypot(x - px, y - py)
            else:
                along_c, dist = along, abs(offset)
            if best is None or dist < best[0]:
                best = (dist, i, along_c, offset)
        _, i, along, offset = best
        heading = self.segments[i].point(along)[2]
        return self.starts[i] + along, offset, heading

    def polyline(self, step: float = 0.5) -> np.ndarray:
        n = max(2, int(math.ceil(self.length / step)) + 1)
        return self.points_at(np.linspace(0.0, self.length, n))[:, :2]


@dataclass
class RoadNetwork:
    lanes_per_approach: int
    routes: dict[str, Route]
    conflict_zones: dict[tuple[str, str], Polygon] = field(default_factory=dict)

    @property
    def approaches(self) -> tuple[str, ...]:
        return tuple(ENTRY_HEADINGS)

    @property
    def half_width(self) -> float:
        return self.lanes_per_approach * LANE_WIDTH

    def zone(self, a: str, b: str) -> Polygon | None:
        return self.conflict_zones.get((a, b))

    def routes_from(self, entry: str, lane: int | None = None) -> list[Route]:
        return [r for r in self.routes.values()
                if r.entry == entry and (lane is None or r.lane == lane)]

    def route_for(self, entry: str, lane: int, movement: str) -> Route | None:
        return self.routes.get(route_key(entry, lane, movement))

    def lanes(self) -> list[tuple[str, int]]:
        return [(e, k) for e in ENTRY_HEADINGS for k in range(self.lanes_per_approach)]


def route_key(entry: str, lane: int, movement: str) -> str:
    return f"{entry}{lane}-{movement}"


def _lane_movements(lane: int, n: int) -> tuple[str, ...]:
    moves = ["straight"]
    if lane == 0:
        moves.insert(0, "left")
    if lane == n - 1:
        moves.append("right")
    return tuple(moves)


def _local_route(lane: int, movement: str, n: int) -> tuple[tuple, int]:
    """Route in the frame where traffic enters heading +x; right-hand side is -y."""
    half = n * LANE_WIDTH
    a = (lane + 0.5) * LANE_WIDTH
    start_x = -half - APPROACH_LENGTH
    if movement == "straight":
        return ((start_x, -a, 0.0, 2 * (half + APPROACH_LENGTH)),), lane
    if movement == "left":
        exit_lane = 0
        b = (exit_lane + 0.5) * LANE_WIDTH
        radius = max(a + half, MIN_TURN_RADIUS)
        cx, cy = b - radius, radius - a
        arc = ("arc", cx, cy, radius, -math.pi / 2, +1)
        exit_start = (b, cy, math.pi / 2)
    elif movement == "right":
        exit_lane = n - 1
        b = (exit_lane + 0.5) * LANE_WIDTH
        radius = max(half - b, MIN_TURN_RADIUS)
        cx, cy = -b - radius, -a - radius
        arc = ("arc", cx, cy, radius, math.pi / 2, -1)
        exit_start = (-b, cy, -math.pi / 2)
    else:
        raise ValueError(f"unknown movement {movement!r}")
    approach = (start_x, -a, 0.0, cx - start_x)
    # the exit leg ends APPROACH_LENGTH past the junction box edge
    exit_len = half + APPROACH_LENGTH - abs(exit_start[1])
    return (approach, arc, exit_start + (exit_len,)), exit_lane


def _rotate(x: float, y: float, ang: float) -> tuple[float, float]:
    c, s = math.cos(ang), math.sin(ang)
    return c * x - s * y, s * x + c * y


def _place(local: tuple, rot: float) -> tuple:
    segs = []
    for item in local:
        if item[0] == "arc":
            _, cx, cy, r, start_ang, turn = item
            gx, gy = _rotate(cx, cy, rot)
            segs.append(ArcSegment(gx, gy, r, wrap_angle(start_ang + rot), turn, r * math.pi / 2))
        else:
            x0, y0, heading, length = item
            gx, gy = _rotate(x0, y0, rot)
            segs.append(LineSegment(gx, gy, wrap_angle(heading + rot), length))
    return tuple(segs)


def _junction_area(n: int) -> Polygon:
    h = n * LANE_WIDTH + ZONE_MARGIN
    return box(-h, -h, h, h)


def compute_conflict_zones(routes: dict[str, Route], n: int) -> dict[tuple[str, str], Polygon]:
    """Pairwise overlap of route corridors (buffered by half a vehicle width) inside the junction."""
    area = _junction_area(n)
    corridors = {k: LineString(r.polyline()).buffer(VEHICLE_WIDTH / 2).intersection(area)
                 for k, r in routes.items()}
    zones: dict[tuple[str, str], Polygon] = {}
    for a, b in combinations(sorted(routes), 2):
        ra, rb = routes[a], routes[b]
        if (ra.entry, ra.lane) == (rb.entry, rb.lane):
            continue  # routes sharing an entry lane follow each other, they do not cross
        inter = corridors[a].intersection(corridors[b])
        if inter.is_empty or inter.area < 1e-9:
            continue
        zones[(a, b)] = inter
        zones[(b, a)] = inter
    return zones


def build_network(lanes_per_approach: int) -> RoadNetwork:
    if lanes_per_approach not in (1, 2, 3):
        raise ValueError(f"lanes_per_approach must be 1, 2 or 3, got {lanes_per_approach}")
    n = lanes_per_approach
    routes: dict[str, Route] = {}
    for entry, rot in ENTRY_HEADINGS.items():
        for lane in range(n):
            for movement in _lane_movements(lane, n):
                local, exit_lane = _local_route(lane, movement, n)
                key = route_key(entry, lane, movement)
                routes[key] = Route(entry, lane, movement, exit_lane, _place(local, rot), key)
    return RoadNetwork(n, routes, compute_conflict_zones(routes, n))


def footprint_polygons(xs, ys, psis, length: float = 5.0, width: float = 2.0):
    """Vectorized vehicle rectangles as shapely polygons."""
    xs, ys, psis = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (xs, ys, psis))
    c, s = np.cos(psis), np.sin(psis)
    hl, hw = length / 2, width / 2
    corners = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    px = xs[:, None] + c[:, None] * corners[:, 0] - s[:, None] * corners[:, 1]
    py = ys[:, None] + s[:, None] * corners[:, 0] + c[:, None] * corners[:, 1]
    return shapely.polygons(np.stack([px, py], axis=-1))
