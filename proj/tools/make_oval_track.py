#!/usr/bin/env python3
"""Generates tracks/icra_oval: a stadium track with a 2.4 m main straight,
two U-turns that narrow from 0.18 m to 0.14 m half-width, and ~2 cm waypoint
spacing."""
import math

STRAIGHT = 2.4
R = 0.55
HW_STRAIGHT = 0.18
HW_TURN = 0.14
RAMP = 0.3  # half-width transition length [m]
DS = 0.02

def half_width(s, L, seg_bounds):
    # seg_bounds: list of (start, end, is_turn)
    for a, b, turn in seg_bounds:
        if a - 1e-9 <= s <= b + 1e-9:
            if turn:
                return HW_TURN
            d = min(s - a, b - s)
            t = min(d / RAMP, 1.0)
            return HW_TURN + (HW_STRAIGHT - HW_TURN) * t
    return HW_STRAIGHT

def main():
    arc = math.pi * R
    L = 2 * STRAIGHT + 2 * arc
    bounds = [
        (0, STRAIGHT, False),
        (STRAIGHT, STRAIGHT + arc, True),
        (STRAIGHT + arc, 2 * STRAIGHT + arc, False),
        (2 * STRAIGHT + arc, L, True),
    ]
    n = int(round(L / DS))
    lines = ["format: crs-track-v1", "closed: true"]
    for i in range(n + 1):
        s = L * i / n
        if s <= STRAIGHT:
            x, y = -STRAIGHT / 2 + s, -R
        elif s <= STRAIGHT + arc:
            a = -math.pi / 2 + (s - STRAIGHT) / R
            x, y = STRAIGHT / 2 + R * math.cos(a), R * math.sin(a)
        elif s <= 2 * STRAIGHT + arc:
            x, y = STRAIGHT / 2 - (s - STRAIGHT - arc), R
        else:
            a = math.pi / 2 + (s - 2 * STRAIGHT - arc) / R
            x, y = -STRAIGHT / 2 + R * math.cos(a), R * math.sin(a)
        hw = half_width(s if i < n else 0.0, L, bounds)
        lines.append(f"waypoint: {x:.9f} {y:.9f} {hw:.9f}")
    print("\n".join(lines))

if __name__ == "__main__":
    main()
