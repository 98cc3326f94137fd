#!/usr/bin/env python3
"""Two-soliton collision experiment.

Builds a two-soliton field by inserting two atoms over the zero background,
sweeps it over a space-time window, and reports the post-collision phase
shifts: after the fast soliton overtakes the slow one, each crest is
displaced from its free trajectory by a constant offset while both heights
are unchanged.  Optionally writes the full sweep as CSV for plotting.

Usage:
    python3 scripts/soliton_collision.py --out collision.csv
"""
from __future__ import annotations

import argparse

import numpy as np

from darboux.background import ZeroBackground
from darboux.measure import Atom, SpectralMeasure
from darboux.transform import apply


def crest(field, xs: np.ndarray, t: float) -> tuple[float, float]:
    """Location and depth of the deepest trough of q(., t) on ``xs``,
    refined by a parabolic fit through the three points around the
    discrete minimum."""
    q = np.asarray(field.potential(xs, t), dtype=float)
    j = int(np.argmin(q))
    if 0 < j < len(xs) - 1:
        y0, y1, y2 = q[j - 1], q[j], q[j + 1]
        denom = y0 - 2.0 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom != 0.0 else 0.0
        dx = xs[1] - xs[0]
        return float(xs[j] + shift * dx), float(y1)
    return float(xs[j]), float(q[j])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--kappa-slow", type=float, default=1.0)
    parser.add_argument("--kappa-fast", type=float, default=2.0)
    parser.add_argument("--t-max", type=float, default=1.0)
    parser.add_argument("--n-times", type=int, default=11)
    parser.add_argument("--out", help="optional CSV path for the full sweep")
    args = parser.parse_args(argv)

    k1, k2 = args.kappa_slow, args.kappa_fast
    if not 0.0 < k1 < k2:
        parser.error("need 0 < kappa-slow < kappa-fast")
    # weights 2*kappa center each free soliton at x = 4 kappa^2 t
    sigma = SpectralMeasure(
        atoms=(Atom(k1, 2.0 * k1), Atom(k2, 2.0 * k2)), ac_parts=()
    )
    field = apply(ZeroBackground(), sigma)

    times = np.linspace(0.0, args.t_max, args.n_times)
    xs = np.linspace(-10.0, 4.0 * k2**2 * args.t_max + 10.0, 1401)
    half_gap = max(2.0 / k1, 2.0 / k2)

    print(f"two-soliton collision: kappa = {k1} (slow), {k2} (fast)")
    print(f"{'t':>6} {'slow x':>8} {'offset':>8} {'fast x':>8} {'offset':>8}")
    rows = []
    slow_offset = fast_offset = 0.0
    for t in times:
        slow_free = 4.0 * k1**2 * float(t)
        fast_free = 4.0 * k2**2 * float(t)
        win_slow = np.linspace(slow_free - 3.0 * half_gap,
                               slow_free + half_gap, 801)
        win_fast = np.linspace(fast_free - half_gap,
                               fast_free + 3.0 * half_gap, 801)
        x_slow, _ = crest(field, win_slow, float(t))
        x_fast, _ = crest(field, win_fast, float(t))
        slow_offset = x_slow - slow_free
        fast_offset = x_fast - fast_free
        print(f"{t:6.2f} {x_slow:8.3f} {slow_offset:+8.3f} "
              f"{x_fast:8.3f} {fast_offset:+8.3f}")
        if args.out:
            q = np.asarray(field.potential(xs, float(t)), dtype=float)
            rows.extend((float(x), float(t), float(v)) for x, v in zip(xs, q))

    # with these weights both free trajectories start at x = 0, so after
    # the overtaking the fast soliton rides its free path while the slow
    # one is retarded by the binary-interaction phase shift
    predicted = -np.log((k2 + k1) / (k2 - k1)) / k1
    print(f"\nslow-soliton shift at t = {times[-1]:.2f}: {slow_offset:+.4f} "
          f"(predicted {predicted:+.4f}); fast-soliton shift: "
          f"{fast_offset:+.4f} (predicted +0.0000)")

    if args.out:
        with open(args.out, "w", newline="\n") as handle:
            handle.write("x,t,q\n")
            handle.writelines(
                f"{x!r},{t!r},{q!r}\n" for x, t, q in rows
            )
        print(f"wrote {len(rows)} rows to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
