#!/usr/bin/env python3
"""Sweep jitter-buffer depth against synthetic network reordering and loss.

Feeds a fixed frame schedule through the jitter buffer with seeded random
reordering, then reports effective loss per depth. Useful for picking a
default depth for a given network profile.

Usage: python scripts/jitter_sweep.py [--frames N] [--seed N]
"""

import argparse
import random

from peervoip import media


def simulate(depth, frames, reorder_window, drop_p, rng):
    jb = media.JitterBuffer(depth=depth)
    schedule = []
    for seq in range(frames):
        if rng.random() < drop_p:
            continue
        # arrival time in tick units: nominal send time plus queueing jitter
        arrival = seq + rng.uniform(0.0, reorder_window)
        schedule.append((arrival, seq))
    schedule.sort()
    played = 0
    idx = 0
    for tick in range(frames + depth + reorder_window + 1):
        while idx < len(schedule) and schedule[idx][0] <= tick:
            jb.push(schedule[idx][1], b"\x01" * media.FRAME_BYTES)
            idx += 1
        if jb.tick() != media.SILENCE_FRAME:
            played += 1
        if idx == len(schedule) and jb.buffered() == 0:
            break
    return played, jb.stats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--frames", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--drop", type=float, default=0.02)
    parser.add_argument("--reorder-window", type=int, default=4)
    args = parser.parse_args()

    print(f"{'depth':>5}  {'played':>7}  {'lost':>6}  {'late':>6}  {'loss %':>7}")
    for depth in (1, 2, 3, 4, 6, 8):
        rng = random.Random(args.seed)
        played, stats = simulate(depth, args.frames, args.reorder_window,
                                 args.drop, rng)
        expected = played + stats.lost_count
        loss = 100.0 * stats.lost_count / expected if expected else 0.0
        print(f"{depth:>5}  {played:>7}  {stats.lost_count:>6}  "
              f"{stats.late_count:>6}  {loss:>6.2f}%")


if __name__ == "__main__":
    main()
