"""Recompute two-tailed p-values from the published correlations (n = 44)."""
import argparse

from vo2kit.stats import p_two_tailed

PUBLISHED = [
    ("Aerobic duration", 0.603100, 0.000015),
    ("Endured duration", 0.544672, 0.000132),
    ("HRR 30 s", 0.045742, 0.768116),
    ("HRR 60 s", 0.096538, 0.533030),
    ("HRR 120 s", 0.136856, 0.375701),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=44)
    args = ap.parse_args()
    print(f"{'metric':<18} {'r':>9} {'p reported':>11} {'p computed':>11} {'rel diff':>9}")
    for name, r, p in PUBLISHED:
        got = p_two_tailed(r, args.n)
        print(f"{name:<18} {r:>9.6f} {p:>11.6f} {got:>11.6f} {abs(got - p) / p:>9.2%}")


if __name__ == "__main__":
    main()
