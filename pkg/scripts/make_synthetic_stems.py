"""Write synthetic ``track_XXX/{mixture,vocals}.wav`` stems for smoke tests.

    python scripts/make_synthetic_stems.py --out stems --tracks 4 --duration 30
"""

import argparse

from soundseg.synth import write_synthetic_stems


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True)
    p.add_argument("--tracks", type=int, default=4)
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--sample-rate", type=int, default=44100)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    for d in write_synthetic_stems(args.out, args.tracks, args.duration, args.sample_rate, args.seed):
        print(d)


if __name__ == "__main__":
    main()
