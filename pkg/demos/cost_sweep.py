"""Compare the cost of single-shot readout with a per-pair network as scenes get crowded.

The single-shot model runs once per image whatever the number of people and
objects; the pairwise reference runs once per (person, object) pair.

    python3 demos/cost_sweep.py --pairs 1,4,16,64
"""

import argparse

import torch

from calipso.cli import format_benchmark_table
from calipso.evaluation import PairNet, benchmark_complexity
from calipso.network import CalipsoNet, NetworkConfig
from calipso.synthetic import DEFAULT_VOCABULARY


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pairs", default="1,4,16,64")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    torch.manual_seed(0)
    V = DEFAULT_VOCABULARY.V
    # weights do not change the cost, so untrained models will do
    model = CalipsoNet(NetworkConfig(V=V)).eval()
    baseline = PairNet(V).eval()
    sweep = [int(p) for p in args.pairs.split(",")]
    records = benchmark_complexity(model, baseline, DEFAULT_VOCABULARY, sweep, repeats=args.repeats)
    print(format_benchmark_table(records))
    first, last = records[0], records[-1]
    print(f"\nP {first.P} -> {last.P}: single-shot ops x{last.calipso_ops / first.calipso_ops:.2f}, "
          f"pairwise ops x{last.baseline_ops / first.baseline_ops:.1f}")


if __name__ == "__main__":
    main()
