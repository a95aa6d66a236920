"""Model memory of LMBF vs C-LMBF as the hidden layer grows.

By default only the architectures are built (seconds); pass --train to also
train every variant and fill in the accuracy columns.
"""

import argparse

from clbf import bench


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dataset", default="airplane", choices=["airplane", "dmv"])
    ap.add_argument("--widths", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train", action="store_true")
    args = ap.parse_args()
    config = bench.ExperimentConfig(seed=args.seed, dataset=args.dataset, hidden_widths=args.widths)
    rows = bench.sweep_nn_size(config, train=args.train)
    print(bench.report_csv(rows), end="")


if __name__ == "__main__":
    main()
