"""Example 3 (all six assets): multi-asset greedy against independent per-asset optimal quoting."""

from _common import common, parser, step


def main():
    args = parser(__doc__, "results/example3").parse_args()
    base = lambda sub: common(args, "example3", sub)  # noqa: E731
    step("closed-form coefficients", ["solve-quadratic", *base("quadratic")])
    paths = args.paths or (50 if args.quick else None)
    extra = ["--paths", paths] if paths else []
    quick = ["--kappa-grid", "0.001,0.1", "--horizon", "100", "--set", "portfolio.horizon=100"] if args.quick else []
    step("frontier sweep", ["backtest", "--strategy", "greedy,uni", "--per-episode", "--svg", *extra, *quick, *base("frontier")])


if __name__ == "__main__":
    main()
