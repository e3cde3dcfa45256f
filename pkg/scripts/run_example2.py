"""Example 2 (four options): net-risk value function, its decisions and a greedy frontier."""

from _common import common, parser, step


def main():
    args = parser(__doc__, "results/example2").parse_args()
    base = lambda sub: common(args, "example2", sub)  # noqa: E731
    step("net-risk value function at t=0 and t=50", ["solve-hjb", "--net", "--times", "0,50", "--store-every", "50", *base("net")])
    paths = args.paths or (100 if args.quick else None)
    extra = ["--paths", paths] if paths else []
    kappas = ["--kappa-grid", "0.01,1"] if args.quick else []
    step("frontier sweep", ["backtest", "--strategy", "greedy,never", "--svg", *extra, *kappas, *base("frontier")])


if __name__ == "__main__":
    main()
