"""Example 1 (index + VIX future): value function, decision maps and the grid/greedy frontier."""

from _common import common, parser, step


def main():
    args = parser(__doc__, "results/example1").parse_args()
    base = lambda sub: common(args, "example1", sub)  # noqa: E731
    step("closed-form coefficients", ["solve-quadratic", *base("quadratic")])
    step("greedy decision map", ["decide", *base("greedy")])
    step("lattice value function", ["solve-hjb", "--times", "0,150", *base("hjb")])
    paths = args.paths or (200 if args.quick else None)
    extra = ["--paths", paths] if paths else []
    kappas = ["--kappa-grid", "0.001,0.1"] if args.quick else []
    step("frontier sweep", ["backtest", "--strategy", "grid,greedy,never", "--per-episode", "--svg", *extra, *kappas, *base("frontier")])


if __name__ == "__main__":
    main()
