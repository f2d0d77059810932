"""Step counts of reverse differentiation on the chain family and of a
full forward sweep against one reverse run on the n-input sum of squares.
"""

from lbp.validate import CHAIN_KS, SUM_NS, chain_samples, complexity_fit, sweep_ratio


def main() -> None:
    samples = chain_samples(CHAIN_KS)
    print(f"{'k':>4} {'steps':>7} {'m':>6} {'|G|':>6}")
    for k, steps, m, g in samples:
        print(f"{k:>4} {steps:>7} {m:>6} {g:>6}")
    a, b, resid = complexity_fit(samples)
    print(f"steps ~ {a:.3f} * (m + |G|) + {b:.1f}   residual ratio {resid:.4f}")
    print()
    print(f"{'n':>4} {'fwd':>8} {'rev':>7} {'ratio':>7}")
    for n in SUM_NS:
        f, r = sweep_ratio(n)
        print(f"{n:>4} {f:>8} {r:>7} {f / r:>7.2f}")


if __name__ == "__main__":
    main()
