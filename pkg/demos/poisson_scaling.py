"""Two-level BDDC on the homogeneous Poisson cube.

Condition number grows slowly with H/h and iteration counts stay flat as
the number of subdomains grows.
"""
from ambddc.driver import RunConfig, run


def main():
    print("fixed 2x2x2 subdomains, growing H/h")
    for n in (8, 16, 24):
        r = run(RunConfig(n=n, subdomains=[8])).report
        print(f"  H/h={n // 2:>2}  its={r.its:>3}  cond={r.cond:.3f}  Nc={r.n_c[0]}")
    print("fixed H/h=4, growing subdomain count")
    for k in (2, 3, 4):
        r = run(RunConfig(n=4 * k, subdomains=[k ** 3])).report
        print(f"  N={k ** 3:>3}  its={r.its:>3}  cond={r.cond:.3f}  Nc={r.n_c[0]}")


if __name__ == "__main__":
    main()
