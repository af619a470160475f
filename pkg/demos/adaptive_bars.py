"""Elasticity cube with stiff bars: standard versus adaptive constraints.

The non-adaptive run is capped at 200 iterations to keep the demo short.
"""
from ambddc.driver import RunConfig, run


def show(label, st):
    r = st.report
    tail = "" if r.converged else " (cap hit)"
    line = f"{label:<22} its={r.its:>4}{tail}  cond={r.cond:10.3e}  Nc={r.n_c}"
    if r.adaptive:
        line += f"  omega~={r.adaptive['omega']:.3g}  added={r.adaptive['added']}"
    print(line)


def main():
    base = dict(problem="bars", formulation="elasticity", n=16, contrast=1e6, max_iters=200)
    show("2-level c+e", run(RunConfig(subdomains=[8], policy="c+e", **base)))
    show("2-level adaptive tau=2", run(RunConfig(subdomains=[8], policy="adaptive", tau=2.0,
                                                 **base)))
    show("3-level adaptive tau=2", run(RunConfig(levels=3, subdomains=[64, 8],
                                                 policy="adaptive", tau=2.0, **base)))


if __name__ == "__main__":
    main()
