"""Spectrum of one pair eigenproblem before and after adding constraints.

Adding the top k eigenvector constraints drops the largest eigenvalue to
the (k+1)-th eigenvalue of the original pencil.
"""
import numpy as np

from ambddc import adaptive as ad, bddc, fem, level, partition as pt, substructure as ss


def bar_pair(contrast=1e6, nx=8):
    m = fem.build_box_mesh(nx, nx // 2, nx // 2, lengths=(2.0, 1.0, 1.0), dofs_per_node=3)
    c = m.centroids()
    stiff = (np.abs(c[:, 0] - 1.0) < 0.26) & (np.abs(c[:, 2] - 0.5) < 0.13)
    mat = fem.MaterialField(young=np.where(stiff, contrast, 1.0),
                            poisson=np.full(m.n_elements, 0.3))
    ps = fem.assemble(m, mat, fem.ELASTICITY, fem.BoundaryConditions())
    lp = level.from_problem_system(ps)
    dec = pt.decomposition_from_parts(lp, (c[:, 0] > 1.0).astype(int))
    globs, pairs = pt.decompose_level(lp, dec)
    return bddc.setup_level(lp, dec, globs, pairs, ss.initial_constraints(lp, globs, "c+e"))


def main():
    lam, V = ad.build_pair_problem(bar_pair(), 0, 1).dense_eigs()
    print("top eigenvalues:", np.array2string(lam[:6], precision=4))
    for k in (1, 2, 3):
        lev = bar_pair()
        pp = ad.build_pair_problem(lev, 0, 1)
        tau = 0.5 * (lam[k - 1] + lam[k])
        group, _, _ = ad.extract_constraints(pp, lam, V, tau, edge_zeroing=False)
        lev.set_groups(lev.groups + [group])
        new, _ = ad.build_pair_problem(lev, 0, 1).dense_eigs()
        print(f"k={k}: new max {new[0]:.6g}, original lambda_{k + 1} {lam[k]:.6g}")


if __name__ == "__main__":
    main()
