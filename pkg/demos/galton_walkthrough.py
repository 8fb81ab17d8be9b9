"""
Galton heights: fitting a normal model to grouped data.

Galton's table of 928 adult children and their mid-parents records heights
only as one-inch classes, with open classes at both ends.  This script fits
the parent and child margins and the joint table with the three estimators,
prints the estimates side by side, and reports standard errors and 95%
intervals for the means.

Run with ``python demos/galton_walkthrough.py``.
"""

import numpy as np

from groupednormal import (
    FitOptions,
    GaussianParams,
    Method,
    empirical_info_em,
    fit,
    load_galton,
    mard,
)

INIT_1D = GaussianParams.univariate(67.0, 4.0)
INIT_2D = GaussianParams(np.array([67.0, 67.0]), np.array([[3.2, 2.227106], [2.227106, 6.2]]))


def show(which: str, init: GaussianParams) -> None:
    table = load_galton(which)
    print(f"\n== {which}: n={table.n}, cells {table.shape} ==")
    exact = None
    for method in Method:
        res = fit(table, method, init, FitOptions(seed=0))
        vec = np.array(list(res.params.summary().values()))
        if exact is None:
            exact = vec
        tail = "" if method is Method.EXACT else f"  MARD vs exact {100 * mard(vec, exact):.4f}%"
        est = ", ".join(f"{k}={v:.5f}" for k, v in res.params.summary().items())
        print(f"{method.value:5s} [{res.iterations:3d} it] {est}{tail}")
        if method is Method.EM:
            inf = empirical_info_em(table, res.params)
            for j, (lo, hi) in enumerate(zip(inf.ci_lower, inf.ci_upper)):
                print(f"      mean_{j + 1}: se {inf.se[j]:.5f}, 95% CI [{lo:.3f}, {hi:.3f}]")


if __name__ == "__main__":
    show("parent", INIT_1D)
    show("child", INIT_1D)
    show("2d", INIT_2D)
