#!/usr/bin/env python3
"""Expand the Sylvester determinants that eliminate y from the cubic pair (A, B).

For every combination of y-degrees (deg_a, deg_b) in {1, 2, 3}^2 the Sylvester
matrix is built from the y-coefficient polynomials

    y^3: a03            y^2: a02 + a12 x
    y^1: a21 x^2 + a11 x + a01
    y^0: a30 x^3 + a20 x^2 + a10 x + a00

(and likewise for B), its determinant is expanded symbolically and written out
as a flat list of monomials grouped by the power of x.

Output: data/resultants.json, consumed by build.rs.

Usage: python3 tools/gen_resultants.py [output-path]
"""
import json
import os
import sys

import sympy as sp

NAMES = ["30", "21", "12", "03", "20", "11", "02", "10", "01", "00"]
# Degree of the resultant and the factor structure reported for each case.
TABLE = {
    (3, 3): (9, "-"),
    (2, 3): (9, "-"),
    (1, 3): (9, "-"),
    (3, 2): (9, "-"),
    (3, 1): (9, "-"),
    (2, 2): (8, "5,3"),
    (1, 2): (7, "-"),
    (2, 1): (7, "-"),
    (1, 1): (5, "-"),
}


def y_coefficients(c, deg, x):
    s_y0 = c["30"] * x**3 + c["20"] * x**2 + c["10"] * x + c["00"]
    s_y1 = c["21"] * x**2 + c["11"] * x + c["01"]
    s_y2 = c["02"] + c["12"] * x
    full = [c["03"], s_y2, s_y1, s_y0]
    return full[3 - deg:]


def sylvester(p, q):
    n = len(p) - 1
    m = len(q) - 1
    size = n + m
    mat = sp.zeros(size, size)
    for i in range(m):
        for k, coef in enumerate(p):
            mat[i, i + k] = coef
    for i in range(n):
        for k, coef in enumerate(q):
            mat[m + i, i + k] = coef
    return mat


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "data", "resultants.json")
    x = sp.Symbol("x")
    a_syms = sp.symbols(" ".join("a" + n for n in NAMES))
    b_syms = sp.symbols(" ".join("b" + n for n in NAMES))
    all_syms = list(a_syms) + list(b_syms)
    a = dict(zip(NAMES, a_syms))
    b = dict(zip(NAMES, b_syms))

    cases = []
    for deg_a in (3, 2, 1):
        for deg_b in (3, 2, 1):
            mat = sylvester(y_coefficients(a, deg_a, x), y_coefficients(b, deg_b, x))
            det = sp.expand(mat.det(method="berkowitz"))
            poly = sp.Poly(det, x, *all_syms)
            terms = []
            for monom, coef in sorted(poly.terms()):
                power = monom[0]
                factors = []
                for idx, exp in enumerate(monom[1:]):
                    factors.extend([idx] * exp)
                terms.append([power, int(coef), factors])
            degree, factor_tag = TABLE[(deg_a, deg_b)]
            actual = max(t[0] for t in terms)
            if actual != degree:
                raise SystemExit(f"case {(deg_a, deg_b)}: degree {actual} != {degree}")
            cases.append({
                "deg_a": deg_a,
                "deg_b": deg_b,
                "degree": degree,
                "factors": factor_tag,
                "size": deg_a + deg_b,
                "terms": terms,
            })
            print(f"case ({deg_a},{deg_b}): degree {degree}, {len(terms)} terms", file=sys.stderr)

    doc = {
        "format": "sylvester-resultant-tables",
        "version": 1,
        "coefficient_order": ["a" + n for n in NAMES] + ["b" + n for n in NAMES],
        "cases": cases,
    }
    with open(out, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


if __name__ == "__main__":
    main()
