#!/usr/bin/env python3
"""Reference SIMP run: a faithful Python port of the public 88-line topology
optimization MATLAB code (Andreassen et al., 2011), density filter variant
(ft = 2), with a cantilever boundary condition (left edge fully fixed, unit
downward load at the bottom-right corner node).

Used to freeze the reference compliance asserted by the acceptance suite:

    python3 top88.py [nelx] [nely] [volfrac] [penal] [rmin]
"""

import sys

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve


def lk(nu: float) -> np.ndarray:
    A11 = np.array([[12, 3, -6, -3], [3, 12, 3, 0], [-6, 3, 12, -3], [-3, 0, -3, 12]])
    A12 = np.array([[-6, -3, 0, 3], [-3, -6, -3, -6], [0, -3, -6, 3], [3, -6, 3, -6]])
    B11 = np.array([[-4, 3, -2, 9], [3, -4, -9, 4], [-2, -9, -4, -3], [9, 4, -3, -4]])
    B12 = np.array([[2, -3, 4, -9], [-3, 2, 9, -2], [4, 9, 2, 3], [-9, -2, 3, 2]])
    KE = (
        1.0
        / (1.0 - nu**2)
        / 24.0
        * (
            np.block([[A11, A12], [A12.T, A11]])
            + nu * np.block([[B11, B12], [B12.T, B11]])
        )
    )
    return KE


def top88_cantilever(nelx, nely, volfrac, penal, rmin, max_loop=200):
    E0, Emin, nu = 1.0, 1e-9, 0.3
    ndof = 2 * (nelx + 1) * (nely + 1)
    KE = lk(nu)

    nodenrs = np.arange(1, (1 + nelx) * (1 + nely) + 1).reshape(
        (1 + nely, 1 + nelx), order="F"
    )
    edofVec = (2 * nodenrs[:-1, :-1] + 1).reshape(nelx * nely, order="F")
    edofMat = np.tile(edofVec[:, None], (1, 8)) + np.tile(
        np.array([0, 1, 2 * nely + 2, 2 * nely + 3, 2 * nely + 0, 2 * nely + 1, -2, -1]),
        (nelx * nely, 1),
    )
    edofMat -= 1  # to 0-based DOF ids

    iK = np.kron(edofMat, np.ones((8, 1), dtype=int)).flatten()
    jK = np.kron(edofMat, np.ones((1, 8), dtype=int)).flatten()

    # Cantilever: all left-edge DOFs fixed; unit downward load at the
    # bottom-right corner node.
    F = np.zeros(ndof)
    F[2 * (nelx + 1) * (nely + 1) - 1] = -1.0
    fixeddofs = np.arange(0, 2 * (nely + 1))
    freedofs = np.setdiff1d(np.arange(ndof), fixeddofs)

    # Filter
    nfilter = int(nelx * nely * (2 * (np.ceil(rmin) - 1) + 1) ** 2)
    iH = np.zeros(nfilter, dtype=int)
    jH = np.zeros(nfilter, dtype=int)
    sH = np.zeros(nfilter)
    k = 0
    for i1 in range(nelx):
        for j1 in range(nely):
            e1 = i1 * nely + j1
            for i2 in range(
                max(i1 - (int(np.ceil(rmin)) - 1), 0),
                min(i1 + int(np.ceil(rmin)), nelx),
            ):
                for j2 in range(
                    max(j1 - (int(np.ceil(rmin)) - 1), 0),
                    min(j1 + int(np.ceil(rmin)), nely),
                ):
                    e2 = i2 * nely + j2
                    iH[k] = e1
                    jH[k] = e2
                    sH[k] = max(0.0, rmin - np.sqrt((i1 - i2) ** 2 + (j1 - j2) ** 2))
                    k += 1
    H = coo_matrix((sH[:k], (iH[:k], jH[:k])), shape=(nelx * nely, nelx * nely)).tocsr()
    Hs = np.asarray(H.sum(axis=1)).flatten()

    def solve(xPhys):
        sK = (KE.flatten()[:, None] * (Emin + xPhys.flatten(order="F") ** penal * (E0 - Emin))).flatten(
            order="F"
        )
        K = coo_matrix((sK, (iK, jK)), shape=(ndof, ndof)).tocsc()
        U = np.zeros(ndof)
        U[freedofs] = spsolve(K[freedofs][:, freedofs], F[freedofs])
        return U

    x = np.full((nely, nelx), volfrac)
    xPhys = x.copy()
    loop = 0
    change = 1.0
    while change > 0.01 and loop < max_loop:
        loop += 1
        U = solve(xPhys)
        ce = (
            np.sum(U[edofMat] @ KE * U[edofMat], axis=1)
            .reshape((nely, nelx), order="F")
        )
        c = np.sum((Emin + xPhys**penal * (E0 - Emin)) * ce)
        dc = -penal * (E0 - Emin) * xPhys ** (penal - 1) * ce
        dv = np.ones((nely, nelx))
        dc = (H @ (dc.flatten(order="F") / Hs)).reshape((nely, nelx), order="F")
        dv = (H @ (dv.flatten(order="F") / Hs)).reshape((nely, nelx), order="F")

        l1, l2, move = 0.0, 1e9, 0.2
        while (l2 - l1) / (l1 + l2) > 1e-3:
            lmid = 0.5 * (l2 + l1)
            xnew = np.maximum(
                0.0,
                np.maximum(
                    x - move,
                    np.minimum(1.0, np.minimum(x + move, x * np.sqrt(-dc / dv / lmid))),
                ),
            )
            xPhys = (H @ xnew.flatten(order="F") / Hs).reshape((nely, nelx), order="F")
            if xPhys.sum() > volfrac * nelx * nely:
                l1 = lmid
            else:
                l2 = lmid
        change = np.abs(xnew - x).max()
        x = xnew
        print(f" It.:{loop:4d} Obj.:{c:11.4f} Vol.:{xPhys.mean():6.3f} ch.:{change:6.3f}")

    # Final compliance on the converged physical densities (fresh solve).
    U = solve(xPhys)
    ce = np.sum(U[edofMat] @ KE * U[edofMat], axis=1).reshape((nely, nelx), order="F")
    c_final = np.sum((Emin + xPhys**penal * (E0 - Emin)) * ce)
    return c_final, loop, xPhys


if __name__ == "__main__":
    args = sys.argv[1:]
    nelx = int(args[0]) if len(args) > 0 else 80
    nely = int(args[1]) if len(args) > 1 else 40
    volfrac = float(args[2]) if len(args) > 2 else 0.5
    penal = float(args[3]) if len(args) > 3 else 3.0
    rmin = float(args[4]) if len(args) > 4 else 1.5
    c, loops, xPhys = top88_cantilever(nelx, nely, volfrac, penal, rmin)
    print(f"final_compliance={c!r} iterations={loops} volume={xPhys.mean()!r}")
