"""Reference optima of the full-horizon (offline) program from a generic conic solver.

Writes tests/data/offline_oracle.json with every realization stored
explicitly, so the C++ side rebuilds the path without a shared generator.

    python3 tests/oracles/offline_oracle.py
"""

import json
import pathlib

import cvxpy as cp
import numpy as np


def solve(inst):
    I, K, M, T, N = inst["I"], inst["K"], inst["M"], inst["T"], inst["N"]
    eta = inst["eta"]
    E = cp.Variable((N, I))
    Pb = cp.Variable((N * T, I))
    C = cp.Variable((N * T + 1, I))
    cons = [C[0, :] == inst["C0"], E >= 0, E <= T * (inst["P_g_max"] + inst["P_b_max"])]
    cons += [Pb >= inst["P_b_min"], Pb <= inst["P_b_max"], C >= inst["C_min"], C <= inst["C_max"]]
    obj = 0
    for n in range(N):
        s = inst["slow"][n]
        for i in range(I):
            d = E[n, i] - s["A"][i]
            obj = obj + cp.maximum(s["alpha_lt"] * d, s["beta_lt"] * d)
    for t in range(N * T):
        f = inst["fast"][t]
        n = t // T
        H = np.array(f["H_re"]) + 1j * np.array(f["H_im"])
        W = cp.Variable((M * I, K), complex=True)
        for k in range(K):
            hk = H[:, k]
            sig = np.sqrt(inst["sigma2"][k])
            cons.append(cp.imag(hk.conj() @ W[:, k]) == 0)
            lhs = np.sqrt(1.0 + 1.0 / inst["gamma"][k]) * cp.real(hk.conj() @ W[:, k])
            cons.append(cp.norm(cp.hstack([hk.conj() @ W, np.array([sig])]), 2) <= lhs)
        for i in range(I):
            blk = W[i * M:(i + 1) * M, :]
            p_i = cp.sum_squares(cp.real(blk)) + cp.sum_squares(cp.imag(blk))
            cons.append(inst["P_c"] + p_i <= inst["P_g_max"])
            net = inst["P_c"] + p_i + Pb[t, i] - E[n, i] / T
            obj = obj + cp.maximum(f["alpha_rt"] * net, f["beta_rt"] * net)
            cons.append(C[t + 1, i] == eta * C[t, i] + Pb[t, i])
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-8, tol_gap_rel=1e-8, tol_feas=1e-8, max_iter=500)
    assert prob.status == cp.OPTIMAL, prob.status
    return float(prob.value)


def slot_feasible(H, I, K, M, P_c, P_g_max):
    W = cp.Variable((M * I, K), complex=True)
    cons = []
    for k in range(K):
        hk = H[:, k]
        cons.append(cp.imag(hk.conj() @ W[:, k]) == 0)
        cons.append(cp.norm(cp.hstack([hk.conj() @ W, np.array([1.0])]), 2) <= np.sqrt(2.0) * cp.real(hk.conj() @ W[:, k]))
    for i in range(I):
        blk = W[i * M:(i + 1) * M, :]
        cons.append(P_c + cp.sum_squares(cp.real(blk)) + cp.sum_squares(cp.imag(blk)) <= 0.8 * P_g_max)
    prob = cp.Problem(cp.Minimize(0), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        return False
    return prob.status == cp.OPTIMAL


def make(rng, I, K, M, N, eta, C0):
    T = 5
    slow, fast = [], []
    for _ in range(N):
        a = float(abs(rng.normal(1.15, 0.29)))
        slow.append({"alpha_lt": a, "beta_lt": 0.9 * a, "A": [float(abs(rng.normal(25.0, 10.0))) for _ in range(I)]})
    for _ in range(N * T):
        # redraw channels that leave no margin under the power cap
        while True:
            H = (rng.standard_normal((M * I, K)) + 1j * rng.standard_normal((M * I, K))) / np.sqrt(2.0)
            if slot_feasible(H, I, K, M, 10.0, 50.0):
                break
        a = float(np.clip(abs(rng.normal(2.3, 0.575)), 0.23, 4.6))
        fast.append({"alpha_rt": a, "beta_rt": 0.3 * a, "H_re": H.real.tolist(), "H_im": H.imag.tolist()})
    return {
        "I": I, "K": K, "M": M, "T": T, "N": N, "eta": eta,
        "P_c": 10.0, "P_g_max": 50.0, "P_b_min": -2.0, "P_b_max": 2.0,
        "C_min": 0.0, "C_max": 80.0, "C0": C0,
        "gamma": [1.0] * K, "sigma2": [1.0] * K,
        "slow": slow, "fast": fast,
    }


def main():
    rng = np.random.default_rng(20240612)
    shapes = [(1, 1, 2, 2, 0.95, 0.0), (1, 2, 2, 3, 1.0, 40.0), (2, 2, 2, 2, 0.9, 10.0), (2, 3, 2, 2, 0.95, 79.0)]
    insts = [make(rng, *shape) for shape in shapes]
    for inst in insts:
        inst["objective"] = solve(inst)
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "offline_oracle.json"
    out.write_text(json.dumps({"solver": "cvxpy/CLARABEL", "instances": insts}, indent=1) + "\n")
    print(f"wrote {len(insts)} instances to {out}")


if __name__ == "__main__":
    main()
