"""Quick checks of the pysubscale extension.

Build first:  cd crates/python && maturin develop --release
"""

import math

import pysubscale as ps


def main():
    assert "manufactured" in ps.benchmarks()

    c = ps.constants(1)
    assert abs(c["c_trace"] - 12.0) < 1e-9, c
    assert abs(c["c_inv_grad"] - 24.0) < 1e-9, c

    m = ps.Model("manufactured", p=2, pf=1, nel=8)
    state, residual = m.solve()
    assert residual < 1e-10, residual
    assert len(state.coarse) == m.n_dofs
    assert len(state.subscale) == m.n_elements == 64
    err = m.error_norms(state)
    assert math.isfinite(err["l2_coarse"]) and err["l2_coarse"] < 1e-2, err
    print(f"manufactured p=2 pf=1 8x8: L2 error {err['l2_coarse']:.3e}, residual {residual:.1e}")

    assert m.coercivity(samples=20, seed=1) > 0.0

    l2, supg = ps.convergence(1, 1, [8, 16, 32])
    assert abs(l2 - 2.0) < 0.1 and abs(supg - 1.5) < 0.1, (l2, supg)
    print(f"p=pf=1 slopes: L2 {l2:.3f}, SUPG {supg:.3f}")

    hill = ps.Model("hill", nel=16)
    states = hill.transient(dt=0.05, snapshots=[0.5, 1.0])
    assert [round(s.t, 12) for s in states] == [0.5, 1.0]
    peak = max(row[3] for row in hill.slice(states[-1], n=256))
    assert 0.0 < peak < 1.2, peak

    skew = ps.Model("skew", nel=16, bc="weak")
    s, _ = skew.solve()
    line = skew.slice(s, n=64)
    assert len(line) == 64 and all(math.isfinite(r[3]) for r in line)

    try:
        ps.Model("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown problem accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
