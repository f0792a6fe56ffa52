import numpy as np
import pytest

from condensa.assembly import ProblemParams, assemble_counterexample_inner
from condensa.krylov import NotSymmetricPositiveDefinite
from condensa.norms import evaluate_norms
from condensa.precond import PreconditionerSpec, build_full, build_reduced

from conftest import darcy_problem, stokes_problem


def test_spec_validation():
    with pytest.raises(ValueError):
        PreconditionerSpec("stokes", "counterexample", "full")
    with pytest.raises(ValueError):
        PreconditionerSpec("darcy", "robust", "full", zeta=10.0)
    with pytest.raises(ValueError):
        PreconditionerSpec("darcy", "robust", "everything")
    assert PreconditionerSpec("stokes", "robust", "reduced", zeta=100.0,
                              hatted=True).label() == "stokes-reduced-hat-zeta100"


@pytest.mark.parametrize("problem,kind", [("darcy", "robust"),
                                          ("darcy", "counterexample"),
                                          ("stokes", "robust")])
def test_apply_then_multiply_recovers(rng, problem, kind):
    if problem == "darcy":
        mesh, spaces, params, _, _ = darcy_problem(n=2, with_data=False)
    else:
        mesh, spaces, params, _, _ = stokes_problem(n=2, with_data=False)
    op = build_full(PreconditionerSpec(problem, kind, "full"), mesh, spaces, params)
    P = op.system.to_sparse()
    r = rng.standard_normal(P.shape[0])
    assert np.abs(P @ op.apply(r) - r).max() <= 1e-11 * np.abs(r).max()


def test_precond_apply_symmetric_positive(rng):
    mesh, spaces, params, _, _ = darcy_problem(n=2, with_data=False)
    op = build_full(PreconditionerSpec("darcy", "robust", "full"), mesh, spaces, params)
    a = rng.standard_normal(op.n)
    b = rng.standard_normal(op.n)
    assert abs(a @ op.apply(b) - b @ op.apply(a)) <= 1e-11 * np.abs(a @ op.apply(b))
    assert a @ op.apply(a) > 0


def test_full_energy_matches_norms_module(rng):
    # <P x, x> equals |||x|||_X^2 computed by the independent quadrature path
    mesh, spaces, params, _, inner = darcy_problem(n=2, with_data=False)
    P = inner.to_sparse()
    x = rng.standard_normal(P.shape[0])
    energy = x @ (P @ x)
    norm2 = evaluate_norms(inner, x)["tnorm_X"] ** 2
    assert abs(energy - norm2) <= 1e-12 * norm2

    meshS, spS, paramsS, _, innerS = stokes_problem(n=2, with_data=False)
    PS = innerS.to_sparse()
    xS = rng.standard_normal(PS.shape[0])
    assert abs(xS @ (PS @ xS) - evaluate_norms(innerS, xS)["tnorm_X"] ** 2) \
        <= 1e-12 * (xS @ (PS @ xS))


def test_xi_scaling_halves_velocity_energy():
    mesh, spaces, _, _, inner1 = darcy_problem(n=2, xi=1.0, with_data=False)
    _, _, _, _, inner2 = darcy_problem(n=2, xi=2.0, gamma=1.0, with_data=False)
    usl = inner1.layout.cell_field_slice("u")
    assert np.abs(inner2.a11[:, usl, usl] - 0.5 * inner1.a11[:, usl, usl]).max() < 1e-14


def test_parameter_scaling_blockwise(rng):
    # (xi, gamma) -> (c xi, c gamma): velocity block x 1/c, pressure block x c
    c = 7.5
    mesh, spaces, _, _, p1 = darcy_problem(n=2, xi=1.3, gamma=0.7, with_data=False)
    _, _, _, _, p2 = darcy_problem(n=2, xi=1.3 * c, gamma=0.7 * c, with_data=False)
    lay = p1.layout
    x = rng.standard_normal(lay.n_total)
    xu = x.copy()
    cells, trace = lay.split(xu)
    cells[:, lay.cell_field_slice("p")] = 0.0
    trace[:] = 0.0
    e1u = xu @ (p1.to_sparse() @ xu)
    e2u = xu @ (p2.to_sparse() @ xu)
    assert abs(e2u - e1u / c) <= 1e-12 * e1u
    xp = x.copy()
    cellsp, _ = lay.split(xp)
    cellsp[:, lay.cell_field_slice("u")] = 0.0
    e1p = xp @ (p1.to_sparse() @ xp)
    e2p = xp @ (p2.to_sparse() @ xp)
    assert abs(e2p - c * e1p) <= 1e-12 * e2p


def test_reduced_counterexample_against_dense_inverse(rng):
    mesh, spaces, params, _, _ = darcy_problem(n=1, with_data=False)
    op = build_reduced(PreconditionerSpec("darcy", "counterexample", "reduced"),
                       mesh, spaces, params)
    ce = assemble_counterexample_inner(mesh, spaces, params)
    Sdense = ce.a22.toarray()
    r = rng.standard_normal(op.n)
    assert np.abs(op.apply(r) - np.linalg.solve(Sdense, r)).max() \
        <= 1e-12 * np.abs(r).max()


def test_minimization_property(rng):
    # <S_P xbar, xbar> = min over cell parts of <P (w, xbar), (w, xbar)>,
    # attained at w = -P11^-1 P21^T xbar
    mesh, spaces, params, _, inner = darcy_problem(n=2, with_data=False)
    op = build_reduced(PreconditionerSpec("darcy", "robust", "reduced"),
                       mesh, spaces, params, inner=inner)
    lay = inner.layout
    P = inner.to_sparse()
    for _ in range(5):
        xbar = rng.standard_normal(lay.n_trace)
        sp_energy = xbar @ (op.S @ xbar)
        w = rng.standard_normal(lay.n_cell_total)
        x = np.concatenate([w, xbar])
        assert sp_energy <= x @ (P @ x) + 1e-11
        # the explicit minimizer attains it
        wmin = np.empty(lay.n_cell_total)
        cells = wmin.reshape(mesh.n_cells, lay.cell_size)
        for c in range(mesh.n_cells):
            tids = inner.tids[c]
            tv = np.where(tids >= 0, xbar[np.maximum(tids, 0)], 0.0)
            cells[c] = -np.linalg.solve(inner.a11[c], inner.a21[c].T @ tv)
        xm = np.concatenate([wmin, xbar])
        assert abs(xm @ (P @ xm) - sp_energy) <= 1e-11 * max(sp_energy, 1.0)


@pytest.mark.parametrize("xi", [1e-6, 1.0])
@pytest.mark.parametrize("gamma", [1e-4, 1.0, 1e4])
def test_reduced_spd_across_sweep(xi, gamma):
    mesh, spaces, params, _, inner = darcy_problem(n=4, xi=xi, gamma=gamma,
                                                   with_data=False)
    op = build_reduced(PreconditionerSpec("darcy", "robust", "reduced"),
                       mesh, spaces, params, inner=inner)  # factor_spd certifies
    assert op.S.shape[0] == inner.layout.n_trace


@pytest.mark.parametrize("zeta,hatted", [(0.0, False), (100.0, False), (100.0, True)])
def test_stokes_variants_spd(zeta, hatted):
    mesh, spaces, params, _, inner = stokes_problem(n=2, nu=1e-6, zeta=zeta,
                                                    hatted=hatted, with_data=False)
    build_reduced(PreconditionerSpec("stokes", "robust", "reduced", zeta=zeta,
                                     hatted=hatted), mesh, spaces, params,
                  inner=inner)
    build_full(PreconditionerSpec("stokes", "robust", "full", zeta=zeta,
                                  hatted=hatted), mesh, spaces, params,
               inner=inner)


def test_hatted_positivity_certified_at_factorization():
    # eta far below the coercivity threshold: the hatted velocity block is
    # indefinite and the build must report it rather than proceed
    mesh, spaces, _, _, _ = stokes_problem(n=2, with_data=False)
    bad = ProblemParams(k=2, nu=1.0, zeta=0.0, eta=1.01)
    with pytest.raises(NotSymmetricPositiveDefinite):
        build_full(PreconditionerSpec("stokes", "robust", "full", hatted=True),
                   mesh, spaces, bad)
