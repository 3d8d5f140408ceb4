"""End-to-end acceptance checks for the registration pipeline.

Each numbered test verifies one release criterion at its stated tolerance
and records a single PASS/FAIL line (echoed in the terminal summary).
"""

import time

import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.sparse.linalg import eigsh

from conformalreg import correspondence, synth
from conformalreg.correspondence import Correspondence
from conformalreg.features import (
    FeatureSet,
    default_heat_dt,
    heat_features,
    indicator_features,
    normalize_features,
)
from conformalreg.fem import FemOperators, assemble
from conformalreg.mesh import total_area
from conformalreg.pursuit import (
    PursuitConfig,
    PursuitProblem,
    PursuitState,
    energy,
    grad_psibar,
    grad_w,
    solve,
    solve_with_reinit,
)
from conformalreg.spectrum import lb_basis
from conformalreg.stiefel import cayley_step

RESULT_LINES = []


def report(num, ok, detail=""):
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULT_LINES.append(line)
    print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# shared heavy artifacts

HEAT_TIMES = [5, 10, 25, 50, 100, 250]
FEATURE_SCALE = 4.0


@pytest.fixture(scope="module")
def sphere():
    return synth.icosphere(3)


@pytest.fixture(scope="module")
def ops(sphere):
    return assemble(sphere)


@pytest.fixture(scope="module")
def phi(ops):
    return lb_basis(ops, 101).vectors[:, 1:]


def run_pair(src_mesh, src_ops, src_phi, tgt_mesh, feats_for, max_outer=500):
    """Solve a registration pair and evaluate the recovered point map."""
    tgt_ops = assemble(tgt_mesh)
    psi0 = lb_basis(tgt_ops, 101).vectors[:, 1:]
    feats_src, feats_tgt = feats_for(src_ops, tgt_ops)
    problem = PursuitProblem(
        mass_src=src_ops.mass,
        basis_src=src_phi,
        feats_src=feats_src,
        fem_tgt=tgt_ops,
        feats_tgt=feats_tgt,
        area_budget=src_ops.total_area(),
    )
    t0 = time.time()
    result = solve(problem, PursuitConfig(max_outer=max_outer), psi0=psi0)
    elapsed = time.time() - t0
    psi = correspondence.recover_basis(result.w, result.psibar, tgt_ops.lump_sqrt)
    corr = correspondence.point_map(src_phi, psi)
    gt = Correspondence(np.arange(src_mesh.n_vertices))
    report_err = correspondence.geodesic_errors(tgt_mesh, corr, gt)
    return {
        "result": result,
        "elapsed": elapsed,
        "errors": report_err,
        "tgt_ops": tgt_ops,
    }


def heat_feature_builder(lm_src, lm_tgt):
    def build(src_ops, tgt_ops):
        dt = default_heat_dt(src_ops)  # shared diffusion duration
        f = heat_features(src_ops, lm_src, HEAT_TIMES, dt)
        g = heat_features(tgt_ops, lm_tgt, HEAT_TIMES, dt)
        return (
            normalize_features(f, src_ops.mass, FEATURE_SCALE),
            normalize_features(g, tgt_ops.mass, FEATURE_SCALE),
        )

    return build


@pytest.fixture(scope="module")
def identity_run(sphere, ops, phi):
    lm = synth.random_landmarks(sphere, 20, np.random.default_rng(1))

    def build(src_ops, tgt_ops):
        f = indicator_features(sphere, lm)
        return f, f

    return run_pair(sphere, ops, phi, sphere, build)


@pytest.fixture(scope="module")
def scaled_run(sphere, ops, phi):
    lm = synth.random_landmarks(sphere, 20, np.random.default_rng(1))
    target = synth.scaled(sphere, 2.0)

    def build(src_ops, tgt_ops):
        f = indicator_features(sphere, lm)
        return f, f

    return run_pair(sphere, ops, phi, target, build)


@pytest.fixture(scope="module")
def noise_run(sphere, ops, phi):
    target = synth.add_normal_noise(sphere, 0.01, np.random.default_rng(7))
    lm = synth.random_landmarks(sphere, 20, np.random.default_rng(1))
    return run_pair(sphere, ops, phi, target, heat_feature_builder(lm, lm))


@pytest.fixture(scope="module")
def perturbed_run(sphere, ops, phi):
    rng = np.random.default_rng(3)
    lm_src = synth.random_landmarks(sphere, 20, rng)
    lm_tgt = synth.perturb_landmarks(sphere, lm_src, 0.5, rng)
    out = run_pair(sphere, ops, phi, sphere, heat_feature_builder(lm_src, lm_tgt))
    out["lm_src"], out["lm_tgt"] = lm_src, lm_tgt
    return out


@pytest.fixture(scope="module")
def signflip_runs():
    mesh = synth.icosphere(2)
    sops = assemble(mesh)
    basis = lb_basis(sops, 9).vectors[:, 1:]
    lm = synth.random_landmarks(mesh, 12, np.random.default_rng(0))
    feats = indicator_features(mesh, lm)
    problem = PursuitProblem(
        mass_src=sops.mass,
        basis_src=basis,
        feats_src=feats,
        fem_tgt=sops,
        feats_tgt=feats,
        area_budget=sops.total_area(),
    )
    flipped = basis.copy()
    flipped[:, 3] *= -1.0
    config = PursuitConfig(max_outer=60)
    plain = solve(problem, config, psi0=flipped)
    reinit = solve_with_reinit(problem, config, psi0=flipped)
    return plain, reinit


# ---------------------------------------------------------------------------
# criteria


def test_01_operator_correctness():
    meshes = {
        "tetrahedron": synth.tetrahedron(),
        "icosahedron": synth.icosahedron(),
        "icosphere2": synth.icosphere(2),
        "icosphere3": synth.icosphere(3),
    }
    worst = 0.0
    for name, m in meshes.items():
        t0 = time.time()
        o = assemble(m)
        elapsed = time.time() - t0
        S = o.stiffness
        row_sums = np.abs(np.asarray(S.sum(axis=1))).max()
        asym = abs(S - S.T).max()
        norm = abs(S).max()
        lam_min = eigsh(S, k=1, sigma=-1e-3, which="LM", return_eigenvectors=False)[0]
        mass_rel = abs(o.mass.sum() - total_area(m)) / total_area(m)
        ok = (
            row_sums <= 1e-10
            and asym == 0.0
            and lam_min >= -1e-8 * norm
            and mass_rel <= 1e-12
            and elapsed < 1.0
        )
        assert ok, f"{name}: rows {row_sums:.1e} asym {asym:.1e} lam {lam_min:.1e} mass {mass_rel:.1e} {elapsed:.2f}s"
        worst = max(worst, row_sums)
    report(1, True, f"4 meshes, max |row sum| {worst:.1e}")


def test_02_sphere_spectrum(ops):
    t0 = time.time()
    vals = lb_basis(ops, 9).values
    elapsed = time.time() - t0
    dev2 = np.abs(vals[1:4] / 2.0 - 1.0).max()
    dev6 = np.abs(vals[4:9] / 6.0 - 1.0).max()
    ok = vals[0] == pytest.approx(0.0, abs=1e-8) and dev2 <= 0.03 and dev6 <= 0.05 and elapsed < 10.0
    report(2, ok, f"cluster devs {dev2:.3%} / {dev6:.3%}, {elapsed:.2f}s")


def test_03_stiefel_feasibility():
    rng = np.random.default_rng(0)
    n, k = 500, 20
    X, _ = np.linalg.qr(rng.normal(size=(n, k)))
    worst = 0.0
    for _ in range(1000):
        Y = rng.normal(size=(n, k))
        X = cayley_step(X, Y, rng.uniform(0.01, 0.5))
        worst = max(worst, np.abs(X.T @ X - np.eye(k)).max())
    report(3, worst <= 1e-10, f"max orthonormality drift {worst:.2e} over 1000 steps")


def _random_instance(rng, n=100, k=10, n_feats=5):
    mass1 = rng.uniform(0.5, 2.0, n)
    Q, _ = np.linalg.qr(rng.normal(size=(n, k)))
    basis1 = Q / np.sqrt(mass1)[:, None]
    lm = np.arange(n_feats)
    feats1 = FeatureSet(values=rng.normal(size=(n, n_feats)), kind="indicator", landmarks=lm)
    mass2 = rng.uniform(0.5, 2.0, n)
    W = np.abs(rng.normal(size=(n, n)))
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    S = sparse.csr_matrix(np.diag(W.sum(axis=1)) - W)  # weighted graph Laplacian
    fem2 = FemOperators(mass=mass2, stiffness=S)
    feats2 = FeatureSet(values=rng.normal(size=(n, n_feats)), kind="indicator", landmarks=lm)
    problem = PursuitProblem(
        mass_src=mass1, basis_src=basis1, feats_src=feats1,
        fem_tgt=fem2, feats_tgt=feats2, area_budget=float(mass1.sum()),
    )
    P, _ = np.linalg.qr(rng.normal(size=(n, k)))
    state = PursuitState(
        w=rng.uniform(0.5, 2.0, n), psibar=P, b=rng.normal(),
        eta=10.0, eta_w=10.0,
        w_ref=rng.uniform(0.5, 2.0, n), psibar_ref=rng.normal(size=(n, k)),
    )
    return problem, state


def test_04_gradient_verification():
    rng = np.random.default_rng(0)
    h = 1e-6
    worst = 0.0
    for _ in range(20):
        problem, st = _random_instance(rng)

        def at(w, P):
            s = PursuitState(
                w=w, psibar=P, b=st.b, eta=st.eta, eta_w=st.eta_w,
                w_ref=st.w_ref, psibar_ref=st.psibar_ref,
            )
            return energy(problem, s).total_with_prox

        for grad, x, f in (
            (grad_w(problem, st), st.w, lambda w: at(w, st.psibar)),
            (grad_psibar(problem, st), st.psibar, lambda P: at(st.w, P)),
        ):
            for _ in range(3):
                d = rng.normal(size=x.shape)
                d /= np.linalg.norm(d)
                num = (f(x + h * d) - f(x - h * d)) / (2 * h)
                ana = float(np.sum(grad * d))
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-12))
    report(4, worst <= 1e-5, f"max relative gradient error {worst:.2e} over 20 instances")


def test_05_pam_monotonicity(identity_run, scaled_run, noise_run, perturbed_run, signflip_runs):
    runs = [
        identity_run["result"], scaled_run["result"],
        noise_run["result"], perturbed_run["result"],
        *signflip_runs,
    ]
    worst = -np.inf
    rows = 0
    for res in runs:
        eta = 100.0  # frame proximal weight used by all logged runs
        for rec in res.history:
            if rec.get("reinit"):
                prox = 0.0
            else:
                prox = (rec["step_norm_psibar"] ** 2 + rec["step_norm_w"] ** 2) / (2 * eta)
            worst = max(worst, rec["total"] + prox - rec["total_before"])
            rows += 1
    report(5, worst <= 1e-10, f"max descent violation {worst:.2e} over {rows} logged iterations")


def test_06_identity_pair(identity_run, ops):
    rep = identity_run["errors"]
    w2 = identity_run["result"].w ** 2
    dev = np.abs(w2 - 1.0).max()  # area budget equals target area, so w^2 -> 1
    elapsed = identity_run["elapsed"]
    ok = rep.exact_fraction >= 0.95 and dev <= 0.02 and elapsed < 300.0
    report(6, ok, f"exact {rep.exact_fraction:.3f}, w^2 max dev {dev:.4f}, {elapsed:.0f}s")


def test_07_scaled_pair(sphere, scaled_run):
    res = scaled_run["result"]
    w2 = res.w**2
    dev = np.abs(w2 / 0.25 - 1.0).max()
    gt = Correspondence(np.arange(sphere.n_vertices))
    u_gt = correspondence.conformal_ground_truth(sphere, synth.scaled(sphere, 2.0), gt)
    u = np.log(res.w)
    mad = float(np.abs(u - u_gt).mean())
    allowance = 0.05 * float(np.abs(u_gt).mean())
    exact = scaled_run["errors"].exact_fraction
    ok = dev <= 0.05 and mad <= allowance and exact >= 0.90
    report(7, ok, f"w^2 dev {dev:.4f}, u MAD {mad:.2e} (allow {allowance:.2e}), exact {exact:.3f}")


def test_08_noise_robustness(noise_run):
    frac = noise_run["errors"].frac_le_005
    report(8, frac >= 0.80, f"{frac:.3f} of vertices within 0.05 normalized geodesic error")


def test_09_landmark_perturbation(sphere, perturbed_run):
    lm_src, lm_tgt = perturbed_run["lm_src"], perturbed_run["lm_tgt"]
    moved = np.nonzero(lm_src != lm_tgt)[0]
    graph = correspondence.edge_graph(sphere)
    norm = np.sqrt(total_area(sphere))
    init = np.array([
        dijkstra(graph, directed=False, indices=int(lm_src[i]))[int(lm_tgt[i])]
        for i in moved
    ]) / norm
    final = perturbed_run["errors"].errors[lm_src[moved]].mean()
    ok = final < init.mean()
    report(9, ok, f"moved-landmark error {final:.4f} < initial perturbation {init.mean():.4f}")


def test_10_reinitialization_benefit(signflip_runs):
    plain, reinit = signflip_runs
    final_plain = plain.history[-1]["total"]
    final_reinit = reinit.history[-1]["total"]
    events_ok = all(
        rec["total"] <= rec["total_before"] + 1e-10
        for rec in reinit.history
        if rec.get("reinit")
    )
    ok = final_reinit <= final_plain + 1e-9 and events_ok
    report(10, ok, f"final energy {final_reinit:.6g} <= {final_plain:.6g}, reinit events monotone: {events_ok}")


def test_11_documented_scope(pytestconfig):
    readme = pytestconfig.rootpath / "README.md"
    text = readme.read_text() if readme.exists() else ""
    ok = "synthetic" in text.lower() and "acceptance" in text.lower()
    report(11, ok, "README documents the synthetic acceptance substitution for unavailable benchmark data")
