"""Command-line pipeline: operator assembly, eigensolving, joint solve,
point-map extraction, evaluation and synthetic pair generation.

Exit codes: 0 success, 2 usage/input error, 3 numerical-infrastructure
failure, 4 solver non-convergence (best-effort outputs are still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import correspondence, features, fem, mesh, pursuit, spectrum, synth

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_NO_CONVERGENCE = 4


DEFAULT_CONFIG = {
    "source_mesh": "",
    "target_mesh": "",
    "landmarks": "",
    "out_dir": "out",
    "k": 100,
    "r1": 10.0,
    "r2": 10.0,
    "r3": 1.0,
    "r4": 0.01,
    "eta": 100.0,
    "eta_w": 1e-5,
    "warm_start_multiplier": 1,
    "rounds": 1,
    "max_outer": 500,
    "energy_tol": 1e-6,
    "step_tol": 1e-3,
    "patience": 10,
    "reinit": 0,
    "stall_tol": 1e-4,
    "stall_window": 10,
    "max_reinits": 5,
    "inner_max_iter": 100,
    "feature_kind": "indicator",
    "feature_scale": 0.0,  # 0 = raw features; >0 = normalize columns to this M-norm
    "heat_dt": 0.0,  # 0 = automatic (mean vertex mass scale)
    "heat_times": "5,10,25,50,100,250",
    "wks_energies": "",  # empty = automatic grid
    "wks_sigma": 0.0,  # 0 = automatic
    "seed": 0,
    "verbosity": 1,
}


class UsageError(ValueError):
    """Bad input or configuration; maps to exit code 2."""


def parse_config(path: str | Path) -> dict:
    """Flat ``key = value`` configuration file over DEFAULT_CONFIG."""
    cfg = dict(DEFAULT_CONFIG)
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"malformed config line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in cfg:
            raise UsageError(f"unknown config key {key!r}")
        default = DEFAULT_CONFIG[key]
        if isinstance(default, int):
            cfg[key] = int(value)
        elif isinstance(default, float):
            cfg[key] = float(value)
        else:
            cfg[key] = value
    return cfg


def save_matrix(path: str | Path, m: np.ndarray) -> None:
    np.savetxt(path, m)


def load_matrix(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)


def load_landmarks(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Landmark file: one `source_index target_index` pair per line."""
    pairs = np.loadtxt(path, dtype=np.int64, ndmin=2)
    if pairs.shape[1] != 2:
        raise UsageError("landmark file must have two columns")
    return pairs[:, 0], pairs[:, 1]


def save_landmarks(path: str | Path, src: np.ndarray, tgt: np.ndarray) -> None:
    np.savetxt(path, np.column_stack([src, tgt]), fmt="%d")


# ---------------------------------------------------------------------------
# subcommands


def cmd_assemble(args) -> int:
    m = mesh.load_mesh(args.mesh)
    ops = fem.assemble(m)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fem.save_mass(ops, out / "mass.txt")
    fem.save_stiffness_triplets(ops, out / "stiffness.txt")
    logger.info("wrote %s and %s", out / "mass.txt", out / "stiffness.txt")
    return EXIT_OK


def cmd_eigs(args) -> int:
    m = mesh.load_mesh(args.mesh)
    mesh.require_closed(m)
    if args.k >= m.n_vertices:
        raise UsageError(f"k={args.k} must be smaller than n={m.n_vertices}")
    ops = fem.assemble(m)
    basis = spectrum.lb_basis(ops, args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "eigenvalues.txt", basis.values)
    save_matrix(out / "basis.txt", basis.vectors)
    return EXIT_OK


def _build_features(kind, m, ops, basis, landmarks, cfg):
    if kind == "indicator":
        return features.indicator_features(m, landmarks)
    if kind == "heat":
        dt = cfg["heat_dt"] or features.default_heat_dt(ops)
        times = [int(t) for t in str(cfg["heat_times"]).split(",") if t.strip()]
        return features.heat_features(ops, landmarks, times, dt)
    if kind == "wks":
        sigma = cfg["wks_sigma"] or features.default_wks_sigma(basis)
        if cfg["wks_energies"]:
            energies = [float(e) for e in str(cfg["wks_energies"]).split(",")]
        else:
            vals = basis.values[basis.values > 1e-8 * basis.values.max()]
            energies = list(np.linspace(np.log(vals[0]), np.log(vals[-1]), 10))
        return features.wks_features(basis, landmarks, energies, sigma)
    raise UsageError(f"unknown feature kind {kind!r}")


def run_solve(cfg: dict) -> tuple[pursuit.PursuitResult, Path]:
    """Full registration pipeline driven by a parsed config dict."""
    for key in ("source_mesh", "target_mesh", "landmarks"):
        if not cfg[key]:
            raise UsageError(f"config key {key!r} is required")
    m1 = mesh.load_mesh(cfg["source_mesh"])
    m2 = mesh.load_mesh(cfg["target_mesh"])
    mesh.require_closed(m1)
    mesh.require_closed(m2)
    fem1, fem2 = fem.assemble(m1), fem.assemble(m2)
    lm_src, lm_tgt = load_landmarks(cfg["landmarks"])

    k = min(int(cfg["k"]), m1.n_vertices - 2, m2.n_vertices - 2)
    basis1 = spectrum.lb_basis(fem1, k + 1)
    basis2 = spectrum.lb_basis(fem2, k + 1)
    phi = basis1.vectors[:, 1:]
    psi0 = basis2.vectors[:, 1:]

    if cfg["feature_kind"] == "heat" and not cfg["heat_dt"]:
        # one shared time step so both sides diffuse for the same duration
        cfg = dict(cfg, heat_dt=features.default_heat_dt(fem1))
    feats_src = _build_features(cfg["feature_kind"], m1, fem1, basis1, lm_src, cfg)
    feats_tgt = _build_features(cfg["feature_kind"], m2, fem2, basis2, lm_tgt, cfg)
    if cfg["feature_scale"] > 0:
        feats_src = features.normalize_features(feats_src, fem1.mass, cfg["feature_scale"])
        feats_tgt = features.normalize_features(feats_tgt, fem2.mass, cfg["feature_scale"])

    problem = pursuit.PursuitProblem(
        mass_src=fem1.mass,
        basis_src=phi,
        feats_src=feats_src,
        fem_tgt=fem2,
        feats_tgt=feats_tgt,
        area_budget=fem1.total_area(),
        r1=cfg["r1"], r2=cfg["r2"], r3=cfg["r3"], r4=cfg["r4"],
    )
    config = pursuit.PursuitConfig(
        eta=cfg["eta"], eta_w=cfg["eta_w"],
        warm_start_multiplier=bool(cfg["warm_start_multiplier"]),
        rounds=cfg["rounds"], max_outer=cfg["max_outer"],
        energy_tol=cfg["energy_tol"], step_tol=cfg["step_tol"],
        patience=cfg["patience"],
        stall_tol=cfg["stall_tol"], stall_window=cfg["stall_window"],
        max_reinits=cfg["max_reinits"], inner_max_iter=cfg["inner_max_iter"],
        seed=cfg["seed"],
    )
    solver = pursuit.solve_with_reinit if cfg["reinit"] else pursuit.solve
    result = solver(problem, config, psi0=psi0)

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "w.txt", result.w)
    psi = correspondence.recover_basis(result.w, result.psibar, fem2.lump_sqrt)
    save_matrix(out / "basis.txt", psi)
    save_matrix(out / "source_basis.txt", phi)
    pursuit.write_history_csv(result.history, out / "history.csv")
    return result, out


def cmd_solve(args) -> int:
    cfg = parse_config(args.config)
    result, out = run_solve(cfg)
    if not result.converged:
        logger.warning("solver did not converge; best-effort outputs in %s", out)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_map(args) -> int:
    phi = load_matrix(args.source_basis)
    psi = load_matrix(args.target_basis)
    if phi.shape[1] != psi.shape[1]:
        raise UsageError(
            f"basis column counts differ: {phi.shape[1]} vs {psi.shape[1]}"
        )
    corr = correspondence.point_map(phi, psi)
    corr.save(args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    m = mesh.load_mesh(args.mesh)
    mapped = correspondence.Correspondence.load(args.map)
    gt = correspondence.Correspondence.load(args.gt)
    report = correspondence.geodesic_errors(m, mapped, gt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save_curve_csv(out / "curve.csv")
    report.save_summary_json(out / "summary.json")
    return EXIT_OK


def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.base == "icosphere":
        src = synth.icosphere(args.subdivisions, args.radius)
    else:
        src = mesh.load_mesh(args.base)
    tgt = src
    if args.scale != 1.0:
        tgt = synth.scaled(tgt, args.scale)
    if args.noise > 0:
        tgt = synth.add_normal_noise(tgt, args.noise, rng)
    lm = synth.random_landmarks(src, args.landmarks, rng)
    lm_tgt = synth.perturb_landmarks(tgt, lm, args.perturb, rng) if args.perturb > 0 else lm.copy()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mesh.save_off(src, out / "source.off")
    mesh.save_off(tgt, out / "target.off")
    save_landmarks(out / "landmarks.txt", lm, lm_tgt)
    gt = correspondence.Correspondence(indices=np.arange(src.n_vertices), method="identity")
    gt.save(out / "gt.txt")
    return EXIT_OK


def cmd_defaults(_args) -> int:
    for key, value in DEFAULT_CONFIG.items():
        print(f"{key} = {value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conformalreg", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("assemble", help="write mass/stiffness operator files")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_assemble)

    sp = sub.add_parser("eigs", help="write eigenvalue and basis files")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eigs)

    sp = sub.add_parser("solve", help="run the joint registration solve")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("map", help="extract point map from two basis files")
    sp.add_argument("--source-basis", required=True)
    sp.add_argument("--target-basis", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("eval", help="normalized geodesic error report")
    sp.add_argument("--mesh", required=True, help="target mesh")
    sp.add_argument("--map", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("synth", help="generate a synthetic test pair")
    sp.add_argument("--base", default="icosphere", help="'icosphere' or a mesh path")
    sp.add_argument("--subdivisions", type=int, default=3)
    sp.add_argument("--radius", type=float, default=1.0)
    sp.add_argument("--scale", type=float, default=1.0)
    sp.add_argument("--noise", type=float, default=0.0, help="sigma as bbox-diagonal fraction")
    sp.add_argument("--landmarks", type=int, default=20)
    sp.add_argument("--perturb", type=float, default=0.0, help="fraction of landmarks moved to a 1-ring neighbor")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("defaults", help="print all config defaults")
    sp.set_defaults(func=cmd_defaults)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, mesh.MeshError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (spectrum.EigenSolverError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
