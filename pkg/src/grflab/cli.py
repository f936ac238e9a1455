"""Command line interface: scenario runs, randomized verification, reports.

Subcommands:

    grflab run <config.json>     forward flow + backward density solve +
                                 functional report CSV + detection flags
    grflab verify --seed S --mesh N [--suite ...]
                                 seeded randomized cross-checks of the core
                                 operator implementations
    grflab report <run-dir>      human-readable summary of a stored run

Exit codes: 0 clean, 1 blow-up or solver abort, 2 identity gap beyond
tolerance.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import algebra, conjugate, flow, functionals, geometry, oracle, torsion
from .algebra import LieAlgebra
from .fields import DomainError, Mesh
from .geometry import GeometryState, TorsionField, derive, min_eig_field


# --- presets -----------------------------------------------------------------

def _constant_state(alg: LieAlgebra, mesh: Mesh, G0, g0) -> GeometryState:
    k, d = alg.k, mesh.d
    G = np.broadcast_to(np.asarray(G0, dtype=float),
                        mesh.shape + (k, k)).copy()
    g = np.broadcast_to(np.asarray(g0, dtype=float),
                        mesh.shape + (d, d)).copy()
    A = np.zeros(mesh.shape + (d, k))
    return GeometryState(0.0, mesh, alg, G, g, A, TorsionField.zeros(mesh, k))


def preset_flat_abelian(N: int = 64) -> GeometryState:
    """Static product: two abelian fiber directions over a unit circle."""
    return _constant_state(algebra.abelian(2), Mesh((N,), (1.0,)),
                           np.eye(2), np.eye(1))


def preset_heisenberg_s1(N: int = 64) -> GeometryState:
    """Constant Heisenberg fibers over a unit circle."""
    return _constant_state(algebra.heisenberg3(), Mesh((N,), (1.0,)),
                           np.eye(3), np.eye(1))


def preset_torus_bundle_t2(N: int = 32) -> GeometryState:
    """Two abelian fiber directions over a 2-torus with curving connection."""
    mesh = Mesh((N, N), (2.0 * np.pi, 2.0 * np.pi))
    st = _constant_state(algebra.abelian(2), mesh, np.eye(2), np.eye(2))
    X, Y = mesh.coords()
    st.A[..., 0, 0] = 0.3 * np.sin(Y)
    st.A[..., 1, 1] = 0.3 * np.sin(X)
    return st


def preset_inoue_like(N: int = 64) -> GeometryState:
    """Three abelian fiber directions over a circle with constant fiber
    3-form torsion, so the vertical torsion component is active."""
    st = _constant_state(algebra.abelian(3), Mesh((N,), (1.0,)),
                         np.eye(3), np.eye(1))
    h = 0.5
    for perm, sgn in (((0, 1, 2), 1), ((1, 2, 0), 1), ((2, 0, 1), 1),
                      ((0, 2, 1), -1), ((2, 1, 0), -1), ((1, 0, 2), -1)):
        st.H.H3[..., perm[0], perm[1], perm[2]] = sgn * h
    return st


PRESETS = {
    "flat-abelian": preset_flat_abelian,
    "heisenberg-s1": preset_heisenberg_s1,
    "torus-bundle-t2": preset_torus_bundle_t2,
    "inoue-like": preset_inoue_like,
}


# --- configuration -----------------------------------------------------------

@dataclass
class ScenarioConfig:
    preset: str
    mesh_n: int | None = None
    algebra: object = None
    h3_wave_amp: float = 0.0
    mode: str = "ungauged"
    t_end: float = 0.2
    cfl_sigma: float = 0.1
    fixed_dt: float | None = None
    max_steps: int = 200000
    save_every: int = 1
    report_stride: int = 50
    conj_mode: str = "steady"
    n_override: int | None = None
    identity_rel_tol: float = 0.01
    output_dir: str = "run-out"
    seed: int = 0

    def build_state(self) -> GeometryState:
        builder = PRESETS[self.preset]
        st = builder(self.mesh_n) if self.mesh_n is not None else builder()
        if self.algebra is not None:
            alg = algebra.require_valid(algebra.algebra_from_spec(self.algebra))
            if alg.k != st.k:
                raise ConfigError(
                    f"/algebra: fiber dimension {alg.k} does not match "
                    f"preset fiber dimension {st.k}")
            st = GeometryState(st.t, st.mesh, alg, st.G, st.g, st.A, st.H)
        if self.h3_wave_amp:
            x0 = st.mesh.coords()[0]
            prof = 1.0 + self.h3_wave_amp * np.sin(
                2.0 * np.pi * x0 / st.mesh.lengths[0])
            st.H.H3 = st.H.H3 * prof[(...,) + (None,) * 3]
        return st


_KNOWN_KEYS = {
    "preset", "mesh_n", "algebra", "h3_wave_amp", "mode", "t_end",
    "cfl_sigma", "fixed_dt", "max_steps", "save_every", "report_stride",
    "conj_mode", "n_override", "identity_rel_tol", "output_dir", "seed",
}


class ConfigError(ValueError):
    pass


def load_config(path: str) -> ScenarioConfig:
    """Parse and validate a scenario file, reporting all problems at once."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for key in raw:
        if key not in _KNOWN_KEYS:
            problems.append(f"/{key}: unknown key")
    preset = raw.get("preset")
    if preset is None:
        problems.append("/preset: required")
    elif preset not in PRESETS:
        problems.append(
            f"/preset: unknown preset {preset!r}; "
            f"choose from {sorted(PRESETS)}")
    mode = raw.get("mode", "ungauged")
    if mode not in ("ungauged", "canonical"):
        problems.append(f"/mode: must be ungauged or canonical, got {mode!r}")
    conj_mode = raw.get("conj_mode", "steady")
    if conj_mode not in ("steady", "expander"):
        problems.append(f"/conj_mode: must be steady or expander, got {conj_mode!r}")
    t_end = raw.get("t_end", 0.2)
    if not (isinstance(t_end, (int, float)) and t_end > 0):
        problems.append("/t_end: must be a positive number")
    for key in ("mesh_n", "save_every", "report_stride", "max_steps", "seed"):
        if key in raw and raw[key] is not None and (
                not isinstance(raw[key], int) or raw[key] <= 0 and key != "seed"):
            problems.append(f"/{key}: must be a positive integer")
    if problems:
        raise ConfigError(f"{path}: " + "; ".join(problems))
    cfg = ScenarioConfig(preset=preset, mode=mode, conj_mode=conj_mode,
                         t_end=float(t_end))
    for key in ("mesh_n", "algebra", "h3_wave_amp", "cfl_sigma", "fixed_dt",
                "max_steps", "save_every", "report_stride", "n_override",
                "identity_rel_tol", "output_dir", "seed"):
        if key in raw and raw[key] is not None:
            setattr(cfg, key, raw[key])
    try:
        state = cfg.build_state()
        state.validate()
    except algebra.AlgebraValidationError as exc:
        raise ConfigError(f"{path}: /algebra: {exc}") from exc
    except DomainError as exc:
        raise ConfigError(f"{path}: initial state invalid: {exc}") from exc
    closed = torsion.closedness_residual(state, derive(state, validated=True))
    if closed > 1e-6:
        raise ConfigError(
            f"{path}: initial torsion is not closed, ||dH||_inf = {closed:.3e}")
    return cfg


# --- pipeline ----------------------------------------------------------------

CSV_COLUMNS = ["t", "F", "W", "R1", "R2", "R3", "R4", "W_extra",
               "dF_dt_fd", "identity_gap_F", "identity_gap_W",
               "min_eig_G", "min_eig_g", "mass_u"]


def build_report(hist: flow.FlowHistory, traj, cfg: ScenarioConfig) -> list[dict]:
    """Per-report-time functional evaluations along the coupled run."""
    by_t = {round(c.t, 12): c for c in traj}
    n = traj[0].n
    rows = []
    indices = list(range(0, len(hist.times), cfg.report_stride))
    if indices[-1] != len(hist.times) - 1:
        indices.append(len(hist.times) - 1)
    for i in indices:
        t = hist.times[i]
        c = by_t.get(round(t, 12))
        if c is None:
            continue
        st = hist.states[i]
        der = derive(st, validated=True)
        full = torsion.pack_full(st.H, st.alg, st.mesh)
        f_steady = conjugate.potential(c.u, t, "steady", n)
        Fval = functionals.eval_F(st, f_steady, der, full)
        R = functionals.residuals_F(st, f_steady, der, full)
        row = {
            "t": t, "F": Fval,
            "R1": R[0], "R2": R[1], "R3": R[2], "R4": R[3],
            "min_eig_G": min_eig_field(st.G),
            "min_eig_g": min_eig_field(st.g),
            "mass_u": c.mass,
        }
        if t > 0:
            f_exp = conjugate.potential(c.u, t, "expander", n)
            row["W"] = functionals.eval_Wplus(st, f_exp, t, n, der, full)
            RW = functionals.residuals_W(st, f_exp, t, n, der, full)
            row["_sumRW"] = sum(RW[:4]) + RW[4]
            row["W_extra"] = RW[4]
        else:
            row["W"] = float("nan")
            row["W_extra"] = float("nan")
            row["_sumRW"] = float("nan")
        rows.append(row)
    for j, row in enumerate(rows):
        if 0 < j < len(rows) - 1:
            dt = rows[j + 1]["t"] - rows[j - 1]["t"]
            row["dF_dt_fd"] = (rows[j + 1]["F"] - rows[j - 1]["F"]) / dt
            row["identity_gap_F"] = abs(
                row["dF_dt_fd"] - (row["R1"] + row["R2"] + row["R3"] + row["R4"]))
            if np.isfinite(row["_sumRW"]) and rows[j - 1]["t"] > 0:
                dW_fd = (rows[j + 1]["W"] - rows[j - 1]["W"]) / dt
                row["identity_gap_W"] = abs(dW_fd - row["_sumRW"])
            else:
                row["identity_gap_W"] = float("nan")
        else:
            row["dF_dt_fd"] = float("nan")
            row["identity_gap_F"] = float("nan")
            row["identity_gap_W"] = float("nan")
        row.pop("_sumRW", None)
    return rows


def _identity_verdict(rows: list[dict], rel_tol: float) -> dict:
    worst_F = 0.0
    worst_W = 0.0
    for row in rows:
        gap = row["identity_gap_F"]
        if np.isfinite(gap):
            scale = max(abs(row["dF_dt_fd"]),
                        abs(row["R1"] + row["R2"] + row["R3"] + row["R4"]), 1e-12)
            worst_F = max(worst_F, gap / scale)
        gap = row["identity_gap_W"]
        if np.isfinite(gap):
            worst_W = max(worst_W, gap / max(abs(row["W"]), 1.0))
    return {
        "identity_rel_gap_F": worst_F,
        "identity_rel_gap_W": worst_W,
        "identity_ok": worst_F <= rel_tol,
    }


def resolve_output_dir(out_dir: str) -> str:
    """Relative output paths live under $GRFLAB_OUTPUT_ROOT when it is set."""
    root = os.environ.get("GRFLAB_OUTPUT_ROOT")
    if root and not os.path.isabs(out_dir):
        return os.path.join(root, out_dir)
    return out_dir


def emit_outputs(out_dir: str, rows: list[dict], manifest: dict) -> None:
    out_dir = resolve_output_dir(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({kk: repr(row[kk]) if isinstance(row[kk], float)
                             else row[kk] for kk in CSV_COLUMNS})
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    lines = [f"preset: {manifest.get('preset')}",
             f"status: {manifest.get('status')}"]
    if rows:
        lines.append(f"final t: {rows[-1]['t']:.6g}")
        lines.append(f"final F: {rows[-1]['F']:.8g}")
        lines.append(f"final W: {rows[-1]['W']:.8g}")
        lines.append(f"F nondecreasing: {manifest.get('F_nondecreasing')}")
        lines.append(f"identity rel gap F: "
                     f"{manifest.get('identity_rel_gap_F', float('nan')):.3e}")
        lines.append(f"mass drift: {manifest.get('mass_drift', float('nan')):.3e}")
        lines.append(f"steady rigidity flag: "
                     f"{manifest.get('soliton', {}).get('steady_rigidity')}")
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_pipeline(cfg: ScenarioConfig) -> int:
    state = cfg.build_state()
    manifest = {"preset": cfg.preset, "mode": cfg.mode, "t_end": cfg.t_end,
                "stages": [], "status": "started"}
    icfg = flow.IntegratorConfig(
        t_end=cfg.t_end, cfl_sigma=cfg.cfl_sigma, max_steps=cfg.max_steps,
        save_every=cfg.save_every, mode=cfg.mode, fixed_dt=cfg.fixed_dt)
    hist = flow.run_flow(state, icfg)
    manifest["stages"].append("forward")
    manifest["steps"] = len(hist.times) - 1
    if hist.aborted:
        manifest["status"] = "aborted"
        manifest["abort_reason"] = hist.abort_reason
        emit_outputs(cfg.output_dir, [], manifest)
        return 1
    n = cfg.n_override if cfg.n_override is not None else state.mesh.d
    try:
        traj = conjugate.solve_backward(hist, mode=cfg.conj_mode, n=n)
    except DomainError as exc:
        manifest["status"] = "aborted"
        manifest["abort_reason"] = f"backward solve: {exc}"
        emit_outputs(cfg.output_dir, [], manifest)
        return 1
    manifest["stages"].append("backward")
    masses = np.array([c.mass for c in traj])
    manifest["mass_drift"] = float(
        np.max(np.abs(masses - masses[0])) / abs(masses[0]))
    rows = build_report(hist, traj, cfg)
    manifest["stages"].append("report")
    Fs = [row["F"] for row in rows]
    manifest["F_nondecreasing"] = bool(np.all(np.diff(Fs) > -1e-8))
    verdict = _identity_verdict(rows, cfg.identity_rel_tol)
    manifest.update(verdict)
    manifest["soliton"] = functionals.soliton_detect(rows)
    closed = max(
        torsion.closedness_residual(hist.states[i], derive(hist.states[i],
                                                           validated=True))
        for i in (0, len(hist.states) // 2, len(hist.states) - 1))
    manifest["max_dH_inf"] = float(closed)
    manifest["status"] = "clean" if verdict["identity_ok"] else "identity-failure"
    emit_outputs(cfg.output_dir, rows, manifest)
    return 0 if verdict["identity_ok"] else 2


# --- randomized verification -------------------------------------------------

def random_state(rng: np.random.Generator, alg: LieAlgebra, N: int, d: int,
                 amp: float = 0.12, lengths=None,
                 with_H: bool = True, max_freq: int = 2) -> GeometryState:
    """Seeded smooth random fields: a few low harmonics on every component."""
    lengths = lengths or (2.0 * np.pi,) * d
    mesh = Mesh((N,) * d, lengths)
    Xs = mesh.coords()
    k = alg.k

    def wave():
        out = np.zeros(mesh.shape)
        if d == 1:
            freqs = [(m,) for m in range(1, max_freq + 1)]
        else:
            freqs = [(1, 0), (0, 1), (1, 1)][:max_freq + 1]
        for fr in freqs:
            a, b = rng.uniform(-amp, amp, 2)
            phase = sum(2.0 * np.pi * fi * X / L
                        for fi, X, L in zip(fr, Xs, lengths))
            out += a * np.cos(phase) + b * np.sin(phase)
        return out

    G = np.zeros(mesh.shape + (k, k))
    for i in range(k):
        G[..., i, i] = 1.0 + wave()
    for i in range(k):
        for j in range(i):
            w = 0.3 * wave()
            G[..., i, j] = w
            G[..., j, i] = w
    g = np.zeros(mesh.shape + (d, d))
    for a in range(d):
        g[..., a, a] = 1.0 + wave()
    if d == 2:
        w = 0.3 * wave()
        g[..., 0, 1] = w
        g[..., 1, 0] = w
    A = np.zeros(mesh.shape + (d, k))
    for a in range(d):
        for i in range(k):
            A[..., a, i] = wave()
    H = TorsionField.zeros(mesh, k)
    if with_H:
        core = rng.normal(size=(k, k, k)) * 0.3
        alt = np.zeros((k, k, k))
        for p0 in range(k):
            for p1 in range(k):
                for p2 in range(k):
                    for perm, sgn in (((p0, p1, p2), 1), ((p1, p2, p0), 1),
                                      ((p2, p0, p1), 1), ((p0, p2, p1), -1),
                                      ((p2, p1, p0), -1), ((p1, p0, p2), -1)):
                        alt[p0, p1, p2] += sgn * core[perm] / 6.0
        H.H3 = (1.0 + wave())[..., None, None, None] * alt
        for i in range(k):
            for j in range(i):
                w = wave()
                for a in range(d):
                    H.H21[..., j, i, a] = w
                    H.H21[..., i, j, a] = -w
        if d == 2:
            for i in range(k):
                w = wave()
                H.H12[..., i, 0, 1] = w
                H.H12[..., i, 1, 0] = -w
    return GeometryState(0.0, mesh, alg, G, g, A, H)


def verify_curvature(seed: int, N: int) -> list[tuple[str, float, bool]]:
    # the two evaluation paths differentiate different intermediate
    # quantities, so they agree only up to the 4th-order stencil error;
    # the tolerance tracks that scaling below the reference mesh
    tol = 1e-5 * max(1.0, (64.0 / N) ** 4)
    rows = []
    for d in (1, 2):
        rng = np.random.default_rng(seed + d)
        st = random_state(rng, algebra.heisenberg3(), N, d, amp=0.08,
                          with_H=False, max_freq=1)
        der = derive(st, validated=True)
        cb = geometry.curvature_closed_form(st, der)
        R, Ric, scal = oracle.curvature_oracle(st)
        k = st.k
        pairs = {
            "ffff": (cb.ffff, R[..., :k, :k, :k, :k]),
            "fbbf": (cb.fbbf, R[..., :k, k:, k:, :k]),
            "bbbb": (cb.bbbb, R[..., k:, k:, k:, k:]),
            "Ric": (np.concatenate([cb.Ric_ff.reshape(-1), cb.Ric_fb.reshape(-1),
                                    cb.Ric_bb.reshape(-1)]),
                    np.concatenate([Ric[..., :k, :k].reshape(-1),
                                    Ric[..., :k, k:].reshape(-1),
                                    Ric[..., k:, k:].reshape(-1)])),
            "scalar": (cb.scalar, scal),
        }
        for name, (a, b) in pairs.items():
            scale = max(float(np.max(np.abs(b))), 1e-12)
            err = float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) / scale
            rows.append((f"curvature d={d} {name}", err, err < tol))
    return rows


def verify_torsion(seed: int, N: int) -> list[tuple[str, float, bool]]:
    rows = []
    for d in (1, 2):
        rng = np.random.default_rng(seed + 10 + d)
        n = N if d == 1 else max(16, N // 2)
        st = random_state(rng, algebra.heisenberg3(), n, d)
        der = derive(st, validated=True)
        full = torsion.pack_full(st.H, st.alg, st.mesh)
        md = torsion.minus_dstar(st, der, full)
        md_o = oracle.codifferential_oracle(st)
        scale = max(float(np.max(np.abs(md_o))), 1e-12)
        err = float(np.max(np.abs(md - md_o))) / scale
        rows.append((f"codifferential d={d}", err, err < 1e-5))
        err = torsion.splitting_identity(st, der, full)
        rows.append((f"splitting identity d={d}", err, err < 1e-10))
    return rows


def verify_variation(seed: int, N: int, count: int = 5) -> list:
    rows = []
    rng = np.random.default_rng(seed + 100)
    st = random_state(rng, algebra.heisenberg3(), N, 1)
    mesh = st.mesh
    (X,) = mesh.coords()
    k, d = st.k, mesh.d
    K = k + d

    def wave():
        a1, b1, a2, b2 = rng.uniform(-0.12, 0.12, 4)
        return (a1 * np.cos(X) + b1 * np.sin(X)
                + a2 * np.cos(2 * X) + b2 * np.sin(2 * X))

    f = wave()
    for trial in range(count):
        dG = np.zeros(mesh.shape + (k, k))
        for i in range(k):
            for j in range(i + 1):
                w = wave()
                dG[..., i, j] = w
                dG[..., j, i] = w
        dg = np.zeros(mesh.shape + (d, d))
        for a in range(d):
            dg[..., a, a] = wave()
        dA = np.zeros(mesh.shape + (d, k))
        for i in range(k):
            dA[..., 0, i] = wave()
        B = np.zeros(mesh.shape + (K, K))
        for i in range(K):
            for j in range(i):
                w = wave()
                B[..., j, i] = w
                B[..., i, j] = -w
        direction = functionals.VariationDirection(dG, dg, dA, B, wave())
        res = functionals.variation_check_F(st, f, direction)
        tol = 1e-4 * max(1.0, (64.0 / N) ** 4)
        rows.append((f"variation trial {trial}", res["rel_gap"],
                     res["rel_gap"] < tol))
    return rows


def run_verify(seed: int, N: int, suite: str) -> int:
    rows = []
    if suite in ("curvature", "all"):
        rows += verify_curvature(seed, N)
    if suite in ("torsion", "all"):
        rows += verify_torsion(seed, N)
    if suite in ("variation", "all"):
        rows += verify_variation(seed, N)
    width = max(len(r[0]) for r in rows)
    ok = True
    for name, err, passed in rows:
        ok = ok and passed
        print(f"{name:<{width}}  {err:10.3e}  {'PASS' if passed else 'FAIL'}")
    print(f"{'overall':<{width}}  {'':10}  {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


def run_report(run_dir: str) -> int:
    summary = os.path.join(run_dir, "summary.txt")
    manifest = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(manifest):
        print(f"no manifest found in {run_dir}", file=sys.stderr)
        return 1
    if os.path.exists(summary):
        with open(summary) as fh:
            sys.stdout.write(fh.read())
    else:
        with open(manifest) as fh:
            json.dump(json.load(fh), sys.stdout, indent=2)
        sys.stdout.write("\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="grflab")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a scenario")
    p_run.add_argument("config")
    p_ver = sub.add_parser("verify", help="randomized operator cross-checks")
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--mesh", type=int, default=48)
    p_ver.add_argument("--suite", default="all",
                       choices=["curvature", "torsion", "variation", "all"])
    p_rep = sub.add_parser("report", help="summarize a stored run")
    p_rep.add_argument("run_dir")
    args = parser.parse_args(argv)
    if args.command == "run":
        try:
            cfg = load_config(args.config)
        except (ConfigError, OSError) as exc:
            print(str(exc), file=sys.stderr)
            return 1
        return run_pipeline(cfg)
    if args.command == "verify":
        return run_verify(args.seed, args.mesh, args.suite)
    return run_report(args.run_dir)


if __name__ == "__main__":
    sys.exit(main())
