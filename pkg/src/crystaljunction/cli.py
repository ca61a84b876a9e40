"""``crystaljunction`` command-line front end.

Exit codes: 0 success, 1 domain error (class name on stderr), 2 scene error.
Precedence: flags override the scene's ``run`` section, which overrides defaults.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import oracle, scattering, spectral
from .bloch import default_kgrid, solve_bands
from .dynamics import PropagatorConfig, discretize, make_wavepacket, propagate_full
from .errors import DomainError, SchemaError
from .grid import Grid, StateVector, WeightContext, weighted_inner
from .media import JunctionSystem, Medium, validate_asymptotics
from .scene import SceneConfig, parse_scene

COMMANDS = ("bands", "thresholds", "spectrum", "mourre", "flatband", "interface-states", "evolve", "moller",
            "initial-sets", "scatter", "oracle-dispersion", "oracle-scatter", "validate")

_SIGN = {"plus": 1, "minus": -1}


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _finite(obj):
    """Replace non-finite floats by null (strict JSON)."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_json(path: Path, payload) -> None:
    text = json.dumps(_finite(payload), indent=2, sort_keys=True, default=_json_default)
    path.write_text(text + "\n")


# ---------------------------------------------------------------------------
# scene helpers

class Run:
    """A parsed scene plus the objects built from it."""

    def __init__(self, config: SceneConfig, out: Path):
        self.config = config
        self.out = out
        self.opts = config.run
        self._media = {}

    def medium(self, side: str) -> Medium:
        if side not in self._media:
            med = self.config.medium(side)
            other = self.config.medium("right" if side == "left" else "left")
            # a homogeneous medium has no intrinsic period; share the other side's cell
            h = self.config.data["media"][side].get("homogeneous")
            if h is not None and not other.is_homogeneous:
                med = Medium.homogeneous(h["eps"], h["mu"], complex(*h["chi"]), other.period, med.name)
            self._media[side] = med
        return self._media[side]

    def junction(self) -> JunctionSystem:
        j = self.config.data["junction"]
        return JunctionSystem(self.medium("left"), self.medium("right"), j["mode"], float(j["halfwidth"]),
                              float(j["epsilon"]))

    def window(self, command: str) -> tuple:
        w = self.opts["window"]
        if w is None:
            raise SchemaError(f"a window is required by '{command}'", "/run/window")
        return float(w[0]), float(w[1])

    def bands(self, side: str):
        med = self.medium(side)
        o = self.opts
        return solve_bands(med, default_kgrid(med.period, o["kpoints"]), N=o["N"], n_bands=o["n_bands"],
                           threads=o["threads"])

    def grid(self) -> Grid:
        g = self.config.data["grid"]
        p = max(self.medium("left").period, self.medium("right").period)
        return Grid.for_period(p, g["cells"], g["points_per_cell"])

    def scene(self) -> scattering.Scene:
        return scattering.Scene(self.junction(), self.grid())


# ---------------------------------------------------------------------------
# commands

def cmd_bands(run: Run) -> None:
    run.bands(run.opts["side"]).write_csv(run.out / "bands.csv")


def cmd_thresholds(run: Run) -> None:
    bs = run.bands(run.opts["side"])
    th = spectral.find_thresholds(bs, run.opts["threshold_tol"], run.opts["window"])
    write_json(run.out / "thresholds.json", th.to_json())


def cmd_spectrum(run: Run) -> None:
    o = run.opts
    rep = spectral.junction_spectrum(run.junction(), run.window("spectrum"), N=o["N"], kpoints=o["kpoints"],
                                     n_bands=o["n_bands"])
    write_json(run.out / "spectrum.json", rep.to_json())


def cmd_mourre(run: Run) -> None:
    rep = spectral.mourre_constant(run.bands(run.opts["side"]), run.window("mourre"))
    write_json(run.out / "mourre.json", rep.to_json())


def cmd_flatband(run: Run) -> None:
    cert = spectral.flat_band_certificate(run.medium(run.opts["side"]), N=run.opts["N"], rhos=run.opts["rhos"])
    write_json(run.out / "flatband.json", dict(cert.to_json(), decreasing=cert.decreasing))


def cmd_interface_states(run: Run) -> None:
    o = run.opts
    a, b = run.window("interface-states")
    sys_ = run.junction()
    gap_spectrum = spectral.junction_spectrum(sys_, (a - 1.0, b + 1.0), N=o["N"], kpoints=o["kpoints"],
                                              n_bands=o["n_bands"])
    rep = spectral.interface_states(sys_, (a, b), run.grid(), spectrum=gap_spectrum, N=o["N"])
    write_json(run.out / "interface_states.json",
               {"window": [a, b], "states": rep.to_json(), "discarded": list(rep.discarded), "bulk": list(rep.bulk)})


def _packet(run: Run, scene: scattering.Scene, window, center_cells: int = 0):
    """Packet on ``side`` from explicit (band, k0) or from the energy/window midpoint."""
    o = run.opts
    side = o["side"]
    med = scene.medium(side)
    bs = run.bands(side)
    sign = _SIGN[o["sign"]]
    sigma_k = o["sigma_k"] if o["sigma_k"] is not None else 0.05 * np.pi / med.period
    if o["band"] is not None and o["k0"] is not None:
        band, k0 = o["band"], o["k0"]
    else:
        lam = o["energy"] if o["energy"] is not None else 0.5 * (window[0] + window[1])
        band, k0 = bs.find_mode(lam, sign, o["band"])
    wp = make_wavepacket(med, bs, band, k0, sigma_k, sign, window, scene.grid, scene.basis(side),
                         center_cells=center_cells)
    return wp, bs


def _dt(run: Run, window) -> float:
    dt = run.opts["dt"]
    return scattering.packet_step(max(abs(window[0]), abs(window[1]))) if dt == "auto" else float(dt)


def cmd_evolve(run: Run) -> None:
    o = run.opts
    window = run.window("evolve")
    scene = run.scene()
    med = scene.medium(o["side"])
    sigma_k = o["sigma_k"] if o["sigma_k"] is not None else 0.05 * np.pi / med.period
    # start clear of the transition region, on the side opposite to the motion
    offset = int(np.ceil((max(scene.sys.transition_halfwidth, 1.0) + 4 * scattering.packet_width(sigma_k))
                         / med.period))
    wp, _ = _packet(run, scene, window, center_cells=-_SIGN[o["sign"]] * offset)
    psi = scene.J(scene.pair(o["side"], wp.state))
    dt = _dt(run, window)
    t_final = o["t_final"] if o["t_final"] is not None else 10.0
    every = o["snapshot_every"]
    snaps = []
    if every:
        (run.out / "snapshots").mkdir(exist_ok=True)

    def callback(n, t, values):
        if n % every == 0:
            name = f"snapshots/step_{n:06d}.csv"
            StateVector(values, scene.full).write_csv(run.out / name)
            snaps.append({"step": n, "time": t, "file": name})

    n0 = psi.norm()
    cfg = PropagatorConfig(dt=dt, tol=o["tol"], boundary_alarm=o["alarm"])
    psi.write_csv(run.out / "initial.csv")
    end = propagate_full(psi, scene.op, t_final, cfg, callback if every else None)
    end.write_csv(run.out / "final.csv")
    write_json(run.out / "evolve.json", {
        "band": wp.band, "k0": wp.k0, "sigma_k": wp.sigma_k, "dt": dt, "t_final": t_final,
        "norm_initial": n0, "norm_final": end.norm(), "norm_drift": abs(end.norm() - n0),
        "center_initial": psi.center(), "center_final": end.center(), "snapshots": snaps,
    })


def cmd_moller(run: Run) -> None:
    o = run.opts
    window = run.window("moller")
    scene = run.scene()
    wp, _ = _packet(run, scene, window)
    dt = _dt(run, window)
    schedule = o["schedule"]
    if schedule == "auto":
        schedule = scattering.default_schedule(wp.mean_velocity, wp.sigma_k, scene.sys.transition_halfwidth, dt)
    rep, _ = scattering.moller_iterate(scene, scene.pair(o["side"], wp.state), _SIGN[o["direction"]], schedule, dt,
                                       increments=True, keep_state=False, alarm=o["alarm"], tol=o["tol"])
    write_json(run.out / "moller.json", dict(rep.to_json(), side=o["side"], band=wp.band, k0=wp.k0,
                                             sigma_k=wp.sigma_k, dt=dt, increments_decrease=rep.increments_decrease))


def cmd_initial_sets(run: Run) -> None:
    window = run.window("initial-sets")
    scene = run.scene()
    bands = {side: run.bands(side) for side in ("left", "right")}
    table = scattering.dichotomy_matrix(scene, window, bands, run.opts["sigma_k"])
    rows = []
    for (side, sign, direction), res in table.items():
        expected = "ISOMETRIC" if (side, sign, direction) in scattering.EXPECTED_ISOMETRIC else "NULL"
        rows.append({"side": side, "velocity": "plus" if sign > 0 else "minus",
                     "direction": "plus" if direction > 0 else "minus", "band": res.band, "k0": res.k0,
                     "final_norm": res.final_norm, "defect": res.defect, "verdict": res.verdict,
                     "expected": expected})
    write_json(run.out / "initial_sets.json", rows)


def cmd_scatter(run: Run) -> None:
    o = run.opts
    window = run.window("scatter")
    scene = run.scene()
    dt = None if o["dt"] == "auto" else float(o["dt"])
    rep = scattering.time_domain_scatter(scene, run.bands(o["side"]), window, side=o["side"], sigma_k=o["sigma_k"],
                                         energy=o["energy"], max_time=o["t_final"], dt=dt, alarm=o["alarm"],
                                         tol=o["tol"])
    write_json(run.out / "scatter.json", rep.to_json())


def _oracle_side(med: Medium):
    if med.is_homogeneous and med.is_real:
        eps, mu, _ = med.profile.evaluate(np.zeros(1))
        return oracle.Uniform(float(np.real(eps[0])), float(np.real(mu[0])))
    return oracle.LayerStack.from_medium(med)


def cmd_oracle_dispersion(run: Run) -> None:
    a, b = run.window("oracle-dispersion")
    stack = oracle.LayerStack.from_medium(run.medium(run.opts["side"]))
    rows = oracle.dispersion_rows(stack, np.linspace(a, b, run.opts["kpoints"]))
    with open(run.out / "oracle_dispersion.csv", "w") as fh:
        fh.write("lambda,type,k_or_decay\n")
        for lam, kind, val in rows:
            fh.write(f"{lam:.15g},{kind},{val:.15g}\n")


def cmd_oracle_scatter(run: Run) -> None:
    o = run.opts
    lam = o["energy"]
    if lam is None:
        lam = 0.5 * sum(run.window("oracle-scatter"))
    res = oracle.oracle_scatter(_oracle_side(run.medium("left")), _oracle_side(run.medium("right")), float(lam))
    write_json(run.out / "oracle_scatter.json", {
        "lambda": float(lam), "r_re": res["r"].real, "r_im": res["r"].imag, "t_re": res["t"].real,
        "t_im": res["t"].imag, "R": res["R"], "T": res["T"], "propagating": res["propagating"],
    })


def cmd_validate(run: Run) -> None:
    sys_ = run.junction()
    grid = run.grid()
    x = grid.x
    if sys_.mode == "compact":
        # constants are measured where the junction is supposed to be inactive
        x = x[np.abs(x) >= sys_.transition_halfwidth]
    report = validate_asymptotics(sys_, x)
    ctx = WeightContext.of(grid, sys_)
    op = discretize(ctx, grid)
    rng = np.random.default_rng(run.opts["seed"])
    defect = 0.0
    for _ in range(20):
        a = StateVector(rng.standard_normal((grid.n_points, 2)) + 1j * rng.standard_normal((grid.n_points, 2)), ctx)
        b = StateVector(rng.standard_normal((grid.n_points, 2)) + 1j * rng.standard_normal((grid.n_points, 2)), ctx)
        lhs = weighted_inner(a, op(b))
        rhs = weighted_inner(op(a), b)
        defect = max(defect, abs(lhs - rhs) / max(abs(lhs), 1e-300))
    write_json(run.out / "validate.json", dict(report, c0=sys_.c0, c1=sys_.c1, symmetry_defect=defect,
                                               seed=run.opts["seed"]))


DISPATCH = {
    "bands": cmd_bands, "thresholds": cmd_thresholds, "spectrum": cmd_spectrum, "mourre": cmd_mourre,
    "flatband": cmd_flatband, "interface-states": cmd_interface_states, "evolve": cmd_evolve,
    "moller": cmd_moller, "initial-sets": cmd_initial_sets, "scatter": cmd_scatter,
    "oracle-dispersion": cmd_oracle_dispersion, "oracle-scatter": cmd_oracle_scatter, "validate": cmd_validate,
}


# ---------------------------------------------------------------------------
# argument handling

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crystaljunction",
        description="Spectral and scattering computations for junctions of 1D photonic crystals.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="scene JSON file")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--N", type=int)
        p.add_argument("--kpoints", type=int)
        p.add_argument("--n-bands", dest="n_bands", type=int)
        p.add_argument("--window", type=float, nargs=2, metavar=("A", "B"))
        p.add_argument("--band", type=int)
        p.add_argument("--k0", type=float)
        p.add_argument("--sigma-k", dest="sigma_k", type=float)
        p.add_argument("--energy", type=float)
        p.add_argument("--sign", choices=("plus", "minus"))
        p.add_argument("--direction", choices=("plus", "minus"))
        p.add_argument("--side", choices=("left", "right"))
        p.add_argument("--dt", type=float)
        p.add_argument("--t-final", dest="t_final", type=float)
        p.add_argument("--snapshot-every", dest="snapshot_every", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--seed", type=int)
    return parser


OVERRIDES = ("N", "kpoints", "n_bands", "window", "band", "k0", "sigma_k", "energy", "sign", "direction", "side",
             "dt", "t_final", "snapshot_every", "threads", "seed")


def run_command(command: str, config: SceneConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(config.echo())
    DISPATCH[command](Run(config, out))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = parse_scene(args.config)
        flags = {k: getattr(args, k) for k in OVERRIDES}
        if flags["window"] is not None:
            flags["window"] = list(flags["window"])
        config = config.with_overrides(**flags)
        run_command(args.command, config, args.out)
    except SchemaError as exc:
        print(f"SchemaError: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
