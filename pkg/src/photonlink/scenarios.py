"""Scenario runners behind the command line: config in, artifacts and a result dict out."""

from __future__ import annotations

import os
import platform
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__, cascade, circuitmodel, jc, optimize, tomography
from .hilbert import fidelity, fock, ket2dm
from .io import write_csv, write_json

TWO_PI = 2 * np.pi


def parallel_map(func, items, workers: int = 1):
    """Order-preserving map; a process pool when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))


def default_workers() -> int:
    return os.cpu_count() or 1


# ---------------------------------------------------------------- config -> objects


def node_config(d: dict) -> jc.NodeConfig:
    return jc.NodeConfig(
        g_qr=d["g_qr"], qubit_levels=d["qubit_levels"], resonator_truncation=d["resonator_truncation"],
        qubit_t1=d["qubit_t1"], qubit_t2=d["qubit_t2"], resonator_t1=d["resonator_t1"],
        resonator_t2=d["resonator_t2"], ef_element=d["ef_element"],
    )


def transfer_params(p: dict) -> jc.TransferParams:
    return jc.TransferParams(p["kappa_c"], p["kappa_m"], p["t0"], p["before"], p["after"], p["dt"],
                             p["line_phase"], p["line_loss"])


def resonator_node(d: dict, gamma=0.0, truncation: int | None = None) -> cascade.NodeParams:
    return cascade.NodeParams(gamma, truncation or d["resonator_truncation"], 0.0,
                              d["resonator_t1"], d["resonator_t2"])


def state_vector(name: str, dim: int) -> np.ndarray:
    if name == "fock1":
        return fock(1, dim)
    if name == "fock2":
        return fock(2, dim)
    if name == "sup01":
        return (fock(0, dim) + fock(1, dim)) / np.sqrt(2)
    if name == "sup02":
        return (fock(0, dim) + fock(2, dim)) / np.sqrt(2)
    raise ValueError(f"no resonator state named {name!r}")


def _traj_rows(tr1, tr2, keys):
    rows = []
    for stage, tr in (("emission", tr1), ("capture", tr2)):
        for i, t in enumerate(tr.times):
            rows.append([float(t), stage] + [float(tr.observables[k][i]) for k in keys])
    return rows


# ---------------------------------------------------------------- transfer


def run_transfer_scenario(cfg, out: Path, workers: int) -> dict:
    p = cfg.params
    dev = cfg.device
    tp = transfer_params(cfg.pulses)
    rel, cap, u = tp.profiles()
    if p["simultaneous"]:
        return _simultaneous(cfg, out, rel, cap, u, tp)
    src, dst = ("node1", "node2") if p["direction"] == 12 else ("node2", "node1")
    results = {}
    rows = []
    for name in p["states"]:
        if name == "qubit_e":
            r = _qubit_transfer(cfg, src, dst, tp)
            results[name] = r
            rows.append([name, r["efficiency"], "", "", r["p_e_receiver"]])
            continue
        emitter = resonator_node(dev[src], rel)
        receiver = resonator_node(dev[dst], cap)
        dim = emitter.resonator_truncation + 1
        psi = state_vector(name, dim)
        res = cascade.run_transfer(emitter, receiver, u, psi, tp.line_phase, tp.line_loss)
        entry = {"efficiency": res.efficiency, "p_release": res.p_release, "p_capture": res.p_capture,
                 "received_populations": np.real(np.diag(res.rho_receiver)).tolist()}
        target = ket2dm(state_vector(name, receiver.resonator_truncation + 1))
        if name.startswith("sup") and p["fit_phase"]:
            n_diag = np.arange(receiver.resonator_truncation + 1)
            phi, f = cascade.fit_line_phase(res.rho_receiver, target, n_diag)
            entry.update(fitted_line_phase=phi, fidelity=f)
        else:
            entry["fidelity"] = fidelity(res.rho_receiver, target)
        results[name] = entry
        rows.append([name, entry["efficiency"], entry["fidelity"], entry.get("fitted_line_phase", ""),
                     ""])
        keys = ["n_emitter", "n_receiver", "n_field"]
        write_csv(out / f"transfer_{name}_populations.csv", ["time_s", "stage"] + keys,
                  _traj_rows(res.emission, res.capture, keys))
    write_csv(out / "transfer_summary.csv",
              ["state", "efficiency", "fidelity", "fitted_line_phase_rad", "p_e_receiver"], rows)
    return {"direction": p["direction"], "states": results}


def _qubit_transfer(cfg, src: str, dst: str, tp) -> dict:
    """Excite the source qubit, swap to its resonator, transfer, swap into the receiving qubit."""
    nodes = (node_config(cfg.device["node1"]), node_config(cfg.device["node2"]))
    s, d = (0, 1) if src == "node1" else (1, 0)
    steps = [
        jc.SequenceStep("qubit_drive", s, "ge", angle=np.pi),
        jc.SequenceStep("swap", s, "ge", duration=jc.swap_time(1, nodes[s].g_qr)),
        jc.SequenceStep("transfer", d, source=s),
        jc.SequenceStep("swap", d, "ge", duration=jc.swap_time(1, nodes[d].g_qr)),
    ]
    state = jc.run_sequence(jc.NodeState.ground(nodes, tp), steps)
    pe_dst = float(np.real(state.qubit_state(d)[1, 1]))
    pe_src = float(np.real(state.qubit_state(s)[1, 1]))
    return {"efficiency": pe_dst, "p_e_receiver": pe_dst, "p_e_sender": pe_src}


def _simultaneous(cfg, out, rel, cap, u, tp) -> dict:
    p = cfg.params
    n1 = resonator_node(cfg.device["node1"])
    n2 = resonator_node(cfg.device["node2"])
    r = cascade.simultaneous_swap(
        n1, n2, rel, cap, u,
        state_vector(p["node1_state"], n1.resonator_truncation + 1),
        state_vector(p["node2_state"], n2.resonator_truncation + 1),
        tp.line_phase, tp.line_loss,
    )
    keys = sorted(r["populations"])
    rows = [[float(t)] + [float(r["populations"][k][i]) for k in keys] for i, t in enumerate(r["times"])]
    write_csv(out / "simultaneous_populations.csv", ["time_s"] + keys, rows)
    pops = {"r1": np.real(np.diag(r["rho_r1"]))[:3].tolist(), "r2": np.real(np.diag(r["rho_r2"]))[:3].tolist()}
    n_in = {"r1": _photons(p["node1_state"]), "r2": _photons(p["node2_state"])}
    mean = {k: float(np.dot(np.arange(3), v)) for k, v in pops.items()}
    eff = {"r1_to_r2": mean["r2"] / n_in["r1"] if n_in["r1"] else None,
           "r2_to_r1": mean["r1"] / n_in["r2"] if n_in["r2"] else None}
    return {"node1_state": p["node1_state"], "node2_state": p["node2_state"],
            "final_populations": pops, "efficiency": eff}


def _photons(name):
    return {"fock1": 1, "fock2": 2, "sup01": 0.5, "sup02": 1.0}.get(name, 0)


# ---------------------------------------------------------------- waveguide


def _modes_row(args):
    node, wg, det, holds, photons = args
    return cascade.simulate_standing_modes(node, wg, [det], holds, photons=photons)[0]


def run_modes(cfg, out: Path, workers: int) -> dict:
    p = cfg.params
    w = cfg.device["waveguide"]
    wg = cascade.WaveguideModel.from_line(w["length"], w["epsilon_r"], n_modes=w["n_modes"], g_rw=w["g_rw"],
                                          mode_t1=w["mode_t1"])
    node = resonator_node(cfg.device["node1"], truncation=max(p["photons"], 1))
    dets = np.linspace(p["detuning_min"], p["detuning_max"], p["detuning_points"])
    holds = np.linspace(0, p["hold_max"], p["hold_points"])
    rows = parallel_map(_modes_row, [(node, wg, d, holds, p["photons"]) for d in dets], workers)
    m = np.array(rows)
    cascade.save_map(out / "standing_modes", m, dets / TWO_PI, holds, "detuning_hz", "hold_s",
                     meta={"fsr_hz": wg.fsr / TWO_PI, "g_rw_hz": wg.g_rw / TWO_PI})
    # a resonator parked on a mode swaps out fully; between modes it stays put
    return {"fsr_hz": wg.fsr / TWO_PI, "min_population": float(m.min()), "max_population": float(m.max()),
            "shape": list(m.shape)}


def run_emit_recapture(cfg, out: Path, workers: int) -> dict:
    p = cfg.params
    tp = transfer_params(cfg.pulses)
    rel, cap, _ = tp.profiles()
    node = resonator_node(cfg.device["node2"])
    dets = np.linspace(p["detuning_min"], p["detuning_max"], p["detuning_points"])
    delays = np.linspace(p["delay_min"], p["delay_max"], p["delay_points"])
    r = cascade.simulate_emit_recapture(node, rel, cap, dets, delays, explicit=p["explicit"])
    cascade.save_map(out / "emit_recapture_fringe", r["fringe"], dets / TWO_PI, delays, "detuning_hz", "delay_s")
    cascade.save_map(out / "emit_recapture_population", r["population"], dets / TWO_PI, delays,
                     "detuning_hz", "delay_s")
    return {"max_coherence": float(np.abs(r["coherence"]).max()),
            "recaptured_population": float(r["population"].mean())}


# ---------------------------------------------------------------- tomography


def _noisy(dist, noise, rng):
    return dist + noise * rng.standard_normal(dist.shape)


def _write_matrix(path, rho):
    d = rho.shape[0]
    rows = [[i, j, float(rho[i, j].real), float(rho[i, j].imag)] for i in range(d) for j in range(d)]
    return write_csv(path, ["row", "col", "re", "im"], rows)


def run_noon(cfg, out: Path, workers: int) -> dict:
    p = cfg.params
    n, n_max = p["n"], p["n_max"]
    if n_max < n:
        raise ValueError("n_max must be at least the NOON photon number")
    nodes = (node_config(cfg.device["node1"]), node_config(cfg.device["node2"]))
    tp = transfer_params(cfg.pulses)
    state = jc.prepare_noon(n, nodes, tp)
    joint = state.resonators_state()
    dims = [c.resonator_truncation + 1 for c in nodes]
    joint = _trim_joint(joint, dims, n_max)
    d = n_max + 1
    target = np.zeros(d * d, dtype=complex)
    target[n * d] = 1
    target[n] = -1
    target = ket2dm(target / np.sqrt(2))
    f_sim = fidelity(joint, target, psd_floor=-1e-6)

    axis = np.linspace(-p["grid_extent"], p["grid_extent"], p["grid_points"])
    grid = (axis[None, :] + 1j * axis[:, None]).ravel()
    pairs = np.array([(a, b) for a in grid for b in grid])
    dist = tomography.joint_fock_distributions(joint, pairs, (d, d))
    rng = np.random.default_rng(cfg.seed)
    fids, best = [], None
    for k in range(p["repeats"]):
        data = _noisy(dist, p["noise"], rng) if p["noise"] > 0 else dist
        rec = tomography.reconstruct_joint(pairs, data, n_max, noon_n=n)
        fids.append((k, fidelity(rec, joint, psd_floor=-1e-6), fidelity(rec, target, psd_floor=-1e-6)))
        if best is None:
            best = rec
    _write_matrix(out / f"noon{n}_simulated_rho.csv", joint)
    _write_matrix(out / f"noon{n}_reconstructed_rho.csv", best)
    write_csv(out / f"noon{n}_fidelities.csv", ["repeat", "fidelity_vs_simulated", "fidelity_vs_ideal"], fids)
    return {"n": n, "fidelity_simulated_vs_ideal": f_sim,
            "median_reconstruction_fidelity": float(np.median([f[1] for f in fids])),
            "median_fidelity_vs_ideal": float(np.median([f[2] for f in fids]))}


def _trim_joint(rho, dims, n_max):
    keep = [i * dims[1] + j for i in range(n_max + 1) for j in range(n_max + 1)]
    sub = rho[np.ix_(keep, keep)]
    return sub / np.real(np.trace(sub))


def run_tomography(cfg, out: Path, workers: int) -> dict:
    p = cfg.params
    n_max = p["n_max"]
    c1 = node_config(cfg.device["node1"])
    tp = transfer_params(cfg.pulses)
    rel, cap, u = tp.profiles()
    axis = np.linspace(-p["grid_extent"], p["grid_extent"], p["grid_points"])
    grid = (axis[None, :] + 1j * axis[:, None]).ravel()
    w_axis = np.linspace(-p["wigner_extent"], p["wigner_extent"], p["wigner_points"])
    rng = np.random.default_rng(cfg.seed)
    results = {}
    for name in p["states"]:
        if name.startswith("sup"):
            st = jc.prepare_superposition(int(name[-1]), c1)
        else:
            st = jc.prepare_fock(int(name[-1]), c1)
        rho = st.resonator_state(0)
        if p["via_transfer"]:
            res = cascade.run_transfer(resonator_node(cfg.device["node1"], rel),
                                       resonator_node(cfg.device["node2"], cap), u, rho,
                                       tp.line_phase, tp.line_loss)
            rho = res.rho_receiver
        rho = _trim(rho, n_max)
        target = ket2dm(state_vector(name, n_max + 1))
        phi, f_sim = cascade.fit_line_phase(rho, target, np.arange(n_max + 1))
        dist = tomography.fock_distributions(rho, grid)
        fids, first = [], None
        for _ in range(p["repeats"]):
            data = _noisy(dist, p["noise"], rng) if p["noise"] > 0 else dist
            rec = tomography.reconstruct_density_matrix(grid, data, n_max)
            fids.append(fidelity(rec, rho, psd_floor=-1e-6))
            first = rec if first is None else first
        tomography.save_wigner_csv(out / f"wigner_{name}.csv", first, w_axis, w_axis)
        _write_matrix(out / f"rho_{name}.csv", first)
        results[name] = {"fidelity_simulated_vs_ideal": f_sim, "fitted_phase": phi,
                         "reconstruction_fidelities": fids,
                         "median_reconstruction_fidelity": float(np.median(fids))}
    return {"states": results, "via_transfer": p["via_transfer"]}


def _trim(rho, n_max):
    sub = rho[: n_max + 1, : n_max + 1]
    return sub / np.real(np.trace(sub))


# ---------------------------------------------------------------- circuit


def _geometry(cfg):
    r = cfg.device["resonator"]
    return circuitmodel.ResonatorGeometry(r["length"], r["capacitance_per_length"], r["inductance_per_length"],
                                         r["end_capacitance"], r["squid_inductance"], r["mode_index"])


def _coupler(cfg):
    c = cfg.device["coupler"]
    return circuitmodel.CouplerParams(c["junction_inductance"], c["ground_inductance"], c["stray_inductance"],
                                      c["beta"], c["load_impedance"], c["topology"])


def _lifetime_point(args):
    phi, geo, cp, window = args
    return circuitmodel.resonance_and_lifetime(phi, geo, cp, window_hz=window)


def run_circuit(cfg, out: Path, workers: int) -> dict:
    p = cfg.params
    calc = p["calculation"]
    if calc == "boxmodes":
        res = {}
        for preset in ("die", "package"):
            geo = getattr(circuitmodel.BoxGeometry, preset)()
            modes = circuitmodel.box_modes(geo, p["max_index"])
            circuitmodel.save_box_modes_csv(out / f"boxmodes_{preset}.csv", modes)
            res[preset] = {"lowest_hz": modes[0]["f"], "lowest_index": [modes[0][k] for k in "nml"]}
        return res
    geo = _geometry(cfg)
    if calc == "anharmonicity":
        x, alpha = circuitmodel.anharmonicity_sweep(geo, p["sweep_points"])
        circuitmodel.save_anharmonicity_csv(out / "anharmonicity.csv", x, alpha)
        f = circuitmodel.resonator_effective_params(x, geo)["omega_r"] / TWO_PI
        peak = float(np.abs(alpha).max() / TWO_PI)
        return {"max_abs_alpha_hz": peak, "band_hz": [float(f[0]), float(f[-1])],
                "below_20khz": bool(peak < 20e3)}
    cp = _coupler(cfg)
    window = (p["window_min"] / TWO_PI, p["window_max"] / TWO_PI)
    phis = np.linspace(p["flux_min"], p["flux_max"], p["flux_points"])
    sweep = parallel_map(_lifetime_point, [(phi, geo, cp, window) for phi in phis], workers)
    circuitmodel.save_lifetime_csv(out / "coupler_lifetime.csv", sweep)
    t1 = np.array([r["T1"] for r in sweep])
    return {"min_t1_s": float(t1.min()), "flux_at_min": float(phis[int(np.argmin(t1))]),
            "max_t1_s": float(t1.max()), "topology": cp.topology}


# ---------------------------------------------------------------- optimizer


def run_optimize(cfg, out: Path, workers: int) -> dict:
    p = cfg.params
    q = cfg.pulses
    scen = optimize.TransferScenario(q["kappa_c"], q["kappa_m"], q["t0"], q["before"], q["after"], q["dt"],
                                     line_loss=q["line_loss"])
    knots = scen.default_knot_times(p["n_knots"], p["knot_half_span"])
    n = 2 * p["n_knots"] if p["stage"] == "joint" else p["n_knots"]
    param = optimize.PulseParameterization(knots, np.zeros(n), q["filter_sigma"], p["stage"], p["kappa_max"])
    report = optimize.optimize_transfer(param, scen, budget=p["budget"], seed=cfg.seed)
    report.to_json(out / "optimization_report.json", include_times=False)
    report.to_csv(out / "optimization_log.csv")
    baseline = optimize.objective_transfer(optimize.analytic_knots(param, scen), param, scen)
    prof = param.with_values(report.best_params).profiles(scen.grid())
    cols = sorted(prof)
    rows = [[float(t)] + [float(prof[c].values[i].real) for c in cols] for i, t in enumerate(scen.grid())]
    write_csv(out / "optimized_kappa.csv", ["time_s"] + [f"kappa_{c}_rad_s" for c in cols], rows)
    return {"best_efficiency": report.best_efficiency, "best_knots_rad_s": report.best_params.tolist(),
            "knot_times_s": knots.tolist(), "evaluations": len(report.log), "method": report.method,
            "analytic_knot_baseline": baseline, "settings": report.settings}


RUNNERS = {
    "transfer": run_transfer_scenario,
    "modes": run_modes,
    "emit_recapture": run_emit_recapture,
    "noon": run_noon,
    "tomography": run_tomography,
    "circuit": run_circuit,
    "optimize": run_optimize,
}


def run(cfg, workers: int | None = None) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return RUNNERS[cfg.kind](cfg, out, workers or default_workers())


def write_summary(cfg, results: dict, out: Path):
    versions = {"photonlink": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                "python": platform.python_version()}
    return write_json(out / "summary.json", {"config": cfg.summary(), "results": results, "versions": versions})


__all__ = ["run", "write_summary", "RUNNERS", "parallel_map"]
