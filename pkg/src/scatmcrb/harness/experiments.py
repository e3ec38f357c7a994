"""Experiment drivers behind the CLI subcommands.

Every driver builds a list of independent tasks, evaluates them serially or
in a process pool (``executor.map`` keeps input order) and writes CSV files.
Per-task randomness comes from ``derive_seed(master, task_index)``.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math
from pathlib import Path

import numpy as np

from ..bounds import bound_matrices, error_stats, kld, q_value
from ..errors import (GeometryError, RegularityError, ResonanceError, ScatMcrbError,
                      SingularityError)
from ..estim import initial_guess, mmle, pseudo_true_parameter
from ..forward import (born_scattered, delay_scattered, delay_time, envelope,
                       helmholtz_scattered, time_domain_synthesis)
from ..model import Scatterer, TrueParams, derive_seed, noise_sample
from .csvout import write_csv

FAILURE_FRACTION = 0.2
UM = 1e6


@dataclass
class RunReport:
    """Outcome of a driver: written files and numerical-failure accounting."""

    files: list = field(default_factory=list)
    n_tasks: int = 0
    n_failed: int = 0
    fatal: str = ""

    @property
    def numerical_failure(self):
        if self.fatal:
            return True
        return self.n_tasks > 0 and self.n_failed > FAILURE_FRACTION * self.n_tasks


def map_tasks(func, tasks, threads=1):
    tasks = list(tasks)
    if threads is None or threads <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


def param_names(n_u):
    names = []
    for u in range(1, n_u + 1):
        names += [f"x_{u}", f"z_{u}"]
    names += [f"a_{u}" for u in range(1, n_u + 1)]
    names += [f"theta_{u}" for u in range(1, n_u + 1)]
    return names


def location_indices(n_u):
    return list(range(2 * n_u))


def true_params(scenario, scatterers):
    return TrueParams.from_scatterers(scatterers, scenario.medium)


def simulate(scenario, phi, model):
    """Noiseless data under the named true model.

    ``delay`` truth is the delay model evaluated at the PTP fitted to the
    Helmholtz field, so the bound analysis sees a matched model.
    Returns ``(s, theta_ref)``; ``theta_ref`` is that PTP for delay truth.
    """
    if model == "helmholtz":
        return helmholtz_scattered(scenario, phi), None
    if model == "born":
        return born_scattered(scenario, phi), None
    if model == "delay":
        s_h = helmholtz_scattered(scenario, phi)
        ref = pseudo_true_parameter(s_h, scenario, initial_guess(s_h, phi.positions, scenario))
        return delay_scattered(scenario, ref.theta_hat), ref.theta_hat
    raise ValueError(f"unknown model '{model}'")


@dataclass(frozen=True, eq=False)
class PtpOutcome:
    flag: str
    theta0: object = None
    estimate: object = None
    bounds: object = None
    kld: float = math.nan
    r_norm: float = math.nan
    message: str = ""

    def q_mcrb(self):
        if self.bounds is None:
            return None
        return q_value(self.bounds.mcrb, location_indices(self.theta0.n_scatterers))

    def q_crb(self):
        if self.bounds is None:
            return None
        return q_value(self.bounds.crb, location_indices(self.theta0.n_scatterers))


def ptp_and_bounds(scenario, phi, model):
    """Pseudo-true parameter, KLD and bounds for one true-parameter setting."""
    try:
        s, ref = simulate(scenario, phi, model)
        init = ref if ref is not None else initial_guess(s, phi.positions, scenario)
        est = pseudo_true_parameter(s, scenario, init)
    except ResonanceError as exc:
        return PtpOutcome("resonance", message=str(exc))
    except (GeometryError, SingularityError) as exc:
        return PtpOutcome("geometry", message=str(exc))
    except ScatMcrbError as exc:
        return PtpOutcome("error", message=str(exc))
    theta0 = est.theta_hat
    r = phi.positions.reshape(-1) - theta0.positions.reshape(-1)
    flag = "ok" if est.converged else "nonconverged"
    if est.warnings:
        flag = "degenerate"
    if scenario.noise_var <= 0:
        return PtpOutcome(flag, theta0, est, None, math.nan, float(np.linalg.norm(r)),
                          "zero noise: bounds undefined")
    try:
        bm = bound_matrices(scenario, theta0, s)
    except RegularityError as exc:
        return PtpOutcome("singular", theta0, est, None, kld(s, theta0, scenario),
                          float(np.linalg.norm(r)), str(exc))
    return PtpOutcome(flag, theta0, est, bm, kld(s, theta0, scenario), float(np.linalg.norm(r)))


def _ptp_header(n_u):
    names = param_names(n_u)
    return (["model"] + [f"theta0_{n}" for n in names] + ["kld"]
            + [f"mcrb_{n}" for n in names] + [f"crb_{n}" for n in names]
            + ["q_mcrb_um", "q_crb_um", "cond_A", "converged", "iterations", "grad_norm",
               "r_norm_m", "flags"])


def _ptp_row(model, out, n_u):
    d = 4 * n_u
    theta = out.theta0.to_vector() if out.theta0 is not None else [None] * d
    mdiag = np.diag(out.bounds.mcrb) if out.bounds is not None else [None] * d
    cdiag = np.diag(out.bounds.crb) if out.bounds is not None else [None] * d
    qm = out.q_mcrb()
    qc = out.q_crb()
    est = out.estimate
    return ([model] + list(theta) + [out.kld] + list(mdiag) + list(cdiag)
            + [None if qm is None else qm * UM, None if qc is None else qc * UM,
               out.bounds.cond_A if out.bounds is not None else None,
               None if est is None else est.converged,
               None if est is None else est.iterations,
               None if est is None else est.grad_norm, out.r_norm, out.flag])


def run_ptp_and_bounds(cfg, out_dir, threads=1):
    scenario = cfg.build_scenario()
    scat = cfg.resolved_scatterers()
    phi = true_params(scenario, scat)
    out = ptp_and_bounds(scenario, phi, cfg.model)
    report = RunReport(n_tasks=1)
    if out.flag not in ("ok", "degenerate"):
        report.n_failed = 1
    if out.flag in ("singular", "resonance"):
        report.fatal = out.message
    path = write_csv(Path(out_dir) / "ptp.csv", _ptp_header(len(scat)),
                     [_ptp_row(cfg.model, out, len(scat))])
    report.files.append(path)
    return report, out


# --- forward ----------------------------------------------------------------

def run_forward(cfg, out_dir, threads=1):
    scenario = cfg.build_scenario()
    phi = true_params(scenario, cfg.resolved_scatterers())
    s, _ = simulate(scenario, phi, cfg.model)
    cube = s.cube()
    freqs = scenario.freqs.frequencies
    rows = []
    for k in range(cube.shape[0]):
        for t in range(cube.shape[1]):
            for r in range(cube.shape[2]):
                v = cube[k, t, r]
                rows.append((k, t, r, freqs[k], v.real, v.imag))
    out = Path(out_dir)
    report = RunReport(n_tasks=1)
    report.files.append(write_csv(out / f"field_{cfg.model}.csv",
                                  ["k_idx", "tx", "rx", "freq_hz", "re", "im"], rows))
    tx, rx = cfg.trace_tx, cfg.receiver
    trace = time_domain_synthesis(s.slice_pair(tx, rx), scenario)
    env = envelope(s.slice_pair(tx, rx), scenario)
    times = np.arange(scenario.pulse.nt) / scenario.pulse.fs
    report.files.append(write_csv(out / f"trace_{cfg.model}.csv",
                                  ["sample", "time_s", "value", "envelope"],
                                  zip(range(times.size), times, trace, env)))
    return report, s


# --- model comparison (time traces and PTP dependence on the true model) ----

def model_traces(scenario, phi, tx, rx):
    """Time traces of the three models for one pair; delay uses the Helmholtz PTP."""
    s_h = helmholtz_scattered(scenario, phi)
    s_b = born_scattered(scenario, phi)
    ptp = pseudo_true_parameter(s_h, scenario, initial_guess(s_h, phi.positions, scenario))
    s_d = delay_scattered(scenario, ptp.theta_hat)
    traces = {}
    for name, data in (("helmholtz", s_h), ("born", s_b), ("delay", s_d)):
        sl = data.slice_pair(tx, rx)
        traces[name] = (time_domain_synthesis(sl, scenario), envelope(sl, scenario))
    return traces, ptp.theta_hat


def echo_peaks(env, scenario, delays, half_window=None):
    """Envelope maxima near each predicted delay: list of (sample index, amplitude)."""
    fs = scenario.pulse.fs
    nt = env.size
    if half_window is None:
        # half a pulse width on either side: exp(-alpha t^2) drops to exp(-2)
        half_window = int(round(math.sqrt(2.0 / scenario.pulse.alpha) * fs))
    peaks = []
    for tau in delays:
        centre = int(round(tau * fs))
        idx = np.arange(centre - half_window, centre + half_window + 1) % nt
        k = idx[int(np.argmax(env[idx]))]
        peaks.append((int(k), float(env[k])))
    return peaks


def pair_delays(scenario, positions, tx, rx):
    ring = scenario.ring.positions
    return [delay_time(p, ring[tx], ring[rx], scenario.medium.c0) for p in positions]


def _sweep_params(cfg, scenario, pixel):
    scat = cfg.resolved_scatterers()
    mover = scat[0]
    pos = cfg.build_grid().pixel_position(*pixel)
    moved = (Scatterer(pos, mover.c, mover.beta),) + tuple(scat[1:])
    return pos, moved


def _pixel_task(args):
    scenario, moved, models, dx = args
    positions = [s.position for s in moved]
    if len(positions) > 1 and min(
            math.dist(positions[0], p) for p in positions[1:]) < 0.5 * dx:
        return [PtpOutcome("coincident") for _ in models]
    phi = true_params(scenario, moved)
    return [ptp_and_bounds(scenario, phi, m) for m in models]


def _sweep(cfg, models, threads):
    scenario = cfg.build_scenario()
    pixels = cfg.sweep_pixels()
    tasks = []
    positions = []
    for px in pixels:
        pos, moved = _sweep_params(cfg, scenario, px)
        positions.append(pos)
        tasks.append((scenario, moved, tuple(models), scenario.grid.dx))
    return scenario, pixels, positions, map_tasks(_pixel_task, tasks, threads)


def _q_um(val):
    return None if val is None else val * UM


def run_qimage(cfg, out_dir, threads=1):
    _, pixels, positions, results = _sweep(cfg, [cfg.model], threads)
    rows = []
    report = RunReport(n_tasks=0)
    for (ix, iz), pos, res in zip(pixels, positions, results):
        out = res[0]
        if out.flag != "coincident":
            report.n_tasks += 1
            report.n_failed += out.flag not in ("ok", "degenerate")
        rows.append((ix, iz, pos[0], pos[1], _q_um(out.q_mcrb()), _q_um(out.q_crb()),
                     out.kld, out.r_norm, out.flag))
    header = ["ix", "iz", "x_m", "z_m", "q_mcrb_um", "q_crb_um", "kld", "r_norm_m", "flags"]
    report.files.append(write_csv(Path(out_dir) / "qimage.csv", header, rows))
    return report, rows


def run_compare_models(cfg, out_dir, threads=1):
    scenario = cfg.build_scenario()
    phi = true_params(scenario, cfg.resolved_scatterers())
    tx, rx = cfg.trace_tx, cfg.receiver
    traces, theta_d = model_traces(scenario, phi, tx, rx)
    times = np.arange(scenario.pulse.nt) / scenario.pulse.fs
    names = ("helmholtz", "born", "delay")
    rows = [(n, times[n]) + tuple(traces[m][0][n] for m in names)
            + tuple(traces[m][1][n] for m in names) for n in range(times.size)]
    out = Path(out_dir)
    report = RunReport()
    header = (["sample", "time_s"] + list(names) + [f"env_{m}" for m in names])
    report.files.append(write_csv(out / "traces.csv", header, rows))

    delays = pair_delays(scenario, phi.positions, tx, rx)
    echo_rows = []
    for u, tau in enumerate(delays):
        for m in names:
            k, amp = echo_peaks(traces[m][1], scenario, [tau])[0]
            echo_rows.append((u + 1, tau, m, k, times[k], amp))
    report.files.append(write_csv(out / "echoes.csv",
                                  ["scatterer", "tau_s", "model", "peak_sample",
                                   "peak_time_s", "peak_envelope"], echo_rows))

    _, pixels, positions, results = _sweep(cfg, ["helmholtz", "born"], threads)
    rows = []
    for (ix, iz), pos, (oh, ob) in zip(pixels, positions, results):
        flags = oh.flag if oh.flag == ob.flag else f"{oh.flag}|{ob.flag}"
        if oh.flag != "coincident":
            report.n_tasks += 1
            report.n_failed += (oh.flag not in ("ok", "degenerate")
                                or ob.flag not in ("ok", "degenerate"))
        rows.append((ix, iz, pos[0], pos[1], _q_um(oh.q_mcrb()), _q_um(oh.q_crb()),
                     _q_um(ob.q_mcrb()), _q_um(ob.q_crb()), oh.r_norm, ob.r_norm, flags))
    header = ["ix", "iz", "x_m", "z_m", "q_mcrb_helmholtz_um", "q_crb_helmholtz_um",
              "q_mcrb_born_um", "q_crb_born_um", "r_norm_helmholtz_m", "r_norm_born_m", "flags"]
    report.files.append(write_csv(out / "compare.csv", header, rows))
    return report, rows


# --- Monte Carlo -------------------------------------------------------------

def _realization_task(args):
    scenario, s_values, locations, seed = args
    y = s_values + noise_sample(s_values.size, scenario.noise_var, seed)
    try:
        est = mmle(y, scenario, initial_guess(y, locations, scenario))
    except ScatMcrbError as exc:
        return None, str(exc)
    return est, ""


@dataclass(frozen=True, eq=False)
class McRun:
    theta0: object
    ptp: PtpOutcome
    estimates: list
    converged: list
    iterations: list
    objectives: list
    stats: object
    n_failed: int


def monte_carlo(scenario, phi, model, n_realizations, master_seed, threads=1):
    """Realizations of the MMLE around the PTP for one true-parameter setting."""
    ptp = ptp_and_bounds(scenario, phi, model)
    if ptp.theta0 is None:
        raise ptp_failure(ptp)
    s, _ = simulate(scenario, phi, model)
    tasks = [(scenario, s.values, phi.positions, derive_seed(master_seed, i))
             for i in range(n_realizations)]
    results = map_tasks(_realization_task, tasks, threads)
    estimates, converged, iterations, objectives = [], [], [], []
    for est, _ in results:
        estimates.append(None if est is None else est.theta_hat)
        converged.append(est is not None and est.converged)
        iterations.append(None if est is None else est.iterations)
        objectives.append(None if est is None else est.objective)
    used = [e for e, ok in zip(estimates, converged) if ok]
    stats = error_stats(used, ptp.theta0) if len(used) >= 2 else None
    return McRun(ptp.theta0, ptp, estimates, converged, iterations, objectives, stats,
                 n_realizations - len(used))


def ptp_failure(out):
    if out.flag == "resonance":
        return ResonanceError(out.message)
    return RegularityError(out.message or f"PTP computation failed ({out.flag})")


def run_monte_carlo(cfg, out_dir, threads=1):
    scenario = cfg.build_scenario()
    scat = cfg.resolved_scatterers()
    phi = true_params(scenario, scat)
    mc = monte_carlo(scenario, phi, cfg.model, cfg.n_realizations, cfg.seed, threads)
    n_u = len(scat)
    names = param_names(n_u)
    rows = []
    for i, (est, ok, its, obj) in enumerate(zip(mc.estimates, mc.converged, mc.iterations,
                                                mc.objectives)):
        vec = est.to_vector() if est is not None else [None] * len(names)
        rows.append([i] + list(vec) + [ok, its, obj])
    out = Path(out_dir)
    report = RunReport(n_tasks=cfg.n_realizations, n_failed=mc.n_failed)
    report.files.append(write_csv(out / "realizations.csv",
                                  ["realization"] + names + ["converged", "iterations",
                                                             "objective"], rows))
    summary = mc_summary_rows(mc, names, phi)
    report.files.append(write_csv(out / "mc_summary.csv", ["quantity", "param", "value"],
                                  summary))
    return report, mc


def mc_summary_rows(mc, names, phi):
    loc = location_indices(len(names) // 4)
    rows = []
    bm = mc.ptp.bounds
    t0 = mc.theta0.to_vector()
    for i, n in enumerate(names):
        rows.append(("theta0", n, t0[i]))
    st = mc.stats
    for i, n in enumerate(names):
        rows.append(("emmse_diag", n, None if st is None else st.emmse[i, i]))
        rows.append(("bias", n, None if st is None else st.bias[i]))
        rows.append(("covariance_diag", n, None if st is None else st.covariance[i, i]))
        rows.append(("mcrb_diag", n, None if bm is None else bm.mcrb[i, i]))
        rows.append(("crb_diag", n, None if bm is None else bm.crb[i, i]))

    def q(mat):
        return None if mat is None else q_value(mat, loc) * UM

    rows.append(("q_emmse_um", "", q(None if st is None else st.emmse)))
    rows.append(("q_covariance_um", "", q(None if st is None else st.covariance)))
    rows.append(("q_bias_um", "", q(None if st is None else np.outer(st.bias, st.bias))))
    rows.append(("q_mcrb_um", "", q(None if bm is None else bm.mcrb)))
    rows.append(("q_crb_um", "", q(None if bm is None else bm.crb)))
    r = phi.positions.reshape(-1) - t0[:len(loc)]
    for i in loc:
        rows.append(("r", names[i], r[i]))
    rows.append(("n_used", "", len(mc.estimates) - mc.n_failed))
    rows.append(("n_failed", "", mc.n_failed))
    return rows
