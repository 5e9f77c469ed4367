"""Batch front end: configuration, pipeline orchestration, certification.

Subcommands run the pipeline stages (orbit search, Floquet form, orbit
metric verification, grid certification, Lipschitz probing) against a
JSON config.  Exit codes: 0 success, 1 certification failures present,
2 configuration error, 3 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import LcmetricError, OutsideBasin
from .floquet import assemble, eps_prime_for, modified_real_jordan
from .global_metric import GlobalMetric, build_global_metric
from .lm_eval import lipschitz_probe
from .ode_core import Tolerances, integrate_linear_periodic
from .orbit_metric import OrbitMetric, build_orbit_metric
from .periodic_orbit import find_orbit, floquet_spectrum
from .projection_sync import build_chart
from .systems import REGISTRY, default_orbit_guess, make_system

__all__ = ["main", "load_config", "build_pipeline", "certify_grid"]

_TOL_CERT = 1e-6


class ConfigError(Exception):
    pass


_TOP_KEYS = {
    "system", "eps", "eps_rel", "cluster_tol", "tolerances", "guess",
    "grid", "seed", "samples", "tail_tol", "t_max_factor",
}
_SYSTEM_KEYS = {"name", "params"}
_GRID_KEYS = {"kind", "rmin", "rmax", "lo", "hi", "counts", "center"}


@dataclass
class RunConfig:
    system_name: str
    params: dict
    eps: float | None
    eps_rel: float | None
    cluster_tol: float
    rtol: float
    atol: float
    guess_x0: np.ndarray | None
    guess_period: float | None
    grid: dict | None
    seed: int
    tail_tol: float
    t_max_factor: float
    samples: dict = field(default_factory=dict)

    @property
    def tolerances(self) -> Tolerances:
        return Tolerances(rtol=self.rtol, atol=self.atol)


def load_config(path: str, seed_override: int | None = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    sysblock = raw.get("system")
    if not isinstance(sysblock, dict) or "name" not in sysblock:
        raise ConfigError("config requires a 'system' object with a 'name'")
    if set(sysblock) - _SYSTEM_KEYS:
        raise ConfigError(f"unknown system keys: {sorted(set(sysblock) - _SYSTEM_KEYS)}")
    name = sysblock["name"]
    if name not in REGISTRY:
        raise ConfigError(f"unknown system {name!r}; registered: {sorted(REGISTRY)}")
    params = sysblock.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("system.params must be an object")

    eps = raw.get("eps")
    eps_rel = raw.get("eps_rel")
    if (eps is None) == (eps_rel is None):
        raise ConfigError("exactly one of 'eps' or 'eps_rel' is required")
    for label, val in (("eps", eps), ("eps_rel", eps_rel)):
        if val is not None and (not isinstance(val, (int, float)) or val <= 0):
            raise ConfigError(f"{label} must be a positive number")

    tolblock = raw.get("tolerances", {})
    rtol = float(tolblock.get("rtol", 1e-10))
    atol = float(tolblock.get("atol", 1e-12))

    guess = raw.get("guess")
    gx0 = gT = None
    if guess is not None:
        if set(guess) - {"x0", "period"}:
            raise ConfigError("guess accepts only 'x0' and 'period'")
        gx0 = np.asarray(guess["x0"], dtype=float) if "x0" in guess else None
        gT = float(guess["period"]) if "period" in guess else None

    grid = raw.get("grid")
    if grid is not None:
        if not isinstance(grid, dict) or "kind" not in grid:
            raise ConfigError("grid must be an object with a 'kind'")
        if set(grid) - _GRID_KEYS:
            raise ConfigError(f"unknown grid keys: {sorted(set(grid) - _GRID_KEYS)}")

    seed = int(raw.get("seed", 0))
    if seed_override is not None:
        seed = seed_override
    return RunConfig(
        system_name=name,
        params=params,
        eps=None if eps is None else float(eps),
        eps_rel=None if eps_rel is None else float(eps_rel),
        cluster_tol=float(raw.get("cluster_tol", 1e-6)),
        rtol=rtol,
        atol=atol,
        guess_x0=gx0,
        guess_period=gT,
        grid=grid,
        seed=seed,
        tail_tol=float(raw.get("tail_tol", 1e-9)),
        t_max_factor=float(raw.get("t_max_factor", 50.0)),
        samples=raw.get("samples", {}),
    )


def resolve_eps(cfg: RunConfig, nu: float) -> float:
    eps = cfg.eps if cfg.eps is not None else cfg.eps_rel * nu
    if not 0.0 < eps < nu / 2.0:
        raise ConfigError(
            f"eps must lie in (0, nu/2) = (0, {nu / 2.0:.6g}); got {eps:.6g}"
        )
    return eps


def grid_points(grid: dict | None, n: int) -> np.ndarray:
    if grid is None:
        return np.zeros((0, n))
    kind = grid.get("kind")
    counts = grid.get("counts")
    if not isinstance(counts, list) or not all(
        isinstance(c, int) and c >= 0 for c in counts
    ):
        raise ConfigError("grid.counts must be a list of nonnegative integers")
    if kind == "annulus":
        if n != 2:
            raise ConfigError("annulus grids are two-dimensional")
        if len(counts) != 2:
            raise ConfigError("annulus grid needs counts [n_r, n_phi]")
        rmin, rmax = float(grid["rmin"]), float(grid["rmax"])
        if not 0.0 < rmin <= rmax:
            raise ConfigError("annulus needs 0 < rmin <= rmax")
        center = np.asarray(grid.get("center", [0.0, 0.0]), dtype=float)
        rs = np.linspace(rmin, rmax, counts[0])
        phis = np.linspace(0.0, 2.0 * np.pi, counts[1], endpoint=False)
        R, P = np.meshgrid(rs, phis, indexing="ij")
        pts = np.column_stack(
            [R.ravel() * np.cos(P.ravel()), R.ravel() * np.sin(P.ravel())]
        )
        return pts + center
    if kind == "box":
        lo = np.asarray(grid["lo"], dtype=float)
        hi = np.asarray(grid["hi"], dtype=float)
        if lo.shape != (n,) or hi.shape != (n,) or len(counts) != n:
            raise ConfigError(f"box grid needs lo/hi/counts of length {n}")
        if np.any(lo > hi):
            raise ConfigError("box grid needs lo <= hi componentwise")
        axes = [np.linspace(lo[i], hi[i], counts[i]) for i in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])
    raise ConfigError(f"unknown grid kind {grid.get('kind')!r}")


def thread_count() -> int:
    env = os.environ.get("LCMETRIC_THREADS")
    if env is not None:
        try:
            k = int(env)
        except ValueError as exc:
            raise ConfigError(f"LCMETRIC_THREADS must be an integer, got {env!r}") from exc
        return max(1, k)
    return min(32, os.cpu_count() or 1)


# -- pipeline ------------------------------------------------------------


@dataclass
class Pipeline:
    cfg: RunConfig
    system: object
    orbit: object
    spectrum: object
    eps: float
    om: OrbitMetric
    chart: object
    gm: GlobalMetric
    timings: dict


def build_pipeline(cfg: RunConfig) -> Pipeline:
    pl = _orbit_only(cfg)
    timings = pl.timings

    t0 = time.perf_counter()
    pl.om = build_orbit_metric(pl.orbit, pl.eps, spectrum=pl.spectrum)
    timings["floquet"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pl.chart = build_chart(pl.om, seed=cfg.seed)
    timings["chart"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pl.gm = build_global_metric(
        pl.chart,
        tail_tol=cfg.tail_tol,
        t_max_factor=cfg.t_max_factor,
        seed=cfg.seed,
        tol=cfg.tolerances,
    )
    timings["global_metric"] = time.perf_counter() - t0
    return pl


# -- serialization --------------------------------------------------------


def _c2l(z: complex) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


def _carray(a: np.ndarray) -> dict:
    a = np.asarray(a)
    return {"re": np.real(a).tolist(), "im": np.imag(a).tolist()}


def orbit_payload(pl: Pipeline) -> dict:
    orbit, spectrum = pl.orbit, pl.spectrum
    return {
        "system": pl.cfg.system_name,
        "params": pl.cfg.params,
        "q": orbit.q.tolist(),
        "period": orbit.period,
        "monodromy": orbit.monodromy.tolist(),
        "multipliers": [_c2l(m) for m in spectrum.multipliers],
        "nu": spectrum.nu,
        "residual": orbit.residual,
    }


def floquet_payload(dec, eps: float, system_name: str) -> dict:
    return {
        "system": system_name,
        "period": dec.period,
        "eps": eps,
        "eps_prime": dec.jordan.eps_prime,
        "S": dec.jordan.S.tolist(),
        "A": _carray(dec.A),
        "B": _carray(dec.B),
        "blocks": [
            {
                "kind": b.kind,
                "chain": b.chain,
                "offset": b.offset,
                "value": _c2l(b.value),
            }
            for b in dec.jordan.blocks
        ],
        "diagnostics": {k: float(v) for k, v in dec.diagnostics.items()},
    }


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- certification ---------------------------------------------------------


def certify_grid(
    gm: GlobalMetric,
    xs: np.ndarray,
    tol_cert: float = _TOL_CERT,
    threads: int | None = None,
) -> list[dict]:
    """Evaluate V and L_M on the grid; one row per point, ordered by
    grid index regardless of evaluation order."""
    system = gm.system
    bound = -gm.nu + gm.eps
    rows: list[dict] = [dict() for _ in range(len(xs))]
    if len(xs) == 0:
        return rows

    scale = 1.0 + np.linalg.norm(xs, axis=1)
    fnorm = np.array([np.linalg.norm(system.f(x)) for x in xs])
    equil = fnorm <= 1e-12 * scale

    def eval_v(i: int):
        if equil[i]:
            return ("SKIPPED-equilibrium", np.nan)
        try:
            return ("", gm.v_at(xs[i]))
        except OutsideBasin:
            return ("SKIPPED-outside-horizon", np.nan)

    threads = thread_count() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            v_results = list(pool.map(eval_v, range(len(xs))))
    else:
        v_results = [eval_v(i) for i in range(len(xs))]

    ok = np.array([s == "" for s, _ in v_results])
    vs = np.array([v for _, v in v_results])

    d_all = gm.chart.project_many(xs, strict=False).d
    lm = np.full(len(xs), np.nan)
    if ok.any():
        lm[ok] = gm.l_m_many(xs[ok], values_v=vs[ok])

    for i in range(len(xs)):
        status, v = v_results[i]
        if status == "":
            margin = bound - lm[i]
            status = "PASS" if margin >= -tol_cert else "FAIL"
        else:
            margin = np.nan
        rows[i] = {
            "x": xs[i],
            "d": float(d_all[i]),
            "V": float(v) if np.isfinite(v) else np.nan,
            "L_M": float(lm[i]) if np.isfinite(lm[i]) else np.nan,
            "margin": float(margin) if np.isfinite(margin) else np.nan,
            "status": status,
        }
    return rows


def write_cert_csv(path: str, rows: list[dict], n: int) -> None:
    header = [f"x{i + 1}" for i in range(n)] + ["d", "V", "L_M", "margin", "status"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            vals = [f"{c:.17g}" for c in row["x"]]
            vals += [
                f"{row['d']:.17g}",
                f"{row['V']:.17g}",
                f"{row['L_M']:.17g}",
                f"{row['margin']:.17g}",
                row["status"],
            ]
            fh.write(",".join(vals) + "\n")


def summarize(pl: Pipeline, rows: list[dict]) -> str:
    statuses = [r["status"] for r in rows]
    n_pass = statuses.count("PASS")
    n_fail = statuses.count("FAIL")
    n_skip = len(statuses) - n_pass - n_fail
    margins = [r["margin"] for r in rows if np.isfinite(r.get("margin", np.nan))]
    min_margin = min(margins) if margins else float("nan")
    mults = ", ".join(
        f"{m.real:.12g}{m.imag:+.12g}j" if abs(m.imag) > 0 else f"{m.real:.12g}"
        for m in pl.spectrum.multipliers
    )
    lines = [
        "certification summary",
        f"system: {pl.cfg.system_name} params={pl.cfg.params}",
        f"period T = {pl.orbit.period:.12g}",
        f"multipliers: {mults}",
        f"nu = {pl.spectrum.nu:.12g}  eps = {pl.eps:.12g}  mu = {pl.gm.mu:.12g}",
        f"eps_prime = {pl.om.dec.jordan.eps_prime:.12g}",
        f"chart: iota_u = {pl.chart.iota_u:.6g}  iota = {pl.gm.iota:.6g}  "
        f"halvings = {pl.chart.diagnostics.get('halvings', 0)}",
        f"grid: {len(rows)} points",
        f"status: PASS={n_pass} FAIL={n_fail} SKIPPED={n_skip}",
        f"min margin = {min_margin:.12g}",
        "stage timings: "
        + "  ".join(f"{k}={v:.2f}s" for k, v in pl.timings.items()),
    ]
    return "\n".join(lines) + "\n"


# -- subcommands ------------------------------------------------------------


def _cmd_find_orbit(cfg: RunConfig, out: str) -> int:
    pl = _orbit_only(cfg)
    _write_json(os.path.join(out, "orbit.json"), orbit_payload(pl))
    print(
        f"orbit: T={pl.orbit.period:.12g} residual={pl.orbit.residual:.3e} "
        f"nu={pl.spectrum.nu:.12g}"
    )
    return 0


def _orbit_only(cfg: RunConfig) -> Pipeline:
    if cfg.system_name == "linear-periodic":
        raise ConfigError(
            "system 'linear-periodic' has no orbit; only the 'floquet' "
            "subcommand applies to it"
        )
    system = make_system(cfg.system_name, cfg.params)
    gx0, gT = cfg.guess_x0, cfg.guess_period
    if gx0 is None or gT is None:
        dx0, dT = default_orbit_guess(cfg.system_name)
        gx0 = dx0 if gx0 is None else gx0
        gT = dT if gT is None else gT
    t0 = time.perf_counter()
    orbit = find_orbit(system, gx0, gT, tol=cfg.tolerances)
    spectrum = floquet_spectrum(orbit, tol_cluster=cfg.cluster_tol)
    timings = {"orbit": time.perf_counter() - t0}
    eps = resolve_eps(cfg, spectrum.nu)
    return Pipeline(
        cfg=cfg, system=system, orbit=orbit, spectrum=spectrum, eps=eps,
        om=None, chart=None, gm=None, timings=timings,
    )


def _cmd_floquet(cfg: RunConfig, out: str) -> int:
    if cfg.system_name == "linear-periodic":
        lp = make_system(cfg.system_name, cfg.params)
        T = lp.period
        var = integrate_linear_periodic(lp.F, lp.n, (0.0, T), tol=cfg.tolerances)
        mults = np.linalg.eigvals(var.monodromy)
        nu = -float(np.max(np.log(np.abs(mults)))) / T
        eps = resolve_eps(cfg, nu)
        jordan = modified_real_jordan(var.monodromy, eps_prime_for(eps, T))
        dec = assemble(jordan, var, T, eps)
        _write_json(
            os.path.join(out, "floquet.json"),
            floquet_payload(dec, eps, cfg.system_name),
        )
        print(
            f"floquet: multipliers={[f'{m:.6g}' for m in sorted(mults, key=abs, reverse=True)]} "
            f"exp_residual={dec.diagnostics['exp_bt_vs_monodromy']:.3e}"
        )
        return 0
    cfg2 = _with_stored_guess(cfg, out)
    pl = _orbit_only(cfg2)
    om = build_orbit_metric(pl.orbit, pl.eps, spectrum=pl.spectrum)
    _write_json(os.path.join(out, "orbit.json"), orbit_payload(pl))
    _write_json(
        os.path.join(out, "floquet.json"),
        floquet_payload(om.dec, pl.eps, cfg.system_name),
    )
    print(
        f"floquet: nu={pl.spectrum.nu:.12g} "
        f"exp_residual={om.dec.diagnostics['exp_bt_vs_monodromy']:.3e} "
        f"pT_residual={om.dec.diagnostics['p_at_T']:.3e}"
    )
    return 0


def _with_stored_guess(cfg: RunConfig, out: str) -> RunConfig:
    path = os.path.join(out, "orbit.json")
    if not os.path.exists(path):
        return cfg
    with open(path, "r", encoding="utf-8") as fh:
        stored = json.load(fh)
    if stored.get("system") != cfg.system_name:
        raise ConfigError(
            f"stored orbit.json is for system {stored.get('system')!r}, "
            f"config wants {cfg.system_name!r}"
        )
    cfg.guess_x0 = np.asarray(stored["q"], dtype=float)
    cfg.guess_period = float(stored["period"])
    return cfg


def _verify_block(om: OrbitMetric, n_phase: int = 200) -> dict:
    thetas = np.linspace(0.0, om.period, n_phase, endpoint=False)
    W = om.dec.w_at(thetas)
    raw = W.conj().swapaxes(-1, -2) @ W
    imag_max = float(np.max(np.abs(raw.imag)))
    lm0 = om.l_m0_at(thetas)
    return {
        "phases": n_phase,
        "imag_residual_max": imag_max,
        "l_m0_max": float(np.max(lm0)),
        "l_m0_bound": -om.nu + om.eps,
        "l_m0_slack": float((-om.nu + om.eps) - np.max(lm0)),
        "l_m0_route_gap": float(
            np.max(np.abs(lm0 - om.l_m0_constant))
        ),
    }


def _cmd_verify_orbit_metric(cfg: RunConfig, out: str) -> int:
    pl = _orbit_only(_with_stored_guess(cfg, out))
    om = build_orbit_metric(pl.orbit, pl.eps, spectrum=pl.spectrum)
    block = _verify_block(om)
    _write_json(os.path.join(out, "verify.json"), block)
    print(
        f"verify-orbit-metric: imag_residual={block['imag_residual_max']:.3e} "
        f"max L_M0 = {block['l_m0_max']:.9g} <= {block['l_m0_bound']:.9g}"
    )
    if block["imag_residual_max"] > 1e-9 or block["l_m0_slack"] < -1e-8:
        print("verify-orbit-metric: tolerance exceeded", file=sys.stderr)
        return 3
    return 0


def _check_stored_floquet(pl: Pipeline, out: str) -> None:
    path = os.path.join(out, "floquet.json")
    if not os.path.exists(path):
        return
    with open(path, "r", encoding="utf-8") as fh:
        stored = json.load(fh)
    if abs(stored["period"] - pl.orbit.period) > 1e-6 * (1.0 + pl.orbit.period):
        raise LcmetricError("stored floquet.json period disagrees with rebuilt orbit")
    if abs(stored["eps_prime"] - pl.om.dec.jordan.eps_prime) > 1e-9:
        raise LcmetricError("stored floquet.json eps_prime disagrees with rebuild")


def _cmd_certify(cfg: RunConfig, out: str) -> int:
    pl = build_pipeline(_with_stored_guess(cfg, out))
    _check_stored_floquet(pl, out)
    return _certify_and_write(pl, out)


def _certify_and_write(pl: Pipeline, out: str) -> int:
    xs = grid_points(pl.cfg.grid, pl.system.n)
    t0 = time.perf_counter()
    rows = certify_grid(pl.gm, xs)
    pl.timings["certify"] = time.perf_counter() - t0
    write_cert_csv(os.path.join(out, "cert.csv"), rows, pl.system.n)
    text = summarize(pl, rows)
    with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    n_fail = sum(1 for r in rows if r["status"] == "FAIL")
    return 1 if n_fail else 0


def _cmd_run(cfg: RunConfig, out: str) -> int:
    pl = build_pipeline(cfg)
    _write_json(os.path.join(out, "orbit.json"), orbit_payload(pl))
    _write_json(
        os.path.join(out, "floquet.json"),
        floquet_payload(pl.om.dec, pl.eps, cfg.system_name),
    )
    block = _verify_block(pl.om)
    _write_json(os.path.join(out, "verify.json"), block)
    return _certify_and_write(pl, out)


def _cmd_probe_lipschitz(cfg: RunConfig, out: str) -> int:
    pl = build_pipeline(cfg)
    xs_region = grid_points(pl.cfg.grid, pl.system.n)
    if len(xs_region) == 0:
        raise ConfigError("probe-lipschitz needs a nonempty grid region")
    lo = xs_region.min(axis=0)
    hi = xs_region.max(axis=0)

    def sampler(rng: np.random.Generator, k: int) -> np.ndarray:
        return rng.uniform(lo, hi, size=(k, pl.system.n))

    pairs = int(pl.cfg.samples.get("lipschitz_pairs", 200))
    probe = lipschitz_probe(
        pl.gm.handle(),
        pl.system,
        sampler,
        pairs=pairs,
        rng=np.random.default_rng(pl.cfg.seed),
    )
    payload = {
        "ratio": probe.ratio,
        "pair": [probe.pair[0].tolist(), probe.pair[1].tolist()],
        "samples_used": probe.samples_used,
    }
    _write_json(os.path.join(out, "lipschitz.json"), payload)
    print(
        f"lipschitz probe: ratio={probe.ratio:.6g} over {probe.samples_used} pairs"
    )
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "find-orbit": _cmd_find_orbit,
    "floquet": _cmd_floquet,
    "verify-orbit-metric": _cmd_verify_orbit_metric,
    "certify": _cmd_certify,
    "probe-lipschitz": _cmd_probe_lipschitz,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="lcmetric",
        description="contraction metrics for exponentially stable periodic orbits",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default="lcmetric-out")
        p.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, seed_override=args.seed)
        os.makedirs(args.out, exist_ok=True)
        _ = thread_count()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LcmetricError as exc:
        print(f"pipeline error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
