"""Command-line entry point: convergence studies, invariant checks, projection rates, export."""

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import verify
from .exact import TrigTriple, smooth_solution
from .mesh import build_cube_mesh, build_lshape_mesh
from .polyspace import VARIANTS, Element, VariantSpaces, check_inclusions, full_space
from .projections import (
    FieldData,
    boundary_remainders,
    curlplus_project,
    designated_projection,
    bdmh_project,
    hdg_project,
    l2_project,
    weak_commutativity_residual,
)
from .scheme import (
    ConfigError,
    SolverBreakdown,
    TauRule,
    VariantConfig,
    kernel_trace_condition,
    local_residual,
    solve_monolithic,
    solve_problem,
    uniqueness_probe,
    write_checkpoint,
    write_vtk,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3

VARIANT_NAMES = {"std": "STD", "b": "B", "h": "H", "bplus": "Bplus", "hplus": "Hplus",
                 "b+": "Bplus", "h+": "Hplus"}
CONFIG_KEYS = {"domain", "variant", "k", "levels", "tau", "out", "threads", "seed", "solver",
               "op", "level", "timing"}
DEFAULTS = {"domain": "cube", "variant": "Hplus", "k": "1", "levels": "4", "tau": "default",
            "out": ".", "threads": "1", "seed": "0", "solver": "direct", "op": "curlplus",
            "level": "2", "timing": "yes"}


@dataclass
class RunConfig:
    command: str
    domain: str
    variants: list
    k: int
    levels: list
    tau: TauRule
    out: str
    threads: int
    seed: int
    solver: str
    op: str
    level: int
    timing: bool
    extra: dict = field(default_factory=dict)


def parse_variant(text):
    if text.lower() == "all":
        return list(VARIANTS)
    name = VARIANT_NAMES.get(text.lower())
    if name is None:
        raise ConfigError(f"unknown variant {text!r}; choose from std, B, H, Bplus, Hplus, all")
    return [name]


def parse_levels(text):
    """A count L means the first L levels of 1, 2, 4, 8, ...; a comma list is taken literally."""
    text = str(text).strip()
    if "," in text:
        levels = sorted({int(t) for t in text.split(",") if t.strip()})
    else:
        count = int(text)
        if count < 1:
            raise ConfigError("levels must be positive")
        levels = [2**i for i in range(count)]
    if not levels or levels[0] < 1:
        raise ConfigError("levels must be positive integers")
    return levels


def read_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def build_parser():
    p = argparse.ArgumentParser(prog="maxhdg", description="HDG solver for the mixed curl-curl / grad-div system")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", help="line-based 'key = value' file; flags override it")
        sp.add_argument("--domain", choices=["cube", "lshape"])
        sp.add_argument("--variant", help="std, B, H, Bplus, Hplus (or all for check)")
        sp.add_argument("--k", type=int)
        sp.add_argument("--levels", help="count (first L of 1,2,4,...) or comma list of n")
        sp.add_argument("--tau", help="default | test-A..test-E | exp:a=<alpha>,b=<beta>, "
                                      "optionally ';face:<idx>=<value>'")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--solver", choices=["direct", "iterative"])

    c = sub.add_parser("converge", help="convergence study with CSV output")
    common(c)
    c.add_argument("--no-timing", dest="timing", action="store_const", const="no",
                   help="write '-' in the wall_s column (byte-reproducible CSV)")
    c.add_argument("--identities", action="store_true", help="also check the energy identity per level")
    k = sub.add_parser("check", help="invariant and identity suite on the n=1 cube")
    common(k)
    pr = sub.add_parser("project", help="projection convergence under element scaling")
    common(pr)
    pr.add_argument("--op", choices=["l2", "curlplus", "hdg", "bdmh"])
    e = sub.add_parser("export", help="solve one level and write VTK plus a binary checkpoint")
    common(e)
    e.add_argument("--level", type=int, help="mesh subdivision count n")
    return p


def parse_config(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)
    values = dict(DEFAULTS)
    if args.command == "check":
        values["variant"] = "all"
    if args.config:
        values.update(read_config_file(args.config))
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    variants = parse_variant(values["variant"])
    kval = int(values["k"])
    tau = TauRule.parse(values["tau"])
    domain = values["domain"]
    for v in variants:
        if args.command in ("converge", "export") or len(variants) == 1:
            VariantConfig(v, kval, tau, allow_low_order=(domain == "lshape"))
    return RunConfig(args.command, domain, variants, kval, parse_levels(values["levels"]), tau,
                     values["out"], int(values["threads"]), int(values["seed"]), values["solver"],
                     values["op"], int(values["level"]),
                     values["timing"].lower() not in ("no", "false", "0"),
                     {"identities": getattr(args, "identities", False)})


# ---------------------------------------------------------------------------
# Subcommands

class Checklist:
    def __init__(self):
        self.items = []

    def add(self, name, value, ok):
        self.items.append((name, value, bool(ok)))
        print(f"{'PASS' if ok else 'FAIL'} {name} {value}")

    @property
    def failures(self):
        return [it for it in self.items if not it[2]]


def run_converge(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    for v in cfg.variants:
        report = verify.convergence_study(cfg.domain, v, cfg.k, cfg.levels, cfg.tau, cfg.solver,
                                          cfg.threads, identities=cfg.extra.get("identities"))
        print(report.table())
        stem = f"{v}_k{cfg.k}_{cfg.domain}"
        with open(os.path.join(cfg.out, stem + ".csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(report.to_csv(cfg.timing))
        with open(os.path.join(cfg.out, stem + ".plt"), "w", encoding="utf-8") as fh:
            fh.write(verify.plt_stub(stem + ".csv", f"{v} k={cfg.k} {cfg.domain}"))
        for lv in report.levels:
            if lv.identities is not None:
                print(f"n={lv.level} energy identity residual {lv.identities.energy_residual:.2e}")
    return EXIT_OK


def run_check(cfg):
    """Inclusions, projection assumption, weak commutativity, energy identity, uniqueness,
    kernel-trace condition and condensed-vs-monolithic agreement on the n=1 cube."""
    checks = Checklist()
    mesh = build_cube_mesh(1)
    rng = np.random.default_rng(cfg.seed)
    exact = smooth_solution()
    for v in cfg.variants:
        k = cfg.k
        if v in ("Bplus", "Hplus") and k < 1:
            print(f"SKIP {v} k={k} (variant requires k >= 1)")
            continue
        tau = cfg.tau
        try:
            config = VariantConfig(v, k, tau)
        except ConfigError as exc:
            print(f"SKIP {v}: {exc}")
            continue
        sol, system = solve_problem(mesh, config, exact, keep_blocks=True)
        disc = system.disc
        spaces0 = disc.spaces(0)
        inc = check_inclusions(spaces0)
        checks.add(f"{v}.inclusions", f"{max(inc.values()):.1e}", max(inc.values()) < 1e-9)
        holds, res = kernel_trace_condition(spaces0)
        checks.add(f"{v}.kernel_trace", f"{res:.1e}", holds)
        ids = verify.identity_diagnostics(disc, sol, exact)
        checks.add(f"{v}.assumption", f"{ids.assumption:.1e}", ids.assumption < 1e-9)
        checks.add(f"{v}.weak_commutativity", f"{ids.weak_commutativity:.1e}", ids.weak_commutativity < 1e-9)
        checks.add(f"{v}.energy_identity", f"{ids.energy_residual:.1e}", ids.energy_residual < 1e-7)
        if v != "STD":
            checks.add(f"{v}.delta_n", f"{ids.delta_n:.1e}", ids.delta_n < 1e-9)
        size, smin, full_rank = uniqueness_probe(mesh, config)
        checks.add(f"{v}.uniqueness", f"{size:.1e},{smin:.1e}", size < 1e-10 and full_rank)
        mono = solve_monolithic(system)
        diff = max(float(np.abs(getattr(sol, a) - getattr(mono, a)).max())
                   for a in ("w", "u", "p", "uhat", "phat"))
        checks.add(f"{v}.monolithic", f"{diff:.1e}", diff < 1e-9)
        lr = local_residual(system, sol)
        checks.add(f"{v}.recovery", f"{lr:.1e}", lr < 1e-10)
        # randomized projection identities with the minus sign on one random tet
        V = rng.uniform(size=(4, 3))
        el = Element(V, disc.D)
        sp = VariantSpaces(el, v, k)
        data = FieldData.sample(el, TrigTriple(rng, 1.5), degree=2 * disc.D + 12)
        tt = rng.uniform(0.5, 2.0, 4)
        tn = rng.uniform(0.5, 2.0, 4)
        tri = designated_projection(el, sp, data, -tn)
        rem = boundary_remainders(el, sp, tri, data, tt, tn, -1)
        r = max(weak_commutativity_residual(el, sp, tri, data, rem, tt, tn))
        checks.add(f"{v}.weak_commutativity_minus", f"{r:.1e}", r < 1e-9)
    fails = checks.failures
    print(f"{len(checks.items)} assertions, {len(fails)} failures")
    for name, value, _ in fails:
        print(f"FAIL {name} {value}", file=sys.stderr)
    return EXIT_OK if not fails else EXIT_FAIL


def reference_tet():
    return np.array([[0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.2, 0.9, 0.1], [0.1, 0.2, 1.1]])


def projection_rates(op, k, hs=(1.0, 0.5, 0.25, 0.125), seed=0, tau_scale=None):
    """RMS errors of one projection of a smooth field over the family K_h = x0 + h (K - x0).

    Returns (hs, errors).  ``tau_scale`` multiplies the largest face value of tau.
    """
    rng = np.random.default_rng(seed)
    exact = TrigTriple(rng, 1.0)
    base = reference_tet()
    x0 = np.array([0.3, 0.2, 0.25])
    taus = np.array([1.0, 0.5, 0.25, 0.75])
    if tau_scale is not None:
        taus[np.argmax(taus)] *= tau_scale
    errs = []
    for h in hs:
        V = x0 + h * (base - x0)
        el = Element(V, k + 2)
        data = FieldData.sample(el, exact, degree=2 * (k + 2) + 10)
        r = data.vol_rule
        if op == "l2":
            S = full_space(el.basis, k, 3)
            c = l2_project(S, data.u, r)
            diff = np.einsum("m,maq->aq", c, S.values(r.points)) - data.u
        elif op == "curlplus":
            S = full_space(el.basis, k, 3)
            c = curlplus_project(el, data, k)
            diff = np.einsum("m,maq->aq", c, S.values(r.points)) - data.w
        elif op == "hdg":
            S = full_space(el.basis, k + 1, 3)
            c, _ = hdg_project(el, data, k + 1, taus)
            diff = np.einsum("m,maq->aq", c, S.values(r.points)) - data.u
        elif op == "bdmh":
            S = full_space(el.basis, k + 1, 3)
            c = bdmh_project(el, data, k + 1, taus * h)
            diff = np.einsum("m,maq->aq", c, S.values(r.points)) - data.u
        else:
            raise ConfigError(f"unknown projection {op!r}")
        errs.append(float(np.sqrt(np.sum(diff**2 * r.weights) / el.volume)))
    return list(hs), errs


def run_project(cfg):
    k = cfg.k
    if cfg.op == "curlplus" and k < 1:
        raise ConfigError("curl+ projection requires k >= 1")
    if cfg.op == "bdmh" and k < 0:
        raise ConfigError("BDM-H projection requires k >= 0")
    hs, errs = projection_rates(cfg.op, k, seed=cfg.seed)
    print(f"projection {cfg.op} k={k}")
    print(f"{'h':>8} {'error':>10} {'order':>6}")
    for i, (h, e) in enumerate(zip(hs, errs)):
        r = "-" if i == 0 else verify.observed_rate(errs[i - 1], e, hs[i - 1], h)
        r = r if isinstance(r, str) else ("sat" if r is None else f"{r:.3f}")
        print(f"{h:8.4f} {e:10.3e} {r:>6}")
    return EXIT_OK


def run_export(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    build = build_cube_mesh if cfg.domain == "cube" else build_lshape_mesh
    mesh = build(cfg.level)
    exact = verify.DOMAINS[cfg.domain][1]()
    for v in cfg.variants:
        config = VariantConfig(v, cfg.k, cfg.tau, allow_low_order=(cfg.domain == "lshape"))
        sol, system = solve_problem(mesh, config, exact, method=cfg.solver, threads=cfg.threads)
        stem = os.path.join(cfg.out, f"{v}_k{cfg.k}_{cfg.domain}_n{cfg.level}")
        write_vtk(stem + ".vtk", system.disc, sol)
        write_checkpoint(stem + ".chk", system.disc, sol)
        print(f"wrote {stem}.vtk and {stem}.chk")
    return EXIT_OK


def run(cfg):
    handler = {"converge": run_converge, "check": run_check, "project": run_project,
               "export": run_export}[cfg.command]
    try:
        # BLAS threads follow the budget; one thread keeps results bit-reproducible
        with threadpool_limits(max(1, cfg.threads)):
            return handler(cfg)
    except SolverBreakdown as exc:
        print(f"solver breakdown: {exc} [config: {cfg.command} {','.join(cfg.variants)} "
              f"k={cfg.k} domain={cfg.domain} tau={cfg.tau}]", file=sys.stderr)
        return EXIT_SOLVER


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
