import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import typer
import yaml
from rich.console import Console
from rich.table import Table

from magician.analysis.lp import (
    build_dual_pD,
    build_dual_pk,
    build_primal_pD,
    build_primal_pk,
    build_up_lp,
    simplex_solve,
    to_lp_text,
)
from magician.analysis.oracle import as_multi, monte_carlo
from magician.core.errors import MagicianError
from magician.core.experiments import gamma_table, reproduce as run_target
from magician.core.generators import generate as make_instance
from magician.core.instance import (
    MultiResourceInstance,
    SingleResourceInstance,
    load_instance,
    save_instance,
)
from magician.core.run_config import ExperimentConfig, setting
from magician.policies.knapsack import GAMMA_BESTFIT, BestFitPolicy, run_policy
from magician.policies.kunit import (
    build_candidate,
    build_dual_certificate,
    magician_policy,
    solve_theta_star,
    verify_certificate,
)
from magician.policies.unitdensity import (
    DELTA,
    GAMMA0_DEFAULT,
    UnitDensityPolicy,
    gamma_sequence,
    h_profile,
    optimize_gamma0,
    profile_csv,
    psi_vector,
    run_ud_policy,
)
from magician.utils.utils import setup_logging, to_json_file_pretty, write_csv_rows

console = Console(stderr=True)

kunit_app = typer.Typer(help="k-unit Magician: theta* and optimality certificates")
knapsack_app = typer.Typer(help="Best-fit Magician for the online knapsack")
ud_app = typer.Typer(help="Unit-density gamma sequences")
lp_app = typer.Typer(help="Dense simplex on the built LPs")


def root_options(
    ctx: typer.Context,
    seed: int = typer.Option(setting("simulation.seed", 7), "--seed", help="Monte Carlo seed"),
    tol: float = typer.Option(1e-9, "--tol", help="Numerical tolerance"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Write results to this path"),
    fmt: str = typer.Option("json", "--format", "-f", help="json or csv"),
    debug: bool = typer.Option(False, "--debug", "-d", help="Enable debug logging"),
):
    """Tight online contention resolution schemes."""
    if fmt not in ("json", "csv"):
        typer.echo(f"❌ --format must be json or csv, got {fmt}", err=True)
        raise typer.Exit(1)
    setup_logging(debug=debug)
    ctx.obj = {"seed": seed, "tol": tol, "out": out, "format": fmt}


# -----------------------------------------------------
# Helpers
# -----------------------------------------------------


def _opts(ctx: typer.Context) -> Dict[str, Any]:
    root = ctx.find_root()
    return root.obj or {"seed": 7, "tol": 1e-9, "out": None, "format": "json"}


def _fail(e: Exception):
    typer.echo(f"❌ {e}", err=True)
    raise typer.Exit(1)


def _parse_params(params: Optional[List[str]]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for item in params or []:
        if "=" not in item:
            raise typer.BadParameter(f"expected key=value, got {item!r}")
        key, raw = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw)
    return out


def _parse_floats(raw: str) -> List[float]:
    return [float(v) for v in raw.split(",") if v.strip()]


def _load(
    ctx: typer.Context,
    command: str,
    instance: Optional[str],
    generator: Optional[str],
    params: Optional[List[str]],
) -> SingleResourceInstance | MultiResourceInstance:
    opts = _opts(ctx)
    cfg = ExperimentConfig(
        command=command,
        instance_path=instance,
        generator=generator,
        params=_parse_params(params),
        tol=opts["tol"],
        seed=opts["seed"],
        output_format=opts["format"],
        output_path=opts["out"],
    )
    if cfg.instance_path:
        return load_instance(cfg.instance_path)
    return make_instance(cfg.generator, cfg.params)


def _kunit_probs(instance: SingleResourceInstance) -> List[float]:
    return [sum(q.probs) for q in instance.queries]


def _probs_or_instance(probs: Optional[str], instance: Optional[str]) -> List[float]:
    if (probs is None) == (instance is None):
        raise typer.BadParameter("give exactly one of --probs or --instance")
    if probs is not None:
        return _parse_floats(probs)
    return _kunit_probs(load_instance(instance))


def _emit(ctx: typer.Context, payload: Any, rows: Optional[List[Dict[str, Any]]] = None):
    opts = _opts(ctx)
    out = opts["out"]
    if out is None:
        if opts["format"] == "csv" and rows:
            typer.echo(",".join(rows[0].keys()))
            for row in rows:
                typer.echo(",".join("" if v is None else str(v) for v in row.values()))
        else:
            typer.echo(json.dumps(payload, indent=2, default=str))
        return
    if opts["format"] == "csv" and rows is not None:
        path = write_csv_rows(out, rows)
    else:
        path = to_json_file_pretty(out, payload)
    typer.echo(f"📂 Wrote {path}")


# -----------------------------------------------------
# Ratio table
# -----------------------------------------------------


def gamma_k(
    ctx: typer.Context,
    k_max: int = typer.Option(8, "--k-max", help="Largest k (at most 16)"),
    euler_n: Optional[int] = typer.Option(None, "--euler-n", help="Add an Euler column with step 1/N"),
):
    """Tight ratios gamma*_k next to the classical and previous bounds."""
    try:
        if not 1 <= k_max <= 16:
            raise typer.BadParameter("--k-max must lie in 1..16")
        rows = gamma_table(k_max, euler_n)
    except MagicianError as e:
        _fail(e)

    table = Table(title="Tight multi-unit ratios")
    for col in ("k", "gamma*_k", "1-1/sqrt(k+3)", "existing", "upper", "euler"):
        table.add_column(col, justify="right")

    def cell(v):
        return "-" if v is None else f"{v:.4f}"

    for r in rows:
        table.add_row(
            str(r["k"]), cell(r["gamma_star"]), cell(r["classical"]), cell(r["existing"]), cell(r["upper"]), cell(r["euler"])
        )
    console.print(table)
    _emit(ctx, rows, rows)


# -----------------------------------------------------
# k-unit
# -----------------------------------------------------


@kunit_app.command("theta-star")
def kunit_theta_star(
    ctx: typer.Context,
    k: int = typer.Option(1, "--k", help="Number of units"),
    probs: Optional[str] = typer.Option(None, "--probs", help="Comma separated activation probabilities"),
    instance: Optional[str] = typer.Option(None, "--instance", help="Instance JSON"),
):
    """Largest feasible theta of the candidate construction."""
    try:
        p = _probs_or_instance(probs, instance)
        theta = solve_theta_star(p, k, _opts(ctx)["tol"])
    except MagicianError as e:
        _fail(e)
    typer.echo(f"✅ theta* = {theta:.9f}", err=True)
    _emit(ctx, {"k": k, "theta_star": theta}, [{"k": k, "theta_star": theta}])


@kunit_app.command("certify")
def kunit_certify(
    ctx: typer.Context,
    k: int = typer.Option(1, "--k", help="Number of units"),
    probs: Optional[str] = typer.Option(None, "--probs", help="Comma separated activation probabilities"),
    instance: Optional[str] = typer.Option(None, "--instance", help="Instance JSON"),
):
    """Build the dual certificate at theta* and verify optimality."""
    try:
        p = _probs_or_instance(probs, instance)
        theta = solve_theta_star(p, k)
        cand = build_candidate(p, k, theta)
        cert = build_dual_certificate(p, k, theta)
        report = verify_certificate(cand, cert, p, k)
    except MagicianError as e:
        _fail(e)
    typer.echo(report.message, err=True)
    _emit(ctx, report.model_dump())
    if not report.success:
        raise typer.Exit(1)


# -----------------------------------------------------
# Knapsack and unit density
# -----------------------------------------------------


@knapsack_app.command("run")
def knapsack_run(
    ctx: typer.Context,
    instance: Optional[str] = typer.Option(None, "--instance", help="Instance JSON"),
    generator: Optional[str] = typer.Option(None, "--generator", help="Generator name"),
    param: Optional[List[str]] = typer.Option(None, "--param", help="Generator parameter key=value"),
    gamma: str = typer.Option("auto", "--gamma", help="Service probability or 'auto' for 1/(3+e^-2)"),
    trials: int = typer.Option(0, "--trials", help="Monte Carlo trials for the reward estimate"),
):
    """Evolve the Best-fit utilization pmf through an instance."""
    try:
        inst = _load(ctx, "knapsack run", instance, generator, param)
        run = run_policy(inst, gamma if gamma == "auto" else float(gamma), seed=_opts(ctx)["seed"], trials=trials)
    except (MagicianError, ValueError) as e:
        _fail(e)
    typer.echo(f"{'✅' if run.feasible else '❌'} feasible={run.feasible}", err=True)
    _emit(ctx, run.model_dump())
    if not run.feasible:
        raise typer.Exit(1)


@ud_app.command("optimize")
def ud_optimize(
    ctx: typer.Context,
    delta: float = typer.Option(DELTA, "--delta", help="Integration step of the h profile"),
):
    """gamma0 maximizing the integral of h over [0, 1]."""
    try:
        g0, value = optimize_gamma0(delta)
    except MagicianError as e:
        _fail(e)
    typer.echo(f"✅ gamma0* = {g0:.4f}, value = {value:.4f}", err=True)
    _emit(ctx, {"gamma0": g0, "value": value}, [{"gamma0": g0, "value": value}])


@ud_app.command("run")
def ud_run(
    ctx: typer.Context,
    instance: Optional[str] = typer.Option(None, "--instance", help="Instance JSON"),
    generator: Optional[str] = typer.Option(None, "--generator", help="Generator name"),
    param: Optional[List[str]] = typer.Option(None, "--param", help="Generator parameter key=value"),
    gamma0: float = typer.Option(GAMMA0_DEFAULT, "--gamma0", help="Initial value of the h profile"),
    gammas: Optional[str] = typer.Option(None, "--gammas", help="Explicit comma separated sequence"),
    trials: int = typer.Option(0, "--trials", help="Monte Carlo trials for the reward estimate"),
):
    """Best-fit with a nonincreasing gamma sequence on a unit-density instance."""
    try:
        inst = _load(ctx, "ud run", instance, generator, param)
        seq = _parse_floats(gammas) if gammas else None
        run = run_ud_policy(inst, seq, seed=_opts(ctx)["seed"], gamma0=gamma0, trials=trials)
    except (MagicianError, ValueError) as e:
        _fail(e)
    typer.echo(f"{'✅' if run.feasible else '❌'} utilization={run.utilization:.6f}", err=True)
    _emit(ctx, run.model_dump())
    if not run.feasible:
        raise typer.Exit(1)


@ud_app.command("profile")
def ud_profile(
    ctx: typer.Context,
    gamma0: float = typer.Option(GAMMA0_DEFAULT, "--gamma0", help="Initial value of the h profile"),
    delta: float = typer.Option(1e-3, "--delta", help="Integration step"),
):
    """Export (t, h(t), integral) rows."""
    try:
        profile = h_profile(gamma0, delta)
    except MagicianError as e:
        _fail(e)
    rows = profile_csv(profile)
    _emit(ctx, {"gamma0": gamma0, "value": profile.value, "rows": rows}, rows)


# -----------------------------------------------------
# LP
# -----------------------------------------------------


@lp_app.command("solve")
def lp_solve(
    ctx: typer.Context,
    which: str = typer.Option(..., "--which", help="dual-pk, primal-pk, dual-pd, primal-pd or up"),
    k: int = typer.Option(1, "--k", help="Units for the k-unit programs"),
    probs: Optional[str] = typer.Option(None, "--probs", help="Probabilities for the k-unit programs"),
    instance: Optional[str] = typer.Option(None, "--instance", help="Instance JSON"),
    export: Optional[str] = typer.Option(None, "--export", help="Also write the LP in text form"),
):
    """Solve one of the built LPs with the dense two-phase simplex."""
    try:
        if which in ("dual-pk", "primal-pk"):
            p = _probs_or_instance(probs, instance)
            lp = build_dual_pk(p, k) if which == "dual-pk" else build_primal_pk(p, k)
        elif which in ("dual-pd", "primal-pd", "up"):
            if instance is None:
                raise typer.BadParameter(f"--which {which} needs --instance")
            inst = load_instance(instance)
            if which == "up":
                lp = build_up_lp(inst if isinstance(inst, MultiResourceInstance) else as_multi(inst))
            else:
                lp = build_dual_pD(inst) if which == "dual-pd" else build_primal_pD(inst)
        else:
            raise typer.BadParameter(f"unknown program {which!r}")
        res = simplex_solve(lp)
    except MagicianError as e:
        _fail(e)
    if export:
        Path(export).write_text(to_lp_text(lp))
        typer.echo(f"📂 Wrote {export}", err=True)
    payload = {
        "which": which,
        "status": res.status,
        "objective": res.objective,
        "iterations": res.iterations,
        "residual": res.residual,
    }
    typer.echo(f"{'✅' if res.optimal else '❌'} {res.status}: {res.objective}", err=True)
    _emit(ctx, payload, [payload])
    if not res.optimal:
        raise typer.Exit(1)


# -----------------------------------------------------
# Simulation, generation, reproduction
# -----------------------------------------------------


def simulate(
    ctx: typer.Context,
    policy: str = typer.Option("bestfit", "--policy", help="magician, bestfit or ud"),
    instance: Optional[str] = typer.Option(None, "--instance", help="Instance JSON"),
    generator: Optional[str] = typer.Option(None, "--generator", help="Generator name"),
    param: Optional[List[str]] = typer.Option(None, "--param", help="Generator parameter key=value"),
    trials: int = typer.Option(setting("simulation.trials", 100000), "--trials", help="Number of sample paths"),
    k: int = typer.Option(1, "--k", help="Units for the magician policy"),
    gamma: float = typer.Option(GAMMA_BESTFIT, "--gamma", help="Best-fit service probability"),
    gamma0: float = typer.Option(GAMMA0_DEFAULT, "--gamma0", help="Unit-density profile start"),
):
    """Monte Carlo evaluation with one summary row per policy."""
    seed = _opts(ctx)["seed"]
    try:
        inst = _load(ctx, "simulate", instance, generator, param)
        if isinstance(inst, MultiResourceInstance):
            raise typer.BadParameter("simulate takes a single-resource instance")
        if policy == "magician":
            p = _kunit_probs(inst)
            theta = solve_theta_star(p, k)
            pol, g = magician_policy(p, k, theta), theta
        elif policy == "bestfit":
            pol, g = BestFitPolicy(inst, gamma), gamma
        elif policy == "ud":
            seq = gamma_sequence(psi_vector(inst), gamma0, 1e-3).gammas
            pol, g = UnitDensityPolicy(inst, seq), (seq[0] if seq else 0.0)
        else:
            raise typer.BadParameter(f"unknown policy {policy!r}")
        stats = monte_carlo(pol, inst, trials, seed)
    except (MagicianError, ValueError) as e:
        _fail(e)
    row = stats.summary_row(g)
    typer.echo(f"🎲 {policy}: {stats.mean:.6f} ± {stats.std_error:.2e}", err=True)
    _emit(ctx, stats.model_dump(), [row])


def generate(
    name: str = typer.Argument(..., help="Generator name"),
    path: str = typer.Argument(..., help="Output instance JSON"),
    param: Optional[List[str]] = typer.Option(None, "--param", help="Generator parameter key=value"),
):
    """Write a generated instance to disk."""
    try:
        inst = make_instance(name, _parse_params(param))
        save_instance(inst, path)
    except (MagicianError, ValueError) as e:
        _fail(e)
    typer.echo(f"✅ Wrote {name} instance to {path}")


def reproduce(
    ctx: typer.Context,
    target: str = typer.Argument(..., help="table1, euler, knapsack-tightness, large-small, ud-0.3557, ud-upper, prophet2-0.6269, invariants, certificates, lemma3, routing or discretization"),
    count: int = typer.Option(1000, "--count", help="Instances for sweep targets"),
):
    """Run an acceptance experiment; exit status 0 iff every check passes."""
    report = run_target(target, seed=_opts(ctx)["seed"], count=count)
    table = Table(title=f"reproduce {target}")
    for col in ("check", "measured", "expected", "tol", "pass"):
        table.add_column(col)
    for c in report.checks:
        table.add_row(c.name, f"{c.measured:.6g}", f"{c.expected:.6g}", f"{c.tol:.1e}", "✅" if c.passed else "❌")
    console.print(table)
    typer.echo(report.message, err=True)
    _emit(ctx, report.model_dump(), [c.model_dump() for c in report.checks])
    if not report.success:
        raise typer.Exit(1)
