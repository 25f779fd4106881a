"""Command-line entry point: ``gflnet {powerflow,certify,simulate,spl} SCENARIO``.

Exit codes: 0 stable/ok, 1 usage or configuration error, 2 unstable,
3 uncertified, 4 numerical failure.
"""
import argparse
import datetime
import logging
import os
import sys
import typing

import numpy as np
import pydantic
import yaml
from colored import Fore, Style
from tzlocal import get_localzone

from .core import ConfigError, ModelError, NumericalError, ObjCore
from .dynamics import DynamicsSystem, simulate
from .inverter import (
    RawInverterGains,
    TimeConstants,
    derive_time_constants,
    eps_family_constants,
    epsilon,
    line_time_constants,
)
from .linstab import certify, plain_record
from .netgraph import Line, NetworkModel, assemble_admittance, kron_reduce
from .powerflow import PowerFlowProblem, build_equilibrium, solve_fixed_point
from .spl import RadialFamilySpec, epsilon_sweep, instability_sweep, spl_table
from .store import CSVConfig, CSVStore
from .version import __version__

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UNSTABLE = 2
EXIT_UNCERTIFIED = 3
EXIT_NUMERICAL = 4

VERDICT_EXIT = {"stable": EXIT_OK, "unstable": EXIT_UNSTABLE, "uncertified": EXIT_UNCERTIFIED}
VERDICT_COLOR = {"stable": Fore.green, "unstable": Fore.red, "uncertified": Fore.yellow}

CLI_METHODS = ("full-eig", "m-matrix", "n-metzler-lp")

logger = logging.getLogger("gflnet")


class GridSection(ObjCore):
    v_g_volt: float = pydantic.Field(float(120 * np.sqrt(2)), gt=0, description="Grid voltage peak (V)")
    omega_rad_s: float = pydantic.Field(float(120 * np.pi), gt=0, description="Nominal frequency (rad/s)")
    s_nom_va: float = pydantic.Field(1000.0, gt=0, description="Nominal power (VA)")


class LoadSection(ObjCore):
    bus: int = pydantic.Field(..., ge=1)
    r_ohm: float = pydantic.Field(..., gt=0)


class LineSection(ObjCore):
    bus_from: int = pydantic.Field(..., ge=0)
    bus_to: int = pydantic.Field(..., ge=0)
    r_ohm: float = pydantic.Field(..., ge=0)
    l_henry: float = pydantic.Field(..., ge=0)


class NetworkSection(ObjCore):
    loads: typing.List[LoadSection] = []
    lines: typing.List[LineSection] = pydantic.Field(..., min_length=1)


class RadialSection(ObjCore):
    n: int = pydantic.Field(..., ge=1, description="Number of inverters")
    r_ohm: float = pydantic.Field(0.02, gt=0)
    l_henry: float = pydantic.Field(2e-5, ge=0)


class RawGainsSection(ObjCore):
    omega_c_pll_rad_s: float = pydantic.Field(..., gt=0)
    kp_pll: float = pydantic.Field(..., gt=0)
    ki_pll: float = pydantic.Field(..., gt=0)
    omega_s_rad_s: float = pydantic.Field(..., gt=0)
    kp_s: float = pydantic.Field(..., gt=0)
    ki_s: float = pydantic.Field(..., gt=0)
    kp_c: float = pydantic.Field(..., gt=0)
    ki_c: float = pydantic.Field(..., gt=0)
    l_f_henry: float = pydantic.Field(..., gt=0)
    c_f_farad: float = pydantic.Field(..., gt=0)

    def to_gains(self):
        return RawInverterGains(
            omega_c_pll=self.omega_c_pll_rad_s,
            kp_pll=self.kp_pll,
            ki_pll=self.ki_pll,
            omega_s=self.omega_s_rad_s,
            kp_s=self.kp_s,
            ki_s=self.ki_s,
            kp_c=self.kp_c,
            ki_c=self.ki_c,
            l_f=self.l_f_henry,
            c_f=self.c_f_farad,
        )


class EpsGeneratorSection(ObjCore):
    eps_i: float = pydantic.Field(..., gt=0)
    l_f_henry: float = pydantic.Field(1e-3, gt=0)
    c_f_farad: float = pydantic.Field(2e-3, gt=0)
    tau_p_s: typing.Optional[float] = pydantic.Field(None, gt=0)


class InverterGroup(ObjCore):
    """Parameters shared by a set of inverters; exactly one form is given."""

    buses: typing.Union[str, typing.List[int]] = pydantic.Field("all")
    raw_gains: typing.Optional[RawGainsSection] = None
    time_constants: typing.Optional[TimeConstants] = None
    eps_generator: typing.Optional[EpsGeneratorSection] = None

    @pydantic.model_validator(mode="after")
    def check_one_form(self):
        given = [f for f in ("raw_gains", "time_constants", "eps_generator") if getattr(self, f)]
        if len(given) != 1:
            raise ValueError(
                f"exactly one of raw_gains, time_constants, eps_generator is required, got {given}"
            )
        if isinstance(self.buses, str) and self.buses != "all":
            raise ValueError(f"buses must be 'all' or a list of bus indices, got {self.buses!r}")
        return self


class InjectionSection(ObjCore):
    p_hat: typing.Union[float, typing.List[float]] = 0.0
    q_hat: typing.Union[float, typing.List[float]] = 0.0


class RunSection(ObjCore):
    tol: float = pydantic.Field(1e-12, gt=0)
    max_iter: int = pydantic.Field(1000, ge=1)
    out_dir: str = "out"
    method: str = "m-matrix"
    line_model: str = "auto"
    seed: int = 0
    t_end: float = pydantic.Field(1.0, gt=0)
    samples: int = pydantic.Field(201, ge=2)
    integrator: str = "Radau"


class ScenarioConfig(ObjCore):
    grid: GridSection = GridSection()
    network: typing.Optional[NetworkSection] = None
    radial: typing.Optional[RadialSection] = None
    inverters: typing.List[InverterGroup] = pydantic.Field(..., min_length=1)
    injections: InjectionSection = InjectionSection()
    run: RunSection = RunSection()

    @pydantic.model_validator(mode="after")
    def check_network(self):
        if (self.network is None) == (self.radial is None):
            raise ValueError("exactly one of network and radial is required")
        n_loads = len(self.network.loads) if self.network else 0
        load_buses = sorted(load.bus for load in self.network.loads) if self.network else []
        if load_buses != list(range(1, n_loads + 1)):
            raise ValueError(f"load buses must be 1..{n_loads}, got {load_buses}")
        n = self.n_inverters
        if n < 1:
            raise ValueError("the network has no inverter bus")
        inverter_buses = set(range(1 + n_loads, 1 + n_loads + n))
        covered = []
        for group in self.inverters:
            buses = sorted(inverter_buses) if group.buses == "all" else group.buses
            unknown = set(buses) - inverter_buses
            if unknown:
                raise ValueError(f"inverter group references non-inverter buses {sorted(unknown)}")
            covered += list(buses)
        if sorted(covered) != sorted(inverter_buses):
            raise ValueError("every inverter bus must belong to exactly one inverter group")
        for name in ("p_hat", "q_hat"):
            value = getattr(self.injections, name)
            if isinstance(value, list) and len(value) != n:
                raise ValueError(f"injections.{name} has {len(value)} entries for {n} inverters")
        return self

    @property
    def n_inverters(self):
        if self.radial is not None:
            return self.radial.n
        n_loads = len(self.network.loads)
        buses = {b for line in self.network.lines for b in (line.bus_from, line.bus_to)}
        return max(buses) - n_loads if buses else 0

    @property
    def n_loads(self):
        return len(self.network.loads) if self.network else 0

    def network_model(self):
        grid = self.grid
        common = dict(v_g=grid.v_g_volt, omega_nom=grid.omega_rad_s, s_nom=grid.s_nom_va)
        if self.radial is not None:
            lines = [
                Line(bus_from=k - 1, bus_to=k, r_ohm=self.radial.r_ohm, l_henry=self.radial.l_henry)
                for k in range(1, self.radial.n + 1)
            ]
            return NetworkModel(n_inverters=self.radial.n, lines=lines, **common)
        loads = sorted(self.network.loads, key=lambda load: load.bus)
        return NetworkModel(
            n_inverters=self.n_inverters,
            n_loads=len(loads),
            lines=[Line(**line.model_dump()) for line in self.network.lines],
            load_resistances=[load.r_ohm for load in loads],
            **common,
        )

    def inverter_constants(self, model: NetworkModel):
        """One TimeConstants per inverter, in bus order."""
        grid = self.grid
        per_bus = {}
        for group in self.inverters:
            if group.raw_gains is not None:
                constants = derive_time_constants(
                    group.raw_gains.to_gains(), grid.v_g_volt, grid.s_nom_va, grid.omega_rad_s,
                    lines=model.lines,
                )
            elif group.time_constants is not None:
                constants = group.time_constants
            else:
                gen = group.eps_generator
                constants = eps_family_constants(
                    gen.eps_i, grid.v_g_volt, grid.s_nom_va, grid.omega_rad_s,
                    gen.l_f_henry, gen.c_f_farad, tau_p_s=gen.tau_p_s, lines=model.lines,
                )
            buses = model.inverter_buses if group.buses == "all" else group.buses
            for bus in buses:
                per_bus[bus] = constants
        return [per_bus[bus] for bus in model.inverter_buses]

    def s_ref_hat(self):
        n = self.n_inverters
        p = np.broadcast_to(np.asarray(self.injections.p_hat, dtype=float), (n,))
        q = np.broadcast_to(np.asarray(self.injections.q_hat, dtype=float), (n,))
        return np.column_stack([p, q]).ravel()

    def radial_family(self):
        """RadialFamilySpec from a radial scenario with a single eps generator group."""
        if self.radial is None:
            raise ModelError("SPL scans need a radial scenario")
        group = self.inverters[0]
        grid = self.grid
        params = dict(
            r_ohm=self.radial.r_ohm,
            l_henry=self.radial.l_henry,
            v_g=grid.v_g_volt,
            omega_nom=grid.omega_rad_s,
            s_nom=grid.s_nom_va,
            n_max=self.radial.n,
        )
        if group.eps_generator is not None:
            gen = group.eps_generator
            params.update(eps_i=gen.eps_i, l_f=gen.l_f_henry, c_f=gen.c_f_farad, tau_p_s=gen.tau_p_s)
        else:
            model = self.network_model()
            params["constants"] = self.inverter_constants(model)[0]
        p = self.injections.p_hat
        params["p_hat"] = float(p[0] if isinstance(p, list) else p)
        return RadialFamilySpec(**params)

    def to_yaml(self, file_path=None):
        text = yaml.safe_dump(self.model_dump(exclude_none=True), sort_keys=False)
        if file_path:
            with open(file_path, "w", encoding="utf-8") as yaml_file:
                yaml_file.write(text)
        return text


def load_scenario(file_path):
    """Reads and validates a scenario, reporting failing fields as dotted paths."""
    try:
        return ScenarioConfig.from_yaml(file_path)
    except pydantic.ValidationError as exc:
        paths = [".".join(str(p) for p in err["loc"]) or "<root>" for err in exc.errors()]
        details = "; ".join(
            f"{path}: {err['msg']}" for path, err in zip(paths, exc.errors())
        )
        raise ConfigError(f"invalid scenario {file_path}: {details}", paths=paths) from exc
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read scenario {file_path}: {exc}") from exc
    except AttributeError as exc:
        # top level is not a mapping
        raise ConfigError(f"scenario {file_path} must be a mapping") from exc


class RunReport(ObjCore):
    command: str
    version: str = __version__
    timestamp: str = pydantic.Field(
        default_factory=lambda: datetime.datetime.now(get_localzone()).isoformat()
    )
    inputs: typing.Dict[str, typing.Any] = {}
    epsilon: typing.Optional[typing.Dict[str, typing.Any]] = None
    existence_margin: typing.Optional[float] = None
    certificates: typing.List[typing.Dict[str, typing.Any]] = []
    results: typing.Dict[str, typing.Any] = {}
    timings: typing.Dict[str, float] = {}
    outputs: typing.List[str] = []
    exit_code: int = EXIT_OK

    def to_record(self):
        return plain_record(self.model_dump())


def _epsilon_report(model, constants):
    tau_e, _ = line_time_constants(model.lines, model.v_g, model.s_nom, model.omega_nom)
    return epsilon(constants, tau_e=tau_e).model_dump()


def _build_system(config: ScenarioConfig):
    model = config.network_model()
    constants = config.inverter_constants(model)
    system = DynamicsSystem.from_model(
        model, constants, config.s_ref_hat(), line_model=config.run.line_model, logger=logger
    )
    return model, constants, system


def _solve(config, system):
    problem = PowerFlowProblem(reduced=system.reduced, s_ref_hat=system.s_ref_hat)
    return solve_fixed_point(problem, tol=config.run.tol, max_iter=config.run.max_iter, logger=logger)


def cmd_powerflow(config: ScenarioConfig, store: CSVStore):
    model = config.network_model()
    constants = config.inverter_constants(model)
    reduced = kron_reduce(assemble_admittance(model, logger=logger), model, logger=logger)
    problem = PowerFlowProblem(reduced=reduced, s_ref_hat=config.s_ref_hat())
    solution = solve_fixed_point(
        problem, tol=config.run.tol, max_iter=config.run.max_iter, logger=logger
    )
    store.put("powerflow", solution.to_frame(), clear=True)
    store.dump(data_list=["powerflow"])
    return RunReport(
        command="powerflow",
        epsilon=_epsilon_report(model, constants),
        existence_margin=solution.margin,
        results={
            "iterations": solution.iterations,
            "residual_power": solution.residual_power,
            "residual_current": solution.residual_current,
            "certified": solution.certified,
            "all_in_ball": solution.all_in_ball,
        },
        exit_code=EXIT_OK if solution.certified else EXIT_UNCERTIFIED,
    )


def cmd_certify(config: ScenarioConfig, store: CSVStore, method=None):
    method = method or config.run.method
    if method not in CLI_METHODS:
        raise ConfigError(f"unknown method {method!r}, expected one of {CLI_METHODS}", paths=["run.method"])
    model = config.network_model()
    if method == "n-metzler-lp" and not model.is_resistive:
        raise ConfigError("the n-metzler-lp method needs a purely resistive network", paths=["run.method"])
    model, constants, system = _build_system(config)
    solution = _solve(config, system)
    cert = certify(system, solution, method=method, model=model, constants=constants, logger=logger)
    record = cert.model_dump()
    store.put_record("certificate", plain_record(record))
    return RunReport(
        command="certify",
        epsilon=_epsilon_report(model, constants),
        existence_margin=solution.margin,
        certificates=[record],
        timings=cert.timings,
        results={"verdict": cert.verdict, "method": method},
        exit_code=VERDICT_EXIT[cert.verdict],
    )


def parse_perturbation(spec, layout, seed=0):
    """Perturbation vector from a magnitude or from ``NAME=VALUE`` pairs."""
    spec = str(spec).strip()
    delta = np.zeros(layout.dim)
    if "=" not in spec:
        try:
            magnitude = float(spec)
        except ValueError as exc:
            raise ConfigError(f"malformed perturbation {spec!r}", paths=["--perturb"]) from exc
        if magnitude == 0.0:
            return delta
        direction = np.random.default_rng(seed).standard_normal(layout.dim)
        return magnitude * direction / np.max(np.abs(direction))
    labels = {label: k for k, label in enumerate(layout.labels())}
    for item in spec.split(","):
        name, _, value = item.partition("=")
        name = name.strip()
        if name not in labels:
            raise ConfigError(f"unknown state {name!r} in --perturb", paths=["--perturb"])
        try:
            delta[labels[name]] += float(value)
        except ValueError as exc:
            raise ConfigError(f"malformed value for {name!r} in --perturb", paths=["--perturb"]) from exc
    return delta


def cmd_simulate(config: ScenarioConfig, store: CSVStore, t_end=None, perturb="0", seed=None):
    run = config.run
    t_end = run.t_end if t_end is None else t_end
    if not t_end > 0:
        raise ConfigError("t_end must be positive", paths=["run.t_end"])
    model, constants, system = _build_system(config)
    solution = _solve(config, system)
    eq = build_equilibrium(solution, system.reduced, line_model=system.line_model)
    offset = parse_perturbation(perturb, system.layout, seed=run.seed if seed is None else seed)
    traj = simulate(
        system, eq.state + offset, (0.0, t_end), method=run.integrator, samples=run.samples, logger=logger
    )
    store.put("trajectory", traj.to_frame(), clear=True)
    store.dump(data_list=["trajectory"])
    dev = traj.deviation(eq.state)
    initial = float(dev[0])
    final = float(dev[-1])
    return RunReport(
        command="simulate",
        epsilon=_epsilon_report(model, constants),
        existence_margin=solution.margin,
        results={
            "initial_deviation": initial,
            "final_deviation": final,
            "max_deviation": float(np.max(dev)),
            "growth": final / initial if initial > 0 else None,
        },
    )


def cmd_spl(config, store, methods=None, p_grid=None, eps_grid=None, n_max=None, fig3=False, progress=False):
    spec = config.radial_family()
    if n_max is not None:
        spec = spec.model_copy(update={"n_max": n_max})
    methods = methods or ["full-eig", "m-matrix", "static"]
    p_grid = p_grid or [spec.p_hat]
    table = spl_table(spec, p_grid, methods=methods, progress=progress, logger=logger)
    store.put("table_ii", table, clear=True)
    results = {"table_ii": table.to_dict(orient="records")}
    if eps_grid:
        sweep = epsilon_sweep(spec, eps_grid, p_grid, progress=progress, logger=logger)
        store.put("fig4", sweep.table, clear=True)
        results["largest_valid_eps"] = sweep.largest_valid_eps
    if fig3:
        sweep = instability_sweep(spec, spec.n_max, p_grid, progress=progress, logger=logger)
        store.put("fig3", sweep.table, clear=True)
        results["instability_onset_p"] = sweep.onset_p
        results["existence_limit_p"] = sweep.existence_p
    store.dump()
    return RunReport(command="spl", results=results)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser():
    parser = _Parser(prog="gflnet", description="Grid-following inverter network analysis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--tol", type=float, help="Fixed-point tolerance")
    parser.add_argument("--max-iter", type=int, help="Fixed-point iteration cap")
    parser.add_argument("--seed", type=int, help="Seed for random perturbations")
    parser.add_argument("--out-dir", help="Output directory")
    parser.add_argument("--json", action="store_true", help="Write report.json instead of report.yaml")
    parser.add_argument("-v", "--verbose", action="count", default=0)

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("powerflow", help="Solve the power flow")
    p.add_argument("config")

    p = sub.add_parser("certify", help="Issue a stability certificate")
    p.add_argument("config")
    p.add_argument("--method", choices=CLI_METHODS)

    p = sub.add_parser("simulate", help="Simulate from a perturbed equilibrium")
    p.add_argument("config")
    p.add_argument("--t-end", type=float)
    p.add_argument("--perturb", default="0", help="Magnitude, or NAME=VALUE[,NAME=VALUE...]")
    p.add_argument("--method", dest="integrator", choices=("Radau", "BDF", "LSODA"))
    p.add_argument("--samples", type=int)

    p = sub.add_parser("spl", help="Safe penetration level scans")
    p.add_argument("config")
    p.add_argument("--methods", type=lambda s: [m.strip() for m in s.split(",")])
    p.add_argument("--p-grid", type=_float_list)
    p.add_argument("--eps-grid", type=_float_list)
    p.add_argument("--n-max", type=int)
    p.add_argument("--fig3", action="store_true")
    return parser


def _configure_logging(verbosity):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logger.setLevel(level)


def run(args):
    config = load_scenario(args.config)
    overrides = {}
    for flag, field in (("tol", "tol"), ("max_iter", "max_iter"), ("seed", "seed"), ("out_dir", "out_dir")):
        if getattr(args, flag, None) is not None:
            overrides[field] = getattr(args, flag)
    if getattr(args, "integrator", None):
        overrides["integrator"] = args.integrator
    if getattr(args, "samples", None):
        overrides["samples"] = args.samples
    if overrides:
        config = config.model_copy(update={"run": config.run.model_copy(update=overrides)})

    store = CSVStore(config=CSVConfig(path=config.run.out_dir, json_mirror=args.json), logger=logger)
    if args.command == "powerflow":
        report = cmd_powerflow(config, store)
    elif args.command == "certify":
        report = cmd_certify(config, store, method=args.method)
    elif args.command == "simulate":
        report = cmd_simulate(config, store, t_end=args.t_end, perturb=args.perturb)
    else:
        report = cmd_spl(
            config, store, methods=args.methods, p_grid=args.p_grid, eps_grid=args.eps_grid,
            n_max=args.n_max, fig3=args.fig3, progress=sys.stderr.isatty(),
        )
    report.inputs = {"scenario": os.path.abspath(args.config), **config.model_dump(exclude_none=True)}
    report.outputs = list(store.manifest) + [
        os.path.join(config.run.out_dir, "report.json" if args.json else "report.yaml")
    ]
    store.put_record("report", report.to_record())
    return report


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    try:
        report = run(args)
    except ConfigError as exc:
        print(f"{Fore.red}configuration error{Style.reset}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"{Fore.red}model error{Style.reset}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"{Fore.red}numerical failure{Style.reset}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    verdict = report.results.get("verdict")
    if verdict:
        print(f"{args.command}: {VERDICT_COLOR[verdict]}{verdict}{Style.reset}")
    elif report.exit_code == EXIT_UNCERTIFIED:
        print(f"{args.command}: {Fore.yellow}uncertified{Style.reset} (existence margin above 3/8)")
    else:
        print(f"{args.command}: {Fore.green}done{Style.reset}")
    for path in report.outputs:
        print(f"  {path}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
