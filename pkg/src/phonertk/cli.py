"""Command line entry point: ``phonertk <command> ...``."""
from __future__ import annotations

import argparse
import asyncio
import csv
import json
import logging
import os
import sys

from . import __version__, evaluation, ntrip, pipeline, rtcm, sim
from .ephemeris import EphemerisSet
from .geodesy import Geodetic, geodetic_to_ecef
from .gnss_obs import read_epochs, write_epochs
from .rtk import SolverConfig
from .satsel import SelectionConfig

log = logging.getLogger("phonertk")

# solver weights matched to the simulator's default noise (see README)
DEFAULT_CODE_SIGMA = 0.3


class CliError(Exception):
    pass


# simulate

def cmd_simulate(args) -> int:
    sc = sim.load_scenario(args.scenario) if args.scenario else sim.default_scenario()
    if args.seed is not None:
        sc.seed = args.seed
    result = sim.generate(sc)
    paths = sim.write_outputs(result, args.out)
    if args.caster_password:
        b = sc.base_truth
        text = ntrip.config_text(
            {sc.mount: {"password": args.caster_password, "identifier": "simulated base",
                        "latitude": f"{b.lat:.4f}", "longitude": f"{b.lon:.4f}"}},
            port=args.port)
        with open(os.path.join(args.out, "caster.ini"), "w") as f:
            f.write(text)
    print(f"wrote {sc.n_epochs} epochs per receiver to {args.out}")
    for k, p in paths.items():
        print(f"  {k}: {p}")
    return 0


# caster

def cmd_caster(args) -> int:
    if args.hash_password is not None:
        print(ntrip.hash_password(args.hash_password))
        return 0
    if not args.config:
        raise CliError("caster needs --config (or --hash-password)")
    cfg = ntrip.CasterConfig.load(args.config)
    if args.port is not None:
        cfg.port = args.port
    caster = ntrip.Caster(cfg)

    async def main():
        await caster.start()
        print(f"listening on {cfg.host}:{caster.port}", file=sys.stderr, flush=True)
        await caster.serve_forever()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    except OSError as e:
        raise CliError(f"cannot listen on {cfg.host}:{cfg.port}: {e}") from e
    return 0


# base

def cmd_base(args) -> int:
    epochs = list(read_epochs(args.obs))
    host, port = pipeline.parse_hostport(args.caster)
    try:
        srv = ntrip.NtripServer(host, port, args.mount, args.password).connect()
    except ntrip.NtripError as e:
        raise CliError(str(e)) from e
    try:
        sent = pipeline.publish(epochs, srv.send, realtime=args.realtime, speed=args.speed,
                                station_id=args.station_id)
    except OSError as e:
        raise CliError(f"publishing failed: {e}") from e
    finally:
        srv.close()
    print(f"published {len(epochs)} epochs, {sent} bytes to /{args.mount}", file=sys.stderr)
    return 0


# rover

def _solver_config(args) -> SolverConfig:
    return SolverConfig(
        code_sigma=args.code_sigma,
        phase_sigma=args.phase_sigma,
        dynamics=args.dynamics,
        ambiguity_fix=args.fix,
        ratio_threshold=args.ratio,
        selection=SelectionConfig(elevation_mask=args.elevation_mask,
                                  max_satellites=args.max_sats or None),
    )


def cmd_rover(args) -> int:
    rover = list(read_epochs(args.obs))
    if not rover:
        raise CliError(f"no epochs in {args.obs}")
    ephs = EphemerisSet.load(args.eph)
    base_pos = pipeline.parse_base_pos(args.base_pos)
    cfg = _solver_config(args)
    if args.base_obs:
        res = pipeline.run_rover_in_process(rover, list(read_epochs(args.base_obs)), base_pos, ephs, cfg)
    else:
        if not args.caster:
            raise CliError("rover needs --caster (or --base-obs)")
        host, port = pipeline.parse_hostport(args.caster)
        cred = (args.user, args.password) if args.user else None
        stream = ntrip.client_session(
            host, port, args.mount, cred, reconnect=args.reconnect, timeout=args.timeout,
            on_connect=lambda: print(f"connected to {host}:{port}/{args.mount}", file=sys.stderr, flush=True))
        # handshake up front so connection problems fail fast
        try:
            first = next(stream, b"")
        except ntrip.NtripError as e:
            raise CliError(str(e)) from e

        def chunks():
            if first:
                yield first
            yield from stream

        res = pipeline.run_rover_network(rover, chunks(), base_pos, ephs, cfg)
    paths = pipeline.write_rover_outputs(res, args.out)
    counts = pipeline.status_counts(res.rtk)
    print(f"{len(res.rtk)} epochs, {res.paired} paired with base, {res.dropped} base epochs dropped; "
          + ", ".join(f"{k} {v}" for k, v in counts.items() if v), file=sys.stderr)
    for k, p in paths.items():
        print(f"  {k}: {p}")
    return 0


# rtcm

def cmd_rtcm(args) -> int:
    if args.action == "inspect":
        with open(args.file, "rb") as f:
            data = f.read()
        n = 0
        for payload in rtcm.iter_frames(data):
            print(rtcm.describe(payload))
            n += 1
        print(f"{n} frames", file=sys.stderr)
    elif args.action == "encode":
        epochs = list(read_epochs(args.obs))
        with open(args.out, "wb") as f:
            for _, data in pipeline.encode_epochs(epochs, args.station_id):
                f.write(data)
        print(f"encoded {len(epochs)} epochs to {args.out}", file=sys.stderr)
    else:
        with open(args.file, "rb") as f:
            data = f.read()
        dec = rtcm.Msm7Decoder(args.week)
        epochs = dec.feed(data) + dec.flush()
        write_epochs(args.out, epochs)
        print(f"decoded {len(epochs)} epochs ({dec.unsupported} unsupported, "
              f"{dec.malformed} malformed messages) to {args.out}", file=sys.stderr)
    return 0


# satsel

def _truth_position(args):
    if args.pos:
        return pipeline.parse_base_pos(args.pos)
    if args.truth:
        with open(args.truth) as f:
            d = json.loads(f.readline())
        return geodetic_to_ecef(Geodetic(d["lat"], d["lon"], d["h"]))
    raise CliError("satsel analyze needs --truth or --pos")


def cmd_satsel(args) -> int:
    from . import plotting

    epochs = list(read_epochs(args.obs))
    ephs = EphemerisSet.load(args.eph)
    stats, gdops = pipeline.analyze_selection(epochs, ephs, _truth_position(args),
                                              args.elevation_mask, args.max_sats or None)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "satellites.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("sat", "azimuth", "elevation", "cn0", "residual_mean", "residual_rms",
                    "selected_epochs", "epochs"))
        for s in stats:
            w.writerow((s.sat, f"{s.azimuth:.2f}", f"{s.elevation:.2f}", f"{s.cn0:.1f}",
                        f"{s.residual_mean:.3f}", f"{s.residual_rms:.3f}", s.selected_epochs, s.epochs))
    with open(os.path.join(args.out, "gdop.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("tow", "n_all", "n_selected", "gdop_all", "gdop_selected"))
        for row in gdops:
            w.writerow((f"{row[0]:.3f}", row[1], row[2], f"{row[3]:.4f}", f"{row[4]:.4f}"))
    plotting.skyplot([(s.sat, s.azimuth, s.elevation, s.selected_epochs > 0) for s in stats],
                     os.path.join(args.out, "skyplot.png"), args.elevation_mask)
    plotting.residual_bars([(s.sat, s.elevation, s.residual_mean) for s in stats],
                           os.path.join(args.out, "residuals.png"), args.elevation_mask)
    low = [abs(s.residual_mean) for s in stats if s.elevation < args.elevation_mask]
    high = [abs(s.residual_mean) for s in stats if s.elevation >= args.elevation_mask]
    print(f"{len(stats)} satellites; mean |residual| {sum(high) / max(len(high), 1):.2f} m at or above "
          f"{args.elevation_mask:.0f} deg, {sum(low) / max(len(low), 1):.2f} m below")
    print(f"wrote satellites.csv, gdop.csv, skyplot.png, residuals.png to {args.out}")
    return 0


# eval

def cmd_eval(args) -> int:
    from . import plotting

    labels = args.label or [os.path.splitext(os.path.basename(p))[0].upper() for p in args.solutions]
    if len(labels) != len(args.solutions):
        raise CliError("give one --label per solutions file")
    truth = evaluation.read_truth(args.truth)
    series, entries = {}, []
    for path, label in zip(args.solutions, labels):
        s = evaluation.error_series(evaluation.read_solutions(path), truth)
        if s.skipped:
            print(f"{label}: {s.skipped} epochs without truth skipped", file=sys.stderr)
        if len(s) == 0:
            raise CliError(f"{path}: no solutions overlap the truth")
        series[label] = s
        entries.append(evaluation.rmse(s, label, args.threshold))
    print(evaluation.report_table(entries))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.csv"), "w") as f:
            f.write(evaluation.report_csv(entries))
        with open(os.path.join(args.out, "errors.csv"), "w") as f:
            f.write(evaluation.series_csv(series))
        plotting.error_series_plot(series, os.path.join(args.out, "errors.png"))
        print(f"wrote report.csv, errors.csv, errors.png to {args.out}", file=sys.stderr)
    return 0


# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phonertk", description="Phone-grade RTK toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate base/rover observations from a scenario")
    s.add_argument("scenario", nargs="?", help="scenario YAML (default: packaged static scenario)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="override the scenario seed (packaged default: 1)")
    s.add_argument("--caster-password", help="also write caster.ini for the scenario mount")
    s.add_argument("--port", type=int, default=ntrip.DEFAULT_PORT, help="port written to caster.ini")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("caster", help="run an NTRIP caster")
    s.add_argument("--config")
    s.add_argument("--port", type=int, help="override the configured port (0 picks a free one)")
    s.add_argument("--hash-password", metavar="PW", help="print a salted hash for the config and exit")
    s.set_defaults(func=cmd_caster)

    s = sub.add_parser("base", help="publish base observations as MSM7 over NTRIP")
    s.add_argument("--obs", required=True)
    s.add_argument("--mount", required=True)
    s.add_argument("--caster", required=True, help="host:port")
    s.add_argument("--password", required=True)
    s.add_argument("--station-id", type=int, default=0)
    pace = s.add_mutually_exclusive_group()
    pace.add_argument("--realtime", action="store_true", help="pace epochs to their timestamps")
    pace.add_argument("--fast", dest="realtime", action="store_false", help="send as fast as possible (default)")
    s.add_argument("--speed", type=float, default=1.0, help="real-time speed-up factor")
    s.set_defaults(func=cmd_base)

    s = sub.add_parser("rover", help="RTK-position rover observations against a base stream")
    s.add_argument("--obs", required=True)
    s.add_argument("--eph", required=True)
    s.add_argument("--base-pos", required=True, help="lat,lon,h of the base (deg, deg, m)")
    s.add_argument("--out", required=True)
    s.add_argument("--caster", help="host:port")
    s.add_argument("--mount", default="SIM0")
    s.add_argument("--user")
    s.add_argument("--password")
    s.add_argument("--base-obs", help="read base JSONL and relay it through MSM7 in-process instead of NTRIP")
    s.add_argument("--reconnect", action="store_true")
    s.add_argument("--timeout", type=float, default=10.0)
    s.add_argument("--code-sigma", type=float, default=DEFAULT_CODE_SIGMA)
    s.add_argument("--phase-sigma", type=float, default=0.003)
    s.add_argument("--dynamics", choices=("static", "kinematic"), default="static")
    s.add_argument("--fix", choices=("rounding", "off"), default="rounding")
    s.add_argument("--ratio", type=float, default=3.0)
    s.add_argument("--elevation-mask", type=float, default=30.0)
    s.add_argument("--max-sats", type=int, default=8, help="0 for no cap")
    s.set_defaults(func=cmd_rover)

    s = sub.add_parser("rtcm", help="RTCM 3 file utilities")
    rs = s.add_subparsers(dest="action", required=True)
    a = rs.add_parser("inspect")
    a.add_argument("file")
    a = rs.add_parser("encode")
    a.add_argument("--obs", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--station-id", type=int, default=0)
    a = rs.add_parser("decode")
    a.add_argument("file")
    a.add_argument("--week", type=int, required=True)
    a.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rtcm)

    s = sub.add_parser("satsel", help="satellite selection analysis")
    ss = s.add_subparsers(dest="action", required=True)
    a = ss.add_parser("analyze", help="sky plot, residuals by elevation and GDOP")
    a.add_argument("--obs", required=True)
    a.add_argument("--eph", required=True)
    a.add_argument("--truth", help="truth JSONL (first record used)")
    a.add_argument("--pos", help="lat,lon,h of the receiver")
    a.add_argument("--out", required=True)
    a.add_argument("--elevation-mask", type=float, default=30.0)
    a.add_argument("--max-sats", type=int, default=8)
    s.set_defaults(func=cmd_satsel)

    s = sub.add_parser("eval", help="RMSE report of solutions against truth")
    s.add_argument("--solutions", nargs="+", required=True, help="solution JSONL or NMEA files")
    s.add_argument("--label", nargs="+")
    s.add_argument("--truth", required=True)
    s.add_argument("--out")
    s.add_argument("--threshold", type=float, default=1.0, help="convergence threshold, m")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, sim.ScenarioError, ntrip.NtripError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
