"""Command-line entry point: ``sdauth <group> <command> [options]``.

Groups: ``wire`` (decode datagrams), ``zone`` (sign, verify, preload),
``forge`` (supplier bundles and vehicle zones) and ``sim`` (scenarios,
scalability sweep, attack suite, model checking).  Global options go before
the group and may be defaulted from an INI file given with ``--config``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import pathlib
import sys
import time

from sdauth import crypto, dnssec, records, wire, zoneforge

log = logging.getLogger("sdauth")

BUILTIN_PLANS = ("ivn", "scalability")


class CliError(Exception):
    """Failure of one stage; the message names the stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


# -- helpers ----------------------------------------------------------------


def _read(path: str | pathlib.Path, stage: str) -> str:
    try:
        return pathlib.Path(path).read_text()
    except OSError as exc:
        raise CliError(stage, f"cannot read {path}: {exc.strerror}") from None


def _write(path: pathlib.Path, text: str) -> pathlib.Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _now(args) -> float:
    return time.time() if args.now is None else args.now


def _load_zone(args, stage: str) -> dnssec.Zone:
    try:
        return dnssec.zone_from_text(_read(args.zone, stage))
    except dnssec.ZoneFormatError as exc:
        raise CliError(stage, f"{args.zone}: {exc}") from None


def _load_anchor(path: str, stage: str) -> dnssec.DnskeyRdata:
    for line in _read(path, stage).splitlines():
        line = line.split(";", 1)[0].strip()
        if line:
            try:
                rec = dnssec.ResourceRecord.from_text(line)
            except dnssec.ZoneFormatError as exc:
                raise CliError(stage, f"bad trust anchor: {exc}") from None
            if rec.rtype != dnssec.RRType.DNSKEY:
                raise CliError(stage, "trust anchor file must hold a DNSKEY record")
            return rec.rdata
    raise CliError(stage, f"{path} holds no trust anchor")


def _load_key(path: str, usage: crypto.KeyUsage, stage: str) -> crypto.KeyPair:
    try:
        return crypto.KeyPair.from_pem(pathlib.Path(path).read_bytes(), usage)
    except (OSError, ValueError, crypto.CryptoError) as exc:
        raise CliError(stage, f"cannot load key {path}: {exc}") from None


def _load_plan(spec: str, stage: str) -> zoneforge.VehicleZonePlan:
    from sdauth.simnet import ivn, scenario

    if spec in BUILTIN_PLANS and not pathlib.Path(spec).exists():
        return ivn.generate_ivn_plan() if spec == "ivn" else scenario.scalability_plan()
    try:
        plan = zoneforge.VehicleZonePlan.from_text(_read(spec, stage))
        plan.validate()
    except zoneforge.ForgeError as exc:
        raise CliError(stage, f"{spec}: {exc}") from None
    return plan


def _file_stem(name: str) -> str:
    return records.normalize_name(name).rstrip(".").replace("/", "_")


# -- wire -------------------------------------------------------------------


def cmd_wire_dump(args) -> int:
    if args.file:
        try:
            data = pathlib.Path(args.file).read_bytes()
        except OSError as exc:
            raise CliError("wire dump", f"cannot read {args.file}: {exc.strerror}") from None
        if args.hex:
            data = data.decode("ascii", "replace")
    else:
        data = args.data if args.data != "-" else sys.stdin.read()
    if isinstance(data, str):
        try:
            data = bytes.fromhex("".join(data.split()))
        except ValueError:
            raise CliError("wire dump", "input is not valid hex") from None
    try:
        msg = wire.decode_message(data)
    except wire.WireError as exc:
        raise CliError("wire dump", f"{type(exc).__name__}: {exc}") from None
    print(wire.describe(msg))
    return 0


# -- zone -------------------------------------------------------------------


def cmd_zone_sign(args) -> int:
    zone = _load_zone(args, "zone sign")
    zone.zsk = _load_key(args.zsk, crypto.KeyUsage.ZONE, "zone sign")
    now = _now(args)
    if args.sig_validity:
        zone.sig_validity = args.sig_validity
    if args.ksk:
        dnssec.OemAuthority(ksk=_load_key(args.ksk, crypto.KeyUsage.ZONE, "zone sign")).sign_keyset(zone, now)
    try:
        dnssec.sign_zone(zone, now)
    except dnssec.MissingKey as exc:
        raise CliError("zone sign", str(exc)) from None
    _write(pathlib.Path(args.output or args.zone), dnssec.zone_to_text(zone))
    print(f"signed {len(zone.data_keys())} rrsets in {zone.apex}")
    return 0


def cmd_zone_verify(args) -> int:
    zone = _load_zone(args, "zone verify")
    anchor = _load_anchor(args.anchor, "zone verify")
    statuses = dnssec.verify_zone(zone, anchor, _now(args))
    bad = [(k, s) for k, s in statuses.items() if s is not dnssec.ValidationStatus.SECURE]
    for (name, rtype), status in sorted(bad, key=lambda x: (x[0][0], x[0][1])):
        print(f"{status.value}: {name} {rtype.name}")
    names = {name for name, rtype in statuses if rtype != dnssec.RRType.DNSKEY}
    if bad:
        print(f"zone verify: {len(bad)} of {len(statuses)} rrsets failed validation", file=sys.stderr)
        return 1
    print(f"secure: {len(statuses)} rrsets over {len(names)} record names")
    return 0


def cmd_zone_preload(args) -> int:
    zone = _load_zone(args, "zone preload")
    anchor = _load_anchor(args.anchor, "zone preload")
    now = _now(args)
    source = dnssec.ZoneSource(zone)
    resolver = dnssec.Resolver(anchor, source)
    report = resolver.preload(now)
    print(f"preloaded {report.records} rrsets and {report.keysets} key sets")
    for name, rtype, status in report.rejected:
        print(f"{status.value}: {name} {rtype.name}")
    if report.rejected:
        print(f"zone preload: {len(report.rejected)} rrsets rejected", file=sys.stderr)
        return 1
    if args.offline_check:
        source.reachable = False
        resolver.fetch_count = 0
        failed = []
        for name, rtype in source.all_keys():
            ans = resolver.resolve(name, rtype, now)
            if ans.status is not dnssec.ValidationStatus.SECURE or not ans.from_cache:
                failed.append((name, rtype))
        print(f"offline: {len(source.all_keys()) - len(failed)} answers secure from cache, "
              f"{resolver.fetch_count} upstream fetches")
        if failed or resolver.fetch_count:
            for name, rtype in failed:
                print(f"not cached: {name} {rtype.name}")
            print("zone preload: offline check failed", file=sys.stderr)
            return 1
    return 0


# -- forge ------------------------------------------------------------------


def _supplier_key(args, outdir: pathlib.Path) -> crypto.KeyPair:
    if args.supplier_key and pathlib.Path(args.supplier_key).exists():
        return _load_key(args.supplier_key, crypto.KeyUsage.SUPPLIER, "forge")
    key = zoneforge.new_supplier_key(args.profile)
    path = pathlib.Path(args.supplier_key) if args.supplier_key else outdir / "supplier.pem"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(key.private_pem())
    log.info("wrote %s", path)
    return key


def cmd_forge_issue(args) -> int:
    outdir = pathlib.Path(args.outdir)
    now = _now(args)
    binary = pathlib.Path(args.binary).read_bytes() if args.binary else b""
    supplier = _supplier_key(args, outdir)
    try:
        bundle = zoneforge.supplier_issue(args.identity, now, now + args.days * 86400, args.profile, supplier, binary)
    except (ValueError, records.BadLabel, records.BadName) as exc:
        raise CliError("forge issue", str(exc)) from None
    path = pathlib.Path(args.output) if args.output else outdir / f"{_file_stem(bundle.identity)}.json"
    _write(path, bundle.to_json(include_private=not args.public_only))
    print(f"issued {bundle.identity} ({crypto.build_tlsa(bundle.certificate).to_text()[:16]}...)")
    return 0


def cmd_forge_publish(args) -> int:
    zone = _load_zone(args, "forge publish")
    zone.zsk = _load_key(args.zsk, crypto.KeyUsage.ZONE, "forge publish")
    try:
        bundle = zoneforge.SupplierBundle.from_json(_read(args.bundle, "forge publish"))
        svcb = records.SvcbParams.from_text(args.svcb) if args.svcb else None
        zoneforge.oem_publish(zone, bundle, _now(args), svcb)
    except (zoneforge.ForgeError, dnssec.DnssecError, records.BadRdata) as exc:
        raise CliError("forge publish", f"{type(exc).__name__}: {exc}") from None
    _write(pathlib.Path(args.output or args.zone), dnssec.zone_to_text(zone))
    print(f"published {bundle.identity} ({len(zone.get(bundle.identity, dnssec.RRType.TLSA))} TLSA records)")
    return 0


def cmd_forge_build(args) -> int:
    outdir = pathlib.Path(args.outdir)
    plan = _load_plan(args.plan, "forge build")
    now = _now(args)
    supplier = _supplier_key(args, outdir)
    bundles = zoneforge.issue_plan_bundles(plan, now - 86400, now + args.days * 86400, args.profile, supplier)
    oem = dnssec.OemAuthority(args.profile)
    zone = zoneforge.build_vehicle_zone(plan, bundles, oem, now, ttl=args.ttl)
    (outdir / "bundles").mkdir(parents=True, exist_ok=True)
    for name, b in bundles.items():
        (outdir / "bundles" / f"{_file_stem(name)}.json").write_text(b.to_json())
    (outdir / "oem-ksk.pem").write_bytes(oem.ksk.private_pem())
    (outdir / "zsk.pem").write_bytes(zone.zsk.private_pem())
    _write(outdir / "anchor.dnskey", dnssec.ResourceRecord(zone.apex, dnssec.RRType.DNSKEY, args.ttl, oem.trust_anchor).to_text() + "\n")
    _write(outdir / f"{_file_stem(plan.vehicle)}.zone", dnssec.zone_to_text(zone))
    _write(outdir / "plan.txt", plan.to_text())
    print(f"built {plan.vehicle} with {len(plan.record_names())} record names "
          f"({len(plan.publishers)} publishers, {len(plan.subscribers)} subscribers)")
    return 0


def cmd_forge_audit(args) -> int:
    zone = _load_zone(args, "forge audit")
    findings = zoneforge.audit(zone, _now(args), args.horizon_days)
    for f in findings:
        print(f)
    print(f"{len(findings)} findings within {args.horizon_days:g} days")
    if args.strict and any(f.expired for f in findings):
        print("forge audit: expired material in zone", file=sys.stderr)
        return 1
    return 0


# -- sim --------------------------------------------------------------------


def cmd_sim_run(args) -> int:
    from sdauth.simnet import scenario

    plan = _load_plan(args.scenario, "sim run")
    rc = 0
    for v in args.variant:
        try:
            cfg = scenario.ScenarioConfig(
                plan, v, seed=args.seed, loss=args.loss, horizon=args.horizon, profile=args.profile,
                offline=args.offline, contention=args.contention,
            )
            m = scenario.run_scenario(cfg)
        except scenario.ConfigError as exc:
            raise CliError("sim run", str(exc)) from None
        out = _write(pathlib.Path(args.outdir) / f"metrics-{m.variant}-seed{args.seed}.csv", m.to_csv())
        total = m.counts["subscriptions_total"]
        lo, mean, hi, _ = m.summary("service_setup")
        print(f"{m.variant}: {m.established}/{total} established, service setup "
              f"min {lo:.3f} mean {mean:.3f} max {hi:.3f} ms, insecure acks {m.counts['insecure_acks']} -> {out}")
        for name, cause in m.failures[:10]:
            print(f"  failed {name}: {cause}")
        if m.failures:
            print(f"sim run: {len(m.failures)} subscriptions failed under {m.variant}", file=sys.stderr)
            rc = 1
    return rc


def cmd_sim_scale(args) -> int:
    from sdauth.simnet import scenario

    counts = range(1, args.max_subs + 1)
    try:
        result = scenario.run_scalability(counts, args.variant, args.seed, args.profile)
    except scenario.ConfigError as exc:
        raise CliError("sim scale", str(exc)) from None
    out = _write(pathlib.Path(args.outdir) / "scalability.csv", result.to_csv())
    for v in args.variant:
        series = result.series(scenario.variant(v).value)
        mean = sum(p.setup_mean for p in series) / len(series)
        done = sum(p.established == p.sub_count for p in series)
        print(f"{scenario.variant(v).value}: mean setup {mean:.3f} ms, {done}/{len(series)} counts fully established")
    names = {scenario.variant(v).value for v in args.variant}
    if {"dnssec", "vanilla"} <= names:
        over = result.overhead()
        print(f"dnssec overhead over vanilla: mean {sum(over) / len(over):.3f} ms")
    print(f"-> {out}")
    return 0


def cmd_sim_plot_data(args) -> int:
    src = pathlib.Path(args.input or pathlib.Path(args.outdir) / "scalability.csv")
    if not src.exists():
        raise CliError("sim plot-data", f"{src} not found; run 'sim scale' first")
    by_variant: dict[str, list[dict]] = {}
    with src.open(newline="") as fh:
        for row in csv.DictReader(fh):
            by_variant.setdefault(row["variant"], []).append(row)
    if not by_variant:
        raise CliError("sim plot-data", f"{src} holds no rows")
    for v, rows in by_variant.items():
        path = pathlib.Path(args.outdir) / f"scalability-{v}-statistics.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("sub_count", "setup_delay_min", "setup_delay_mean", "setup_delay_max"))
            for row in sorted(rows, key=lambda r: int(r["sub_count"])):
                w.writerow((row["sub_count"], row["setup_delay_min"], row["setup_delay_mean"], row["setup_delay_max"]))
        print(f"{v}: {len(rows)} points -> {path}")
    return 0


def cmd_sim_attack(args) -> int:
    from sdauth.simnet import adversary

    expected = {s.name: s.expect for s in adversary.stride_scripts()}
    mismatches = 0
    for v in args.variant:
        reports = adversary.run_suite(v, args.seed, args.profile)
        lines = []
        for rep in reports:
            for label in rep.labels():
                got = rep.verdict(label)
                want = expected[rep.script].get(rep.variant, {}).get(label)
                flag = ""
                if want is not None and got != want:
                    mismatches += 1
                    flag = f"  (expected {want})"
                lines.append(f"{rep.script} [{rep.variant}] {label}: {got}{flag}")
        out = _write(pathlib.Path(args.outdir) / f"attack-{reports[0].variant}.txt", "\n".join(lines) + "\n")
        print("\n".join(lines))
        succeeded = sorted(r.script for r in reports if r.succeeded)
        print(f"{reports[0].variant}: {len(succeeded)} of {len(reports)} scripts succeeded -> {out}")
    if args.check and mismatches:
        print(f"sim attack: {mismatches} outcomes differ from the expected verdicts", file=sys.stderr)
        return 1
    return 0


def cmd_sim_check(args) -> int:
    from sdauth.simnet import modelcheck

    r = modelcheck.check(args.depth, args.injections, args.mode, args.seed)
    print(f"depth {r.depth}: {r.states} states, {r.transitions} transitions, "
          f"{r.established_traces} established traces, {r.seconds:.1f} s")
    for v in r.violations[:20]:
        print(f"violation: {v}")
    if r.violations:
        print(f"sim check: {len(r.violations)} safety violations", file=sys.stderr)
        return 1
    return 0


# -- parser -----------------------------------------------------------------


VARIANT_NAMES = ("vanilla", "pre_deployed", "dnssec")


def _variants(text: str) -> list[str]:
    out = [v.strip() for v in text.split(",") if v.strip()]
    for v in out:
        if v not in VARIANT_NAMES:
            raise argparse.ArgumentTypeError(f"unknown variant {v!r}; choose from {', '.join(VARIANT_NAMES)}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdauth", description="Authenticated SOME/IP service discovery toolkit.")
    p.add_argument("--seed", type=int, default=1, help="seed for every stochastic component (default 1)")
    p.add_argument("--outdir", default=".", help="directory for written artifacts (default .)")
    p.add_argument("--profile", default=crypto.DEFAULT_PROFILE, choices=crypto.PROFILES, help="signature algorithm")
    p.add_argument("--now", type=float, default=None, help="POSIX time to use instead of the clock")
    p.add_argument("--config", help="INI file whose [sdauth] section supplies defaults for these options")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    groups = p.add_subparsers(dest="group", metavar="{wire,zone,forge,sim}")

    def group(name: str, helptext: str):
        g = groups.add_parser(name, help=helptext)
        sub = g.add_subparsers(dest="command", metavar="command")
        g.set_defaults(func=None, parser=g)
        return sub

    w = group("wire", "decode SOME/IP-SD datagrams")
    c = w.add_parser("dump", help="print a decoded SD message")
    c.add_argument("data", nargs="?", default="-", help="hex string, or - for stdin")
    c.add_argument("--file", help="read raw bytes from a file")
    c.add_argument("--hex", action="store_true", help="the file holds hex text, not raw bytes")
    c.set_defaults(func=cmd_wire_dump)

    z = group("zone", "sign, verify and preload vehicle zones")
    c = z.add_parser("sign", help="(re-)sign every rrset with the ZSK")
    c.add_argument("zone")
    c.add_argument("--zsk", required=True)
    c.add_argument("--ksk", help="also re-sign the key set with this KSK")
    c.add_argument("--sig-validity", type=int, default=0, help="signature lifetime in seconds")
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_zone_sign)
    c = z.add_parser("verify", help="validate every rrset against the trust anchor")
    c.add_argument("zone")
    c.add_argument("--anchor", required=True, help="file with the OEM DNSKEY record")
    c.set_defaults(func=cmd_zone_verify)
    c = z.add_parser("preload", help="fill a resolver cache from the zone")
    c.add_argument("zone")
    c.add_argument("--anchor", required=True)
    c.add_argument("--offline-check", action="store_true", help="disconnect and answer everything from cache")
    c.set_defaults(func=cmd_zone_preload)

    f = group("forge", "supplier bundles and zone publication")
    c = f.add_parser("issue", help="issue a key, certificate and supplier signature")
    c.add_argument("identity", help="DNS name of the service or client")
    c.add_argument("--days", type=float, default=365)
    c.add_argument("--binary", help="software image whose digest the supplier signs")
    c.add_argument("--supplier-key", help="supplier PEM; created if missing")
    c.add_argument("--public-only", action="store_true", help="leave the private key out of the bundle")
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_forge_issue)
    c = f.add_parser("publish", help="add a bundle's TLSA (and SVCB) to a zone")
    c.add_argument("zone")
    c.add_argument("bundle")
    c.add_argument("--zsk", required=True)
    c.add_argument("--svcb", help='SVCB value for publishers, e.g. "1 . alpn=someip port=5000 ..."')
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_forge_publish)
    c = f.add_parser("build", help="issue all credentials for a plan and sign its zone")
    c.add_argument("plan", help="plan file, or 'ivn' / 'scalability'")
    c.add_argument("--days", type=float, default=365)
    c.add_argument("--ttl", type=int, default=dnssec.DEFAULT_TTL)
    c.add_argument("--supplier-key")
    c.set_defaults(func=cmd_forge_build)
    c = f.add_parser("audit", help="list certificates and signatures close to expiry")
    c.add_argument("zone")
    c.add_argument("--horizon-days", type=float, default=30)
    c.add_argument("--strict", action="store_true", help="exit 1 if anything has already expired")
    c.set_defaults(func=cmd_forge_audit)

    s = group("sim", "simulate the vehicle network")
    c = s.add_parser("run", help="run one scenario and write its metrics CSV")
    c.add_argument("--scenario", default="ivn", help="plan file, or 'ivn' / 'scalability'")
    c.add_argument("--variant", type=_variants, default=["dnssec"], help="comma-separated variants")
    c.add_argument("--loss", type=float, default=0.0)
    c.add_argument("--horizon", type=float, default=30.0)
    c.add_argument("--offline", action="store_true", help="preload the resolver, then disconnect the zone")
    c.add_argument("--contention", action="store_true", help="serialize handlers per node")
    c.set_defaults(func=cmd_sim_run)
    c = s.add_parser("scale", help="1 publisher with 1..N subscribers")
    c.add_argument("--max-subs", type=int, default=50)
    c.add_argument("--variant", type=_variants, default=list(VARIANT_NAMES))
    c.set_defaults(func=cmd_sim_scale)
    c = s.add_parser("attack", help="run the STRIDE adversary scripts")
    c.add_argument("--variant", type=_variants, default=list(VARIANT_NAMES))
    c.add_argument("--check", action="store_true", help="exit 1 if an outcome differs from the expected one")
    c.set_defaults(func=cmd_sim_attack)
    c = s.add_parser("plot-data", help="per-variant statistics CSVs from a scalability run")
    c.add_argument("--input", help="scalability CSV (default OUTDIR/scalability.csv)")
    c.set_defaults(func=cmd_sim_plot_data)
    c = s.add_parser("check", help="bounded exhaustive check of the handshake")
    c.add_argument("--depth", type=int, default=12)
    c.add_argument("--injections", type=int, default=2)
    c.add_argument("--mode", default="dnssec", choices=VARIANT_NAMES)
    c.set_defaults(func=cmd_sim_check)
    return p


def _config_defaults(path: str) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise CliError("config", f"cannot read {path}: {exc.strerror}") from None
    if not cp.has_section("sdauth"):
        return {}
    sec = cp["sdauth"]
    out: dict = {}
    try:
        if "seed" in sec:
            out["seed"] = sec.getint("seed")
        if "now" in sec:
            out["now"] = sec.getfloat("now")
        if "verbose" in sec:
            out["verbose"] = sec.getint("verbose")
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    for key in ("outdir", "profile"):
        if key in sec:
            out[key] = sec[key]
    if out.get("profile", crypto.DEFAULT_PROFILE) not in crypto.PROFILES:
        raise CliError("config", f"unknown profile {out['profile']!r}")
    return out


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_help(sys.stderr)
        return 2
    pre, _ = parser.parse_known_args([a for a in argv if a not in ("-h", "--help")])
    try:
        if pre.config:
            parser.set_defaults(**_config_defaults(pre.config))
        args = parser.parse_args(argv)
        if args.group is None or args.func is None:
            (getattr(args, "parser", None) or parser).print_help(sys.stderr)
            return 2
        level = logging.WARNING if args.quiet else (logging.INFO if args.verbose == 1 else
                                                    logging.DEBUG if args.verbose > 1 else logging.WARNING)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        if args.quiet:
            logging.getLogger().setLevel(logging.ERROR)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
