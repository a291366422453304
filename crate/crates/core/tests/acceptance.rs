//! Acceptance criteria, one PASS or FAIL line each. Exits non-zero on any failure.

use dsnc::coding::build_vector_universe;
use dsnc::coupon::{coded_expected_sample, expected_sample, monte_carlo_classic, monte_carlo_coded, CouponModel};
use dsnc::experiment::{emit_results, preset, presets, run_experiment, ExperimentConfig, ExperimentResult};
use dsnc::gf::{Field, FieldSpec};
use dsnc::overlay::generate_topology;
use dsnc::par::{stream_rng, Execution};
use dsnc::selftest::{
    codec_round_trips, field_axioms_exhaustive, field_axioms_sampled, tables_match_reference, universe_is_mds,
};
use dsnc::sim::{self, link_stress, LinkTracker, MetricsReport, ProtocolKind, SimConfig, KIB};
use std::process::ExitCode;
use std::time::{Duration, Instant};

const SEED: u64 = 1;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(t: Duration, limit: f64) -> Result<(), String> {
    ensure(t.as_secs_f64() < limit, || format!("took {:.1} s, limit {limit} s", t.as_secs_f64()))
}

fn harmonic(n: u32) -> f64 {
    (1..=n).map(|k| 1.0 / f64::from(k)).sum()
}

fn c1() -> Outcome {
    let want = 50.0 * harmonic(50);
    ensure((want - expected_sample(50, 50).unwrap()).abs() < 1e-9, || "closed form disagrees with 50 H_50".into())?;
    let t = Instant::now();
    let st = monte_carlo_classic(50, 50, 10_000, &mut stream_rng(SEED, 1), Execution::Parallel).unwrap();
    within_time(t.elapsed(), 5.0)?;
    let rel = (st.mean - want).abs() / want;
    ensure(rel <= 0.02, || format!("mean {:.3} vs {want:.3}, off by {:.2}%", st.mean, 100.0 * rel))?;
    Ok(format!("mean {:.3} vs 50 H_50 = {want:.3} ({:.2}%), {:.2} s", st.mean, 100.0 * rel, t.elapsed().as_secs_f64()))
}

fn c2() -> Outcome {
    let (s, q) = (16u32, 2f64);
    let want: f64 = (1..=s).map(|i| 1.0 / (1.0 - q.powi(i as i32 - 1 - s as i32))).sum();
    let model = CouponModel::new(s, 2).unwrap();
    ensure((want - coded_expected_sample(s, model).unwrap()).abs() < 1e-9, || "closed form disagrees".into())?;
    let t = Instant::now();
    let coded = monte_carlo_coded(model, s, 10_000, &mut stream_rng(SEED, 2), Execution::Parallel).unwrap();
    let classic = monte_carlo_classic(s, s, 10_000, &mut stream_rng(SEED, 3), Execution::Parallel).unwrap();
    within_time(t.elapsed(), 10.0)?;
    let rel = (coded.mean - want).abs() / want;
    ensure(rel <= 0.02, || format!("coded mean {:.3} vs {want:.3}", coded.mean))?;
    ensure(coded.mean < classic.mean, || format!("coded {:.3} not below classic {:.3}", coded.mean, classic.mean))?;
    Ok(format!("coded {:.3} vs {want:.3} ({:.2}%), classic {:.3}", coded.mean, 100.0 * rel, classic.mean))
}

fn c3() -> Outcome {
    let v = coded_expected_sample(8, CouponModel::new(8, 1 << 16).unwrap()).unwrap();
    ensure((v - 8.0).abs() <= 1e-3, || format!("{v}"))?;
    Ok(format!("E = {v:.9}"))
}

fn c4() -> Outcome {
    let mut parts = Vec::new();
    for bits in 1..=2 {
        parts.push(field_axioms_exhaustive(FieldSpec::with_default_poly(bits).unwrap())?);
    }
    let gf8 = FieldSpec::with_default_poly(3).unwrap();
    parts.push(field_axioms_sampled(gf8, 100_000, SEED)?);
    parts.push(tables_match_reference(gf8)?);
    Ok(parts.join("; "))
}

fn c5() -> Outcome {
    let mut subsets = 0;
    for bits in 1..=4u8 {
        let spec = FieldSpec::with_default_poly(bits).unwrap();
        for n in 1..=4usize {
            // Universes of width n exist whenever the construction accepts n.
            if build_vector_universe(n, &Field::new(spec)).is_err() {
                continue;
            }
            universe_is_mds(n, spec)?;
            subsets += 1;
        }
    }
    Ok(format!("{subsets} (n, q) universes checked over every n-subset"))
}

fn c6() -> Outcome {
    codec_round_trips(1000, 64, 4096, SEED)
}

fn lossless(protocol: ProtocolKind, seed: u64, bits: u8) -> SimConfig {
    let mut c = SimConfig { protocol, seed, content_size: 256 * KIB, ..SimConfig::default() };
    c.topology.peers = 50;
    c.field = FieldSpec::with_default_poly(bits).unwrap();
    c
}

fn c7() -> Outcome {
    let dsnc = Execution::Parallel.map(100, |i| sim::run(&lossless(ProtocolKind::Dsnc, SEED + i as u64, 8)));
    let mut total = 0;
    for r in dsnc {
        let r = r.map_err(|e| e.to_string())?;
        ensure(r.finished == r.joined, || format!("DSNC seed {} left peers unfinished", r.seed))?;
        total += r.non_innovative;
    }
    ensure(total == 0, || format!("DSNC recorded {total} non-innovative receptions"))?;
    let fncm = Execution::Parallel.map(100, |i| sim::run(&lossless(ProtocolKind::Fncm, SEED + i as u64, 1)));
    let mut positive = 0;
    for r in fncm {
        positive += u32::from(r.map_err(|e| e.to_string())?.non_innovative > 0);
    }
    ensure(positive >= 90, || format!("FNCM over GF(2) positive in only {positive} of 100 runs"))?;
    Ok(format!("DSNC 0 non-innovative over 100 runs; FNCM GF(2) positive in {positive} of 100"))
}

fn finish(r: &ExperimentResult, p: ProtocolKind, peers: u32) -> f64 {
    r.aggregate(p, peers).expect("aggregate exists").avg_finish
}

fn c8(fig4: &ExperimentResult, took: Duration) -> Outcome {
    within_time(took, 300.0)?;
    let mut parts = Vec::new();
    for peers in fig4.config.peer_counts() {
        let (t, f, d) = (
            finish(fig4, ProtocolKind::Tnnc, peers),
            finish(fig4, ProtocolKind::Fncm, peers),
            finish(fig4, ProtocolKind::Dsnc, peers),
        );
        ensure(d <= 0.9 * t, || format!("{peers} peers: DSNC {d:.2} s vs TNNC {t:.2} s"))?;
        ensure(d <= f, || format!("{peers} peers: DSNC {d:.2} s vs FNCM {f:.2} s"))?;
        parts.push(format!("{peers}: DSNC {d:.2} = {:.3} x TNNC {t:.2}, FNCM {f:.2}", d / t));
    }
    Ok(format!("{}; {:.0} s", parts.join("; "), took.as_secs_f64()))
}

fn c9() -> Outcome {
    let cfg = ExperimentConfig { seed: Some(SEED), ..preset("fig8").unwrap() };
    let r = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for peers in cfg.peer_counts() {
        let inc = |p| r.degradation_of(p, peers).expect("degradation exists").relative_increase;
        let (t, d) = (inc(ProtocolKind::Tnnc), inc(ProtocolKind::Dsnc));
        ensure(t >= 1.5 * d && t > 0.0, || {
            format!("{peers} peers: TNNC {:+.1}% vs DSNC {:+.1}%", 100.0 * t, 100.0 * d)
        })?;
        parts.push(format!("{peers}: TNNC {:+.1}%, DSNC {:+.1}%", 100.0 * t, 100.0 * d));
    }
    Ok(parts.join("; "))
}

fn c10(fig4: &ExperimentResult) -> Outcome {
    let mut t = LinkTracker::default();
    for _ in 0..3 {
        t.record_chunk(7);
    }
    ensure(t.stress() == 3.0 && link_stress(3, 1) == 3.0, || format!("stress of three copies is {}", t.stress()))?;
    let field = std::sync::Arc::new(Field::new(FieldSpec::GF256));
    let v = vec![field.element(3).unwrap(), field.element(5).unwrap()];
    let mut c = LinkTracker::default();
    for _ in 0..3 {
        c.record_vector(&field, 0, &v);
    }
    ensure(c.stress() == 3.0, || format!("stress of three equal vectors is {}", c.stress()))?;
    let mut parts = Vec::new();
    for peers in fig4.config.peer_counts().into_iter().filter(|&p| p >= 100) {
        let s = |p| fig4.aggregate(p, peers).expect("aggregate exists").mean_link_stress;
        let (d, f, tn) = (s(ProtocolKind::Dsnc), s(ProtocolKind::Fncm), s(ProtocolKind::Tnnc));
        ensure(d <= f, || format!("{peers} peers: DSNC stress {d:.4} above FNCM {f:.4}"))?;
        parts.push(format!("{peers}: DSNC {d:.4}, FNCM {f:.4}, TNNC {tn:.4}"));
    }
    Ok(format!("3 copies of 1 packet give 3.0; {}", parts.join("; ")))
}

fn c11() -> Outcome {
    let cfg = ExperimentConfig { seed: Some(SEED), seeds: 1, ..preset("fig10").unwrap() };
    ensure(cfg.field.bits() == 8, || "fig10 is not over GF(2^8)".into())?;
    ensure(cfg.group_size < cfg.chunks_per_segment, || "group size not below segment size".into())?;
    let r = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let of = |p: ProtocolKind| r.reports.iter().find(|m| m.protocol == p.name()).expect("report exists");
    let (t, f, d) = (of(ProtocolKind::Tnnc), of(ProtocolKind::Fncm), of(ProtocolKind::Dsnc));
    ensure(t.message_overhead == 0 && t.overhead_per_packet == 0, || format!("TNNC overhead {}", t.message_overhead))?;
    ensure(d.overhead_per_packet == u64::from(cfg.group_size), || {
        format!("DSNC {} B per packet", d.overhead_per_packet)
    })?;
    ensure(f.overhead_per_packet == u64::from(cfg.chunks_per_segment), || {
        format!("FNCM {} B per packet", f.overhead_per_packet)
    })?;
    for m in [f, d] {
        ensure(m.message_overhead == m.coded_packets * m.overhead_per_packet, || {
            format!("{} total overhead mismatch", m.protocol)
        })?;
    }
    Ok(format!(
        "DSNC {} B < FNCM {} B per packet, TNNC 0; totals DSNC {} B, FNCM {} B",
        d.overhead_per_packet, f.overhead_per_packet, d.message_overhead, f.message_overhead
    ))
}

fn c12() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut names = Vec::new();
    for p in presets() {
        let cfg = ExperimentConfig { seed: Some(SEED), seeds: 1, ..p.config };
        let mut bytes = Vec::new();
        for pass in ["a", "b"] {
            let r = run_experiment(&cfg).map_err(|e| e.to_string())?;
            let (csv, _) = emit_results(&r, &dir.path().join(pass)).map_err(|e| e.to_string())?;
            bytes.push(std::fs::read(csv).map_err(|e| e.to_string())?);
        }
        ensure(bytes[0] == bytes[1], || format!("{} CSV differs between runs", p.name))?;
        names.push(p.name);
    }
    Ok(format!("{} presets byte-identical (one seed per point)", names.join(", ")))
}

fn campus_size(cfg: &SimConfig) -> usize {
    let topo = generate_topology(&cfg.topology, &mut stream_rng(cfg.seed, 1)).expect("valid topology");
    topo.nodes.iter().skip(1).filter(|n| n.in_campus).count()
}

fn c13(fig4: &ExperimentResult) -> Outcome {
    let by =
        |p: ProtocolKind| -> Vec<&MetricsReport> { fig4.reports.iter().filter(|m| m.protocol == p.name()).collect() };
    let (mut pairs, mut ratio) = (0, 0.0);
    for d in by(ProtocolKind::Dsnc) {
        let f =
            by(ProtocolKind::Fncm).into_iter().find(|f| f.peers == d.peers && f.seed == d.seed).expect("paired run");
        let campus = campus_size(&fig4.config.sim_config(ProtocolKind::Dsnc, d.peers, d.seed).unwrap());
        ensure(campus >= 10, || format!("{} peers: campus of {campus}", d.peers))?;
        ensure(d.access_link_traffic < f.access_link_traffic, || {
            format!(
                "{} peers seed {}: DSNC {} B vs FNCM {} B",
                d.peers, d.seed, d.access_link_traffic, f.access_link_traffic
            )
        })?;
        pairs += 1;
        ratio += d.access_link_traffic as f64 / f.access_link_traffic as f64;
    }
    Ok(format!("{pairs} paired runs, DSNC access bytes {:.3} x FNCM on average", ratio / f64::from(pairs)))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, outcome: Outcome, t: Instant| {
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {n:>2} {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {d} [{secs:.1} s]");
            }
        }
    };
    macro_rules! run {
        ($n:expr, $name:expr, $e:expr) => {{
            let t = Instant::now();
            report($n, $name, $e, t);
        }};
    }
    run!(1, "classic coupon Monte Carlo", c1());
    run!(2, "coded coupon Monte Carlo", c2());
    run!(3, "coded expectation limit", c3());
    run!(4, "field correctness", c4());
    run!(5, "MDS vector universe", c5());
    run!(6, "codec round trips", c6());
    run!(7, "DSNC innovation guarantee", c7());
    let t = Instant::now();
    let fig4 = run_experiment(&ExperimentConfig { seed: Some(SEED), ..preset("fig4").unwrap() });
    let took = t.elapsed();
    match fig4 {
        Ok(fig4) => {
            run!(8, "homogeneous finish times", c8(&fig4, took));
            run!(10, "link stress", c10(&fig4));
            run!(13, "campus locality", c13(&fig4));
        }
        Err(e) => {
            for (n, name) in [(8, "homogeneous finish times"), (10, "link stress"), (13, "campus locality")] {
                run!(n, name, Err(e.to_string()));
            }
        }
    }
    run!(9, "dynamic-leave degradation", c9());
    run!(11, "coding-vector overhead", c11());
    run!(12, "preset determinism", c12());
    println!("{} of 13 criteria passed", 13 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
