use dsnc::overlay::{ChurnModel, DeparturePolicy};
use dsnc::sim::{run, run_traced, ProtocolKind, SimConfig, KIB};

fn config(protocol: ProtocolKind, peers: u32, seed: u64) -> SimConfig {
    let mut c = SimConfig { protocol, seed, content_size: 512 * KIB, ..SimConfig::default() };
    c.topology.peers = peers;
    c
}

#[test]
fn every_protocol_delivers_the_exact_content() {
    for protocol in ProtocolKind::ALL {
        for seed in 0..3 {
            let c = SimConfig { carried_payload_bytes: 0, ..config(protocol, 25, seed) };
            let r = run(&c).unwrap();
            assert_eq!((r.finished, r.hash_mismatches), (25, 0), "{protocol} seed {seed}");
        }
    }
}

#[test]
fn trace_lines_have_seven_fields() {
    let c = SimConfig { trace: true, ..config(ProtocolKind::Fncm, 15, 1) };
    let (r, trace) = run_traced(&c).unwrap();
    assert_eq!(trace.len() as u64, r.transmissions);
    for line in &trace {
        let f: Vec<&str> = line.split(' ').collect();
        assert_eq!(f.len(), 7, "{line}");
        assert!(f[0].parse::<f64>().is_ok() && ["0", "1", "-"].contains(&f[6]));
    }
    let mut times: Vec<f64> = trace.iter().map(|l| l.split(' ').next().unwrap().parse().unwrap()).collect();
    let sorted = times.clone();
    times.sort_by(f64::total_cmp);
    assert_eq!(times, sorted);
}

#[test]
fn fncm_at_two_elements_wastes_receptions() {
    let field = serde_json::from_str(r#"{"q": 1}"#).unwrap();
    let r = run(&SimConfig { field, ..config(ProtocolKind::Fncm, 30, 2) }).unwrap();
    assert!(r.non_innovative > 0);
    assert_eq!(r.finished, 30);
}

#[test]
fn campus_peers_cross_the_access_link_less_under_dsnc() {
    for seed in 0..3 {
        let mut d = config(ProtocolKind::Dsnc, 60, seed);
        d.topology.campus_fraction = 0.4;
        let f = SimConfig { protocol: ProtocolKind::Fncm, ..d.clone() };
        let (rd, rf) = (run(&d).unwrap(), run(&f).unwrap());
        assert!(rd.access_link_traffic < rf.access_link_traffic, "seed {seed}");
    }
}

#[test]
fn locality_rule_saves_access_bytes() {
    let mut on = config(ProtocolKind::Dsnc, 60, 4);
    on.topology.campus_fraction = 0.4;
    let off = SimConfig { locality: false, ..on.clone() };
    assert!(run(&on).unwrap().access_link_traffic < run(&off).unwrap().access_link_traffic);
}

#[test]
fn late_joiners_and_departures_are_handled() {
    for protocol in ProtocolKind::ALL {
        for policy in [DeparturePolicy::StayAfterDownload, DeparturePolicy::LeaveAfterDownload] {
            let churn = ChurnModel { initial_fraction: 0.3, arrival_rate: 15.0, mean_lifetime: None, policy };
            let c = SimConfig { churn: Some(churn), ..config(protocol, 50, 5) };
            let r = run(&c).unwrap();
            assert_eq!(r.joined, 50, "{protocol} {policy:?}");
            assert_eq!(r.finished, 50, "{protocol} {policy:?}");
            assert_eq!(r.hash_mismatches, 0);
            assert!(r.max_capacity_overload < 1e-9);
            if protocol == ProtocolKind::Dsnc {
                assert_eq!(r.non_innovative, 0);
            }
        }
    }
}

#[test]
fn heterogeneous_capacities_keep_caps() {
    let mut c = config(ProtocolKind::Dsnc, 40, 6);
    c.topology.tiers =
        serde_json::from_str(r#"[{"fraction":0.5,"weight":0.5},{"fraction":0.5,"weight":1.5}]"#).unwrap();
    let r = run(&c).unwrap();
    assert_eq!(r.finished, 40);
    assert!(r.max_capacity_overload < 1e-9);
}

#[test]
fn segment_progress_shares_sum_to_one() {
    let c = SimConfig { content_size: 2048 * KIB, ..config(ProtocolKind::Tnnc, 30, 7) };
    let r = run(&c).unwrap();
    assert_eq!(r.per_segment_progress.len(), 2);
    assert!((r.per_segment_progress.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}
