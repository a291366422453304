use dsnc::coupon::{
    coded_expected_sample, expected_distinct, expected_sample, monte_carlo_classic, monte_carlo_coded, CouponModel,
};
use dsnc::par::{stream_rng, Execution};
use rand::Rng;

fn within(mean: f64, se: f64, want: f64) -> bool {
    (mean - want).abs() <= 4.0 * se + 1e-9
}

#[test]
fn classic_partial_collections_match() {
    for (s, i) in [(10, 10), (20, 5), (30, 30), (40, 39)] {
        let st = monte_carlo_classic(s, i, 20_000, &mut stream_rng(5, u64::from(s)), Execution::Parallel).unwrap();
        let want = expected_sample(i, s).unwrap();
        assert!(within(st.mean, st.std_error, want), "s={s} i={i}: {} vs {want}", st.mean);
    }
}

#[test]
fn coded_partial_collections_match() {
    for (q, s, i) in [(2, 8, 8), (4, 6, 6), (2, 20, 12), (16, 5, 5), (256, 4, 4)] {
        let model = CouponModel::new(s, q).unwrap();
        let st = monte_carlo_coded(model, i, 20_000, &mut stream_rng(6, q), Execution::Parallel).unwrap();
        let want = coded_expected_sample(i, model).unwrap();
        assert!(within(st.mean, st.std_error, want), "q={q} s={s} i={i}: {} vs {want}", st.mean);
    }
}

#[test]
fn distinct_after_n_draws_matches_simulation() {
    let mut rng = stream_rng(7, 0);
    for (s, n) in [(10u32, 5u64), (10, 30), (50, 50)] {
        let trials = 20_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..trials {
            let mut seen = vec![false; s as usize];
            for _ in 0..n {
                seen[rng.random_range(0..s as usize)] = true;
            }
            let d = seen.iter().filter(|&&x| x).count() as f64;
            sum += d;
            sq += d * d;
        }
        let mean = sum / f64::from(trials);
        let se = ((sq / f64::from(trials) - mean * mean) / f64::from(trials)).sqrt();
        let want = expected_distinct(n, s).unwrap();
        assert!(within(mean, se, want), "s={s} n={n}: {mean} vs {want}");
    }
}

#[test]
fn execution_modes_give_the_same_estimate() {
    let a = monte_carlo_classic(25, 25, 3000, &mut stream_rng(8, 0), Execution::Sequential).unwrap();
    let b = monte_carlo_classic(25, 25, 3000, &mut stream_rng(8, 0), Execution::Parallel).unwrap();
    assert_eq!(a, b);
}
