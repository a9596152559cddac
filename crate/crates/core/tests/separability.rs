use switchbench::classify::argmax;
use switchbench::dataset::{synthesize, SynthSpec};
use switchbench::slds::exact_enumeration_filter;

fn true_class_share(seed: u64) -> (f64, Vec<(usize, usize)>) {
    let data = synthesize(&SynthSpec::default_benchmark(seed).unwrap()).unwrap();
    let mut hits = 0;
    let mut misses = Vec::new();
    let all: Vec<_> = data.train.iter().chain(&data.test).collect();
    for seq in &all {
        let obs = seq.prefix(6).observations();
        let (post, _) = exact_enumeration_filter(&data.ground_truth, &obs).unwrap();
        let pred = argmax(post.row(5).iter().copied());
        if pred == seq.label() {
            hits += 1;
        } else {
            misses.push((seq.label(), pred));
        }
    }
    (hits as f64 / all.len() as f64, misses)
}

#[test]
fn enumeration_oracle_separates_six_step_prefixes() {
    for seed in [1, 7, 8, 2024] {
        let (share, misses) = true_class_share(seed);
        println!("seed {seed}: {share:.3} {misses:?}");
        assert!(share >= 0.9, "seed {seed}: {share}");
    }
}
