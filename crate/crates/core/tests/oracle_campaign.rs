use sgdebias::sim::campaign::{run_case, tiny_hoi, tiny_sgg};

#[test]
fn engines_match_brute_force_on_500_seeds() {
    let mut compared = 0;
    let mut bit_equal = 0;
    let failures: Vec<String> = (0..500u64)
        .filter_map(|seed| match run_case(seed) {
            Ok(r) => {
                compared += r.values_compared;
                bit_equal += r.bit_equal;
                None
            }
            Err(e) => Some(e),
        })
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
    assert!(compared > 10_000, "campaign compared only {compared} values");
    // AP sums in a different order than the engine, so a minority differ in the last bits.
    assert!(bit_equal * 5 > compared * 4, "{bit_equal} of {compared} bit-equal");
}

#[test]
fn instances_stay_inside_the_oracle_limits() {
    for seed in 0..200 {
        let s = tiny_sgg(seed);
        assert!(s.samples.len() <= 3 && s.num_predicates <= 5);
        assert!(s.samples.iter().all(|x| x.gt.objects.len() <= 4));
        let h = tiny_hoi(seed);
        assert!(h.predictions.iter().all(|k| k.pairs.len() * h.num_interactions <= 5));
    }
}
