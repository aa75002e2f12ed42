use proptest::prelude::*;

use super::*;
use crate::data::{generate_synthetic, DatasetSplit, Part, Sample, SyntheticSpec};
use crate::dlrm::{Architecture, ModelConfig};
use crate::nn::{Adam, Module};
use crate::rng::RngStream;
use crate::sampling::{Sampler, SamplerConfig, SamplerKind, SubnetSelection};

fn small_config() -> ModelConfig {
    ModelConfig { hidden: vec![16, 8, 1], unified_dim: 4, batch_size: 64, ..ModelConfig::default() }
}

fn small_data(seed: u64) -> DatasetSplit {
    generate_synthetic(&SyntheticSpec::new(vec![(50, 1.0), (30, 1.0), (10, 0.0)], 3000, seed)).unwrap()
}

#[test]
fn candidate_set_rules() {
    assert!(CandidateSet::new(vec![]).is_err());
    assert!(CandidateSet::new(vec![0, 2]).is_err());
    assert!(CandidateSet::new(vec![8, 2]).is_err());
    assert!(CandidateSet::new(vec![2, 2]).is_err());
    let d = CandidateSet::default();
    assert_eq!(d.sizes(), &[2, 8, 16, 32, 64]);
    assert_eq!(d.max_size(), 64);
    assert_eq!(d.nearest(16), 2);
    assert_eq!(d.nearest(5), 0);
    assert!(d.size(5).is_err());
    let json = serde_json::to_string(&d).unwrap();
    assert_eq!(json, "[2,8,16,32,64]");
    assert!(serde_json::from_str::<CandidateSet>("[4,1]").is_err());
}

#[test]
fn store_param_counts_match_examples() {
    let schemas = vec![FieldSchema::one_hot("a", 100), FieldSchema::one_hot("b", 10)];
    let c = CandidateSet::new(vec![2, 8]).unwrap();
    let rng = RngStream::new(0);
    let ind = SupernetStore::new(&schemas, &c, Scheme::Independent, &rng);
    let sh = SupernetStore::new(&schemas, &c, Scheme::Shared, &rng);
    assert_eq!(ind.param_count(), 1100);
    assert_eq!(sh.param_count(), 880);
    assert_eq!(supernet_param_count(&[100, 10], &c, Scheme::Independent), 1100);
    assert_eq!(supernet_param_count(&[100, 10], &c, Scheme::Shared), 880);
}

#[test]
fn param_reduction_examples() {
    assert_eq!(param_reduction(&[100, 10], &[32, 32]).unwrap(), 0.0);
    let pr = param_reduction(&[100, 10], &[8, 2]).unwrap();
    assert!((pr - (1.0 - 820.0 / 3520.0)).abs() < 1e-15);
    assert!((pr - 0.767).abs() < 1e-3);
    assert_eq!(param_reduction(&[7, 3], &[64, 64]).unwrap(), -1.0);
    assert_eq!(param_reduction(&[7, 3], &[24, 24]).unwrap(), 0.25);
}

#[test]
fn shared_views_alias_the_max_table() {
    let schemas = vec![FieldSchema::one_hot("a", 5)];
    let c = CandidateSet::new(vec![2, 8]).unwrap();
    let mut s = SupernetStore::new(&schemas, &c, Scheme::Shared, &RngStream::new(1));
    let sample = Sample { fields: vec![vec![3]], label: 1.0, timestamp: None };
    let batch = [&sample];
    let before = s.lookup(0, 1, &batch).unwrap();
    {
        let (t, w) = s.view_mut(0, 0).unwrap();
        assert_eq!(w, 2);
        t.weight.value.set(3, 0, 42.0);
    }
    let after = s.lookup(0, 1, &batch).unwrap();
    assert_eq!(after.get(0, 0), 42.0);
    assert_eq!(after.get(0, 1), before.get(0, 1));
    let small = s.lookup(0, 0, &batch).unwrap();
    assert_eq!(small.row(0), &after.row(0)[..2]);
}

#[test]
fn all_excluded_forward_depends_on_biases_only() {
    let data = small_data(1);
    let c = CandidateSet::new(vec![2, 8]).unwrap();
    let mut cfg = small_config();
    cfg.wide = false;
    let net = EmbeddingNet::supernet(&data.schemas, &c, Scheme::Independent, &cfg, &RngStream::new(2)).unwrap();
    let sel = SubnetSelection { candidate: vec![0, 1, 0], included: vec![false; 3] };
    let refs: Vec<&Sample> = data.train.iter().take(10).collect();
    let block = net.forward_block(&refs, &sel).unwrap();
    assert!(block.as_slice().iter().all(|&v| v == 0.0));
    let p = net.predict(&refs, &sel).unwrap();
    assert!(p.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn selection_out_of_range_is_config_error() {
    let data = small_data(1);
    let c = CandidateSet::new(vec![2, 8]).unwrap();
    let net = EmbeddingNet::supernet(&data.schemas, &c, Scheme::Shared, &small_config(), &RngStream::new(2)).unwrap();
    let refs: Vec<&Sample> = data.train.iter().take(4).collect();
    let err = net.predict(&refs, &SubnetSelection::all_included(vec![0, 2, 0])).unwrap_err();
    assert_eq!(err.kind(), "config");
}

#[test]
fn single_candidate_makes_selections_identical() {
    let data = small_data(3);
    let c = CandidateSet::new(vec![4]).unwrap();
    let net = EmbeddingNet::supernet(&data.schemas, &c, Scheme::Independent, &small_config(), &RngStream::new(5)).unwrap();
    let refs: Vec<&Sample> = data.train.iter().take(16).collect();
    let a = net.predict(&refs, &SubnetSelection::all_included(vec![0, 0, 0])).unwrap();
    let b = net.predict(&refs, &SubnetSelection::all_included(vec![0, 0, 0])).unwrap();
    assert_eq!(a, b);
}

#[test]
fn independent_step_leaves_unsampled_tables_untouched() {
    let data = small_data(4);
    let c = CandidateSet::new(vec![2, 8]).unwrap();
    let mut net =
        EmbeddingNet::supernet(&data.schemas, &c, Scheme::Independent, &small_config(), &RngStream::new(6)).unwrap();
    let before: Vec<_> = net.store.tables().map(|(n, t)| (n, t.weight.value.clone())).collect();
    let sel = SubnetSelection { candidate: vec![0, 1, 0], included: vec![true, true, false] };
    let refs: Vec<&Sample> = data.train.iter().take(32).collect();
    net.train_step(&refs, &sel, &Adam::new(0.01)).unwrap();
    for ((name, old), (_, t)) in before.iter().zip(net.store.tables()) {
        let changed = old != &t.weight.value;
        let sampled = name == "field0.d2" || name == "field1.d8";
        assert_eq!(changed, sampled, "{name}");
    }
}

#[test]
fn shared_step_updates_only_the_sampled_prefix() {
    let data = small_data(4);
    let c = CandidateSet::new(vec![2, 8]).unwrap();
    let mut net = EmbeddingNet::supernet(&data.schemas, &c, Scheme::Shared, &small_config(), &RngStream::new(6)).unwrap();
    let before = net.store.view(0, 1).unwrap().0.weight.value.clone();
    let sel = SubnetSelection::all_included(vec![0, 0, 0]);
    let refs: Vec<&Sample> = data.train.iter().take(32).collect();
    net.train_step(&refs, &sel, &Adam::new(0.01)).unwrap();
    let after = &net.store.view(0, 1).unwrap().0.weight.value;
    assert_ne!(before.columns(0, 2), after.columns(0, 2));
    assert_eq!(before.columns(2, 6), after.columns(2, 6));
}

#[test]
fn zero_batches_keep_initialization() {
    let data = small_data(5);
    let c = CandidateSet::new(vec![2, 8]).unwrap();
    let rng = RngStream::new(9);
    let mut net = EmbeddingNet::supernet(&data.schemas, &c, Scheme::Independent, &small_config(), &rng).unwrap();
    let fresh = net.checksum();
    let mut sampler = Sampler::new(&SamplerConfig::default(), &data.cardinalities(), c.sizes()).unwrap();
    let cfg = TrainConfig { epochs: 1, max_batches: Some(0), ..TrainConfig::default() };
    let log = train_supernet(&mut net, &data, &mut sampler, &cfg, &rng).unwrap();
    assert!(log.losses.is_empty());
    assert_eq!(net.checksum(), fresh);
}

#[test]
fn supernet_with_one_candidate_matches_fixed_training() {
    let data = small_data(6);
    let c = CandidateSet::new(vec![8]).unwrap();
    let rng = RngStream::new(10);
    let cfg = small_config();
    let tc = TrainConfig { epochs: 2, ..TrainConfig::default() };

    let mut sup = EmbeddingNet::supernet(&data.schemas, &c, Scheme::Independent, &cfg, &rng).unwrap();
    let mut scfg = SamplerConfig::new(SamplerKind::Adaptive);
    scfg.p_min = 1.0;
    scfg.p_max = 1.0;
    scfg.init_pf = 1.0;
    let mut sampler = Sampler::new(&scfg, &data.cardinalities(), c.sizes()).unwrap();
    let a = train_supernet(&mut sup, &data, &mut sampler, &tc, &rng).unwrap();

    let mut ues = EmbeddingNet::standalone(&data.schemas, &c, &[0, 0, 0], &cfg, &rng).unwrap();
    let b = train_standalone(&mut ues, &data, &tc, &rng).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(sup.checksum(), ues.checksum());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = small_data(7);
    let c = CandidateSet::new(vec![2, 8]).unwrap();
    let rng = RngStream::new(11);
    for scheme in [Scheme::Independent, Scheme::Shared] {
        let mut net = EmbeddingNet::supernet(&data.schemas, &c, scheme, &small_config(), &rng).unwrap();
        let mut sampler = Sampler::new(&SamplerConfig::default(), &data.cardinalities(), c.sizes()).unwrap();
        let tc = TrainConfig { epochs: 1, max_batches: Some(5), ..TrainConfig::default() };
        train_supernet(&mut net, &data, &mut sampler, &tc, &rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.adss");
        save_net(&net, &data.schemas, &[], &path).unwrap();
        let (loaded, _) = load_net(&path, &data.schemas).unwrap();
        assert_eq!(loaded.checksum(), net.checksum());
        for (a, b) in net.bank.params().iter().zip(loaded.bank.params()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.value, b.1.value);
        }
        let sel = SubnetSelection::all_included(vec![1, 0, 1]);
        let val = data.part(Part::Validation);
        assert_eq!(net.predict_all(val, &sel).unwrap(), loaded.predict_all(val, &sel).unwrap());

        let other = small_data(7);
        let mut schemas = other.schemas.clone();
        schemas[0].cardinality += 1;
        let err = load_net(&path, &schemas).unwrap_err();
        assert_eq!(err.kind(), "schema_mismatch");
    }
}

#[test]
fn supernet_loss_drops_over_first_epoch() {
    // median over 5 seeds of (first-decile loss − last-decile loss) / first-decile loss
    let mut drops = Vec::new();
    for seed in 0..5 {
        let data = generate_synthetic(&SyntheticSpec::oracle(12_000, seed)).unwrap();
        let c = CandidateSet::new(vec![2, 8]).unwrap();
        let rng = RngStream::new(seed);
        let cfg = ModelConfig { batch_size: 128, ..ModelConfig::default() };
        let mut net = EmbeddingNet::supernet(&data.schemas, &c, Scheme::Independent, &cfg, &rng).unwrap();
        let mut sampler = Sampler::new(&SamplerConfig::default(), &data.cardinalities(), c.sizes()).unwrap();
        let log = train_supernet(&mut net, &data, &mut sampler, &TrainConfig::default(), &rng).unwrap();
        let k = (log.losses.len() / 10).max(1);
        let head: f64 = log.losses[..k].iter().sum::<f64>() / k as f64;
        let tail: f64 = log.losses[log.losses.len() - k..].iter().sum::<f64>() / k as f64;
        drops.push((head - tail) / head);
    }
    drops.sort_by(f64::total_cmp);
    assert!(drops[2] >= 0.2, "{drops:?}");
}

#[test]
fn wide_deep_architecture_trains() {
    let data = small_data(8);
    let c = CandidateSet::new(vec![2, 8]).unwrap();
    let cfg = ModelConfig { architecture: Architecture::WideDeep, ..small_config() };
    let rng = RngStream::new(3);
    let mut net = EmbeddingNet::standalone(&data.schemas, &c, &[1, 1, 0], &cfg, &rng).unwrap();
    let log = train_standalone(&mut net, &data, &TrainConfig { epochs: 2, ..TrainConfig::default() }, &rng).unwrap();
    assert_eq!(log.epochs.len(), 2);
    assert!(log.epochs.iter().all(|e| e.split == "validation" && (0.0..=1.0).contains(&e.auc)));
}

proptest! {
    #[test]
    fn param_count_identities(
        cards in proptest::collection::vec(1usize..5000, 1..12),
        sizes in proptest::collection::btree_set(1usize..128, 1..6),
    ) {
        let c = CandidateSet::new(sizes.iter().copied().collect()).unwrap();
        let n: u64 = cards.iter().map(|&x| x as u64).sum();
        let sum_d: u64 = c.sizes().iter().map(|&d| d as u64).sum();
        prop_assert_eq!(supernet_param_count(&cards, &c, Scheme::Independent), n * sum_d);
        prop_assert_eq!(supernet_param_count(&cards, &c, Scheme::Shared), n * c.max_size() as u64);
        let all32 = vec![32; cards.len()];
        prop_assert_eq!(param_reduction(&cards, &all32).unwrap(), 0.0);
    }

    #[test]
    fn shared_prefix_property(field_card in 2usize..30, seed in 0u64..1000, idx in 0u32..2) {
        let schemas = vec![FieldSchema::one_hot("f", field_card)];
        let c = CandidateSet::new(vec![2, 4, 8]).unwrap();
        let s = SupernetStore::new(&schemas, &c, Scheme::Shared, &RngStream::new(seed));
        let sample = Sample { fields: vec![vec![idx]], label: 0.0, timestamp: None };
        let views: Vec<_> = (0..3).map(|j| s.lookup(0, j, &[&sample]).unwrap()).collect();
        for j in 0..3 {
            for k in j + 1..3 {
                prop_assert_eq!(views[j].row(0), &views[k].row(0)[..c.sizes()[j]]);
            }
        }
    }
}
