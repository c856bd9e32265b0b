use dprec_cli::config::RunConfig;
use dprec_core::model::ModelKind;
use dprec_core::sim::SamplingMode;
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.0),
        Just(1e-300),
        -1e6f64..1e6,
        any::<f64>().prop_filter("finite", |v| v.is_finite())
    ]
}

fn config() -> impl Strategy<Value = RunConfig> {
    (
        (
            1usize..10_000,
            1usize..100,
            0usize..5000,
            any::<bool>(),
            0usize..5,
            1usize..512,
            finite(),
        ),
        (
            prop::option::of(1usize..64),
            1usize..100,
            any::<u64>(),
            any::<bool>(),
        ),
        (
            "[a-z-]{1,12}",
            prop::option::of(finite()),
            finite(),
            finite(),
        ),
        (finite(), finite(), 0u32..33, prop::option::of(1usize..1000)),
        (prop::option::of(finite()), 2u32..200),
        (
            0usize..10_000,
            0usize..10_000,
            1usize..64,
            2usize..20,
            finite(),
            finite(),
            any::<u64>(),
            finite(),
            any::<u64>(),
        ),
        "[a-z0-9_]{1,10}",
    )
        .prop_map(|(f, f2, m, r, a, d, name)| {
            let mut c = RunConfig::default();
            c.federation.n_clients = f.0;
            c.federation.per_round = f.1;
            c.federation.rounds = f.2;
            c.federation.sampling = if f.3 {
                SamplingMode::WithReplacement
            } else {
                SamplingMode::WithoutReplacement
            };
            c.federation.local_epochs = f.4;
            c.federation.batch_size = f.5;
            c.federation.learning_rate = f.6;
            c.federation.model = match f2.0 {
                None => ModelKind::LogisticRegression,
                Some(h) => ModelKind::Mlp { hidden_dim: h },
            };
            c.federation.eval_every = f2.1;
            c.federation.master_seed = f2.2;
            c.federation.verify_replay = f2.3;
            c.mechanism.name = m.0;
            c.mechanism.target_epsilon = m.1;
            c.mechanism.noise_mult = m.2;
            c.mechanism.fedavg_clip = m.3;
            c.rec.sigma = r.0;
            c.rec.clip_mult = r.1;
            c.rec.bits = r.2;
            c.rec.max_group_len = r.3;
            c.accountant.delta = a.0;
            c.accountant.max_order = a.1;
            c.data.n_train = d.0;
            c.data.n_test = d.1;
            c.data.feature_dim = d.2;
            c.data.num_classes = d.3;
            c.data.separation = d.4;
            c.data.noise = d.5;
            c.data.task_seed = d.6;
            c.data.dirichlet_alpha = d.7;
            c.data.partition_seed = d.8;
            c.output.name = name.clone();
            c.output.dir = format!("runs/{name}").into();
            c
        })
}

proptest! {
    #[test]
    fn parse_serialise_parse_is_identity(cfg in config()) {
        let text = cfg.to_toml();
        let parsed = RunConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(RunConfig::from_toml(&parsed.to_toml()).unwrap(), parsed);
    }
}
