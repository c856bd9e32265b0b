//! Named run configurations with fixed master seeds.
//!
//! The `mnist-synth-*` family is a desk-scale stand-in for the MNIST
//! experiments: a synthetic 10-class task with 32 features, 100 Dirichlet(1)
//! clients, 10 sampled per round for 300 rounds, trained with logistic
//! regression.

use crate::config::RunConfig;

const ABLATION_BITS: [u32; 4] = [4, 5, 6, 7];

pub fn names() -> Vec<String> {
    let mut names = vec![
        "mnist-synth-dprec-eps6".to_string(),
        "mnist-synth-fedavg-eps6".to_string(),
    ];
    names.extend(
        ABLATION_BITS
            .iter()
            .map(|b| format!("mnist-synth-ablation-b{b}")),
    );
    names.push("mnist-synth-ablation-exact".into());
    names.push("mnist-synth-ablation-none".into());
    names.push("smoke-dprec".into());
    names.push("smoke-fedavg".into());
    names
}

pub fn preset(name: &str) -> Option<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.output.name = name.to_string();
    match name {
        "mnist-synth-dprec-eps6" => {
            cfg.mechanism.target_epsilon = Some(6.0);
        }
        "mnist-synth-fedavg-eps6" => {
            cfg.mechanism.name = "dp-fedavg".into();
            cfg.mechanism.target_epsilon = Some(6.0);
        }
        "mnist-synth-ablation-exact" => cfg.mechanism.name = "dp-rec-exact".into(),
        "mnist-synth-ablation-none" => cfg.mechanism.name = "none".into(),
        "smoke-dprec" | "smoke-fedavg" => {
            cfg.federation.n_clients = 20;
            cfg.federation.per_round = 4;
            cfg.federation.rounds = 20;
            cfg.federation.verify_replay = true;
            cfg.data.n_train = 600;
            cfg.data.n_test = 200;
            cfg.data.feature_dim = 8;
            cfg.data.num_classes = 4;
            cfg.data.separation = 1.0;
            cfg.rec.max_group_len = Some(16);
            cfg.mechanism.target_epsilon = Some(8.0);
            if name == "smoke-fedavg" {
                cfg.mechanism.name = "dp-fedavg".into();
            }
        }
        _ => {
            let bits = name.strip_prefix("mnist-synth-ablation-b")?.parse().ok()?;
            if !ABLATION_BITS.contains(&bits) {
                return None;
            }
            cfg.rec.bits = bits;
        }
    }
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_preset_resolves_and_round_trips() {
        for name in names() {
            let cfg = preset(&name).unwrap();
            assert_eq!(cfg.output.name, name);
            assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn unknown_names_resolve_to_nothing() {
        for name in [
            "",
            "mnist-synth-ablation-b3",
            "mnist-synth-ablation-bx",
            "mnist",
        ] {
            assert!(preset(name).is_none(), "{name}");
        }
    }
}
