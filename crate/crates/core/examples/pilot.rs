//! Seeded pilot: per-cohort URegAUC of each training variant on the default
//! population.
//! `cargo run --release -p cpt-core --example pilot [population.json] [train.json]`.

use std::collections::BTreeMap;

use cpt_core::eval::{ureg_auc, Scored};
use cpt_core::synth::{Population, PopulationConfig};
use cpt_core::trainer::{train, TrainConfig, Variant};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let pop_json = args.first().map_or("{}", String::as_str);
    let train_json = args.get(1).map_or("{}", String::as_str);
    let config: PopulationConfig = serde_json::from_str(pop_json).expect("population json");
    let base: TrainConfig = serde_json::from_str(train_json).expect("train json");
    let seed = config.seed;
    let pop = Population::new(config.clone()).expect("valid config");
    let stream: Vec<_> = pop.stream().collect();
    let eval = pop.eval_set();
    let cohorts = pop.cohort_map();
    let names = config.cohort_names();
    print!("{:<14}", "variant");
    for n in &names {
        print!("{n:>10}");
    }
    println!("{:>10}", "all");
    let variants: Vec<Variant> = match args.get(2) {
        Some(v) => serde_json::from_str(v).expect("variant list json"),
        None => vec![Variant::Regression, Variant::Multi, Variant::Cotrain, Variant::ValueWeighted],
    };
    for variant in variants {
        let tc = TrainConfig { variant, ..base.clone() };
        let out = train(&stream, &tc, config.feature_dim()).expect("train");
        let mut by: BTreeMap<&str, Vec<Scored>> = BTreeMap::new();
        for it in &eval {
            let r = Scored { user: it.user_id, score: out.model.score(&it.features), truth: it.y };
            by.entry(cohorts[&it.user_id].as_str()).or_default().push(r);
            by.entry("all").or_default().push(r);
        }
        print!("{:<14}", format!("{variant:?}"));
        for n in names.iter().map(String::as_str).chain(["all"]) {
            print!("{:>10.4}", ureg_auc(&by[n], 100, seed).unwrap().value);
        }
        println!();
    }
}
