//! Seeded pilot for the all-zero binary target: raw multi-sample labels vs
//! bootstrapped labels, and the percentile head's UAUC against
//! within-user affinity ranks.

use cpt_core::eval::{uauc, Scored};
use cpt_core::stats::std_dev;
use cpt_core::synth::{Population, PopulationConfig};
use cpt_core::trainer::{train, Target, TrainConfig, Variant};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config: PopulationConfig = serde_json::from_str(args.first().map_or("{}", String::as_str)).expect("population json");
    let base: TrainConfig = serde_json::from_str(args.get(1).map_or("{}", String::as_str)).expect("train json");
    config.cohorts.iter_mut().for_each(|c| c.positive_rate = 0.0);
    let pop = Population::new(config.clone()).expect("valid config");
    let stream: Vec<_> = pop.stream().collect();
    let eval = pop.eval_set();
    let mut labels = Vec::new();
    for variant in [Variant::Multi, Variant::Bootstrapped] {
        let tc = TrainConfig { variant, target: Target::Binary, ..base.clone() };
        let out = train(&stream, &tc, config.feature_dim()).expect("train");
        let l: Vec<f64> = out.log.iter().filter_map(|r| r.label).collect();
        labels.push((variant, std_dev(&l), l.len()));
        let mut records = Vec::new();
        for user in pop.users() {
            let mine: Vec<_> = eval.iter().filter(|it| it.user_id == user.id).collect();
            let mut aff: Vec<f64> = mine.iter().map(|it| it.affinity).collect();
            aff.sort_by(f64::total_cmp);
            let median = aff[aff.len() / 2];
            for it in mine {
                let (_, p) = out.model.predict(&it.features);
                records.push(Scored { user: it.user_id, score: p, truth: f64::from(u8::from(it.affinity >= median)) });
            }
        }
        let m = uauc(&records).expect("non-empty");
        println!("{variant:?}: label sd {:.4} over {} labels, percentile-head UAUC {:.4}", labels.last().unwrap().1, labels.last().unwrap().2, m.value);
    }
}
