//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use clinical_ner::corpus::{parse_conll, LabelSet};
use clinical_ner::embeddings::EmbeddingTable;
use clinical_ner::model::Model;
use clinical_ner::network::NetworkConfig;
use clinical_ner::training::{init_model, loss_and_gradients, param_tensors_mut, PARAM_NAMES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOY: &str = "\
Fever\tB-Symptom
and\tO
rash\tB-Symptom

SLE\tB-Immune_Mediated_Disease
treated\tO
with\tO
hydroxy-chloroquine\tB-Treatment

joint\tB-Symptom
pain\tI-Symptom
persisted\tO
";

pub fn toy_model(seed: u64, dropout: f64) -> (Model<f64>, Vec<clinical_ner::corpus::Sentence>) {
    let labels = LabelSet::new(["Immune_Mediated_Disease", "Symptom", "Treatment"]).unwrap();
    let docs = parse_conll(TOY.as_bytes(), &labels, "toy").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["fever", "and", "rash", "sle", "treated", "with", "joint", "pain"];
    let table = EmbeddingTable::from_rows(
        4,
        words.iter().map(|w| (w.to_string(), (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())),
    )
    .unwrap();
    let config = NetworkConfig {
        char_embed_dim: 3,
        char_filter_width: 3,
        char_filter_count: 4,
        word_dim: 4,
        lstm_hidden: 3,
        dropout_rate: dropout,
        num_tags: labels.num_tags(),
    };
    let mut model = init_model(&docs, &table, &labels, &config, &mut rng).unwrap();
    for t in param_tensors_mut(&mut model) {
        t.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    (model, docs[0].sentences.clone())
}

pub fn max_relative_errors(
    model: &Model<f64>,
    batch: &[clinical_ner::corpus::Sentence],
    dropout_seed: Option<u64>,
) -> Vec<(String, f64, f64)> {
    let eps = 1e-4;
    let (_, grads) = loss_and_gradients(batch, model, dropout_seed).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut out = Vec::new();
    for (ti, name) in PARAM_NAMES.iter().enumerate() {
        let mut worst_rel: f64 = 0.0;
        let mut worst_abs: f64 = 0.0;
        for (i, &a) in analytic[ti].iter().enumerate() {
            let mut plus = model.clone();
            param_tensors_mut(&mut plus)[ti][i] += eps;
            let mut minus = model.clone();
            param_tensors_mut(&mut minus)[ti][i] -= eps;
            let lp = loss_and_gradients(batch, &plus, dropout_seed).unwrap().0;
            let lm = loss_and_gradients(batch, &minus, dropout_seed).unwrap().0;
            let numeric = (lp - lm) / (2.0 * eps);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            worst_rel = worst_rel.max(rel);
            worst_abs = worst_abs.max(abs);
        }
        out.push((name.to_string(), worst_rel, worst_abs));
    }
    out
}
