use std::collections::HashMap;

use proptest::prelude::*;

use binhash::dataset::{make_gaussian_clusters, ToyConfig};
use binhash::io;
use binhash::metrics::{evaluate_retrieval, orthogonality_score, separability};
use binhash::{
    pack_code, Architecture, Codebook, DatasetF32, EncoderParamsF32, HadamardRows, HammingIndex, PackedCode,
    TrainConfig,
};

fn code_strategy(k: usize) -> impl Strategy<Value = PackedCode> {
    prop::collection::vec(prop::bool::ANY, k)
        .prop_map(|b| pack_code(&b.iter().map(|&x| if x { 1 } else { -1 }).collect::<Vec<i8>>()).unwrap())
}

fn labeled_codes() -> impl Strategy<Value = (Vec<PackedCode>, Vec<Vec<usize>>)> {
    (1usize..5, 1usize..70).prop_flat_map(|(classes, k)| {
        prop::collection::vec((code_strategy(k), 0..classes), classes..30).prop_map(move |mut v| {
            // every class gets at least one sample
            for (c, item) in v.iter_mut().enumerate().take(classes) {
                item.1 = c;
            }
            v.into_iter().map(|(c, l)| (c, vec![l])).unzip()
        })
    })
}

proptest! {
    #[test]
    fn orthogonality_ignores_order_and_duplication((codes, labels) in labeled_codes(), seed in any::<u64>()) {
        let classes = labels.iter().flatten().max().unwrap() + 1;
        let base = orthogonality_score(&codes, &labels, classes).unwrap();

        let mut order: Vec<usize> = (0..codes.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<PackedCode> = order.iter().map(|&i| codes[i].clone()).collect();
        let shuffled_labels: Vec<Vec<usize>> = order.iter().map(|&i| labels[i].clone()).collect();
        prop_assert_eq!(orthogonality_score(&shuffled, &shuffled_labels, classes).unwrap(), base);

        let doubled: Vec<PackedCode> = codes.iter().chain(codes.iter()).cloned().collect();
        let doubled_labels: Vec<Vec<usize>> = labels.iter().chain(labels.iter()).cloned().collect();
        prop_assert_eq!(orthogonality_score(&doubled, &doubled_labels, classes).unwrap(), base);
    }

    #[test]
    fn codes_file_roundtrip(codes in prop::collection::vec(code_strategy(70), 0..20)) {
        let entries: Vec<(u64, PackedCode)> = (100u64..).zip(codes).collect();
        let bytes = io::encode_codes(&entries).unwrap();
        prop_assert_eq!(io::decode_codes(&bytes).unwrap(), entries.clone());
        prop_assert_eq!(io::reencode(&bytes).unwrap(), bytes);
        if !entries.is_empty() {
            let index = HammingIndex::build(entries).unwrap();
            let bytes = io::encode_index(&index).unwrap();
            prop_assert_eq!(io::decode_index(&bytes).unwrap(), index);
        }
    }

    #[test]
    fn codebook_file_roundtrip(classes in 2usize..20, bits in 5usize..80, seed in any::<u64>(), iters in 0usize..5) {
        let cb = Codebook::bernoulli(classes, bits, seed).unwrap().improve(iters, seed);
        let bytes = io::encode_codebook(&cb).unwrap();
        prop_assert_eq!(io::decode_codebook(&bytes).unwrap(), cb);
        prop_assert_eq!(io::reencode(&bytes).unwrap(), bytes);
    }
}

#[test]
fn codebook_aligned_codes_separate_by_at_least_half_k() {
    let cb = Codebook::hadamard(16, 16, HadamardRows::Paired).unwrap();
    let mut codes = Vec::new();
    let mut labels = Vec::new();
    for c in 0..16 {
        for _ in 0..3 {
            codes.push(cb.packed_rows()[c].clone());
            labels.push(vec![c]);
        }
    }
    let sep = separability(&codes, &labels).unwrap();
    // intra distance is 0; of the 15 other classes, 14 sit at K/2 and the complement at K
    let inter_mean = (14.0 * 8.0 + 16.0) / 15.0;
    assert!((sep - inter_mean).abs() < 1e-12);
    assert!(sep >= 8.0);
}

#[test]
fn f32_pipeline_through_the_library() {
    let toy = ToyConfig {
        classes: 4,
        dim: 8,
        per_class: 60,
        spread: 1.0,
        separation: 10.0,
        seed: 1,
        multilabel: false,
    };
    let data: DatasetF32 = make_gaussian_clusters(&toy).unwrap();
    let (db, queries) = data.split_queries(0.2, 1).unwrap();
    let cb = Codebook::hadamard(4, 8, HadamardRows::Paired).unwrap();
    let mut cfg = TrainConfig::new(Architecture::new(8, vec![16], 8));
    cfg.learning_rate = 1e-2;
    cfg.epochs = 20;
    let (model, history): (EncoderParamsF32, _) = binhash::train(&cfg, &db, &cb).unwrap();
    let losses = history.losses();
    assert!(losses.last().unwrap() < &losses[0]);

    let index = HammingIndex::build((0u64..).zip(model.encode_binary(db.descriptors.view()).unwrap())).unwrap();
    let labels: HashMap<u64, Vec<usize>> = (0u64..).zip(db.labels.iter().cloned()).collect();
    let q = model.encode_binary(queries.descriptors.view()).unwrap();
    let summary = evaluate_retrieval(&index, &q, &queries.labels, &labels, 20).unwrap();
    assert!(summary.map_at_r > 0.9, "{}", summary.map_at_r);

    // f32 models are stored as f64 decimals and load back exactly
    let bytes = io::encode_model(&model).unwrap();
    assert_eq!(io::decode_model::<f32>(&bytes).unwrap(), model);
}
