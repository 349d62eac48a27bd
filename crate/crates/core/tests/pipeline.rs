use complex_compress::container::{
    compress, decompress, read_container, write_container, ClusterSpec, PipelineConfig, Stages,
};
use complex_compress::entropy::EntropyMode;
use complex_compress::metrics::{compress_with_report, Stage};
use complex_compress::pruning::PruneConfig;
use complex_compress::quantization::InitScheme;
use complex_compress::tensor::{load_raw, save_raw, ComplexScalar, ComplexTensor, RawModel};
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = RawModel> {
    let layer =
        (proptest::collection::vec(1usize..5, 1..4), -3i32..1).prop_flat_map(|(shape, exp)| {
            let n: usize = shape.iter().product();
            let scale = 10f32.powi(exp);
            proptest::collection::vec((-1.0f32..1.0, -1.0f32..1.0), n).prop_map(move |v| {
                let vals = v
                    .into_iter()
                    .map(|(a, b)| ComplexScalar::new(a * scale, b * scale))
                    .collect();
                (shape.clone(), vals)
            })
        });
    proptest::collection::vec(layer, 1..4).prop_map(|layers| {
        RawModel::new(
            layers
                .into_iter()
                .enumerate()
                .map(|(i, (shape, vals))| ComplexTensor::new(format!("l{i}"), shape, vals).unwrap())
                .collect(),
        )
        .unwrap()
    })
}

fn config_strategy() -> impl Strategy<Value = PipelineConfig> {
    (
        0.0f64..0.5,
        1usize..20,
        0u8..6,
        any::<u64>(),
        0u8..3,
        any::<bool>(),
    )
        .prop_map(|(t, m, init, seed, mode, huffman)| PipelineConfig {
            prune: PruneConfig::modulus(t).unwrap(),
            clusters: ClusterSpec::uniform(m),
            init: match init {
                0 => InitScheme::Forgy { seed },
                1 => InitScheme::Density { seed },
                2 => InitScheme::LinearHorizontal,
                3 => InitScheme::LinearVertical,
                4 => InitScheme::LinearPositive,
                _ => InitScheme::LinearNegative,
            },
            entropy_mode: [
                None,
                Some(EntropyMode::SplitValues),
                Some(EntropyMode::Indices),
            ][mode as usize],
            stages: Stages {
                huffman,
                ..Stages::ALL
            },
            ..PipelineConfig::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reconstruction_within_kmeans_distance(model in model_strategy(), cfg in config_strategy()) {
        let (report, c) = compress_with_report(&model, &cfg).unwrap();
        let bytes = c.to_bytes().unwrap();
        prop_assert_eq!(bytes.len() as u64, report.stages().last().unwrap().1.file_bytes);
        let out = decompress(&c).unwrap();
        for ((orig, got), lr) in model.layers().iter().zip(out.layers()).zip(&report.layers) {
            let bound = lr.kmeans.as_ref().unwrap().max_distance;
            for (o, g) in orig.values().iter().zip(got.values()) {
                if cfg.prune.prunes(*o) {
                    prop_assert!(g.bit_eq(ComplexScalar::ZERO));
                } else {
                    prop_assert!(o.dist_sq(*g).sqrt() <= bound + 1e-12);
                }
            }
        }
    }

    #[test]
    fn stage_sizes_are_ordered(model in model_strategy(), cfg in config_strategy()) {
        let (r, _) = compress_with_report(&model, &cfg).unwrap();
        prop_assert!(r.pruned_le_raw());
        for (s, _) in r.stages() {
            let ratio = r.payload_ratio(s).unwrap();
            prop_assert!(ratio > 0.0);
        }
        prop_assert_eq!(r.payload_ratio(Stage::Raw), Some(1.0));
    }

    #[test]
    fn identity_is_bit_exact(model in model_strategy()) {
        let c = compress(&model, &PipelineConfig::identity()).unwrap();
        let back = complex_compress::container::CompressedModel::from_bytes(&c.to_bytes().unwrap()).unwrap();
        prop_assert!(decompress(&back).unwrap().bit_eq(&model));
    }
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let vals: Vec<_> = (0..600)
        .map(|i| {
            ComplexScalar::new(
                (i as f32 * 0.37).sin() * 0.05,
                (i as f32 * 0.11).cos() * 0.05,
            )
        })
        .collect();
    let model = RawModel::new(vec![
        ComplexTensor::new("a", vec![6, 10, 10], vals.clone()).unwrap(),
        ComplexTensor::new("b", vec![600], vals).unwrap(),
    ])
    .unwrap();
    let cwt = dir.path().join("m.cwt");
    save_raw(&model, &cwt).unwrap();
    let loaded = load_raw(&cwt).unwrap();
    assert!(loaded.bit_eq(&model));

    let cfg = PipelineConfig {
        prune: PruneConfig::modulus(0.02).unwrap(),
        clusters: ClusterSpec::parse("a=12,30", 256).unwrap(),
        ..PipelineConfig::default()
    };
    let c = compress(&loaded, &cfg).unwrap();
    assert_eq!(c.layers[0].codebook.len(), 12 * 8);
    assert_eq!(c.layers[1].codebook.len(), 30 * 8);
    let path = dir.path().join("m.ccnz");
    write_container(&c, &path).unwrap();
    let back = read_container(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.config.default_clusters, 30);
    assert_eq!(back.config.threshold, 0.02);
}

#[test]
fn threads_do_not_change_output() {
    let vals: Vec<_> = (0..20_000)
        .map(|i| {
            ComplexScalar::new(
                ((i * 7919) % 1000) as f32 / 1000.0,
                ((i * 104_729) % 997) as f32 / 997.0,
            )
        })
        .collect();
    let model = RawModel::new(vec![
        ComplexTensor::new("big", vec![100, 200], vals[..].to_vec()).unwrap(),
        ComplexTensor::new("small", vec![50], vals[..50].to_vec()).unwrap(),
    ])
    .unwrap();
    let cfg = PipelineConfig {
        prune: PruneConfig::modulus(0.1).unwrap(),
        clusters: ClusterSpec::uniform(40),
        init: InitScheme::Forgy { seed: 9 },
        ..PipelineConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| compress(&model, &cfg).unwrap().to_bytes().unwrap())
    };
    let one = run(1);
    for t in [2, 3, 8] {
        assert_eq!(run(t), one);
    }
}
