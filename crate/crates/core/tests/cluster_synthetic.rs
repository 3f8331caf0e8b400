use kdemu::cluster::{assign_cluster, dtw_kmeans, ClusterConfig, ClusterModel};
use kdemu::data::Dataset;
use kdemu::params::ParameterVector;
use kdemu::synthgen::{generate_dataset, regimes, GeneratorConfig, Regime, RegimeMix};

fn corpus() -> (Dataset, ClusterModel) {
    let ds = generate_dataset(172, &GeneratorConfig::default(), &RegimeMix::default()).unwrap();
    let model = dtw_kmeans(&ds, &ClusterConfig::default()).unwrap();
    (ds, model)
}

fn increasing_label(model: &ClusterModel, tags: &[Regime]) -> usize {
    let mut counts = vec![0usize; model.k];
    for (&l, r) in model.labels.iter().zip(tags) {
        if *r == Regime::Increasing {
            counts[l] += 1;
        }
    }
    (0..model.k).max_by_key(|&l| counts[l]).unwrap()
}

#[test]
fn increasing_shapes_share_a_cluster() {
    let (ds, model) = corpus();
    let tags = regimes(&ds).unwrap();
    let inc = increasing_label(&model, &tags);
    let agree = model
        .labels
        .iter()
        .zip(&tags)
        .filter(|(&l, r)| (l == inc) == (**r == Regime::Increasing))
        .count();
    let purity = agree as f64 / ds.len() as f64;
    assert!(purity >= 0.9, "purity {purity}");
}

#[test]
fn cluster_sizes_near_reference_split() {
    let (_, model) = corpus();
    let sizes = model.cluster_sizes();
    assert_eq!(sizes.iter().sum::<usize>(), 172);
    assert!(sizes[0].abs_diff(123) <= 15 && sizes[1].abs_diff(49) <= 15, "{sizes:?}");
}

#[test]
fn parameter_rule_reproduces_training_labels() {
    let (ds, model) = corpus();
    let hits = ds
        .samples()
        .iter()
        .zip(&model.labels)
        .filter(|(s, &l)| assign_cluster(&model, &s.params).unwrap() == l)
        .count();
    assert!(hits as f64 >= 0.95 * ds.len() as f64, "{hits}/172");
}

#[test]
fn high_smsoh_mid_ph_goes_to_increasing_cluster() {
    let (ds, model) = corpus();
    let inc = increasing_label(&model, &regimes(&ds).unwrap());
    let mut v = ParameterVector::reference().to_array();
    v[1] = 6.0;
    v[2] = 8.0;
    assert_eq!(assign_cluster(&model, &ParameterVector::from_array(v)).unwrap(), inc);
}
