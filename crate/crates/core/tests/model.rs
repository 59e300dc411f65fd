use ordqr::gibbs::sweep;
use ordqr::model::*;
use ordqr::rng::substream;
use ordqr::sim::{replication_dataset, Scenario, ScenarioConfig};
use proptest::prelude::*;

#[test]
fn simulated_csv_round_trip() {
    let cfg = ScenarioConfig::new(Scenario::Sim2);
    let ds = replication_dataset(&cfg, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.csv");
    write_csv(&ds, &path).unwrap();
    let back = ingest_csv(&path, &ColumnSchema::default()).unwrap();
    assert_eq!(back.design(), ds.design());
    assert_eq!(back.covariate_names(), ds.covariate_names());
    assert_eq!(back.subjects(), ds.subjects());
}

#[test]
fn labels_are_reindexed_in_order() {
    let csv = "id,visit,score,dose\na,1,10,0.5\na,2,30,0.1\nb,1,20,-1\nb,2,10,2\n";
    let schema = ColumnSchema { subject: "id".into(), category: "score".into(), time: Some("visit".into()), ..Default::default() };
    let ds = ingest_reader(csv.as_bytes(), &schema).unwrap();
    assert_eq!(ds.category_labels(), &[10, 20, 30]);
    assert_eq!(ds.design().y, vec![1, 3, 2, 1]);
    assert_eq!(ds.covariate_names(), &["dose".to_string()]);
}

#[test]
fn bad_category_names_its_row() {
    let csv = "subject,time,y,x1\n1,1,1,0.5\n1,2,two,0.1\n";
    match ingest_reader(csv.as_bytes(), &ColumnSchema::default()) {
        Err(DataError::BadCategory { row, .. }) => assert_eq!(row, 3),
        other => panic!("unexpected {other:?}"),
    }
}

fn arb_dataset() -> impl Strategy<Value = (OrdinalDataset, f64, u64)> {
    (2usize..6, 1usize..4, 1usize..5, 1usize..5, 0.05f64..0.95, any::<u64>()).prop_flat_map(|(c, p, n_subj, n_obs, theta, seed)| {
        let rows = prop::collection::vec((1..=c, prop::collection::vec(-2.0f64..2.0, p)), n_subj * n_obs);
        rows.prop_map(move |rows| {
            let subjects = (0..n_subj)
                .map(|i| SubjectBlock {
                    subject_id: i.to_string(),
                    observations: rows[i * n_obs..(i + 1) * n_obs]
                        .iter()
                        .enumerate()
                        .map(|(j, (y, x))| Observation { y: *y, x: x.clone(), time_index: j as i64 })
                        .collect(),
                })
                .collect();
            (OrdinalDataset::new(subjects, c, p).unwrap(), theta, seed)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sweeps_preserve_state_invariants((ds, theta, seed) in arb_dataset()) {
        let pr = Priors { delta_min: -4.0, delta_max: 4.0, ..Priors::default() };
        let spec = ModelSpec::new(theta, pr, &ds).unwrap();
        let mut rng = substream(seed, &[]);
        let mut st = initialize_state(&spec, &mut rng).unwrap();
        prop_assert!(st.check_invariants(&spec).is_ok());
        for t in 1..=25 {
            sweep(&mut st, &spec, &mut rng, 0, t).unwrap();
            if let Err(e) = st.check_invariants(&spec) {
                prop_assert!(false, "sweep {}: {}", t, e);
            }
        }
        for o in 0..ds.num_observations() {
            let probs = category_probability(&st, &spec, o).0;
            prop_assert_eq!(probs.len(), ds.num_categories());
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cut_points_are_inside_and_increasing(c in 2usize..30, lo in -20f64..0.0, width in 0.1f64..40.0) {
        let pts = equally_spaced_cut_points(c, lo, lo + width).unwrap();
        prop_assert_eq!(pts.len(), c - 1);
        prop_assert!(pts.iter().all(|&x| x > lo && x < lo + width));
        prop_assert!(pts.windows(2).all(|w| w[0] < w[1]));
    }
}
