mod common;

use phibp::io::*;
use phibp::rand_dist::RngHandle;
use proptest::prelude::*;

fn load(text: &str, keep_empty: bool) -> phibp::Result<CountMatrix> {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.csv");
    std::fs::write(&p, text).unwrap();
    load_count_matrix(&p, &LoadOptions { delimiter: None, samples_path: None, keep_empty })
}

#[test]
fn small_file_loads() {
    let cm = load("group,a,b\ng1,1,0\ng2,0,2\n", false).unwrap();
    assert_eq!((cm.n_groups(), cm.n_species()), (2, 2));
    assert_eq!(cm.samples, vec![1.0, 1.0]);
    let tab = load("group\ta\tb\ng1\t1\t0\ng2\t0\t2\n", false).unwrap();
    assert_eq!(cm, tab);
}

#[test]
fn empty_columns_are_dropped() {
    let cm = load("group,a,b,c\ng1,1,0,0\ng2,0,0,2\n", false).unwrap();
    assert_eq!(cm.species, vec!["a", "c"]);
    let kept = load("group,a,b,c\ng1,1,0,0\ng2,0,0,2\n", true).unwrap();
    assert_eq!(kept.n_species(), 3);
}

#[test]
fn bad_cells_report_their_line() {
    for text in ["group,a\ng1,-1\n", "group,a\ng1,1.5\n", "group,a,b\ng1,1\n", "group,a\ng1,x\n"] {
        let e = load(text, false).unwrap_err().to_string();
        assert!(e.contains("line 2"), "{text:?}: {e}");
    }
}

#[test]
fn canonical_round_trip_is_byte_identical() {
    let text = "group,a,b,c\ng1,4,0,1\ng2,0,2,7\n";
    let cm = load(text, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("out.csv");
    save_count_matrix(&p, &cm).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), text);
    let s = dir.path().join("s.csv");
    save_samples(&s, &cm).unwrap();
    assert_eq!(load_samples(&s, &cm.groups).unwrap(), cm.samples);
}

#[test]
fn split_has_binomial_mean() {
    let cm = CountMatrix::new(vec!["g".into()], vec!["a".into()], vec![vec![10]], vec![1.0]).unwrap();
    let mut rng = RngHandle::new(1, 0);
    let v: Vec<f64> = (0..10_000)
        .map(|_| binomial_split(&mut rng, &cm, &[1], &[1]).unwrap().0.values[0][0] as f64)
        .collect();
    common::checks::within_sigma(&v, 5.0, 3.0).unwrap();
    assert!(binomial_split(&mut rng, &cm, &[1], &[0]).is_err());
}

proptest! {
    #[test]
    fn split_conserves_counts(vals in proptest::collection::vec(0u64..50, 6), seed in 0u64..1000, big in 1u64..10, small in 1u64..10) {
        let cm = CountMatrix::new(
            vec!["g1".into(), "g2".into()], vec!["a".into(), "b".into(), "c".into()],
            vec![vals[..3].to_vec(), vals[3..].to_vec()], vec![1.0, 1.0]).unwrap();
        let (tr, te) = binomial_split(&mut RngHandle::new(seed, 0), &cm, &[big, big], &[small, small]).unwrap();
        for j in 0..2 {
            for l in 0..3 {
                prop_assert_eq!(tr.values[j][l] + te.values[j][l], cm.values[j][l]);
            }
        }
        prop_assert_eq!(tr.samples, vec![big as f64; 2]);
        prop_assert_eq!(te.samples, vec![small as f64; 2]);
    }
}
