use std::path::PathBuf;

use mmdbfair::data::{chi2_independence, group_indices, load_tabular, Attribute, DatasetSplit, Schema};

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn schema(name: &str) -> Option<Schema> {
    let root = workspace();
    let dir = std::env::var_os("MMDBFAIR_DATA").map_or(root.join("data"), PathBuf::from);
    let s = Schema::from_file(&root.join("schemas").join(format!("{name}.schema")))
        .unwrap()
        .with_data_dir(&dir);
    if s.data_files().iter().all(|p| p.exists()) {
        Some(s)
    } else {
        eprintln!("{name} data not found under {}, skipping", dir.display());
        None
    }
}

fn chi2(split: &DatasetSplit) -> (f64, f64) {
    let idx = split.fully_labeled();
    let sub = split.select(&idx);
    let t = sub.complete_labels(Attribute::Target).unwrap();
    let s = sub.complete_labels(Attribute::Sensitive).unwrap();
    chi2_independence(&t, &s).unwrap()
}

#[test]
fn compas_splits() {
    let Some(schema) = schema("compas") else { return };
    let splits = load_tabular(&schema).unwrap();
    let total = splits.train.len() + splits.val.len() + splits.test.len();
    assert_eq!(total, 6172);
    assert_eq!(splits.train.dim(), 11);
    let g = group_indices(&splits.train, Attribute::Sensitive).unwrap();
    assert_eq!(g.p.len() + g.q.len(), splits.train.len());
    let (x, p) = chi2(&splits.train);
    eprintln!("compas train chi2 {x} p {p}; val {:?}; test {:?}", chi2(&splits.val), chi2(&splits.test));
    assert!((x - 26.032).abs() <= 0.5);
}

#[test]
fn adult_splits() {
    let Some(schema) = schema("adult") else { return };
    let splits = load_tabular(&schema).unwrap();
    eprintln!(
        "adult sizes {} {} {} dim {}; chi2 train {:?} val {:?} test {:?}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        splits.train.dim(),
        chi2(&splits.train),
        chi2(&splits.val),
        chi2(&splits.test)
    );
    let (x, p) = chi2(&splits.test);
    assert_eq!(x, 0.0);
    assert_eq!(p, 1.0);
}
