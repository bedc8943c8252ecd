//! Hierarchies and panels shaped like the public benchmark datasets.

use std::io::Write;

use chrono::NaiveDate;
use topdown_core::data_io::{
    load_hierarchy, load_panel, make_windows, read_panel, CovariateMatrix, Split, SplitSpec, WindowSpec,
};
use topdown_core::hierarchy::{check_coherence, AggregationMatrix};
use topdown_core::pipeline::extend_index;

/// Retail product tree: total, 3 categories, 7 departments, 3049 items.
fn retail_edges() -> String {
    let departments = [
        ("FOODS", "FOODS_1", 216),
        ("FOODS", "FOODS_2", 398),
        ("FOODS", "FOODS_3", 823),
        ("HOBBIES", "HOBBIES_1", 416),
        ("HOBBIES", "HOBBIES_2", 149),
        ("HOUSEHOLD", "HOUSEHOLD_1", 532),
        ("HOUSEHOLD", "HOUSEHOLD_2", 515),
    ];
    let mut s = String::from("child,parent\n");
    for cat in ["FOODS", "HOBBIES", "HOUSEHOLD"] {
        s += &format!("{cat},total\n");
    }
    for (cat, dept, items) in departments {
        s += &format!("{dept},{cat}\n");
        for i in 1..=items {
            s += &format!("{dept}_{i:03},{dept}\n");
        }
    }
    s
}

#[test]
fn retail_shaped_hierarchy() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    file.write_all(retail_edges().as_bytes()).unwrap();
    let tree = load_hierarchy(file.path()).unwrap();
    assert_eq!(tree.len(), 3060);
    assert_eq!(tree.num_leaves(), 3049);
    assert_eq!(tree.num_levels(), 4);
    assert_eq!(tree.families().len(), 11);
    let s = AggregationMatrix::new(&tree);
    let root_row: f64 = s.matrix().row(tree.root()).iter().sum();
    assert_eq!(root_row, 3049.0);
}

/// Monthly leaf-only panel, 1998-01 through 2016-12.
fn tourism_files() -> (tempfile::NamedTempFile, tempfile::NamedTempFile) {
    let mut hierarchy = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        hierarchy,
        "child,parent\nNSW,AUS\nVIC,AUS\nNSW_hol,NSW\nNSW_bus,NSW\nVIC_hol,VIC\nVIC_vis,VIC"
    )
    .unwrap();
    let mut panel = tempfile::NamedTempFile::new().unwrap();
    writeln!(panel, "series,timestamp,value").unwrap();
    for (k, leaf) in ["NSW_hol", "NSW_bus", "VIC_hol", "VIC_vis"].iter().enumerate() {
        for m in 0..228 {
            let (y, mo) = (1998 + m / 12, m % 12 + 1);
            let v = 100.0 + 10.0 * k as f64 + 20.0 * ((m % 12) as f64 / 12.0 * std::f64::consts::TAU).sin();
            writeln!(panel, "{leaf},{y}-{mo:02},{v}").unwrap();
        }
    }
    (hierarchy, panel)
}

#[test]
fn tourism_shaped_monthly_panel() {
    let (hierarchy, panel_file) = tourism_files();
    let (panel, tree) = load_panel(panel_file.path(), hierarchy.path()).unwrap();
    assert_eq!(panel.len(), 228);
    assert_eq!(panel.num_series(), 7);
    assert_eq!(panel.time_index()[0], NaiveDate::from_ymd_opt(1998, 1, 1).unwrap());
    assert_eq!(panel.time_index()[227], NaiveDate::from_ymd_opt(2016, 12, 1).unwrap());
    assert!(check_coherence(panel.values(), &tree, 1e-9).unwrap().passed());

    let window = WindowSpec::new(24, 12, 1).unwrap();
    let split = SplitSpec::standard(panel.len(), 12).unwrap();
    let cov = CovariateMatrix::empty(panel.len());
    let family = tree.family_of(tree.root()).unwrap();
    let train = make_windows(&panel, &cov, &family, &window, &split, Split::Train).unwrap();
    // starts 0..=168, futures ending by the validation start at 204
    assert_eq!(train.len(), 204 - 36 + 1);

    let ext = extend_index(panel.time_index(), 12).unwrap();
    assert_eq!(ext[228], NaiveDate::from_ymd_opt(2017, 1, 1).unwrap());
    assert_eq!(ext[239], NaiveDate::from_ymd_opt(2017, 12, 1).unwrap());
}

#[test]
fn unknown_series_is_rejected() {
    let (hierarchy, _) = tourism_files();
    let tree = load_hierarchy(hierarchy.path()).unwrap();
    let csv = "series,timestamp,value\nQLD_hol,2001-01,3\n";
    assert!(read_panel(csv.as_bytes(), &tree).is_err());
}
