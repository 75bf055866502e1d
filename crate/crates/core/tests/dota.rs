use std::fs;

use c3det_core::dataset::{DatasetMeta, Split};
use c3det_core::*;
use c3det_core::dota::*;
use c3det_core::types::ClassCatalog;

#[test]
fn rectangle_envelope_is_itself() {
    let (b, c) = parse_line("0 0 4 0 4 2 0 2 plane 0").unwrap().unwrap();
    assert_eq!(b.to_array(), [0.0, 0.0, 4.0, 2.0]);
    assert_eq!(c, "plane");
}

#[test]
fn rotated_square_envelope() {
    let (b, _) = parse_line("1 0 2 1 1 2 0 1 ship").unwrap().unwrap();
    assert_eq!(b.to_array(), [0.0, 0.0, 2.0, 2.0]);
}

#[test]
fn header_lines_skipped() {
    assert_eq!(parse_line("imagesource:GoogleEarth").unwrap(), None);
    assert_eq!(parse_line("gsd:0.14").unwrap(), None);
    assert!(parse_line("1 2 3 plane").is_err());
}

#[test]
fn one_bad_line_among_ten() {
    let dir = tempfile::tempdir().unwrap();
    let txt = dir.path().join("txt");
    let out = dir.path().join("out");
    fs::create_dir_all(&txt).unwrap();
    dataset::write_meta(
        &out,
        &DatasetMeta {
            classes: ClassCatalog::new(["plane", "ship"]).unwrap(),
            image_size: [100, 100],
        },
    )
    .unwrap();
    let mut lines = String::from("imagesource:x\ngsd:null\n");
    for i in 0..9 {
        let o = i as f64 * 5.0;
        lines.push_str(&format!("{o} {o} {} {o} {} {} {o} {} ship 0\n", o + 3.0, o + 3.0, o + 3.0, o + 3.0));
    }
    lines.push_str("1 2 3 4 ship\n");
    lines.push_str("0 0 1 0 1 1 0 1 helicopter 1\n");
    fs::write(txt.join("P0001.txt"), lines).unwrap();

    let report = import_dota(&txt, &out, Split::Train).unwrap();
    assert_eq!(report.imported, 9);
    assert_eq!(report.per_class.get("ship"), Some(&9));
    assert_eq!(report.malformed.len(), 1);
    assert_eq!(report.malformed[0].line, 12);
    assert_eq!(report.unknown_classes.get("helicopter"), Some(&1));
    let meta = dataset::read_meta(&out).unwrap();
    let objs = dataset::load_labels(&out, Split::Train, "P0001", &meta).unwrap();
    assert_eq!(objs.len(), 9);
}
