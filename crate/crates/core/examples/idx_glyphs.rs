//! Write synthetic glyphs as IDX files, read them back and render one as ASCII.
use curvrate::data::{gen_glyphs, load_idx_dataset, IdxFile, IdxKind};

fn main() {
    let dir = std::env::temp_dir().join("curvrate-glyphs");
    std::fs::create_dir_all(&dir).unwrap();
    let (images, labels) = gen_glyphs(100, 7);
    let (pi, pl) = (dir.join("images.idx"), dir.join("labels.idx"));
    images.save(&pi).unwrap();
    labels.save(&pl).unwrap();
    let back = IdxFile::parse(&std::fs::read(&pi).unwrap(), IdxKind::Images).unwrap();
    assert_eq!(back, images);
    let ds = load_idx_dataset(&pi, &pl).unwrap();
    println!("{} images of dim {}, class counts {:?}", ds.len(), ds.dim(), ds.class_counts());
    println!("label {}", ds.labels[0]);
    for r in 0..28 {
        let line: String = (0..28).map(|c| if ds.inputs[[0, r * 28 + c]] > 0.5 { '#' } else if ds.inputs[[0, r * 28 + c]] > 0.1 { '.' } else { ' ' }).collect();
        println!("{line}");
    }
}
