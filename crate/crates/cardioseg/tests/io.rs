use std::path::Path;

use cardioseg::checkpoint::{fingerprint, Checkpoint};
use cardioseg::io::{load_manifest, read_image, read_mask, write_image, write_mask};
use cardioseg::Error;
use cardioseg_core::data::{Domain, ImageSample, LabelMask, NUM_CLASSES};
use cardioseg_core::model::{init_params, DiscriminatorConfig, ModelConfig, SegmentorConfig};
use image::{ImageBuffer, Luma, Rgb};

fn write(path: &Path, text: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

fn image(h: usize, w: usize) -> ImageSample {
    let pixels = (0..h * w).map(|i| (i % 97) as f64 / 96.0).collect();
    ImageSample::new("img", h, w, pixels, Domain::Source, None).unwrap()
}

fn mask(h: usize, w: usize) -> LabelMask {
    let classes = (0..h * w).map(|i| (i % 4) as u8).collect();
    LabelMask::new(h, w, NUM_CLASSES, classes).unwrap()
}

fn pair_files(dir: &Path, id: &str) {
    write_image(&dir.join(format!("{id}.png")), &image(16, 20)).unwrap();
    write_mask(&dir.join(format!("{id}_mask.png")), &mask(16, 20)).unwrap();
}

#[test]
fn manifest_with_two_pairs_and_an_unlabeled_target() {
    let dir = tempfile::tempdir().unwrap();
    pair_files(dir.path(), "a");
    pair_files(dir.path(), "b");
    let path = dir.path().join("manifest.toml");
    write(
        &path,
        r#"schema_version = 1
[[entries]]
id = "a"
image = "a.png"
mask = "a_mask.png"
domain = "source"
pixel_spacing = [0.175, 0.175]

[[entries]]
id = "b"
image = "b.png"
mask = "b_mask.png"
domain = "source"

[[entries]]
id = "t"
image = "a.png"
domain = "target"
"#,
    );
    let m = load_manifest(&path).unwrap();
    assert_eq!(m.data.len(), 3);
    assert_eq!(m.data.entries[0].pixel_spacing, Some((0.175, 0.175)));
    assert!(m.data.entries[2].mask.is_none());
    let (img, msk) = m.labeled(&m.data.entries[1]).unwrap();
    assert_eq!((img.height, img.width, msk.height, msk.width), (16, 20, 16, 20));
}

#[test]
fn manifest_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    pair_files(dir.path(), "a");
    let path = dir.path().join("m.toml");

    write(&path, "schema_version = 1\n[[entries]]\nid = \"a\"\nimage = \"a.png\"\ncolour = 3\ndomain = \"source\"\n");
    let err = load_manifest(&path).unwrap_err().to_string();
    assert!(err.contains("line 5") && err.contains("colour"), "{err}");

    write(&path, "schema_version = 1\n[[entries]]\nid = \"a\"\nimage = \"a.png\"\ndomain = \"sauce\"\n");
    let err = load_manifest(&path).unwrap_err().to_string();
    assert!(err.contains("line 5"), "{err}");

    write(
        &path,
        "schema_version = 1\n[[entries]]\nid = \"a\"\nimage = \"a.png\"\ndomain = \"source\"\n\
         [[entries]]\nid = \"a\"\nimage = \"a.png\"\ndomain = \"source\"\n",
    );
    let err = load_manifest(&path).unwrap_err().to_string();
    assert!(err.contains("duplicate id `a`"), "{err}");

    write(&path, "schema_version = 1\n[[entries]]\nid = \"gone\"\nimage = \"nope.png\"\ndomain = \"source\"\n");
    match load_manifest(&path).unwrap_err() {
        Error::MissingFile { id, path } => {
            assert_eq!(id, "gone");
            assert!(path.ends_with("nope.png"));
        }
        other => panic!("unexpected {other:?}"),
    }

    write(&path, "schema_version = 7\n");
    assert!(matches!(load_manifest(&path), Err(Error::Parse { .. })));
}

#[test]
fn png_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let im = image(17, 23);
    write_image(&dir.path().join("i.png"), &im).unwrap();
    let back = read_image(&dir.path().join("i.png"), "img", Domain::Source, None).unwrap();
    for (a, b) in im.pixels.iter().zip(&back.pixels) {
        assert!((a - b).abs() <= 0.5 / 65535.0);
    }
    let m = mask(17, 23);
    write_mask(&dir.path().join("m.png"), &m).unwrap();
    assert_eq!(read_mask(&dir.path().join("m.png")).unwrap(), m);

    // 8-bit images are accepted and scaled by 255.
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(16, 16, |x, _| Luma([if x == 0 { 255 } else { 51 }]));
    buf.save(dir.path().join("e.png")).unwrap();
    let e = read_image(&dir.path().join("e.png"), "e", Domain::Target, None).unwrap();
    assert_eq!(e.pixels[0], 1.0);
    assert_eq!(e.pixels[1], 0.2);
}

#[test]
fn bad_pngs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let rgb: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::new(16, 16);
    rgb.save(dir.path().join("rgb.png")).unwrap();
    assert!(matches!(
        read_image(&dir.path().join("rgb.png"), "x", Domain::Source, None),
        Err(Error::Image { .. })
    ));
    let bad: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_pixel(16, 16, Luma([9]));
    bad.save(dir.path().join("bad.png")).unwrap();
    assert!(matches!(read_mask(&dir.path().join("bad.png")), Err(Error::Image { .. })));
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        segmentor: SegmentorConfig {
            input_height: 32,
            input_width: 32,
            num_classes: NUM_CLASSES,
            stage_widths: vec![4, 4, 8, 8],
            stage_downsample: vec![2, 2, 2, 2],
            convs_per_stage: 1,
            skip_stages: vec![1],
        },
        discriminator: Some(DiscriminatorConfig::desk(NUM_CLASSES)),
    }
}

#[test]
fn checkpoints_round_trip_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let mut params = init_params(&tiny_model(), 3).unwrap();
    params.segmentor_updates = 12;
    params.discriminator_updates = 24;
    let ck = Checkpoint::from_params(&params);
    let p1 = dir.path().join("a.json");
    ck.save(&p1).unwrap();
    let loaded = Checkpoint::load(&p1).unwrap();
    assert_eq!(loaded.to_params(&p1).unwrap(), params);
    let p2 = dir.path().join("b.json");
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(loaded.version, 1);
    assert_eq!(loaded.config_fingerprint, fingerprint(&tiny_model()));
}

#[test]
fn checkpoint_mismatches_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let params = init_params(&tiny_model(), 3).unwrap();
    let ck = Checkpoint::from_params(&params);

    let mut other = tiny_model();
    other.segmentor.stage_widths[0] = 5;
    assert!(matches!(ck.require_model(&other), Err(Error::FingerprintMismatch { .. })));
    ck.require_model(&tiny_model()).unwrap();

    // Edited config without a matching fingerprint.
    let mut edited = ck.clone();
    edited.model = other.clone();
    let path = dir.path().join("edited.json");
    edited.save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::FingerprintMismatch { .. })));

    // Consistent fingerprint but arrays from another layout.
    edited.config_fingerprint = fingerprint(&other);
    edited.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert!(matches!(loaded.to_params(&path), Err(Error::Checkpoint { .. })));

    let mut versioned = ck.clone();
    versioned.version = 2;
    versioned.save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
}
