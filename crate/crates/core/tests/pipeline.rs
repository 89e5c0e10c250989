//! Frame files, manifests, sampling and the synthetic generator.

use fdp::data::pnm::{decode, encode, read_image};
use fdp::data::sampling::{random_offset, CROP_SIZE, SOURCE_SIZE};
use fdp::data::synth::{generate, write_dataset};
use fdp::data::{max_offset, preprocess_eval, preprocess_train, sample_clip, Image, Manifest, SynthSpec, MANIFEST_FILE};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec() -> SynthSpec {
    SynthSpec {
        num_subjects: 2,
        num_classes: 3,
        clips_per_cell: 1,
        frames_per_clip: 5,
        ..SynthSpec::default()
    }
}

proptest! {
    #[test]
    fn pnm_bytes_round_trip(
        gray in any::<bool>(),
        h in 1usize..9,
        w in 1usize..9,
        seed in any::<u64>(),
    ) {
        let c = if gray { 1 } else { 3 };
        let mut state = seed;
        let body: Vec<u8> = (0..h * w * c)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 56) as u8
            })
            .collect();
        let mut bytes = format!("P{}\n{w} {h}\n255\n", if gray { 5 } else { 6 }).into_bytes();
        bytes.extend_from_slice(&body);
        let img = decode(&bytes).unwrap();
        prop_assert_eq!(img.dims(), [c, h, w]);
        prop_assert_eq!(encode(&img).unwrap(), bytes);
    }

    #[test]
    fn sampled_indices_increase_and_stay_in_range(len in 1usize..100, t in 1usize..16, pick in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(pick);
        let offset = random_offset(len, t, &mut rng);
        prop_assert!(offset <= max_offset(len, t));
        let idx = sample_clip(len, t, offset);
        prop_assert_eq!(idx.len(), t);
        prop_assert!(idx.iter().all(|&i| i < len));
        if len >= t {
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn preprocessing_always_yields_the_crop_extent(seed in any::<u64>()) {
        let frame = Image::filled(3, SOURCE_SIZE, SOURCE_SIZE, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(preprocess_train(&frame, &mut rng).unwrap().dims(), [3, CROP_SIZE, CROP_SIZE]);
        prop_assert_eq!(preprocess_eval(&frame).unwrap().dims(), [3, CROP_SIZE, CROP_SIZE]);
    }
}

#[test]
fn sampling_examples() {
    assert_eq!(sample_clip(24, 8, 0), vec![0, 3, 6, 9, 12, 15, 18, 21]);
    assert_eq!(sample_clip(3, 8, 0), vec![0, 1, 2, 2, 2, 2, 2, 2]);
}

#[test]
fn written_dataset_reloads_to_the_generated_clips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let written = write_dataset(&spec, dir.path()).unwrap();
    let loaded = Manifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, written);
    assert_eq!(loaded.subjects(), vec!["s00", "s01"]);
    // Generated frames are already quantized to the 8-bit grid, so disk is lossless.
    assert_eq!(loaded.load_clips().unwrap(), generate(&spec).unwrap());
}

#[test]
fn manifest_write_then_load_preserves_fields() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&small_spec(), dir.path()).unwrap();
    let copy = dir.path().join("copy.csv");
    manifest.write(&copy).unwrap();
    let back = Manifest::load(&copy).unwrap();
    assert_eq!(back.rows, manifest.rows);
    assert_eq!(back.classes, manifest.classes);
}

#[test]
fn frame_files_rewrite_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&small_spec(), dir.path()).unwrap();
    let frame = manifest.frame_dir(&manifest.rows[0]).join("frame_0000.ppm");
    let bytes = std::fs::read(&frame).unwrap();
    assert_eq!(encode(&read_image(&frame).unwrap()).unwrap(), bytes);
    let gray = encode(&read_image(&frame).unwrap().to_gray()).unwrap();
    assert_eq!(encode(&decode(&gray).unwrap()).unwrap(), gray);
}

#[test]
fn frame_count_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&small_spec(), dir.path()).unwrap();
    std::fs::remove_file(manifest.frame_dir(&manifest.rows[1]).join("frame_0004.ppm")).unwrap();
    let err = Manifest::load(dir.path().join(MANIFEST_FILE)).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn same_seed_same_dataset_other_seed_differs() {
    let spec = small_spec();
    assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    let other = generate(&SynthSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(generate(&small_spec()).unwrap(), other);
}
