//! Corpus properties: spectral slope of the procedural reals, the
//! upsampling fingerprint of generator samples, dataset build determinism,
//! and classifier forward parity with the f64 reference.

use fakebench_core::datagen::{
    build_dataset, load_dataset, load_png, load_split, manifest_csv, quantize8, synth_real,
    Label, Split,
};
use fakebench_core::img::Image;
use fakebench_core::models::{
    classify, init_classifier, init_generator, sample_latents, Arch,
};
use fakebench_core::tensor::dct::dct8_plane;
use fakebench_refimpl as refimpl;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn synth_real_spectrum_decays_across_octave_bands() {
    let mut ok = 0;
    let total = 200;
    for seed in 0..total {
        let img = synth_real(&mut ChaCha8Rng::seed_from_u64(seed as u64));
        // luminance = channel mean
        let n = 64;
        let mut lum = vec![0.0f32; n * n];
        for (i, l) in lum.iter_mut().enumerate() {
            *l = (0..3).map(|c| img.tensor().data()[c * n * n + i]).sum::<f32>() / 3.0;
        }
        let bands = refimpl::octave_band_energy(&lum, n);
        if bands[0] > bands[1] && bands[1] > bands[2] && bands[2] > bands[3] {
            ok += 1;
        }
    }
    assert!(
        ok as f64 >= 0.95 * total as f64,
        "only {ok}/{total} samples decay monotonically"
    );
}

/// Mean energy of the high-frequency half of each 8x8 DCT block.
fn high_freq_dct_energy(img: &Image) -> f64 {
    let n = img.height();
    let plane = n * n;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for c in 0..3 {
        let coeffs = dct8_plane(&img.tensor().data()[c * plane..(c + 1) * plane], n, n);
        for by in (0..n).step_by(8) {
            for bx in (0..n).step_by(8) {
                for v in 0..8 {
                    for u in 0..8 {
                        if v + u >= 8 {
                            let cv = coeffs[(by + v) * n + bx + u] as f64;
                            total += cv * cv;
                            count += 1;
                        }
                    }
                }
            }
        }
    }
    total / count as f64
}

#[test]
fn generator_samples_carry_more_high_frequency_energy_than_reals() {
    // the nearest-upsample decoder injects a high-frequency fingerprint even
    // before any training
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let gen = init_generator(&mut rng);
    let samples = 100;
    let mut fake_energy = 0.0;
    for _ in 0..samples {
        let (z, w) = sample_latents(&gen, &mut rng);
        let img = fakebench_core::models::generate(&gen, &z, &w).unwrap();
        fake_energy += high_freq_dct_energy(&img);
    }
    fake_energy /= samples as f64;
    let mut real_energy = 0.0;
    for seed in 0..samples {
        real_energy += high_freq_dct_energy(&synth_real(&mut ChaCha8Rng::seed_from_u64(seed)));
    }
    real_energy /= samples as f64;
    assert!(
        fake_energy > 1.5 * real_energy,
        "fake high-band {fake_energy} not clearly above real {real_energy}"
    );
}

#[test]
fn dataset_build_is_deterministic_and_balanced() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gen = init_generator(&mut rng);
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let ds_a = build_dataset(dir_a.path(), 100, 100, &gen, 5).unwrap();
    let ds_b = build_dataset(dir_b.path(), 100, 100, &gen, 5).unwrap();

    assert_eq!(ds_a.entries.len(), 200);
    assert_eq!(manifest_csv(&ds_a), manifest_csv(&ds_b));
    assert_eq!(ds_a.count(Split::Train, Label::Real), 80);
    assert_eq!(ds_a.count(Split::Val, Label::Fake), 10);
    assert_eq!(ds_a.count(Split::Test, Label::Real), 10);

    // every file decodes to 3x64x64 and the bytes are identical across builds
    for e in &ds_a.entries {
        let img = load_png(&ds_a.root.join(&e.path)).unwrap();
        assert_eq!(img.tensor().shape(), &[3, 64, 64]);
        let bytes_a = std::fs::read(ds_a.root.join(&e.path)).unwrap();
        let bytes_b = std::fs::read(ds_b.root.join(&e.path)).unwrap();
        assert_eq!(bytes_a, bytes_b, "file bytes differ for {}", e.path);
    }

    // reload through the manifest
    let reloaded = load_dataset(dir_a.path()).unwrap();
    assert_eq!(reloaded.entries.len(), 200);
    let train = load_split(&reloaded, Split::Train).unwrap();
    assert_eq!(train.len(), 160);
    assert_eq!(train.labels.iter().filter(|&&l| l).count(), 80);
}

#[test]
fn build_dataset_rejects_small_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gen = init_generator(&mut rng);
    let dir = tempfile::tempdir().unwrap();
    assert!(build_dataset(dir.path(), 50, 100, &gen, 5).is_err());
}

#[test]
fn classifier_forward_matches_f64_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(321);
    let params = init_classifier(Arch::PixelCnn, &mut rng);
    let mut img = Image::zeros(64, 64);
    for v in img.tensor_mut().data_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    let fast = classify(&params, &img).unwrap();

    // independent composition from refimpl primitives
    let f64of = |t: &fakebench_core::tensor::Tensor| -> Vec<f64> {
        t.data().iter().map(|&v| v as f64).collect()
    };
    let get = |name: &str| {
        params
            .tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .unwrap()
    };
    let mut h = f64of(img.tensor());
    let mut c_in = 3;
    let mut size = 64;
    for (i, c_out) in [16usize, 32, 64].iter().enumerate() {
        h = refimpl::conv2d_f64(
            &h,
            c_in,
            size,
            size,
            &f64of(get(&format!("conv{}.w", i + 1))),
            *c_out,
            3,
            3,
            Some(&f64of(get(&format!("conv{}.b", i + 1)))),
            1,
            1,
        );
        h = refimpl::leaky_relu_f64(&h, 0.2);
        h = refimpl::avg_pool2_f64(&h, *c_out, size, size);
        size /= 2;
        c_in = *c_out;
    }
    let pooled = refimpl::global_avg_pool_f64(&h, 64, size, size);
    let logit = refimpl::dense_f64(&pooled, &f64of(get("head.w")), Some(&f64of(get("head.b"))), 1)[0];
    assert!(
        (fast as f64 - logit).abs() < 1e-4,
        "engine {fast} vs reference {logit}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// PNG round-trip of any quantized image is the identity.
    #[test]
    fn png_roundtrip_identity(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::zeros(16, 16);
        for v in img.tensor_mut().data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let q = quantize8(&img);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        fakebench_core::datagen::save_png(&path, &q).unwrap();
        let back = load_png(&path).unwrap();
        prop_assert_eq!(q.tensor().data(), back.tensor().data());
    }

    /// Quantization is idempotent and within half a level.
    #[test]
    fn quantize_idempotent(v in 0.0f32..=1.0) {
        let mut img = Image::zeros(8, 8);
        img.set(0, 0, 0, v);
        let q = quantize8(&img);
        let qq = quantize8(&q);
        prop_assert_eq!(q.tensor().data(), qq.tensor().data());
        prop_assert!((q.get(0, 0, 0) - v).abs() <= 1.0 / 510.0 + 1e-7);
    }
}
