use aggronet::datapipe::{
    apply_augment, augment, decode_ppm, encode_ppm, load_dataset, rescale, resize_bilinear, synth_dataset,
    write_dataset, AugmentDraw, AugmentParams, FloatImage, Image, PpmError,
};
use aggronet::rng::seeded;
use proptest::prelude::*;
use rand::Rng;

/// Half-pixel-center bilinear sample written from the definition.
fn bilinear_oracle(src: &FloatImage, w: usize, h: usize) -> Vec<f32> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let sx = ((x as f64 + 0.5) * src.width as f64 / w as f64 - 0.5).clamp(0.0, (src.width - 1) as f64);
            let sy = ((y as f64 + 0.5) * src.height as f64 / h as f64 - 0.5).clamp(0.0, (src.height - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(src.width - 1), (y0 + 1).min(src.height - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for c in 0..3 {
                let p = |xx, yy| src.at(xx, yy, c) as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    out
}

#[test]
fn resize_two_pixels_to_four() {
    let src = FloatImage::new(2, 1, vec![0.0, 0.0, 0.0, 255.0, 255.0, 255.0]);
    let got = resize_bilinear(&src, 4, 1);
    let reds: Vec<f32> = got.data.chunks(3).map(|p| p[0]).collect();
    assert_eq!(reds, [0.0, 63.75, 191.25, 255.0]);
}

#[test]
fn resize_matches_oracle() {
    let mut rng = seeded(4);
    for _ in 0..120 {
        let (w, h) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let src = FloatImage::new(w, h, (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect());
        let (tw, th) = (rng.gen_range(1..13), rng.gen_range(1..13));
        let got = resize_bilinear(&src, tw, th);
        let want = bilinear_oracle(&src, tw, th);
        for (g, w) in got.data.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-5 * w.abs().max(1.0), "{g} vs {w}");
        }
    }
}

#[test]
fn resize_to_same_size_is_identity() {
    let src = FloatImage::new(3, 2, (0..18).map(|v| v as f32 / 17.0).collect());
    assert_eq!(resize_bilinear(&src, 3, 2), src);
}

#[test]
fn quarter_turn_permutes_pixels() {
    // [[a, b], [c, d]] turned counter-clockwise is [[b, d], [a, c]].
    let (a, b, c, d) = (0.1f32, 0.2, 0.3, 0.4);
    let px = |v: f32| [v, v, v];
    let img = FloatImage::new(2, 2, [px(a), px(b), px(c), px(d)].concat());
    let out = apply_augment(
        &img,
        AugmentDraw {
            angle_deg: 90.0,
            ..AugmentDraw::IDENTITY
        },
    );
    let got: Vec<f32> = out.data.chunks(3).map(|p| p[0]).collect();
    for (g, w) in got.iter().zip([b, d, a, c]) {
        assert!((g - w).abs() < 1e-5, "{got:?}");
    }
}

#[test]
fn magnification_stays_inside_the_image_but_rotation_fills_corners() {
    let img = FloatImage::new(6, 6, vec![0.7; 108]);
    let zoomed = apply_augment(
        &img,
        AugmentDraw {
            zoom: 1.5,
            ..AugmentDraw::IDENTITY
        },
    );
    assert!(zoomed.data.iter().all(|v| (v - 0.7).abs() < 1e-6));
    let turned = apply_augment(
        &img,
        AugmentDraw {
            angle_deg: 45.0,
            ..AugmentDraw::IDENTITY
        },
    );
    assert_eq!(turned.at(0, 0, 0), 0.0);
    assert!((turned.at(3, 3, 0) - 0.7).abs() < 1e-6);
}

#[test]
fn identity_parameters_leave_images_alone() {
    let mut rng = seeded(9);
    let img = FloatImage::new(5, 5, (0..75).map(|_| rng.gen_range(0.0..1.0)).collect());
    assert_eq!(augment(&img, &AugmentParams::none(), &mut seeded(1)), img);
    assert_eq!(apply_augment(&img, AugmentDraw::IDENTITY), img);
}

#[test]
fn augmentation_is_seed_deterministic() {
    let img = FloatImage::new(6, 6, (0..108).map(|i| (i % 7) as f32 / 7.0).collect());
    let p = AugmentParams::default();
    assert_eq!(augment(&img, &p, &mut seeded(5)), augment(&img, &p, &mut seeded(5)));
}

#[test]
fn synthetic_classes_are_separable_by_mean_color() {
    let ds = synth_dataset(30, 8, 16, 42).unwrap();
    let imgs = ds.prepare([16, 16]).unwrap();
    let mean = |i: usize| {
        let mut m = [0.0f64; 3];
        for p in imgs.images[i].data.chunks(3) {
            for c in 0..3 {
                m[c] += p[c] as f64;
            }
        }
        m.map(|v| v / 256.0)
    };
    let (train, test): (Vec<usize>, Vec<usize>) = (0..imgs.len()).partition(|i| i % 2 == 0);
    let mut centroids = [[0.0f64; 3]; 8];
    let mut counts = [0.0; 8];
    for &i in &train {
        let m = mean(i);
        for c in 0..3 {
            centroids[imgs.labels[i]][c] += m[c];
        }
        counts[imgs.labels[i]] += 1.0;
    }
    for (cent, n) in centroids.iter_mut().zip(&counts) {
        cent.iter_mut().for_each(|v| *v /= n);
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let m = mean(i);
            let d = |k: usize| (0..3).map(|c| (m[c] - centroids[k][c]).powi(2)).sum::<f64>();
            (0..8).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap() == imgs.labels[i]
        })
        .count();
    assert!(correct as f64 / test.len() as f64 >= 0.9);
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = synth_dataset(3, 4, 8, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    std::fs::create_dir(dir.path().join("empty_class")).unwrap();
    std::fs::write(dir.path().join("class_0").join("notes.txt"), "ignored").unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.class_names, ds.class_names);
    assert_eq!(loaded.class_counts(), vec![3; 4]);
    assert_eq!(loaded.prepare([8, 8]).unwrap(), ds.prepare([8, 8]).unwrap());
}

#[test]
fn rejects_non_p6_and_truncated_files() {
    assert!(matches!(
        decode_ppm(b"P3\n1 1\n255\n0 0 0\n"),
        Err(PpmError::WrongMagic(_))
    ));
    assert!(matches!(
        decode_ppm(b"P6\n2 2\n255\n\x00\x00"),
        Err(PpmError::Truncated { .. })
    ));
}

#[test]
fn rescale_maps_bytes_to_unit_interval() {
    let img = Image {
        width: 1,
        height: 1,
        pixels: vec![0, 128, 255],
    };
    assert_eq!(rescale(&img).data, [0.0, 128.0 / 255.0, 1.0]);
}

proptest! {
    #[test]
    fn ppm_round_trip(w in 1usize..10, h in 1usize..10, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let img = Image { width: w, height: h, pixels: (0..w * h * 3).map(|_| rng.gen()).collect() };
        prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn double_flip_is_identity(w in 1usize..8, h in 1usize..8, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let img = FloatImage::new(w, h, (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect());
        prop_assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }
}
