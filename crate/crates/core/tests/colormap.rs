use proptest::prelude::*;
use thermal_vqa::thermal::{decode, encode, DEFAULT_DECODE_THRESHOLD};
use thermal_vqa::{ColormapSpec, Rgb, TemperatureField, ThermalImage};

/// Independent reference: piecewise-linear curve through the anchors,
/// sampled densely, nearest sample by Euclidean RGB distance.
fn dense_nearest(cmap: &ColormapSpec, c: Rgb, samples: usize) -> (f64, f64) {
    let anchors: Vec<[f64; 3]> = cmap
        .anchor_colors()
        .iter()
        .map(|a| a.0.map(f64::from))
        .collect();
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=samples {
        let s = i as f64 / samples as f64 * 6.0;
        let k = (s.floor() as usize).min(5);
        let f = s - k as f64;
        let p: Vec<f64> = (0..3).map(|j| anchors[k][j] * (1.0 - f) + anchors[k + 1][j] * f).collect();
        let d = (0..3)
            .map(|j| (p[j] - c.0[j] as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        if d < best.0 {
            best = (d, cmap.t_min() + s / 6.0 * (cmap.t_max() - cmap.t_min()));
        }
    }
    (best.1, best.0)
}

fn single(t: f64) -> TemperatureField {
    TemperatureField::uniform(1, 1, t).unwrap()
}

fn roundtrip(cmap: &ColormapSpec, t: f64) -> (f64, f64, Rgb) {
    let img = encode(&single(t), cmap).unwrap();
    let d = decode(&img, cmap);
    (d.field.get(0, 0).unwrap(), d.residuals[0], img.pixel(0, 0))
}

#[test]
fn endpoints_and_second_anchor() {
    let cmap = ColormapSpec::default();
    assert_eq!(roundtrip(&cmap, 25.0).2, Rgb([0, 0, 0]));
    assert_eq!(roundtrip(&cmap, 60.0).2, Rgb([255, 255, 255]));
    let second: f64 = 25.0 + 35.0 / 6.0;
    assert!((second - 30.833).abs() < 1e-3);
    assert_eq!(roundtrip(&cmap, second).2, Rgb([0, 0, 255]));
}

#[test]
fn every_anchor_temperature_encodes_to_its_color() {
    let cmap = ColormapSpec::default();
    for k in 0..7 {
        let t = 25.0 + k as f64 * 35.0 / 6.0;
        assert_eq!(roundtrip(&cmap, t).2, cmap.anchor_colors()[k], "anchor {k}");
    }
}

#[test]
fn cyan_decodes_to_third_anchor() {
    let cmap = ColormapSpec::default();
    let img = ThermalImage::filled(1, 1, Rgb([0, 255, 255])).unwrap();
    let t = decode(&img, &cmap).field.get(0, 0).unwrap();
    assert!((t - 36.667).abs() < 1e-3, "{t}");
    let (oracle_t, _) = dense_nearest(&cmap, Rgb([0, 255, 255]), 12_288);
    assert!((t - oracle_t).abs() < 0.01);
}

#[test]
fn off_curve_color_is_background() {
    let cmap = ColormapSpec::default();
    let c = Rgb([128, 0, 128]);
    let img = ThermalImage::filled(1, 1, c).unwrap();
    let d = decode(&img, &cmap);
    let (_, oracle_residual) = dense_nearest(&cmap, c, 12_288);
    assert!((d.residuals[0] - oracle_residual).abs() < 0.05);
    assert!(d.residuals[0] > DEFAULT_DECODE_THRESHOLD);
    assert_eq!(d.field.get(0, 0), None);
}

#[test]
fn dense_grid_round_trip() {
    let cmap = ColormapSpec::default();
    let mut prev_param = -1.0;
    for i in 0..=700 {
        let t = 25.0 + i as f64 * 0.05;
        let (back, residual, _) = roundtrip(&cmap, t);
        assert!((back - t).abs() < 0.2, "T={t} decoded {back}");
        assert!(residual < 1.0, "T={t} residual {residual}");
        let param = cmap.curve_param(back);
        assert!(param >= prev_param - 1e-12, "param decreased at T={t}");
        prev_param = param;
    }
}

proptest! {
    #[test]
    fn projection_matches_dense_sampling(r in 0u8..=255, g in 0u8..=255, b in 0u8..=255) {
        let cmap = ColormapSpec::default();
        let c = Rgb([r, g, b]);
        let p = cmap.project(c);
        let (_, oracle_residual) = dense_nearest(&cmap, c, 12_288);
        // the exact projection can only be closer than any sample
        prop_assert!(p.residual <= oracle_residual + 1e-9);
        prop_assert!(oracle_residual - p.residual < 0.05);
    }

    #[test]
    fn round_trip_any_range(lo in -20.0f64..80.0, span in 5.0f64..100.0, frac in 0.0f64..=1.0) {
        let cmap = ColormapSpec::with_range(lo, lo + span).unwrap();
        let t = lo + frac * span;
        let (back, residual, _) = roundtrip(&cmap, t);
        // coarsest segment (yellow to orange) moves 90 RGB units
        prop_assert!((back - t).abs() <= span / 6.0 / 90.0);
        prop_assert!(residual < 1.0);
    }

    #[test]
    fn encode_is_monotone_along_curve(a in 25.0f64..=60.0, b in 25.0f64..=60.0) {
        let cmap = ColormapSpec::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (tl, _, _) = roundtrip(&cmap, lo);
        let (th, _, _) = roundtrip(&cmap, hi);
        prop_assert!(cmap.curve_param(tl) <= cmap.curve_param(th) + 1e-12);
    }

    #[test]
    fn field_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let cmap = ColormapSpec::default();
        let f = TemperatureField::from_fn(w, h, |x, y| {
            let v = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add((x * 31 + y) as u64);
            (v % 5 != 0).then(|| 25.0 + (v % 3501) as f64 / 100.0)
        }).unwrap();
        let d = decode(&encode(&f, &cmap).unwrap(), &cmap);
        for y in 0..h {
            for x in 0..w {
                match (f.get(x, y), d.field.get(x, y)) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 0.2),
                    (None, None) => {}
                    other => prop_assert!(false, "mask mismatch at ({x},{y}): {other:?}"),
                }
            }
        }
    }
}

#[test]
fn out_of_range_temperature_is_rejected() {
    let cmap = ColormapSpec::default();
    assert!(encode(&single(60.5), &cmap).is_err());
    assert!(encode(&single(24.9), &cmap).is_err());
}

#[test]
fn png_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cmap = ColormapSpec::default();
    let f = TemperatureField::from_fn(9, 7, |x, y| Some(25.0 + (x * 7 + y) as f64 * 0.5)).unwrap();
    let img = encode(&f, &cmap).unwrap();
    let path = dir.path().join("f.png");
    img.save_png(&path).unwrap();
    assert_eq!(ThermalImage::load_png(&path).unwrap(), img);
}
